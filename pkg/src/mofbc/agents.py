"""The agent ensemble and the miners' trust-based checking of agent output.

Agents are deterministic actors.  Each role has several replicas sharing the
role's state; the registry picks the acting replica round-robin and swaps in
a fresh standby when miners isolate a misbehaving one.
"""
from __future__ import annotations

import enum
import json
import logging
import random
from collections import defaultdict
from collections.abc import Callable, Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from decimal import Decimal

from .chain import Block, Blackboard, Chain
from .core import (
    MOM,
    AgedTransaction,
    LedgerRemoveTransaction,
    PageAccounting,
    Record,
    RemoveTransaction,
    SummaryTransaction,
)
from .economics import (
    PaymentPeriodLedger,
    StorageClaim,
    miner_shares,
    removal_reward,
    summary_reward_shares,
)
from .encoding import ZERO_DIGEST, H
from .gv import GvProof, KeyPair, verify_gv_bytes, verify_signature
from .memopt import build_summary, summary_matches

log = logging.getLogger(__name__)


class Role(str, enum.Enum):
    SA = "SA"
    SMA = "SMA"
    SERA = "SerA"
    RMA = "RMA"
    STMA = "StMA"
    PA = "PA"
    BMA = "BMA"
    BANK = "Bank"


class EventLog:
    """Structured agent events, kept in memory and echoed to logging."""

    def __init__(self) -> None:
        self.events: list[dict] = []

    def emit(self, event: str, **fields) -> None:
        rec = {"event": event, **{k: (v.hex() if isinstance(v, bytes) else v) for k, v in fields.items()}}
        self.events.append(rec)
        log.debug("%s", rec)

    def of(self, event: str) -> list[dict]:
        return [e for e in self.events if e["event"] == event]

    def lines(self) -> list[str]:
        return [json.dumps(e, sort_keys=True, default=str) for e in self.events]


# -- trust ----------------------------------------------------------------

@dataclass
class TrustRecord:
    validated_count: int = 0
    vp: float = 1.0


class TrustTable:
    """Per-agent validation probability kept by each miner.

    vp = max(vp_min, 1 / (1 + validated_count)); an invalid observation knocks
    ``penalty`` off the count (floored at zero).
    """

    def __init__(self, vp_min: float = 0.01, penalty: int = 10):
        if not 0 < vp_min <= 1:
            raise ValueError("vp_min must lie in (0, 1]")
        self.vp_min = vp_min
        self.penalty = penalty
        self.records: dict[bytes, TrustRecord] = {}

    def record(self, agent: bytes) -> TrustRecord:
        if agent not in self.records:
            self.records[agent] = TrustRecord(0, 1.0)
        return self.records[agent]

    def vp(self, agent: bytes) -> float:
        return self.record(agent).vp

    def should_validate(self, agent: bytes, rng: random.Random) -> bool:
        return rng.random() < self.vp(agent)

    def observe(self, agent: bytes, valid: bool) -> float:
        rec = self.record(agent)
        if valid:
            rec.validated_count += 1
        else:
            rec.validated_count = max(0, rec.validated_count - self.penalty)
        rec.vp = max(self.vp_min, 1.0 / (1 + rec.validated_count))
        return rec.vp


# -- registry -------------------------------------------------------------

@dataclass
class Replica:
    role: Role
    index: int
    keys: KeyPair
    active: bool = True
    # fault injection: a replica may be handed a function that corrupts its output
    fault: Callable | None = None

    @property
    def agent_id(self) -> bytes:
        return self.keys.pk_hash


class NoActiveReplica(RuntimeError):
    pass


class AgentRegistry:
    def __init__(self, replicas_per_role: int = 2, seed: int | str = 0):
        if replicas_per_role < 1:
            raise ValueError("need at least one replica per role")
        self.replicas_per_role = replicas_per_role
        self.seed = seed
        self.replicas: dict[Role, list[Replica]] = {}
        self._turn: dict[Role, int] = {}
        for role in Role:
            self.replicas[role] = [self._provision(role, i) for i in range(replicas_per_role)]
            self._turn[role] = 0

    def _provision(self, role: Role, index: int) -> Replica:
        return Replica(role, index, KeyPair.derive("agent", self.seed, role.value, index))

    def active(self, role: Role) -> list[Replica]:
        return [r for r in self.replicas[role] if r.active]

    def current(self, role: Role) -> Replica:
        """Next active replica for ``role`` (round-robin)."""
        live = self.active(role)
        if not live:
            raise NoActiveReplica(role.value)
        rep = live[self._turn[role] % len(live)]
        self._turn[role] += 1
        return rep

    def deactivate(self, replica: Replica, promote: bool = True) -> Replica | None:
        """Isolate ``replica``; optionally bring up a fresh standby in its place."""
        replica.active = False
        if promote:
            fresh = self._provision(replica.role, len(self.replicas[replica.role]))
            self.replicas[replica.role].append(fresh)
            return fresh
        return None

    def find(self, agent_id: bytes) -> Replica | None:
        for reps in self.replicas.values():
            for r in reps:
                if r.agent_id == agent_id:
                    return r
        return None


# -- search agent ---------------------------------------------------------

@dataclass
class Routes:
    to_sma: list[bytes] = field(default_factory=list)
    to_rma: list[bytes] = field(default_factory=list)
    to_sera: list[bytes] = field(default_factory=list)

    def empty(self) -> bool:
        return not (self.to_sma or self.to_rma or self.to_sera)


OPTIMIZATION_KINDS = (RemoveTransaction, LedgerRemoveTransaction, AgedTransaction)


def route_record(rec: Record, routes: Routes) -> None:
    if isinstance(rec, OPTIMIZATION_KINDS):
        routes.to_rma.append(rec.t_id)
        routes.to_sera.append(rec.t_id)
    elif isinstance(rec, SummaryTransaction):
        routes.to_rma.append(rec.t_id)
        routes.to_sera.append(rec.t_id)
    elif rec.mom == MOM.SUMMARIZABLE:
        routes.to_sma.append(rec.t_id)
    elif rec.mom == MOM.TEMPORARY:
        routes.to_sera.append(rec.t_id)


class SearchAgent:
    """Scans newly mined blocks and forwards references to the other agents."""

    def __init__(self, events: EventLog | None = None):
        self.events = events or EventLog()

    def scan(self, block: Block) -> Routes:
        routes = Routes()
        for e in block.entries:
            if e.content is not None:
                route_record(e.content, routes)
        if not routes.empty():
            self.events.emit("sa_route", height=block.height, sma=len(routes.to_sma),
                             rma=len(routes.to_rma), sera=len(routes.to_sera))
        return routes


# -- summary manager ------------------------------------------------------

@dataclass
class SummaryProposal:
    summary: SummaryTransaction
    ledger: bytes
    members: list[bytes]
    replica: Replica


class SummaryManagerAgent:
    """Collects summarizable references and emits one summary per ledger per CP."""

    def __init__(self, registry: AgentRegistry, events: EventLog | None = None):
        self.registry = registry
        self.events = events or EventLog()
        self.backlog: dict[bytes, list[Record]] = {}
        self._heads: dict[bytes, bytes] = {}

    def receive(self, records: Iterable[Record]) -> None:
        for rec in records:
            if rec.mom == MOM.SUMMARIZABLE:
                self.backlog.setdefault(rec.pk_hash, []).append(rec)

    def propose(self, ledger: bytes, members: Sequence[Record], week: int,
                replica: Replica | None = None) -> SummaryProposal:
        replica = replica or self.registry.current(Role.SMA)
        head = self._heads.get(replica.agent_id, ZERO_DIGEST)
        summary = build_summary(members, replica.keys, timestamp=week, p_t_id=head)
        if replica.fault is not None:
            summary = replica.fault(summary)
        self._heads[replica.agent_id] = summary.t_id
        return SummaryProposal(summary, ledger, [m.t_id for m in members], replica)

    def summarize_at_cp(self, week: int) -> list[SummaryProposal]:
        """One proposal per ledger holding unsummarized summarizable transactions."""
        proposals = []
        for ledger in sorted(self.backlog):
            members = self.backlog[ledger]
            if members:
                proposals.append(self.propose(ledger, members, week))
        self.backlog = {}
        self.events.emit("sma_summaries", week=week, count=len(proposals))
        return proposals


def miner_check_summary(proposal: SummaryProposal, members: Sequence[Record]) -> bool:
    """A miner re-summarizes the members itself and compares."""
    s = proposal.summary
    return (s.has_valid_t_id() and s.pk_hash == proposal.replica.keys.pk_hash
            and verify_signature(proposal.replica.keys.public, s.signature, s.signing_bytes)
            and summary_matches(s, members))


# -- service agent (batch cleaning) ---------------------------------------

@dataclass
class CleaningPlan:
    week: int
    removals: list[bytes]
    redirects: list[tuple[bytes, bytes]]

    def key(self) -> tuple:
        return (tuple(sorted(self.removals)), tuple(sorted(self.redirects)))


class RemovalTracker:
    """Bookkeeping of what is due for removal, fed from mined records.

    The service agent and every verifying miner each keep their own tracker
    fed from the blocks they see, so their plans are derived independently.
    """

    def __init__(self, chain: Chain):
        self.chain = chain
        self.expiry: dict[int, list[bytes]] = defaultdict(list)
        self.requested: list[bytes] = []
        self.redirect_requests: list[tuple[bytes, bytes]] = []

    def observe(self, rec: Record, targets: Sequence[bytes] = ()) -> None:
        if isinstance(rec, RemoveTransaction):
            self.requested.append(rec.target_t_id)
        elif isinstance(rec, LedgerRemoveTransaction):
            self.requested.extend(targets or [rec.genesis_t_id])
        elif isinstance(rec, SummaryTransaction):
            self.requested.extend(targets)
        elif isinstance(rec, AgedTransaction):
            self.requested.append(rec.original_t_id)
            self.redirect_requests.append((rec.original_t_id, rec.t_id))
        if rec.mom == MOM.TEMPORARY:
            self.expiry[rec.timestamp + rec.mom_setup].append(rec.t_id)

    def plan(self, week: int) -> CleaningPlan:
        due: list[bytes] = []
        for exp in sorted(w for w in self.expiry if w <= week):
            due.extend(self.expiry.pop(exp))
        due.extend(self.requested)
        self.requested = []
        seen: set[bytes] = set()
        removals = []
        for t in due:
            if t not in seen and self.chain.get(t) is not None:
                seen.add(t)
                removals.append(t)
        redirects = [(old, new) for old, new in self.redirect_requests
                     if self.chain.consumers(old)]
        self.redirect_requests = []
        return CleaningPlan(week, removals, redirects)


class ServiceAgent:
    def __init__(self, chain: Chain, registry: AgentRegistry, events: EventLog | None = None):
        self.tracker = RemovalTracker(chain)
        self.registry = registry
        self.events = events or EventLog()

    def observe(self, rec: Record, targets: Sequence[bytes] = ()) -> None:
        self.tracker.observe(rec, targets)

    def plan(self, week: int) -> tuple[CleaningPlan, Replica]:
        replica = self.registry.current(Role.SERA)
        plan = self.tracker.plan(week)
        if replica.fault is not None:
            plan = replica.fault(plan)
        return plan, replica


def apply_plan(chain: Chain, plan: CleaningPlan, bma: "BlackboardManagerAgent | None" = None) -> int:
    freed = 0
    for t in plan.removals:
        freed += chain.remove_content(t)
    for old, new in plan.redirects:
        if bma is not None:
            bma.redirect(chain, old, new)
        else:
            chain.apply_redirection(old, new)
    return freed


# -- blackboard manager ---------------------------------------------------

class BlackboardManagerAgent:
    """Sole writer of the blackboard."""

    def __init__(self, blackboard: Blackboard, events: EventLog | None = None):
        self.blackboard = blackboard
        self.events = events or EventLog()

    def redirect(self, chain: Chain, old: bytes, new: bytes) -> None:
        chain.apply_redirection(old, new)
        self.events.emit("bma_redirect", old=old, new=new)

    def list_reward_paid(self, t_id: bytes) -> None:
        self.blackboard.reward_paid_tx_ids.add(t_id)
        self.events.emit("bma_reward_paid", t_id=t_id)


# -- bank and rewards -----------------------------------------------------

class RedeemError(Exception):
    pass


class InsufficientBalance(RedeemError):
    pass


class InvalidRedeemProof(RedeemError):
    pass


class AlreadyListed(RedeemError):
    pass


@dataclass(frozen=True)
class RedeemRequest:
    """Ask the bank to pay ``new_t_id``'s storage from accrued rewards.

    Rewards earned through GVs are claimed with ``gv_claims`` (GV bytes plus
    the proof); rewards credited to a ledger key are claimed with
    ``public_key``.  Either way ``signature`` is over ``signing_bytes``.
    """

    new_t_id: bytes
    gv_claims: tuple[tuple[bytes, GvProof], ...] = ()
    public_key: bytes | None = None
    signature: bytes = b""

    @property
    def signing_bytes(self) -> bytes:
        parts = [b"mofbc/redeem", self.new_t_id]
        parts.extend(H(gv) for gv, _ in self.gv_claims)
        if self.public_key is not None:
            parts.append(self.public_key)
        return b"".join(parts)

    def accounts(self) -> list[bytes]:
        if self.gv_claims:
            return [gv for gv, _ in self.gv_claims]
        return [H(self.public_key)] if self.public_key is not None else []

    def signed(self, keys: KeyPair) -> "RedeemRequest":
        return RedeemRequest(self.new_t_id, self.gv_claims, self.public_key, keys.sign(self.signing_bytes))


class Bank:
    """Reward balances in pages, keyed by GV (user rewards) or ledger key."""

    def __init__(self, conversion_rate: Decimal = Decimal(0), events: EventLog | None = None):
        self.conversion_rate = conversion_rate
        self.balances: dict[bytes, Decimal] = {}
        self.credited: set[bytes] = set()
        self.total_credited = Decimal(0)
        self.credited_by_account: dict[bytes, Decimal] = {}
        self.total_redeemed = Decimal(0)
        self.events = events or EventLog()

    def balance(self, account: bytes) -> Decimal:
        return self.balances.get(account, Decimal(0))

    def credit(self, account: bytes, pages: Decimal | int, event_key: bytes) -> bool:
        """Credit once per ``event_key``; repeats are refused."""
        if event_key in self.credited:
            self.events.emit("bank_duplicate_credit", key=event_key)
            return False
        self.credited.add(event_key)
        pages = Decimal(pages)
        self.balances[account] = self.balance(account) + pages
        self.total_credited += pages
        self.credited_by_account[account] = self.credited_by_account.get(account, Decimal(0)) + pages
        self.events.emit("bank_credit", account=account, pages=str(pages))
        return True

    def _authenticate(self, req: RedeemRequest) -> bool:
        if req.gv_claims:
            return all(verify_gv_bytes(proof, gv, req.signature, req.signing_bytes)
                       for gv, proof in req.gv_claims)
        if req.public_key is not None:
            return verify_signature(req.public_key, req.signature, req.signing_bytes)
        return False

    def redeem(self, req: RedeemRequest, fee_pages: int, bma: BlackboardManagerAgent) -> Decimal:
        """Debit ``fee_pages`` and have the BMA list ``req.new_t_id`` as reward-paid."""
        if req.new_t_id in bma.blackboard.reward_paid_tx_ids:
            raise AlreadyListed(req.new_t_id.hex())
        if not self._authenticate(req):
            raise InvalidRedeemProof(req.new_t_id.hex())
        accounts = req.accounts()
        available = sum((self.balance(a) for a in accounts), Decimal(0))
        if available < fee_pages:
            raise InsufficientBalance(f"{available} < {fee_pages}")
        remaining = Decimal(fee_pages)
        for a in accounts:
            take = min(remaining, self.balance(a))
            self.balances[a] = self.balance(a) - take
            remaining -= take
            if remaining == 0:
                break
        self.total_redeemed += fee_pages
        bma.list_reward_paid(req.new_t_id)
        self.events.emit("bank_redeem", t_id=req.new_t_id, pages=fee_pages)
        return Decimal(fee_pages)

    def exchange(self, account: bytes, pages: Decimal | int) -> Decimal:
        """Convert reward pages to currency at the configured rate."""
        pages = Decimal(pages)
        if self.balance(account) < pages:
            raise InsufficientBalance(account.hex())
        self.balances[account] = self.balance(account) - pages
        return pages * self.conversion_rate


class RewardManagerAgent:
    def __init__(self, bank: Bank, pages: PageAccounting, events: EventLog | None = None):
        self.bank = bank
        self.pages = pages
        self.rewarded: set[bytes] = set()
        self.events = events or EventLog()

    @staticmethod
    def reward_key(rec: Record) -> bytes:
        gv = getattr(rec, "gv", b"")
        return gv if gv else rec.t_id

    @staticmethod
    def account_of(rec: Record) -> bytes:
        gv = getattr(rec, "gv", b"")
        return gv if gv else rec.pk_hash

    def reward_removal(self, request: Record, removed: Sequence[Record]) -> Decimal:
        """Reward = removed pages - request pages, credited to the removed GV."""
        fresh = [r for r in removed if self.reward_key(r) not in self.rewarded]
        if not fresh:
            return Decimal(0)
        amount = removal_reward(sum(self.pages.pages(r) for r in fresh), self.pages.pages(request))
        account = self.account_of(fresh[0])
        for r in fresh:
            self.rewarded.add(self.reward_key(r))
        self.bank.credit(account, amount, self.reward_key(fresh[0]))
        self.events.emit("rma_reward", kind=type(request).__name__, pages=amount, account=account)
        return Decimal(amount)

    def reward_summary(self, summary: SummaryTransaction, members: Sequence[Record]) -> dict[bytes, Decimal]:
        pairs = [(self.account_of(m), self.pages.pages(m)) for m in members]
        shares = summary_reward_shares(pairs, self.pages.pages(summary))
        credited: dict[bytes, Decimal] = {}
        for account, amount in shares.items():
            keys = [self.reward_key(m) for m in members if self.account_of(m) == account]
            if any(k in self.rewarded for k in keys):
                continue
            self.rewarded.update(keys)
            if self.bank.credit(account, amount, keys[0]):
                credited[account] = amount
                self.events.emit("rma_reward", kind="Summary", pages=str(amount), account=account)
        return credited


# -- storage manager and patrol -------------------------------------------

class StorageManagerAgent:
    """Collects storage fees and pays miners at the end of each payment period."""

    def __init__(self, period_weeks: int, events: EventLog | None = None):
        if period_weeks < 1:
            raise ValueError("payment period must be at least one week")
        self.period_weeks = period_weeks
        self.claims: dict[str, StorageClaim] = {}
        self.ledger = PaymentPeriodLedger(0, period_weeks)
        self.history: list[PaymentPeriodLedger] = []
        self.total_collected = Decimal(0)
        self.total_paid = Decimal(0)
        self.events = events or EventLog()

    def register(self, claim: StorageClaim) -> None:
        self.claims[claim.miner] = claim

    def leave(self, miner: str, week: int) -> None:
        c = self.claims[miner]
        self.claims[miner] = StorageClaim(c.miner, c.storage_x, c.joined_week, week)

    def collect(self, fee: Decimal) -> None:
        self.ledger.collect(fee)
        self.total_collected += fee

    def close_period(self, blacklist: set[str] | frozenset[str] = frozenset()) -> dict[str, Decimal]:
        ledger = self.ledger
        ledger.claims = list(self.claims.values())
        payouts = miner_shares(ledger, blacklist)
        paid = sum(payouts.values(), Decimal(0))
        self.total_paid += paid
        self.history.append(ledger)
        self.events.emit("stma_payout", period=ledger.period, pool=str(ledger.fee_pool), paid=str(paid))
        self.ledger = PaymentPeriodLedger(ledger.period + 1, self.period_weeks,
                                          fee_pool=ledger.fee_pool - paid)
        return payouts


@dataclass
class MinerNode:
    """What the patrol agent can observe about a miner."""

    name: str
    claimed_storage: int
    actual_storage: int


class PatrolAgent:
    def __init__(self, tolerance: float = 0.0, events: EventLog | None = None):
        self.tolerance = tolerance
        self.blacklist: set[str] = set()
        self.visits: list[list[str]] = []
        self.events = events or EventLog()

    def audit(self, miners: Mapping[str, MinerNode] | Sequence[MinerNode], rng: random.Random) -> dict[str, bool]:
        """Visit every claimant once, in random order. True means the claim held."""
        nodes = list(miners.values()) if isinstance(miners, Mapping) else list(miners)
        order = sorted(n.name for n in nodes)
        rng.shuffle(order)
        by_name = {n.name: n for n in nodes}
        verdicts = {}
        for name in order:
            node = by_name[name]
            ok = node.claimed_storage <= node.actual_storage * (1 + self.tolerance)
            verdicts[name] = ok
            if not ok and name not in self.blacklist:
                self.blacklist.add(name)
                self.events.emit("pa_blacklist", miner=name, claimed=node.claimed_storage,
                                 actual=node.actual_storage)
        self.visits.append(order)
        return verdicts


@dataclass
class Agents:
    """The full ensemble wired together."""

    registry: AgentRegistry
    events: EventLog
    sa: SearchAgent
    sma: SummaryManagerAgent
    sera: ServiceAgent
    rma: RewardManagerAgent
    stma: StorageManagerAgent
    pa: PatrolAgent
    bma: BlackboardManagerAgent
    bank: Bank

    @classmethod
    def create(cls, chain: Chain, pages: PageAccounting, *, payment_period_weeks: int,
               replicas_per_role: int = 2, seed: int | str = 0,
               conversion_rate: Decimal = Decimal(0)) -> "Agents":
        events = EventLog()
        registry = AgentRegistry(replicas_per_role, seed)
        bank = Bank(conversion_rate, events)
        return cls(
            registry=registry,
            events=events,
            sa=SearchAgent(events),
            sma=SummaryManagerAgent(registry, events),
            sera=ServiceAgent(chain, registry, events),
            rma=RewardManagerAgent(bank, pages, events),
            stma=StorageManagerAgent(payment_period_weeks, events),
            pa=PatrolAgent(events=events),
            bma=BlackboardManagerAgent(chain.blackboard, events),
            bank=bank,
        )
