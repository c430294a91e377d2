"""One blockchain network: pending pool, miners, agents and the cleaning pass.

A ``Network`` is stepped by the simulator week by week.  Users submit records;
miners validate them and assemble blocks; at cleaning-period (CP) boundaries
the agents summarize, reward and clean, and miners spot-check agent output
according to their trust tables.
"""
from __future__ import annotations

import enum
import logging
import random
import time
from collections import defaultdict, deque
from collections.abc import Sequence
from dataclasses import dataclass, field
from decimal import Decimal

from .agents import (
    Agents,
    CleaningPlan,
    MinerNode,
    RedeemError,
    RedeemRequest,
    RemovalTracker,
    SummaryProposal,
    TrustTable,
    miner_check_summary,
)
from .chain import Block, Chain, compute_block_id, merkle_membership_proof, verify_membership
from .core import (
    MOM,
    AgedTransaction,
    LedgerRemoveTransaction,
    PageAccounting,
    Record,
    RemoveTransaction,
    SummaryTransaction,
    Transaction,
)
from .economics import FeeSchedule, StorageClaim, storage_fee, storage_fee_for
from .encoding import ZERO_DIGEST, H
from .gv import verify_signature
from .memopt import validate_optimization, validate_summary

log = logging.getLogger(__name__)


class Status(str, enum.Enum):
    POOLED = "pooled"
    DISCARDED = "discarded"  # valid DoNotStore transaction
    REJECTED = "rejected"


@dataclass(frozen=True)
class SubmitResult:
    status: Status
    fee: Decimal = Decimal(0)
    out_of_pocket: Decimal = Decimal(0)
    reason: str = ""

    @property
    def accepted(self) -> bool:
        return self.status != Status.REJECTED


@dataclass
class Miner:
    """A miner's independent view, used when it checks agent output."""

    name: str
    trust: TrustTable
    tracker: RemovalTracker
    backlog: dict[bytes, list[Record]] = field(default_factory=dict)
    storage_factor: float = 1.0  # claimed / actual; >1 is a false claim

    def observe(self, rec: Record, targets: Sequence[bytes]) -> None:
        self.tracker.observe(rec, targets)
        if rec.mom == MOM.SUMMARIZABLE and isinstance(rec, Transaction):
            self.backlog.setdefault(rec.pk_hash, []).append(rec)


@dataclass
class CpReport:
    """What happened in one cleaning pass."""

    week: int
    summaries: int = 0
    removed: int = 0
    bytes_freed: int = 0
    size_before: int = 0
    size_after: int = 0
    seconds: float = 0.0
    sma_faults: int = 0
    sera_faults: int = 0
    blocks_rechecked: int = 0
    block_id_mismatches: int = 0
    proofs_checked: int = 0
    proofs_failed: int = 0
    unsafe_removals: int = 0


@dataclass
class NetworkParams:
    block_size: int = 10
    page_size: int = 1024
    cp_weeks: int = 2
    payment_period_weeks: int = 4
    blocks_per_week: int | None = None
    fees: FeeSchedule = field(default_factory=FeeSchedule)
    replicas_per_role: int = 2
    vp_min: float = 0.01
    trust_penalty: int = 10
    miners: int = 3
    verify_signatures: bool = True
    audit: bool = False
    seed: int = 0


class Network:
    def __init__(self, params: NetworkParams | None = None, name: str = "main"):
        self.params = p = params or NetworkParams()
        self.name = name
        self.chain = Chain(p.block_size)
        self.pages = PageAccounting(p.page_size)
        self.agents = Agents.create(self.chain, self.pages, payment_period_weeks=p.payment_period_weeks,
                                    replicas_per_role=p.replicas_per_role, seed=f"{p.seed}/{name}",
                                    conversion_rate=p.fees.rate_per_page_per_week)
        self.rng = random.Random(f"{p.seed}/{name}/network")
        self.miners = [Miner(f"miner-{i}", TrustTable(p.vp_min, p.trust_penalty), RemovalTracker(self.chain))
                       for i in range(p.miners)]
        for m in self.miners:
            self.agents.stma.register(StorageClaim(m.name, 1))
        self.keys: dict[bytes, bytes] = {}
        self.pool: deque[Record] = deque()
        self.pending_ids: set[bytes] = set()
        self.targets: dict[bytes, list[bytes]] = {}
        self.requested: set[bytes] = set()
        self.budget: float = 0
        self.week = 0
        self._miner_turn = 0
        # counters
        self.user_mined = 0
        self.user_mined_window = 0
        self.summary_mined = 0
        self.fees_total = Decimal(0)
        self.out_of_pocket_total = Decimal(0)
        self.cp_reports: list[CpReport] = []
        # wasted-memory bookkeeping
        self._temp_info: dict[bytes, tuple[int, int]] = {}
        self._temp_buckets: dict[int, list[bytes]] = defaultdict(list)
        self._expired_bytes = 0
        self._summarizable_bytes = 0

    # -- keys and submission --

    def register_key(self, public: bytes) -> bytes:
        pk_hash = H(public)
        self.keys[pk_hash] = public
        return pk_hash

    def _known(self, t_id: bytes) -> bool:
        return t_id in self.chain or t_id in self.pending_ids

    def _reject(self, reason: str) -> SubmitResult:
        log.debug("reject: %s", reason)
        return SubmitResult(Status.REJECTED, reason=reason)

    def _check_user_tx(self, tx: Transaction) -> str | None:
        if not tx.has_valid_t_id():
            return "t_id does not hash the content"
        if self._known(tx.t_id):
            return "duplicate transaction"
        public = self.keys.get(tx.pk_hash)
        if public is None:
            return "unknown signing key"
        if self.params.verify_signatures and not verify_signature(public, tx.signature, tx.signing_bytes):
            return "bad signature"
        if tx.p_t_id != ZERO_DIGEST and not self._known(tx.p_t_id):
            return "p_t_id does not exist"
        for ref in tx.inputs:
            if self.chain.resolve_input(ref) is None:
                return "input does not resolve"
        if tx.pay_by_reward and tx.t_id not in self.chain.blackboard.reward_paid_tx_ids:
            return "pay-by-reward transaction not listed by the bank"
        return None

    def fee_of(self, rec: Record) -> Decimal:
        if isinstance(rec, Transaction):
            return storage_fee(rec, self.pages.pages(rec), self.params.fees, self.params.cp_weeks)
        return storage_fee_for(MOM.PERMANENT, self.pages.pages(rec), self.params.fees)

    def submit(self, rec: Record, *, members: Sequence[bytes] | None = None) -> SubmitResult:
        """Validate ``rec`` as a miner would and put it in the pending pool.

        ``members`` accompanies a user or provider summary: the ids of the
        transactions it replaces (the stored summary only keeps prefixes).
        """
        if isinstance(rec, Transaction):
            reason = self._check_user_tx(rec)
            if reason:
                return self._reject(reason)
        else:
            if self._known(rec.t_id):
                return self._reject("duplicate transaction")
            if isinstance(rec, SummaryTransaction):
                if members is None:
                    return self._reject("summary submitted without its member ids")
                recs = [self.chain.get(t) for t in members]
                if any(r is None for r in recs) or not validate_summary(rec, self.chain, recs):
                    return self._reject("invalid summary")
                self.targets[rec.t_id] = list(members)
            elif not validate_optimization(rec, self.chain):
                return self._reject(f"invalid {type(rec).__name__}")
            elif isinstance(rec, LedgerRemoveTransaction):
                self.targets[rec.t_id] = [t for t in self.chain.ledger_from(rec.genesis_t_id)
                                          if self.chain.get(t) is not None]
        fee = self.fee_of(rec)
        paid_by_bank = getattr(rec, "pay_by_reward", False)
        oop = Decimal(0) if paid_by_bank else fee
        self.fees_total += fee
        self.out_of_pocket_total += oop
        self.agents.stma.collect(fee)
        if rec.mom == MOM.DO_NOT_STORE:
            return SubmitResult(Status.DISCARDED, fee, oop)
        self.pool.append(rec)
        self.pending_ids.add(rec.t_id)
        return SubmitResult(Status.POOLED, fee, oop)

    def redeem(self, req: RedeemRequest, tx: Transaction) -> bool:
        try:
            self.agents.bank.redeem(req, self.pages.pages(tx), self.agents.bma)
        except RedeemError as exc:
            self.agents.events.emit("redeem_refused", reason=type(exc).__name__)
            return False
        return True

    # -- block production --

    def start_week(self, week: int) -> None:
        self.week = week
        bpw = self.params.blocks_per_week
        if bpw is not None:
            self.budget = min(self.budget, 0) + bpw
        for t in self._temp_buckets.pop(week, ()):
            if self.chain.get(t) is not None:
                self._expired_bytes += self._temp_info[t][1]

    def _mine_one(self) -> Block:
        records = [self.pool.popleft() for _ in range(self.params.block_size)]
        block = self.chain.mine(records, self.week)
        self.budget -= 1
        for rec in records:
            self.pending_ids.discard(rec.t_id)
        self._after_block(block)
        return block

    def produce_blocks(self) -> list[Block]:
        """Mine full blocks FIFO while the weekly budget lasts."""
        out = []
        unlimited = self.params.blocks_per_week is None
        while len(self.pool) >= self.params.block_size and (unlimited or self.budget >= 1):
            out.append(self._mine_one())
        return out

    def _after_block(self, block: Block) -> None:
        routes = self.agents.sa.scan(block)
        by_id = {e.t_id: e.content for e in block.entries}
        for e in block.entries:
            rec = e.content
            targets = self.targets.get(rec.t_id, ())
            for m in self.miners:
                m.observe(rec, targets)
            if isinstance(rec, Transaction):
                self.user_mined += 1
                self.user_mined_window += 1
                if rec.mom == MOM.SUMMARIZABLE:
                    self._summarizable_bytes += e.size
            elif isinstance(rec, SummaryTransaction):
                self.summary_mined += 1
            if rec.mom == MOM.TEMPORARY:
                expiry = rec.timestamp + rec.mom_setup
                self._temp_info[rec.t_id] = (expiry, e.size)
                if expiry <= self.week:
                    self._expired_bytes += e.size
                else:
                    self._temp_buckets[expiry].append(rec.t_id)
        self.agents.sma.receive(by_id[t] for t in routes.to_sma)
        for t in routes.to_sera:
            self.agents.sera.observe(by_id[t], self.targets.get(t, ()))
        for t in routes.to_rma:
            self._reward(by_id[t])

    def _reward(self, rec: Record) -> None:
        rma = self.agents.rma
        if isinstance(rec, SummaryTransaction):
            members = [self.chain.get(t) for t in self.targets.get(rec.t_id, ())]
            members = [m for m in members if m is not None]
            if members:
                self.requested.update(m.t_id for m in members)
                rma.reward_summary(rec, members)
        elif isinstance(rec, RemoveTransaction):
            target = self.chain.get(rec.target_t_id)
            if target is not None:
                self.requested.add(target.t_id)
                rma.reward_removal(rec, [target])
        elif isinstance(rec, AgedTransaction):
            original = self.chain.get(rec.original_t_id)
            if original is not None:
                self.requested.add(original.t_id)
                rma.reward_removal(rec, [original])
        elif isinstance(rec, LedgerRemoveTransaction):
            ledger = [self.chain.get(t) for t in self.targets.get(rec.t_id, ())]
            ledger = [r for r in ledger if r is not None]
            if ledger:
                self.requested.update(r.t_id for r in ledger)
                rma.reward_removal(rec, ledger)

    # -- the cleaning pass --

    def _checking_miner(self) -> Miner:
        m = self.miners[self._miner_turn % len(self.miners)]
        self._miner_turn += 1
        return m

    def _accept_summary(self, proposal: SummaryProposal, miner: Miner, report: CpReport) -> SummaryProposal:
        sma = self.agents.sma
        registry = self.agents.registry
        while True:
            agent = proposal.replica.agent_id
            if not miner.trust.should_validate(agent, self.rng):
                return proposal
            members = miner.backlog.get(proposal.ledger, [])
            ok = miner_check_summary(proposal, members)
            miner.trust.observe(agent, ok)
            if ok:
                return proposal
            report.sma_faults += 1
            self.agents.events.emit("sma_fault", miner=miner.name, replica=agent)
            registry.deactivate(proposal.replica)
            ledger_members = [self.chain.get(t) for t in proposal.members]
            proposal = sma.propose(proposal.ledger, ledger_members, self.week)

    def _accept_plan(self, plan: CleaningPlan, replica, miner: Miner, own: CleaningPlan,
                     report: CpReport) -> CleaningPlan:
        agent = replica.agent_id
        if not miner.trust.should_validate(agent, self.rng):
            return plan
        ok = plan.key() == own.key()
        miner.trust.observe(agent, ok)
        if ok:
            return plan
        report.sera_faults += 1
        self.agents.events.emit("sera_fault", miner=miner.name, replica=agent)
        self.agents.registry.deactivate(replica)
        return own

    def _remove(self, t_id: bytes, report: CpReport) -> int:
        rec = self.chain.get(t_id)
        if rec is None:
            return 0
        info = self._temp_info.pop(t_id, None)
        safe = t_id in self.requested
        if info is not None:
            expiry, size = info
            if expiry <= self.week:
                self._expired_bytes -= size
                safe = True
        if rec.mom == MOM.SUMMARIZABLE and isinstance(rec, Transaction):
            self._summarizable_bytes -= 1 + rec.size
        if not safe:
            report.unsafe_removals += 1
            self.agents.events.emit("unsafe_removal", t_id=t_id, mom=rec.mom.name)
        self.requested.discard(t_id)
        report.removed += 1
        return self.chain.remove_content(t_id)

    def cleaning_pass(self) -> CpReport:
        """SMA summaries, their immediate mining, then the SerA batch clean."""
        report = CpReport(self.week, size_before=self.chain.size_bytes)
        start = time.perf_counter()
        start_height = len(self.chain)
        miner = self._checking_miner()

        proposals = [self._accept_summary(p, miner, report) for p in self.agents.sma.summarize_at_cp(self.week)]
        for p in proposals:
            self.targets[p.summary.t_id] = p.members
        for m in self.miners:
            for p in proposals:
                m.backlog.pop(p.ledger, None)
        self.pool.extendleft(reversed([p.summary for p in proposals]))
        self.pending_ids.update(p.summary.t_id for p in proposals)
        report.summaries = len(proposals)
        self._mine_pending_summaries()

        plan, replica = self.agents.sera.plan(self.week)
        own = miner.tracker.plan(self.week)
        for other in self.miners:
            if other is not miner:
                other.tracker.plan(self.week)
        plan = self._accept_plan(plan, replica, miner, own, report)
        touched: set[int] = set()
        for t in plan.removals:
            if self.chain.get(t) is not None:
                touched.add(self.chain.block_of(t).height)
                report.bytes_freed += self._remove(t, report)
        for old, new in plan.redirects:
            self.agents.bma.redirect(self.chain, old, new)
        report.seconds = time.perf_counter() - start
        report.size_after = self.chain.size_bytes

        if self.params.audit:
            self._audit_pass(report, touched | set(range(start_height, len(self.chain))), proposals)
        self.audit_storage()
        self.user_mined_window = 0
        self.cp_reports.append(report)
        return report

    def _mine_pending_summaries(self) -> None:
        """Summary blocks go out right away, even past the weekly budget."""
        while self.pool and isinstance(self.pool[0], SummaryTransaction) and len(self.pool) >= self.params.block_size:
            self._mine_one()

    def _audit_pass(self, report: CpReport, heights: set[int], proposals: list[SummaryProposal]) -> None:
        for h in sorted(heights):
            b = self.chain.blocks[h]
            report.blocks_rechecked += 1
            if compute_block_id(b.t_ids(), b.header) != b.block_id:
                report.block_id_mismatches += 1
        for p in proposals:
            if p.summary.t_id not in self.chain:
                continue
            ok, n = audit_summary(self.chain, p.summary, p.members)
            report.proofs_checked += n
            report.proofs_failed += n - ok

    # -- storage claims and payouts --

    def miner_nodes(self) -> list[MinerNode]:
        actual = self.chain.size_bytes
        return [MinerNode(m.name, int(actual * m.storage_factor), actual) for m in self.miners]

    def audit_storage(self) -> dict[str, bool]:
        return self.agents.pa.audit(self.miner_nodes(), self.rng)

    def close_payment_period(self) -> dict[str, Decimal]:
        for node in self.miner_nodes():
            self.agents.stma.register(StorageClaim(node.name, node.claimed_storage,
                                                   self.agents.stma.ledger.start_week))
        return self.agents.stma.close_period(self.agents.pa.blacklist)

    # -- metrics --

    @property
    def wasted_memory_bytes(self) -> int:
        return self._expired_bytes + self._summarizable_bytes


def audit_summary(chain: Chain, summary: SummaryTransaction, member_ids: Sequence[bytes]) -> tuple[int, int]:
    """Membership proofs for every member against the stored summary root.

    Members may already be tombstones; only their ids are needed.  Returns
    (verified, checked).
    """
    stored = chain.get(summary.t_id)
    if stored is None:
        return 0, len(member_ids)
    # leaves are in chronological order, which the TransOrder prefixes record
    order = {prefix: i for i, prefix in enumerate(stored.trans_order)}
    leaves = sorted(member_ids, key=lambda t: order.get(t[: stored.d], len(order)))
    ok = 0
    for i, t in enumerate(leaves):
        if verify_membership(stored.merkle_root, t, merkle_membership_proof(leaves, i)):
            ok += 1
    return ok, len(leaves)
