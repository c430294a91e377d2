"""Storage fees, miner payouts, rewards and wasted-memory cost.

Money is ``Decimal``.  Wherever a formula divides, the exact value is computed
as a ``Fraction`` and then cut down (never rounded up) to a fixed quantum, so
payouts can never exceed what was collected.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from decimal import ROUND_DOWN, Decimal
from fractions import Fraction
from typing import Mapping, Sequence

from .core import MOM, Record

# a 1 KB page stored for five years costs 0.00000065 $
RATE_PER_PAGE_5Y = Decimal("0.00000065")
WEEKS_5Y = 260
RATE_PER_PAGE_WEEK = RATE_PER_PAGE_5Y / WEEKS_5Y
PERMANENT_FEE_PER_PAGE = Decimal("0.0000026")
HDD_LOAD_WATTS = Decimal("8.4")
ENERGY_PRICE_PER_KWH = Decimal("0.2852")

MONEY_QUANTUM = Decimal("1e-18")
PAGE_QUANTUM = Decimal("1e-9")


def quantize_down(value: Fraction | Decimal | int, quantum: Decimal = MONEY_QUANTUM) -> Decimal:
    """Exact value truncated toward zero to a multiple of ``quantum``."""
    q = Fraction(quantum)
    steps = Fraction(value) / q
    n = steps.numerator // steps.denominator if steps >= 0 else -((-steps.numerator) // steps.denominator)
    return (Decimal(n) * quantum).quantize(quantum, rounding=ROUND_DOWN)


@dataclass(frozen=True)
class FeeSchedule:
    rate_per_page_per_week: Decimal = RATE_PER_PAGE_WEEK
    permanent_fee_per_page: Decimal = PERMANENT_FEE_PER_PAGE
    mining_fee: Decimal = Decimal(0)

    def __post_init__(self) -> None:
        for name in ("rate_per_page_per_week", "permanent_fee_per_page", "mining_fee"):
            value = Decimal(getattr(self, name))
            if value < 0:
                raise ValueError(f"{name} must be non-negative")
            object.__setattr__(self, name, value)


def weeks_until_cp(week: int, cp_weeks: int) -> int:
    """Billed residence of a summarizable transaction: time to the next
    cleaning pass, at least one week."""
    return max(1, (-week) % cp_weeks)


def storage_fee_for(mom: MOM, n_pages: int, schedule: FeeSchedule, *, ttl: int | None = None,
                    week: int = 0, cp_weeks: int = 1) -> Decimal:
    if mom == MOM.DO_NOT_STORE:
        return Decimal(0)
    if mom == MOM.TEMPORARY:
        if ttl is None:
            raise ValueError("temporary fee needs a TTL")
        return n_pages * ttl * schedule.rate_per_page_per_week
    if mom == MOM.SUMMARIZABLE:
        return n_pages * weeks_until_cp(week, cp_weeks) * schedule.rate_per_page_per_week
    return n_pages * schedule.permanent_fee_per_page


def storage_fee(tx: Record, n_pages: int, schedule: FeeSchedule, cp_weeks: int = 1) -> Decimal:
    """Storage fee of ``tx`` (which occupies ``n_pages``)."""
    return storage_fee_for(tx.mom, n_pages, schedule, ttl=getattr(tx, "mom_setup", None),
                           week=tx.timestamp, cp_weeks=cp_weeks)


def transaction_fee(tx: Record, n_pages: int, schedule: FeeSchedule, cp_weeks: int = 1) -> Decimal:
    return schedule.mining_fee + storage_fee(tx, n_pages, schedule, cp_weeks)


# -- miner payouts --------------------------------------------------------

@dataclass(frozen=True)
class StorageClaim:
    miner: str
    storage_x: int
    joined_week: int = 0
    left_week: int | None = None

    def time_in(self, period_start: int, period_len: int) -> int:
        start = max(self.joined_week, period_start)
        end = period_start + period_len if self.left_week is None else min(self.left_week, period_start + period_len)
        return max(0, end - start)


@dataclass
class PaymentPeriodLedger:
    period: int
    period_weeks: int
    fee_pool: Decimal = Decimal(0)
    claims: list[StorageClaim] = field(default_factory=list)
    payouts: dict[str, Decimal] = field(default_factory=dict)

    @property
    def start_week(self) -> int:
        return self.period * self.period_weeks

    def collect(self, fee: Decimal) -> None:
        self.fee_pool += fee


def miner_shares(ledger: PaymentPeriodLedger, blacklist: frozenset[str] | set[str] = frozenset()
                 ) -> dict[str, Decimal]:
    """Share_X = Storage_X * Fee/Store_All * Time_X/PaymentPeriod for every claimant.

    Blacklisted miners are dropped before Store_All is computed.  With no
    eligible claimants nothing is paid and the pool carries over.
    """
    eligible = [c for c in ledger.claims if c.miner not in blacklist]
    store_all = sum(c.storage_x for c in eligible)
    payouts: dict[str, Decimal] = {}
    if store_all <= 0:
        ledger.payouts = payouts
        return payouts
    fee = Fraction(ledger.fee_pool)
    for c in eligible:
        time_x = c.time_in(ledger.start_week, ledger.period_weeks)
        exact = c.storage_x * fee / store_all * Fraction(time_x, ledger.period_weeks)
        payouts[c.miner] = payouts.get(c.miner, Decimal(0)) + quantize_down(exact)
    ledger.payouts = payouts
    return payouts


# -- rewards (in pages) ---------------------------------------------------

def removal_reward(removed_pages: int, remove_tx_pages: int) -> int:
    """Reward = Y.pages - X.pages, never negative."""
    return max(0, removed_pages - remove_tx_pages)


def summary_reward_total(member_pages: Sequence[int], summary_pages: int) -> int:
    """RewardT = sum of member pages - Sum.pages, never negative."""
    return max(0, sum(member_pages) - summary_pages)


def summary_reward_shares(member_pages: Mapping[bytes, int] | Sequence[tuple[bytes, int]],
                          summary_pages: int) -> dict[bytes, Decimal]:
    """RewardN = RewardT * t_N.pages / sum(t_i.pages), per owner key.

    ``member_pages`` pairs each member's owner key with its pages; owners
    with several members get the sum of their shares.
    """
    pairs = list(member_pages.items()) if isinstance(member_pages, Mapping) else list(member_pages)
    total_pages = sum(p for _, p in pairs)
    reward_t = summary_reward_total([p for _, p in pairs], summary_pages)
    per_owner: dict[bytes, Fraction] = {}
    for owner, p in pairs:
        per_owner[owner] = per_owner.get(owner, Fraction(0)) + Fraction(reward_t * p, total_pages)
    return {owner: quantize_down(v, PAGE_QUANTUM) for owner, v in per_owner.items()}


# -- wasted memory and energy --------------------------------------------

def wasted_cost(wasted_bytes: int, weeks_held: int, page_size: int = 1024,
                schedule: FeeSchedule = FeeSchedule()) -> Decimal:
    """Cost of holding ``wasted_bytes`` for ``weeks_held`` weeks."""
    exact = Fraction(wasted_bytes, page_size) * Fraction(schedule.rate_per_page_per_week) * weeks_held
    return quantize_down(exact)


def energy_joules(seconds: float, watts: Decimal = HDD_LOAD_WATTS) -> Decimal:
    return watts * Decimal(repr(seconds))


def energy_cost(seconds: float, watts: Decimal = HDD_LOAD_WATTS,
                price_per_kwh: Decimal = ENERGY_PRICE_PER_KWH) -> Decimal:
    kwh = Fraction(energy_joules(seconds, watts)) / 3_600_000
    return quantize_down(kwh * Fraction(price_per_kwh))


def benefit_cost_ratio(saved: Decimal, incurred: Decimal) -> float:
    if incurred <= 0:
        return float("inf")
    return float(saved / incurred)
