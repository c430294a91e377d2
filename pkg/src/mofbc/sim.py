"""Weekly discrete-time simulator, its configuration and the named presets.

Each simulated week runs, in order: node emissions, block assembly, the
cleaning pass on CP boundaries, payouts on payment-period boundaries, and
finally one metrics row per chain.  Weeks are numbered from 0 and a CP
boundary is any week ``w > 0`` with ``w % cp_weeks == 0``.

Config files are INI::

    [sim]
    weeks = 280
    cp_weeks = 2
    ...
    [fees]
    rate_per_page_per_week = 0.0000000025
    [cohort.permanent]
    nodes = 300
    mom = permanent
    group = main          # cohorts sharing a group share a chain

``metrics.csv`` columns are ``METRICS_COLUMNS``; wall-clock timings go to a
separate ``timings.csv`` so the metrics file is a pure function of the config.
"""
from __future__ import annotations

import configparser
import csv
import io
import json
import logging
from collections.abc import Iterable
from dataclasses import asdict, dataclass, field, fields, replace
from decimal import Decimal
from pathlib import Path
import random

from .agents import RedeemRequest
from .core import MOM, PageAccounting, Transaction, seal
from .economics import FeeSchedule, benefit_cost_ratio, energy_cost, storage_fee_for
from .encoding import ZERO_DIGEST
from .gv import SIGNATURE_SIZE, KeyPair
from .network import CpReport, Network, NetworkParams, Status

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Cohort:
    name: str
    nodes: int
    mom: MOM
    ttl: int | None = None
    group: str = "main"

    def __post_init__(self) -> None:
        object.__setattr__(self, "mom", MOM(self.mom))
        if self.nodes < 1:
            raise ConfigError(f"cohort {self.name}: nodes must be positive")
        if self.mom == MOM.TEMPORARY and (self.ttl is None or self.ttl < 1):
            raise ConfigError(f"cohort {self.name}: temporary cohorts need ttl >= 1")
        if self.mom != MOM.TEMPORARY and self.ttl is not None:
            raise ConfigError(f"cohort {self.name}: ttl only applies to temporary cohorts")


def default_cohorts(group_by_mom: bool = False) -> tuple[Cohort, ...]:
    """300 permanent, 300 temporary (100 each at TTL 26/52/104), 300 summarizable."""

    def g(name: str) -> str:
        return name if group_by_mom else "main"

    return (
        Cohort("permanent", 300, MOM.PERMANENT, group=g("permanent")),
        Cohort("temporary-26", 100, MOM.TEMPORARY, 26, group=g("temporary")),
        Cohort("temporary-52", 100, MOM.TEMPORARY, 52, group=g("temporary")),
        Cohort("temporary-104", 100, MOM.TEMPORARY, 104, group=g("temporary")),
        Cohort("summarizable", 300, MOM.SUMMARIZABLE, group=g("summarizable")),
    )


@dataclass(frozen=True)
class SimConfig:
    weeks: int = 280
    tx_per_node_per_week: int = 1
    block_size: int = 10
    page_size: int = 1024
    cp_weeks: int = 2
    payment_period_weeks: int = 4
    blocks_per_week: int | None = None
    payload_bytes: int = 32
    rng_seed: int = 0
    cohorts: tuple[Cohort, ...] = field(default_factory=default_cohorts)
    fees: FeeSchedule = field(default_factory=FeeSchedule)
    redeem_rewards: bool = True
    replicas_per_role: int = 2
    vp_min: float = 0.01
    trust_penalty: int = 10
    miners: int = 3
    verify_signatures: bool = True
    audit: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "cohorts", tuple(self.cohorts))
        for name in ("weeks", "tx_per_node_per_week", "block_size", "cp_weeks",
                     "payment_period_weeks", "replicas_per_role", "miners"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.payload_bytes < 0 or self.page_size < 1:
            raise ConfigError("payload_bytes must be >= 0 and page_size positive")
        if self.blocks_per_week is not None and self.blocks_per_week < 1:
            raise ConfigError("blocks_per_week must be positive (or unset for unlimited)")
        if not self.cohorts:
            raise ConfigError("need at least one cohort")
        if len({c.name for c in self.cohorts}) != len(self.cohorts):
            raise ConfigError("cohort names must be unique")

    @property
    def node_count(self) -> int:
        return sum(c.nodes for c in self.cohorts)

    @property
    def groups(self) -> list[str]:
        return list(dict.fromkeys(c.group for c in self.cohorts))

    def network_params(self) -> NetworkParams:
        return NetworkParams(
            block_size=self.block_size, page_size=self.page_size, cp_weeks=self.cp_weeks,
            payment_period_weeks=self.payment_period_weeks, blocks_per_week=self.blocks_per_week,
            fees=self.fees, replicas_per_role=self.replicas_per_role, vp_min=self.vp_min,
            trust_penalty=self.trust_penalty, miners=self.miners,
            verify_signatures=self.verify_signatures, audit=self.audit, seed=self.rng_seed,
        )

    def all_permanent(self) -> "SimConfig":
        """Same workload stored the conventional way."""
        return replace(self, cohorts=tuple(replace(c, mom=MOM.PERMANENT, ttl=None) for c in self.cohorts))


# -- config files ---------------------------------------------------------

_SIM_INT = ("weeks", "tx_per_node_per_week", "block_size", "page_size", "cp_weeks",
            "payment_period_weeks", "payload_bytes", "rng_seed", "replicas_per_role",
            "trust_penalty", "miners")
_SIM_BOOL = ("redeem_rewards", "verify_signatures", "audit")


def config_from_parser(cp: configparser.ConfigParser) -> SimConfig:
    kw: dict = {}
    if cp.has_section("sim"):
        s = cp["sim"]
        for key in s:
            try:
                if key in _SIM_INT:
                    kw[key] = s.getint(key)
                elif key in _SIM_BOOL:
                    kw[key] = s.getboolean(key)
                elif key == "vp_min":
                    kw[key] = s.getfloat(key)
                elif key == "blocks_per_week":
                    v = s.get(key).strip().lower()
                    kw[key] = None if v in ("", "none", "unlimited") else int(v)
                else:
                    raise ConfigError(f"unknown [sim] key {key!r}")
            except ValueError as exc:
                raise ConfigError(f"[sim] {key}: {exc}") from exc
    if cp.has_section("fees"):
        try:
            kw["fees"] = FeeSchedule(**{k: Decimal(v) for k, v in cp["fees"].items()})
        except (TypeError, ValueError, ArithmeticError) as exc:
            raise ConfigError(f"[fees]: {exc}") from exc
    cohorts = []
    for section in cp.sections():
        if not section.startswith("cohort."):
            if section not in ("sim", "fees"):
                raise ConfigError(f"unknown section [{section}]")
            continue
        s = cp[section]
        try:
            mom = MOM[s.get("mom", "permanent").strip().upper().replace("-", "_")]
        except KeyError:
            raise ConfigError(f"[{section}] unknown mom {s.get('mom')!r}") from None
        ttl = s.get("ttl", "").strip()
        try:
            cohorts.append(Cohort(section[len("cohort."):], s.getint("nodes", 0), mom,
                                  int(ttl) if ttl else None, s.get("group", "main").strip()))
        except ValueError as exc:
            raise ConfigError(f"[{section}]: {exc}") from exc
    if cohorts:
        kw["cohorts"] = tuple(cohorts)
    return SimConfig(**kw)


def load_config(path: str | Path) -> SimConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    return config_from_parser(cp)


def dump_config(cfg: SimConfig) -> str:
    cp = configparser.ConfigParser()
    cp["sim"] = {}
    for f in fields(cfg):
        if f.name in ("cohorts", "fees"):
            continue
        v = getattr(cfg, f.name)
        cp["sim"][f.name] = "unlimited" if v is None else str(v).lower() if isinstance(v, bool) else str(v)
    cp["fees"] = {f.name: str(getattr(cfg.fees, f.name)) for f in fields(cfg.fees)}
    for c in cfg.cohorts:
        cp[f"cohort.{c.name}"] = {"nodes": str(c.nodes), "mom": c.mom.name.lower(),
                                  "ttl": "" if c.ttl is None else str(c.ttl), "group": c.group}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


# -- presets --------------------------------------------------------------

FIG9_12_CPS = (90, 180, 360)


def scenario_suite() -> dict[str, SimConfig]:
    """Named presets.  The CP trend presets default to CP 90 (use ``with_cp``)."""
    isolated = SimConfig(cohorts=default_cohorts(group_by_mom=True))
    trend = SimConfig(weeks=400, cp_weeks=90, blocks_per_week=90)
    return {
        "default": SimConfig(),
        "fig8": isolated,
        "table3": isolated,
        "fig9": trend,
        "fig10": trend,
        "fig11": trend,
        "fig12": trend,
        "fig9-12": trend,
    }


def preset(name: str, *, cp_weeks: int | None = None, seed: int | None = None,
           weeks: int | None = None) -> SimConfig:
    presets = scenario_suite()
    if name not in presets:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(presets)}")
    cfg = presets[name]
    changes = {}
    if cp_weeks is not None:
        changes["cp_weeks"] = cp_weeks
    if seed is not None:
        changes["rng_seed"] = seed
    if weeks is not None:
        changes["weeks"] = weeks
    return replace(cfg, **changes) if changes else cfg


# -- running --------------------------------------------------------------

@dataclass
class MetricsFrame:
    week: int
    chain: str
    bc_size_bytes: int
    block_count: int
    throughput_tx: int
    wasted_memory_bytes: int
    cumulative_fees: Decimal
    cumulative_rewards: Decimal
    user_tx_emitted: int
    user_tx_mined: int
    dns_discarded: int
    pending: int
    processing_time_ms: float = 0.0


METRICS_COLUMNS = [f.name for f in fields(MetricsFrame) if f.name != "processing_time_ms"]


@dataclass
class CohortStats:
    emitted: int = 0
    discarded: int = 0
    rejected: int = 0
    fees: Decimal = Decimal(0)
    out_of_pocket: Decimal = Decimal(0)
    permanent_equivalent: Decimal = Decimal(0)
    paid_by_reward: int = 0
    rewards_pages: Decimal = Decimal(0)


@dataclass
class Node:
    index: int
    cohort: Cohort
    keys: KeyPair
    network: Network
    head: bytes = ZERO_DIGEST


@dataclass
class SimResult:
    config: SimConfig
    frames: list[MetricsFrame]
    networks: dict[str, Network]
    cohorts: dict[str, CohortStats]
    nodes: list[Node]

    def frames_for(self, chain: str) -> list[MetricsFrame]:
        return [f for f in self.frames if f.chain == chain]

    def final_size(self, chain: str | None = None) -> int:
        nets = self.networks.values() if chain is None else [self.networks[chain]]
        return sum(n.chain.size_bytes for n in nets)

    def cp_reports(self, chain: str | None = None) -> list[CpReport]:
        nets = self.networks.values() if chain is None else [self.networks[chain]]
        return [r for n in nets for r in n.cp_reports]

    def processing_seconds(self, chain: str) -> float:
        return sum(r.seconds for r in self.networks[chain].cp_reports)

    def metrics_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(METRICS_COLUMNS)
        for f in self.frames:
            w.writerow([getattr(f, c) for c in METRICS_COLUMNS])
        return buf.getvalue()

    def timings_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["week", "chain", "processing_time_ms"])
        for f in self.frames:
            w.writerow([f.week, f.chain, f"{f.processing_time_ms:.3f}"])
        return buf.getvalue()


class Simulator:
    """Steps one configuration week by week.  Use ``run`` for the whole thing."""

    def __init__(self, cfg: SimConfig):
        self.cfg = cfg
        params = cfg.network_params()
        self.networks = {g: Network(params, g) for g in cfg.groups}
        self.pages = PageAccounting(cfg.page_size)
        self.rng = random.Random(f"{cfg.rng_seed}/payload")
        self.nodes: list[Node] = []
        for c in cfg.cohorts:
            net = self.networks[c.group]
            for _ in range(c.nodes):
                keys = KeyPair.derive("node", cfg.rng_seed, len(self.nodes))
                net.register_key(keys.public)
                self.nodes.append(Node(len(self.nodes), c, keys, net))
        self.stats = {c.name: CohortStats() for c in cfg.cohorts}
        self.emitted = {g: 0 for g in self.networks}
        self.discarded = {g: 0 for g in self.networks}
        self.frames: list[MetricsFrame] = []
        self.week = 0

    def _emit(self, node: Node, week: int) -> None:
        c = node.cohort
        net = node.network
        stats = self.stats[c.name]
        draft = Transaction(p_t_id=node.head, mom=c.mom, mom_setup=c.ttl,
                            payload=self.rng.randbytes(self.cfg.payload_bytes), timestamp=week)
        n_pages = self.pages.pages_for_size(draft.size + SIGNATURE_SIZE)
        by_reward = (self.cfg.redeem_rewards and c.mom != MOM.DO_NOT_STORE
                     and net.agents.bank.balance(node.keys.pk_hash) >= n_pages)
        tx = seal(replace(draft, pay_by_reward=True) if by_reward else draft, node.keys)
        if by_reward:
            req = RedeemRequest(tx.t_id, public_key=node.keys.public).signed(node.keys)
            if net.redeem(req, tx):
                stats.paid_by_reward += 1
            else:
                tx = seal(draft, node.keys)
        stats.emitted += 1
        self.emitted[c.group] += 1
        stats.permanent_equivalent += storage_fee_for(MOM.PERMANENT, n_pages, self.cfg.fees)
        result = net.submit(tx)
        stats.fees += result.fee
        stats.out_of_pocket += result.out_of_pocket
        if result.status == Status.REJECTED:
            stats.rejected += 1
            log.warning("node %d transaction rejected: %s", node.index, result.reason)
        elif result.status == Status.DISCARDED:
            stats.discarded += 1
            self.discarded[c.group] += 1
        else:
            node.head = tx.t_id

    def step(self) -> list[MetricsFrame]:
        cfg, week = self.cfg, self.week
        for net in self.networks.values():
            net.start_week(week)
        for node in self.nodes:
            for _ in range(cfg.tx_per_node_per_week):
                self._emit(node, week)
        for net in self.networks.values():
            net.produce_blocks()
        elapsed = {g: 0.0 for g in self.networks}
        if week > 0 and week % cfg.cp_weeks == 0:
            for g, net in self.networks.items():
                elapsed[g] = net.cleaning_pass().seconds
        if (week + 1) % cfg.payment_period_weeks == 0:
            for net in self.networks.values():
                net.close_payment_period()
        out = []
        for g, net in self.networks.items():
            out.append(MetricsFrame(
                week=week, chain=g, bc_size_bytes=net.chain.size_bytes, block_count=len(net.chain),
                throughput_tx=net.user_mined_window, wasted_memory_bytes=net.wasted_memory_bytes,
                cumulative_fees=net.out_of_pocket_total, cumulative_rewards=net.agents.bank.total_credited,
                user_tx_emitted=self.emitted[g], user_tx_mined=net.user_mined,
                dns_discarded=self.discarded[g],
                pending=sum(1 for r in net.pool if isinstance(r, Transaction)),
                processing_time_ms=elapsed[g] * 1000,
            ))
        self.frames.extend(out)
        self.week += 1
        return out

    def result(self) -> SimResult:
        for node in self.nodes:
            bank = node.network.agents.bank
            self.stats[node.cohort.name].rewards_pages += bank.credited_by_account.get(node.keys.pk_hash, Decimal(0))
        return SimResult(self.cfg, self.frames, self.networks, self.stats, self.nodes)


def run(cfg: SimConfig) -> SimResult:
    sim = Simulator(cfg)
    for _ in range(cfg.weeks):
        sim.step()
    return sim.result()


# -- headline numbers -----------------------------------------------------

def _dec(v: Decimal) -> str:
    return format(v.normalize(), "f") if v else "0"


def benefit_cost(result: SimResult) -> dict[str, dict]:
    """Per chain: fees saved against storing everything permanently, energy
    cost of the measured cleaning time, and their ratio."""
    out = {}
    for g in result.networks:
        cohorts = [c for c in result.config.cohorts if c.group == g]
        saved = sum((result.cohorts[c.name].permanent_equivalent - result.cohorts[c.name].out_of_pocket
                     for c in cohorts), Decimal(0))
        seconds = result.processing_seconds(g)
        incurred = energy_cost(seconds)
        out[g] = {"saved_usd": _dec(saved), "processing_seconds": round(seconds, 6),
                  "incurred_usd": _dec(incurred), "ratio": benefit_cost_ratio(saved, incurred)}
    return out


def summarize(result: SimResult, baseline: SimResult | None = None) -> dict:
    final = {g: n.chain.size_bytes for g, n in result.networks.items()}
    out = {
        "weeks": result.config.weeks,
        "seed": result.config.rng_seed,
        "final_bc_size_bytes": final,
        "final_block_count": {g: len(n.chain) for g, n in result.networks.items()},
        "total_fees_usd": _dec(sum((n.out_of_pocket_total for n in result.networks.values()), Decimal(0))),
        "total_rewards_pages": _dec(sum((n.agents.bank.total_credited for n in result.networks.values()),
                                        Decimal(0))),
        "cohorts": {name: {k: (_dec(v) if isinstance(v, Decimal) else v) for k, v in asdict(s).items()}
                    for name, s in result.cohorts.items()},
        "benefit_cost": benefit_cost(result),
    }
    if baseline is not None:
        base = baseline.final_size()
        out["baseline_bc_size_bytes"] = base
        out["reduction_vs_baseline_pct"] = round(100 * (base - result.final_size()) / base, 4) if base else 0.0
    return out


def run_with_baseline(cfg: SimConfig) -> tuple[SimResult, SimResult]:
    return run(cfg), run(cfg.all_permanent())


def write_outputs(result: SimResult, out_dir: str | Path, summary: dict | None = None,
                  snapshot: bool = True) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    (out / "metrics.csv").write_text(result.metrics_csv())
    (out / "timings.csv").write_text(result.timings_csv())
    written += [out / "metrics.csv", out / "timings.csv"]
    if summary is not None:
        (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
        written.append(out / "summary.json")
    if snapshot:
        for g, net in result.networks.items():
            p = out / f"chain-{g}.snapshot"
            p.write_bytes(net.chain.encode_snapshot())
            written.append(p)
    return written


def read_metrics_csv(text: str) -> list[dict]:
    return list(csv.DictReader(io.StringIO(text)))


def series(frames: Iterable[MetricsFrame], column: str) -> list:
    return [getattr(f, column) for f in frames]
