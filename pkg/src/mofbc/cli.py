"""Command-line driver.

Exit codes: 0 success, 1 usage/config/IO error, 2 verification failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .chain import Chain, ChainError, SnapshotError, decode_proof, verify_membership
from .core import SummaryTransaction
from .encoding import DecodeError
from .sim import ConfigError, SimResult, load_config, preset, run, scenario_suite, summarize, write_outputs

EXIT_OK, EXIT_USAGE, EXIT_VERIFY = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse exits with 2 by default
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, help="override the RNG seed")
    p.add_argument("--weeks", type=int, help="override the run length")
    p.add_argument("--out", default="out", help="output directory (default: out)")
    p.add_argument("--plot", action="store_true", help="also write metrics.png")
    p.add_argument("--no-baseline", action="store_true",
                   help="skip the all-permanent comparison run")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="mofbc", description="Memory-optimized blockchain simulator")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("run", help="run a scenario from a config file")
    p.add_argument("--config", required=True)
    _add_run_flags(p)

    p = sub.add_parser("preset", help="run a named preset")
    p.add_argument("name", choices=sorted(scenario_suite()))
    p.add_argument("--cp", type=int, help="cleaning period in weeks")
    _add_run_flags(p)

    p = sub.add_parser("verify-chain", help="re-check a chain snapshot")
    p.add_argument("snapshot")

    p = sub.add_parser("audit-proof", help="check a removed transaction against a summary's Merkle root")
    p.add_argument("snapshot")
    p.add_argument("--t-id", required=True, help="hex id of the summarized transaction")
    p.add_argument("--proof", required=True, help="membership proof as L:<hex>,R:<hex>,...")
    p.add_argument("--summary", required=True, help="hex id of the summary transaction")

    p = sub.add_parser("fees-report", help="per-cohort fees, rewards and benefit/cost")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--summary-json", help="read an existing summary.json")
    src.add_argument("--preset", choices=sorted(scenario_suite()))
    src.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--weeks", type=int)
    return ap


def _config(args):
    if getattr(args, "config", None):
        cfg = load_config(args.config)
    else:
        name = args.name if args.command == "preset" else args.preset
        cfg = preset(name, cp_weeks=getattr(args, "cp", None))
    changes = {}
    if args.seed is not None:
        changes["rng_seed"] = args.seed
    if args.weeks is not None:
        changes["weeks"] = args.weeks
    return replace(cfg, **changes) if changes else cfg


def plot_metrics(result: SimResult, path: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(1, 2, figsize=(11, 4))
    for chain in result.networks:
        frames = result.frames_for(chain)
        weeks = [f.week for f in frames]
        axes[0].plot(weeks, [f.bc_size_bytes / 1e6 for f in frames], label=chain)
        axes[1].plot(weeks, [f.wasted_memory_bytes / 1e6 for f in frames], label=chain)
    axes[0].set(xlabel="week", ylabel="BC size (MB)")
    axes[1].set(xlabel="week", ylabel="wasted memory (MB)")
    for ax in axes:
        ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def cmd_run(args) -> int:
    cfg = _config(args)
    result = run(cfg)
    baseline = None if args.no_baseline else run(cfg.all_permanent())
    summary = summarize(result, baseline)
    out = Path(args.out)
    for p in write_outputs(result, out, summary):
        print(p)
    if args.plot:
        plot_metrics(result, out / "metrics.png")
        print(out / "metrics.png")
    if "reduction_vs_baseline_pct" in summary:
        print(f"reduction vs all-permanent baseline: {summary['reduction_vs_baseline_pct']:.2f}%")
    return EXIT_OK


def _load_snapshot(path: str) -> Chain:
    return Chain.decode_snapshot(Path(path).read_bytes())


def cmd_verify_chain(args) -> int:
    try:
        chain = _load_snapshot(args.snapshot)
    except SnapshotError as exc:
        print(f"FAIL at height {exc.height}: {exc}")
        return EXIT_VERIFY
    except (DecodeError, ChainError) as exc:
        print(f"FAIL: {exc}")
        return EXIT_VERIFY
    problems = chain.verify()
    if problems:
        for line in problems:
            print(f"FAIL {line}")
        return EXIT_VERIFY
    removed = sum(1 for e in chain.entries() if not e.present)
    print(f"PASS {len(chain)} blocks, {removed} tombstones, {chain.size_bytes} bytes")
    return EXIT_OK


def _hex(value: str, what: str) -> bytes:
    try:
        raw = bytes.fromhex(value)
    except ValueError:
        raise UsageError(f"{what} is not hex") from None
    if len(raw) != 32:
        raise UsageError(f"{what} must be 32 bytes")
    return raw


def cmd_audit_proof(args) -> int:
    t_id = _hex(args.t_id, "--t-id")
    summary_id = _hex(args.summary, "--summary")
    try:
        proof = decode_proof(args.proof)
    except ValueError as exc:
        raise UsageError(f"--proof: {exc}") from None
    try:
        chain = _load_snapshot(args.snapshot)
    except (DecodeError, ChainError) as exc:
        print(f"REJECT unreadable snapshot: {exc}")
        return EXIT_VERIFY
    summary = chain.get(summary_id)
    if not isinstance(summary, SummaryTransaction):
        print(f"REJECT unknown summary {summary_id.hex()}")
        return EXIT_VERIFY
    if t_id not in chain:
        print("REJECT transaction id not in the chain")
        return EXIT_VERIFY
    if t_id[: summary.d] not in summary.trans_order:
        print("REJECT transaction id not in the summary's TransOrder")
        return EXIT_VERIFY
    if not verify_membership(summary.merkle_root, t_id, proof):
        print("REJECT proof does not reach the summary's Merkle root")
        return EXIT_VERIFY
    state = "removed" if chain.get(t_id) is None else "still stored"
    print(f"ACCEPT {t_id.hex()} is a member of summary {summary_id.hex()} ({state})")
    return EXIT_OK


def cmd_fees_report(args) -> int:
    if args.summary_json:
        summary = json.loads(Path(args.summary_json).read_text())
    else:
        summary = summarize(run(_config(args)))
    print(f"{'cohort':<16}{'out_of_pocket_usd':>20}{'perm_equiv_usd':>18}{'rewards_pages':>16}")
    for name, c in summary["cohorts"].items():
        print(f"{name:<16}{c['out_of_pocket']:>20}{c['permanent_equivalent']:>18}{c['rewards_pages']:>16}")
    print()
    print(f"{'chain':<16}{'saved_usd':>20}{'incurred_usd':>18}{'ratio':>16}")
    for chain, bc in summary["benefit_cost"].items():
        print(f"{chain:<16}{bc['saved_usd']:>20}{bc['incurred_usd']:>18}{bc['ratio']:>16.1f}")
    return EXIT_OK


COMMANDS = {
    "run": cmd_run,
    "preset": cmd_run,
    "verify-chain": cmd_verify_chain,
    "audit-proof": cmd_audit_proof,
    "fees-report": cmd_fees_report,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, UsageError, OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"mofbc: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
