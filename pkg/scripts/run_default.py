"""Default mixed-cohort scenario against its all-permanent baseline.

    python scripts/run_default.py --out out/default
"""
import argparse
import json
import time
from dataclasses import replace

from mofbc.sim import preset, run, summarize, write_outputs


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--weeks", type=int, default=None)
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--audit", action="store_true", help="re-check blocks and proofs after every pass")
    ap.add_argument("--out", default="out/default")
    args = ap.parse_args()

    cfg = preset("default", weeks=args.weeks, seed=args.seed)
    cfg = replace(cfg, audit=args.audit)
    t0 = time.perf_counter()
    result = run(cfg)
    t1 = time.perf_counter()
    baseline = run(cfg.all_permanent())
    t2 = time.perf_counter()
    summary = summarize(result, baseline)
    write_outputs(result, args.out, summary)

    print(f"optimized: {result.final_size():>12,} bytes, {len(result.networks['main'].chain):,} blocks ({t1 - t0:.1f}s)")
    print(f"baseline:  {baseline.final_size():>12,} bytes, {len(baseline.networks['main'].chain):,} blocks ({t2 - t1:.1f}s)")
    print(f"reduction: {summary['reduction_vs_baseline_pct']:.2f}%")
    if args.audit:
        reps = result.cp_reports()
        print(json.dumps({
            "passes": len(reps),
            "block_id_mismatches": sum(r.block_id_mismatches for r in reps),
            "proofs_checked": sum(r.proofs_checked for r in reps),
            "proofs_failed": sum(r.proofs_failed for r in reps),
            "unsafe_removals": sum(r.unsafe_removals for r in reps),
        }))


if __name__ == "__main__":
    main()
