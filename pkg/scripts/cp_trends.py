"""Sweep the cleaning period and report the four trend metrics.

    python scripts/cp_trends.py --cps 90 180 360 --out out/trends
"""
import argparse
import csv
from pathlib import Path

from mofbc.sim import FIG9_12_CPS, preset, run, write_outputs

COLUMNS = ["cp_weeks", "peak_bc_size_bytes", "throughput_tx_per_week", "blocks_per_10k_tx", "peak_wasted_bytes"]


def trend_row(cp: int, result) -> list:
    frames = result.frames
    mined = frames[-1].user_tx_mined
    return [cp, max(f.bc_size_bytes for f in frames), round(mined / len(frames), 4),
            round(frames[-1].block_count * 10_000 / mined, 4), max(f.wasted_memory_bytes for f in frames)]


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--cps", type=int, nargs="+", default=list(FIG9_12_CPS))
    ap.add_argument("--weeks", type=int, default=None)
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--out", default="out/trends")
    args = ap.parse_args()

    out = Path(args.out)
    rows = []
    for cp in args.cps:
        result = run(preset("fig9-12", cp_weeks=cp, weeks=args.weeks, seed=args.seed))
        write_outputs(result, out / f"cp{cp}", snapshot=False)
        rows.append(trend_row(cp, result))
        print(dict(zip(COLUMNS, rows[-1])), flush=True)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "trends.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(COLUMNS)
        w.writerows(rows)


if __name__ == "__main__":
    main()
