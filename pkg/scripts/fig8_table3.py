"""Per-MOM chains side by side: cumulative fees, BC size and benefit/cost.

Each cohort group runs on its own chain.  Writes metrics.csv, summary.json
and, with --plot, fees.png and size.png.
"""
import argparse
from pathlib import Path

from mofbc.sim import preset, run, series, summarize, write_outputs


def plot(result, out: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    for column, ylabel, name in (("cumulative_fees", "cumulative fees ($)", "fees.png"),
                                 ("bc_size_bytes", "BC size (bytes)", "size.png")):
        fig, ax = plt.subplots(figsize=(6, 4))
        for chain in result.networks:
            frames = result.frames_for(chain)
            ax.plot(series(frames, "week"), [float(v) for v in series(frames, column)], label=chain)
        ax.set(xlabel="week", ylabel=ylabel)
        ax.legend()
        fig.tight_layout()
        fig.savefig(out / name, dpi=120)
        plt.close(fig)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--weeks", type=int, default=None)
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--out", default="out/fig8")
    ap.add_argument("--plot", action="store_true")
    args = ap.parse_args()

    result = run(preset("fig8", weeks=args.weeks, seed=args.seed))
    summary = summarize(result)
    out = Path(args.out)
    write_outputs(result, out, summary)
    if args.plot:
        plot(result, out)

    print(f"{'chain':<14}{'fees ($)':>16}{'size (bytes)':>16}{'benefit/cost':>14}")
    for chain, net in result.networks.items():
        bc = summary["benefit_cost"][chain]["ratio"]
        print(f"{chain:<14}{net.out_of_pocket_total:>16.9f}{net.chain.size_bytes:>16,}{bc:>14.0f}")


if __name__ == "__main__":
    main()
