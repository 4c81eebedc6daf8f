"""Closed-form time (percent of PBFT) against bandwidth spread and estimate error."""

import argparse
from pathlib import Path

from geoxfer import analysis


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--mean", type=float, default=100.0)
    ap.add_argument("--out", default="results/curves.csv")
    ap.add_argument("--plot", action="store_true", help="also write a PNG next to the CSV")
    args = ap.parse_args()

    stddevs = [0, 10, 20, 30, 40, 50, 60, 70, 80, 90]
    errors = [0, 10, 20, 30, 40]
    rows = analysis.emit_curves(args.mean, stddevs, errors)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(analysis.curves_csv(rows), encoding="utf-8")
    print(f"wrote {out}")

    if args.plot:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, ax = plt.subplots(figsize=(6, 4))
        for method, x in [("pbft", 0.0), ("cst", 0.0)] + [("proposed", float(e)) for e in errors]:
            pts = [(s, pct) for s, e, m, pct in rows if m == method and e == x]
            label = method if method != "proposed" else f"proposed, {x:g}% error"
            ax.plot(*zip(*pts), label=label)
        ax.set_xlabel("bandwidth stddev (Mbps)")
        ax.set_ylabel("time, % of PBFT")
        ax.legend(fontsize=7)
        fig.tight_layout()
        fig.savefig(out.with_suffix(".png"), dpi=120)


if __name__ == "__main__":
    main()
