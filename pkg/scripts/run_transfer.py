"""Compare all four methods on one recovery and print mean completion times.

    python scripts/run_transfer.py --topology worldwide --recovery "N. Virginia"
"""

import argparse

from geoxfer.harness import ExperimentSpec, emit_results, run_experiment
from geoxfer.harness.experiments import summarize


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--topology", default="worldwide")
    ap.add_argument("--recovery", default="N. Virginia")
    ap.add_argument("--state-mib", type=float, default=1000)
    ap.add_argument("--repetitions", type=int, default=3)
    ap.add_argument("--varying", action="store_true")
    ap.add_argument("--out", default="results/transfer")
    args = ap.parse_args()

    spec = ExperimentSpec(
        name="transfer",
        methods=("proposed", "cst", "pbft", "premeasured"),
        topology=args.topology,
        recovery=args.recovery,
        state_mib=args.state_mib,
        repetitions=args.repetitions,
        varying=args.varying,
    )
    records = run_experiment(spec)
    emit_results(records, args.out)
    summary = summarize(records)
    for method, row in sorted(summary.items(), key=lambda kv: kv[1]["mean_s"]):
        print(f"{method:12s} {row['mean_s']:8.2f} s   finish ratio {row['finish_ratio_mean']:.3f}")


if __name__ == "__main__":
    main()
