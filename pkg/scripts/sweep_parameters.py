"""Sweep chunk count and estimation interval for the proposed method."""

import argparse
import dataclasses

from geoxfer.harness import ExperimentSpec, emit_results, run_experiment

CHUNKS = (64, 128, 256, 512, 1024)
INTERVALS_MS = (100, 250, 500, 1000, 2000)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--topology", default="worldwide")
    ap.add_argument("--recovery", default="N. Virginia")
    ap.add_argument("--out", default="results/sweep")
    args = ap.parse_args()

    base = ExperimentSpec(topology=args.topology, recovery=args.recovery, repetitions=2)
    records = []
    for n in CHUNKS:
        records += run_experiment(dataclasses.replace(base, name=f"chunks={n}", n_chunks=n))
    for ms in INTERVALS_MS:
        records += run_experiment(dataclasses.replace(base, name=f"interval_ms={ms}", interval_ms=ms))
    emit_results(records, args.out)

    by_name = {}
    for r in records:
        by_name.setdefault(r.experiment, []).append(r.completion_s)
    for name, times in by_name.items():
        print(f"{name:18s} {sum(times) / len(times):8.2f} s")


if __name__ == "__main__":
    main()
