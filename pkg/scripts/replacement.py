"""Run both replica replacement scenarios and print the latency summary."""

from geoxfer.harness import run_replacement
from geoxfer.harness.replacement import SCENARIOS

for name, scenario in sorted(SCENARIOS.items()):
    for method in ("proposed", "pbft"):
        r = run_replacement(scenario, method)
        print(
            f"{name:22s} {method:9s} transfer {r.transfer_s:6.2f} s  "
            f"latency {r.pre_ms:.0f} -> {r.degraded_ms:.0f} -> {r.post_ms:.0f} ms"
        )
