"""Experiment recipes: build sessions for a method, run them in the
simulator, and collect per-run result records."""

from __future__ import annotations

import csv
import io
import json
import random
import statistics
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from geoxfer import baselines
from geoxfer.codec import serialize
from geoxfer.core import MIB, ConfigError, LogEntry, Mode, StateImage, TransferConfig, validate_config
from geoxfer.netsim import (
    CRASH,
    FAULT_BEHAVIORS,
    FaultSpec,
    ReplicaFault,
    Simulator,
    Topology,
    TraceLog,
    load_trace,
    synthesize_traces,
)
from geoxfer.protocol import Behavior, Policy, RecoverySession, TransferSession
from geoxfer.harness.topologies import BUILTIN, builtin_topology

METHODS = ("proposed", "cst", "pbft", "premeasured")
DEFAULT_MATERIALIZED_BYTES = 64 * 1024


def make_state(seed: int, size: int = DEFAULT_MATERIALIZED_BYTES, log_entries: int = 8) -> StateImage:
    """Seeded random checkpoint plus a short log, ``size`` payload bytes in total."""
    rng = random.Random(seed)
    entry_len = 32
    log_bytes = min(log_entries * entry_len, size // 2)
    n_entries = log_bytes // entry_len
    checkpoint = rng.randbytes(max(1, size - n_entries * entry_len))
    log = tuple(LogEntry(1000 + k, rng.randbytes(entry_len)) for k in range(n_entries))
    return StateImage(checkpoint, log)


@dataclass
class RunSetup:
    """Everything needed to simulate one transfer with one method."""

    method: str
    topology: Topology
    recovery: int
    transfer: Sequence[int]
    config: TransferConfig
    state_bytes: int
    snapshot: StateImage
    faults: FaultSpec = field(default_factory=FaultSpec)
    seed: int = 0
    offset_s: float = 0.0
    stall_timeout_s: float = 10.0
    static_estimates: Optional[dict[int, float]] = None
    pbft_chosen: Optional[int] = None
    hash_delay_s: Optional[float] = None
    log_entries: Sequence[tuple[float, LogEntry]] = ()
    ingress_cap_mbps: Optional[float] = None
    max_time_s: float = 7200.0
    record_messages: bool = True


def build_driver(setup: RunSetup):
    cfg = setup.config
    premeasured = setup.static_estimates or {
        t: setup.topology.bandwidth(t, setup.recovery) for t in setup.transfer
    }
    kw = dict(stall_timeout_s=setup.stall_timeout_s)
    if setup.method == "proposed":
        return RecoverySession(cfg, setup.recovery, setup.transfer, policy=Policy.DYNAMIC, **kw)
    if setup.method == "premeasured":
        return baselines.premeasured_session(cfg, setup.recovery, setup.transfer, premeasured, **kw)
    if setup.method == "cst":
        return baselines.cst_session(cfg, setup.recovery, setup.transfer, **kw)
    if setup.method == "pbft":
        return baselines.pbft_session(
            cfg, setup.recovery, setup.transfer, premeasured, chosen=setup.pbft_chosen, **kw
        )
    raise ConfigError(f"unknown method {setup.method!r}", field="method")


def simulate(setup: RunSetup) -> TraceLog:
    """Run one transfer; the returned trace carries the driver's final state."""
    driver = build_driver(setup)
    session_cfg = driver.config
    sessions = {}
    for t in setup.transfer:
        fault = setup.faults.replicas.get(t, ReplicaFault())
        behavior = Behavior(fault.behavior) if fault.behavior != CRASH else Behavior.CORRECT
        delay = (
            setup.hash_delay_s
            if setup.hash_delay_s is not None
            else setup.topology.hash_delay(t, setup.state_bytes)
        )
        sessions[t] = TransferSession(
            t,
            setup.snapshot,
            session_cfg,
            nominal_bytes=setup.state_bytes,
            hash_delay_s=delay,
            behavior=behavior,
            corrupt_probability=fault.corrupt_probability,
            rng=random.Random(f"{setup.seed}/{t}"),
        )
    sim = Simulator(
        setup.topology,
        setup.faults,
        offset_s=setup.offset_s,
        ingress_cap_mbps=setup.ingress_cap_mbps,
        max_time_s=setup.max_time_s,
        record_messages=setup.record_messages,
    )
    trace = sim.run(
        driver,
        sessions,
        recovery=setup.recovery,
        tick_interval_s=session_cfg.interval_ms / 1000.0,
        log_entries=setup.log_entries,
    )
    trace.driver = driver
    return trace


def expected_state(setup: RunSetup) -> StateImage:
    """What a correct finalize must produce: snapshot log plus buffered entries."""
    from geoxfer.protocol import replay_log

    entries = [e for _, e in setup.log_entries]
    return StateImage(setup.snapshot.checkpoint, replay_log(setup.snapshot.log, entries))


# -- experiment specs ----------------------------------------------------


@dataclass
class ExperimentSpec:
    name: str = "transfer"
    methods: tuple[str, ...] = ("proposed",)
    topology: str = "worldwide"
    recovery: str = "N. Virginia"
    state_mib: float = 1000.0
    n_chunks: int = 256
    interval_ms: int = 1000
    mode: str = "BFT"
    f_max: int = 1
    faults: dict[str, str] = field(default_factory=dict)
    repetitions: int = 1
    seed: int = 0
    hash_seconds: Optional[float] = None
    materialize_bytes: int = DEFAULT_MATERIALIZED_BYTES
    varying: bool = False
    trace_period_s: float = 60.0
    trace_amplitude: float = 0.4
    trace_noise: float = 0.1
    latency: bool = True
    stall_timeout_s: float = 10.0

    @property
    def state_bytes(self) -> int:
        return int(round(self.state_mib * MIB))


@dataclass
class ResultRecord:
    experiment: str
    method: str
    recovery: str
    repetition: int
    seed: int
    completion_s: float
    finish_times: dict[str, float]
    rounds: int
    bytes_per_replica: dict[str, int]
    estimation_errors: list[tuple[float, str, float]]
    fallback: bool
    state_ok: bool

    @property
    def finish_ratio(self) -> float:
        vals = [v for v in self.finish_times.values() if v > 0]
        return max(vals) / min(vals) if vals else 1.0


def resolve_topology(spec: ExperimentSpec) -> Topology:
    if spec.topology.lower() in BUILTIN:
        topo = builtin_topology(spec.topology, with_latency=spec.latency)
    else:
        path = Path(spec.topology)
        if not path.exists():
            raise ConfigError(f"topology {spec.topology!r} is neither builtin nor a file", field="topology")
        topo = load_trace(path)
    if spec.hash_seconds is not None:
        topo.hash_seconds = {r: spec.hash_seconds for r in topo.ids}
    if spec.varying:
        topo = synthesize_traces(
            topo,
            seed=spec.seed,
            period_s=spec.trace_period_s,
            amplitude=spec.trace_amplitude,
            noise=spec.trace_noise,
        )
    return topo


def fault_spec(spec: ExperimentSpec, topo: Topology) -> FaultSpec:
    replicas = {}
    for label, behavior in spec.faults.items():
        try:
            rid = topo.by_label(label).id
        except KeyError:
            raise ConfigError(f"fault names unknown replica {label!r}", field="faults") from None
        name, _, arg = behavior.partition(":")
        if name not in FAULT_BEHAVIORS:
            raise ConfigError(f"unknown fault behavior {name!r}", field="faults")
        if name == CRASH:
            replicas[rid] = ReplicaFault(CRASH, crash_at_s=float(arg or 0))
        elif name == Behavior.CORRUPT_CHUNKS.value and arg:
            replicas[rid] = ReplicaFault(name, corrupt_probability=float(arg))
        else:
            replicas[rid] = ReplicaFault(name)
    return FaultSpec(replicas)


def check_spec(spec: ExperimentSpec, topo: Topology) -> TransferConfig:
    if spec.repetitions < 1:
        raise ConfigError("repetitions must be >= 1", field="repetitions")
    for m in spec.methods:
        if m not in METHODS:
            raise ConfigError(f"unknown method {m!r}; choose from {METHODS}", field="method")
    try:
        topo.by_label(spec.recovery)
    except KeyError:
        raise ConfigError(f"recovery replica {spec.recovery!r} not in topology", field="recovery") from None
    if spec.state_mib <= 0:
        raise ConfigError("state size must be positive", field="state_size")
    cfg = TransferConfig(
        n_replicas=len(topo.replicas),
        f_max=spec.f_max,
        n_chunks=spec.n_chunks,
        interval_ms=spec.interval_ms,
        mode=Mode.parse(spec.mode),
    )
    validate_config(cfg)
    return cfg


def setup_for(spec: ExperimentSpec, method: str, repetition: int, topo: Topology, cfg: TransferConfig) -> RunSetup:
    recovery = topo.by_label(spec.recovery).id
    transfer = [r for r in topo.ids if r != recovery]
    span = topo.span()
    offset = repetition * span / spec.repetitions if span > 0 else 0.0
    seed = spec.seed + repetition
    return RunSetup(
        method=method,
        topology=topo,
        recovery=recovery,
        transfer=transfer,
        config=cfg,
        state_bytes=spec.state_bytes,
        snapshot=make_state(seed, spec.materialize_bytes),
        faults=fault_spec(spec, topo),
        seed=seed,
        offset_s=offset,
        stall_timeout_s=spec.stall_timeout_s,
        record_messages=True,
    )


def estimation_errors(setup: RunSetup, trace: TraceLog) -> list[tuple[float, str, float]]:
    """Per-round relative error of each estimate against the link's actual
    mean bandwidth over the interval the estimate was measured on."""
    topo = setup.topology
    interval = setup.config.interval_ms / 1000.0
    out = []
    for t, round_index, est in trace.estimates:
        if round_index == 0:
            continue
        for r in sorted(est):
            link = topo.link(r, setup.recovery)
            a = setup.offset_s + t - interval
            actual = link.bits_between(a, a + interval) / interval / 1e6
            out.append((round(t, 6), topo.label(r), abs(est[r] - actual) / actual))
    return out


def record_from(spec_name: str, setup: RunSetup, trace: TraceLog, repetition: int) -> ResultRecord:
    topo = setup.topology
    labels = {r.id: r.label for r in topo.replicas}
    return ResultRecord(
        experiment=spec_name,
        method=setup.method,
        recovery=labels[setup.recovery],
        repetition=repetition,
        seed=setup.seed,
        completion_s=round(trace.completion_s, 6),
        finish_times={labels[r]: round(v, 6) for r, v in trace.finish_times.items()},
        rounds=trace.rounds,
        bytes_per_replica={labels[r]: int(b) for r, b in sorted(trace.bytes_from.items())},
        estimation_errors=estimation_errors(setup, trace),
        fallback=trace.fallback,
        state_ok=serialize(trace.result) == serialize(expected_state(setup)),
    )


def run_experiment(spec: ExperimentSpec, trace_dir: str | Path | None = None) -> list[ResultRecord]:
    """Run every (method, repetition); optionally write each TraceLog as JSON lines."""
    topo = resolve_topology(spec)
    cfg = check_spec(spec, topo)
    if trace_dir is not None:
        Path(trace_dir).mkdir(parents=True, exist_ok=True)
    records = []
    for rep in range(spec.repetitions):
        for method in spec.methods:
            setup = setup_for(spec, method, rep, topo, cfg)
            trace = simulate(setup)
            if trace_dir is not None:
                trace.write(Path(trace_dir) / f"{spec.name}-{method}-{rep}.jsonl")
            records.append(record_from(spec.name, setup, trace, rep))
    records.sort(key=lambda r: (r.method, r.repetition))
    return records


# -- persistence ---------------------------------------------------------

CSV_COLUMNS = (
    "experiment",
    "method",
    "recovery",
    "repetition",
    "seed",
    "completion_s",
    "finish_ratio",
    "rounds",
    "fallback",
    "state_ok",
    "finish_times",
    "bytes_per_replica",
)


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def results_csv(records: Sequence[ResultRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in records:
        w.writerow(
            [
                r.experiment,
                r.method,
                r.recovery,
                r.repetition,
                r.seed,
                f"{r.completion_s:.3f}",
                f"{r.finish_ratio:.4f}",
                r.rounds,
                int(r.fallback),
                int(r.state_ok),
                _dumps({k: round(v, 3) for k, v in r.finish_times.items()}),
                _dumps(r.bytes_per_replica),
            ]
        )
    return buf.getvalue()


def summarize(records: Sequence[ResultRecord]) -> dict:
    out = {}
    for method in sorted({r.method for r in records}):
        rows = [r for r in records if r.method == method]
        times = [r.completion_s for r in rows]
        out[method] = {
            "runs": len(rows),
            "mean_s": round(statistics.fmean(times), 3),
            "min_s": round(min(times), 3),
            "max_s": round(max(times), 3),
            "finish_ratio_mean": round(statistics.fmean(r.finish_ratio for r in rows), 4),
            "fallbacks": sum(r.fallback for r in rows),
            "all_states_ok": all(r.state_ok for r in rows),
        }
    return out


def emit_results(records: Sequence[ResultRecord], path: str | Path) -> tuple[Path, Path]:
    """Write ``results.csv`` and ``summary.json`` under directory ``path``."""
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "results.csv"
    json_path = out / "summary.json"
    csv_path.write_text(results_csv(records), encoding="utf-8")
    json_path.write_text(json.dumps(summarize(records), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return csv_path, json_path


def record_dict(r: ResultRecord) -> dict:
    d = asdict(r)
    d["finish_ratio"] = r.finish_ratio
    return d
