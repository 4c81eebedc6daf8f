"""Command line: ``geoxfer {transfer,sweep,analyze,replace,traces}``."""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

from geoxfer import analysis
from geoxfer.core import ConfigError
from geoxfer.harness.experiments import (
    METHODS,
    ExperimentSpec,
    emit_results,
    results_csv,
    run_experiment,
    summarize,
)
from geoxfer.harness.replacement import SCENARIOS, run_replacement
from geoxfer.netsim import DeadlockError, TraceParseError, load_trace

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DEADLOCK = 2
EXIT_SAFETY = 3

# config-file key -> (spec field, converter)
_CONFIG_KEYS = {
    "name": ("name", str),
    "method": ("methods", lambda v: tuple(m.strip() for m in v.split(",") if m.strip())),
    "topology": ("topology", str),
    "recovery": ("recovery", str),
    "state_mib": ("state_mib", float),
    "chunks": ("n_chunks", int),
    "interval_ms": ("interval_ms", int),
    "mode": ("mode", str),
    "f": ("f_max", int),
    "repetitions": ("repetitions", int),
    "seed": ("seed", int),
    "hash_seconds": ("hash_seconds", float),
    "varying": ("varying", lambda v: v.strip().lower() in ("1", "true", "yes", "on")),
    "faults": ("faults", lambda v: _parse_faults(x for x in v.split(",") if x.strip())),
}


def _parse_faults(items) -> dict[str, str]:
    out = {}
    for item in items:
        label, sep, behavior = item.partition("=")
        if not sep:
            raise ConfigError(f"fault {item!r} must look like LABEL=BEHAVIOR", field="faults")
        out[label.strip()] = behavior.strip()
    return out


def load_config(path: str | Path) -> dict:
    """Read the ``[transfer]`` section of an INI file into spec fields."""
    parser = configparser.ConfigParser()
    if not parser.read(path, encoding="utf-8"):
        raise ConfigError(f"cannot read config file {path}", field="config")
    if not parser.has_section("transfer"):
        raise ConfigError("config file needs a [transfer] section", field="config")
    fields = {}
    for key, raw in parser.items("transfer"):
        if key not in _CONFIG_KEYS:
            raise ConfigError(f"unknown config key {key!r}", field=key)
        name, conv = _CONFIG_KEYS[key]
        try:
            fields[name] = conv(raw)
        except ValueError as e:
            raise ConfigError(f"bad value for {key}: {e}", field=key) from None
    return fields


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI file with a [transfer] section")
    p.add_argument("--method", help=f"comma list from {','.join(METHODS)}")
    p.add_argument("--topology", help="worldwide, european, or a trace CSV path")
    p.add_argument("--recovery", help="label of the recovering replica")
    p.add_argument("--state-mib", type=float)
    p.add_argument("--chunks", type=int)
    p.add_argument("--interval-ms", type=int)
    p.add_argument("--mode", choices=["BFT", "CFT", "bft", "cft"])
    p.add_argument("--seed", type=int)
    p.add_argument("--repetitions", type=int)
    p.add_argument("--fault", action="append", default=[], metavar="LABEL=BEHAVIOR")
    p.add_argument("--varying", action="store_true", help="synthesize time-varying traces")
    p.add_argument("--out", help="directory for results.csv, summary.json and traces")


def spec_from_args(args) -> ExperimentSpec:
    fields = load_config(args.config) if args.config else {}
    overrides = {
        "methods": tuple(m.strip() for m in args.method.split(",")) if args.method else None,
        "topology": args.topology,
        "recovery": args.recovery,
        "state_mib": args.state_mib,
        "n_chunks": args.chunks,
        "interval_ms": args.interval_ms,
        "mode": args.mode,
        "seed": args.seed,
        "repetitions": args.repetitions,
        "faults": _parse_faults(args.fault) if args.fault else None,
        "varying": True if args.varying else None,
    }
    fields.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentSpec(**fields)


def _report(records, out: Optional[str]) -> int:
    if out:
        emit_results(records, out)
    else:
        sys.stdout.write(results_csv(records))
    print(json.dumps(summarize(records), sort_keys=True), file=sys.stderr)
    return EXIT_OK if all(r.state_ok for r in records) else EXIT_SAFETY


def cmd_transfer(args) -> int:
    spec = spec_from_args(args)
    trace_dir = Path(args.out) / "traces" if args.out else None
    return _report(run_experiment(spec, trace_dir=trace_dir), args.out)


def _ints(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def cmd_sweep(args) -> int:
    base = spec_from_args(args)
    grid = [("n_chunks", v) for v in _ints(args.chunks_grid)] if args.chunks_grid else []
    grid += [("interval_ms", v) for v in _ints(args.interval_grid)] if args.interval_grid else []
    grid += [("state_mib", float(v)) for v in _ints(args.state_grid)] if args.state_grid else []
    if not grid:
        raise ConfigError("sweep needs at least one of --chunks-grid, --interval-grid, --state-grid", field="grid")
    records = []
    for name, value in grid:
        spec = dataclasses.replace(base, name=f"{name}={value:g}", **{name: value})
        records.extend(run_experiment(spec))
    records.sort(key=lambda r: (r.experiment, r.method, r.repetition))
    return _report(records, args.out)


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def cmd_analyze(args) -> int:
    try:
        rows = analysis.emit_curves(args.mean, _floats(args.stddevs), _floats(args.errors), args.n)
    except analysis.NonPositiveBandwidth as e:
        raise ConfigError(str(e), field="stddevs") from None
    text = analysis.curves_csv(rows)
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "curves.csv").write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_replace(args) -> int:
    names = sorted(SCENARIOS) if args.scenario == "all" else [args.scenario]
    methods = [m.strip() for m in args.method.split(",")]
    results = []
    for name in names:
        if name not in SCENARIOS:
            raise ConfigError(f"unknown scenario {name!r}; choose from {sorted(SCENARIOS)}", field="scenario")
        for method in methods:
            results.append(run_replacement(SCENARIOS[name], method))
    summary = [
        {k: v for k, v in dataclasses.asdict(r).items() if k != "timeline"} for r in results
    ]
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        lines = ["scenario,method,t_s,latency_ms"]
        for r in results:
            lines += [f"{r.scenario},{r.method},{t:g},{lat:.3f}" for t, lat in r.timeline]
        (out / "latency.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
        (out / "replacement.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def cmd_traces(args) -> int:
    topo = load_trace(args.path)
    n_links = len(topo.links)
    print(f"ok: {len(topo.replicas)} replicas, {n_links} links, span {topo.span():g} s")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="geoxfer", description="State transfer simulation and analysis")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("transfer", help="run one experiment")
    _common(p)
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("sweep", help="run an experiment over a parameter grid")
    _common(p)
    p.add_argument("--chunks-grid", help="e.g. 128,256,512,1024")
    p.add_argument("--interval-grid", help="e.g. 100,200,500,1000,2000")
    p.add_argument("--state-grid", help="state sizes in MiB, e.g. 500,1000,1500")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("analyze", help="closed-form comparison curves")
    p.add_argument("--mean", type=float, default=100.0)
    p.add_argument("--stddevs", default="0,20,40,60,80")
    p.add_argument("--errors", default="0,10,20,30,40")
    p.add_argument("--n", type=int, default=4, help="total replicas")
    p.add_argument("--out")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("replace", help="replica replacement scenarios")
    p.add_argument("--scenario", default="all", help=f"all or one of {sorted(SCENARIOS)}")
    p.add_argument("--method", default="proposed,pbft")
    p.add_argument("--out")
    p.set_defaults(func=cmd_replace)

    p = sub.add_parser("traces", help="trace file utilities")
    tsub = p.add_subparsers(dest="action", required=True)
    v = tsub.add_parser("validate", help="parse a trace CSV and report problems")
    v.add_argument("path")
    v.set_defaults(func=cmd_traces)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except TraceParseError as e:
        where = f" (line {e.line})" if e.line is not None else ""
        print(f"trace error{where}: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as e:
        print(f"config error [{e.field}]: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (KeyError, ValueError, OSError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DeadlockError as e:
        print(f"simulation deadlock: {e}", file=sys.stderr)
        return EXIT_DEADLOCK


if __name__ == "__main__":
    sys.exit(main())
