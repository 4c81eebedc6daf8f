"""Deterministic virtual-time network simulator.

Each directed link has a piecewise-constant bandwidth trace and a base
latency. Messages on one link are serialized FIFO: a message starts
transmitting when the previous one has been pushed onto the wire, finishes
when the integral of the trace covers its bits, and arrives one latency
later. Events run in (microsecond tick, sequence) order, so a run is a pure
function of its inputs.
"""

from __future__ import annotations

import bisect
import csv
import heapq
import io
import json
import math
import random
import unicodedata
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

from geoxfer.core import LogEntry, ReplicaId
from geoxfer.messages import ChunkData, ChunkRequest, Message
from geoxfer.protocol import Behavior, TransferSession

US = 1_000_000
REFERENCE_HASH_SECONDS = 2.3
REFERENCE_STATE_BYTES = 1000 * (1 << 20)


class SimulationError(Exception):
    pass


class NoLink(SimulationError):
    pass


class DeadlockError(SimulationError):
    """The run cannot make progress: no events left, or virtual time ran out."""


class TraceParseError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


def _norm_label(label: str) -> str:
    plain = unicodedata.normalize("NFKD", label).encode("ascii", "ignore").decode()
    return "".join(c for c in plain.lower() if c.isalnum())


def to_ticks(seconds: float) -> int:
    return math.ceil(seconds * US - 1e-3)


@dataclass(frozen=True)
class LinkTrace:
    src: int
    dst: int
    segments: tuple[tuple[float, float], ...]
    latency_ms: float = 0.0

    def __post_init__(self):
        segs = tuple((float(s), float(b)) for s, b in self.segments)
        object.__setattr__(self, "segments", segs)
        if not segs or segs[0][0] != 0.0:
            raise ValueError(f"trace {self.src}->{self.dst} must start at time 0")
        if any(b2[0] <= b1[0] for b1, b2 in zip(segs, segs[1:])):
            raise ValueError(f"trace {self.src}->{self.dst}: segment starts must increase")
        if any(bw <= 0 for _, bw in segs):
            raise ValueError(f"trace {self.src}->{self.dst}: bandwidth must be positive")
        if self.latency_ms < 0:
            raise ValueError("latency must be non-negative")
        object.__setattr__(self, "_starts", [s for s, _ in segs])

    @classmethod
    def constant(cls, src: int, dst: int, mbps: float, latency_ms: float = 0.0) -> "LinkTrace":
        return cls(src, dst, ((0.0, mbps),), latency_ms)

    @property
    def latency_s(self) -> float:
        return self.latency_ms / 1000.0

    def _seg(self, t: float) -> int:
        return max(0, bisect.bisect_right(self._starts, t) - 1)

    def bandwidth_at(self, t: float) -> float:
        return self.segments[self._seg(t)][1]

    def bits_between(self, a: float, b: float) -> float:
        """Megabits the link can carry over ``[a, b]``, times 1e6."""
        if b <= a:
            return 0.0
        total = 0.0
        k = self._seg(a)
        t = a
        while t < b:
            end = self.segments[k + 1][0] if k + 1 < len(self.segments) else math.inf
            stop = min(end, b)
            total += (stop - t) * self.segments[k][1] * 1e6
            t = stop
            k += 1
        return total

    def finish_time(self, start: float, bits: float) -> float:
        """Time at which ``bits`` sent from ``start`` have all left the sender."""
        if bits <= 0:
            return start
        k = self._seg(start)
        t = start
        left = bits
        while True:
            rate = self.segments[k][1] * 1e6
            end = self.segments[k + 1][0] if k + 1 < len(self.segments) else math.inf
            cap = (end - t) * rate
            if left <= cap:
                return t + left / rate
            left -= cap
            t = end
            k += 1

    def mean_bandwidth(self) -> float:
        if len(self.segments) == 1:
            return self.segments[0][1]
        durs = [b[0] - a[0] for a, b in zip(self.segments, self.segments[1:])]
        durs.append(sorted(durs)[len(durs) // 2])
        return sum(d * bw for d, (_, bw) in zip(durs, self.segments)) / sum(durs)

    def span(self) -> float:
        if len(self.segments) == 1:
            return 0.0
        return self.segments[-1][0] + (self.segments[-1][0] - self.segments[-2][0])


@dataclass
class Topology:
    replicas: list[ReplicaId]
    links: dict[tuple[int, int], LinkTrace]
    hash_seconds: dict[int, float] = field(default_factory=dict)
    premeasured: dict[tuple[int, int], float] = field(default_factory=dict)

    def __post_init__(self):
        ids = [r.id for r in self.replicas]
        if len(set(ids)) != len(ids):
            raise ValueError("replica ids must be unique")
        labels = [r.label for r in self.replicas]
        if len(set(labels)) != len(labels):
            raise ValueError("replica labels must be unique")
        for (s, d), trace in self.links.items():
            if s not in ids or d not in ids:
                raise ValueError(f"link {s}->{d} references an unknown replica")
            if (trace.src, trace.dst) != (s, d):
                raise ValueError(f"link key {s}->{d} does not match its trace")

    def link(self, src: int, dst: int) -> LinkTrace:
        try:
            return self.links[(src, dst)]
        except KeyError:
            raise NoLink(f"no link {self.label(src)} -> {self.label(dst)}") from None

    def by_label(self, label: str) -> ReplicaId:
        """Find a replica by label, ignoring case, accents and punctuation."""
        want = _norm_label(label)
        for r in self.replicas:
            if _norm_label(r.label) == want:
                return r
        raise KeyError(f"unknown replica {label!r}")

    def label(self, rid: int) -> str:
        for r in self.replicas:
            if r.id == rid:
                return r.label
        return str(rid)

    @property
    def ids(self) -> list[int]:
        return [r.id for r in self.replicas]

    def bandwidth(self, src: int, dst: int) -> float:
        """Premeasured mean bandwidth, falling back to the trace's time average."""
        if (src, dst) in self.premeasured:
            return self.premeasured[(src, dst)]
        return self.link(src, dst).mean_bandwidth()

    def hash_delay(self, replica: int, state_bytes: int) -> float:
        base = self.hash_seconds.get(replica, REFERENCE_HASH_SECONDS)
        return base * state_bytes / REFERENCE_STATE_BYTES

    def span(self) -> float:
        return max((t.span() for t in self.links.values()), default=0.0)

    def with_links(self, links: Mapping[tuple[int, int], LinkTrace]) -> "Topology":
        merged = dict(self.links)
        merged.update(links)
        return Topology(list(self.replicas), merged, dict(self.hash_seconds), dict(self.premeasured))


# -- fault injection -----------------------------------------------------

CORRECT = "correct"
CRASH = "crash"
FAULT_BEHAVIORS = (CORRECT, CRASH, *(b.value for b in Behavior if b is not Behavior.CORRECT))


@dataclass(frozen=True)
class ReplicaFault:
    behavior: str = CORRECT
    crash_at_s: float = 0.0
    corrupt_probability: float = 0.3

    def __post_init__(self):
        if self.behavior not in FAULT_BEHAVIORS:
            raise ValueError(f"unknown fault behavior {self.behavior!r}")


@dataclass(frozen=True)
class LinkDelay:
    src: int
    dst: int
    added_ms: float
    from_s: float = 0.0


@dataclass
class FaultSpec:
    replicas: dict[int, ReplicaFault] = field(default_factory=dict)
    link_delays: list[LinkDelay] = field(default_factory=list)

    def behavior(self, replica: int) -> str:
        return self.replicas.get(replica, ReplicaFault()).behavior

    def faulty(self) -> list[int]:
        return sorted(r for r, f in self.replicas.items() if f.behavior != CORRECT)

    def added_latency_s(self, src: int, dst: int, at: float) -> float:
        return sum(
            d.added_ms / 1000.0
            for d in self.link_delays
            if d.src == src and d.dst == dst and at >= d.from_s
        )


# -- trace log -----------------------------------------------------------


class TraceLog:
    """Ordered record of one run; exported as JSON lines."""

    def __init__(self):
        self.events: list[dict] = []
        self.completion_s: Optional[float] = None
        self.finish_times: dict[int, float] = {}
        self.bytes_from: dict[int, int] = {}
        self.fallback = False
        self.rounds = 0
        self.estimates: list[tuple[float, int, dict[int, float]]] = []
        self.failures: list[tuple[float, int, int]] = []
        self.result = None

    def add(self, t: float, kind: str, src=None, dst=None, detail=None) -> None:
        self.events.append(
            {"t": round(t, 6), "kind": kind, "src": src, "dst": dst, "detail": detail or {}}
        )

    def of_kind(self, kind: str) -> list[dict]:
        return [e for e in self.events if e["kind"] == kind]

    def to_jsonl(self) -> str:
        return "".join(json.dumps(e, sort_keys=True, separators=(",", ":")) + "\n" for e in self.events)

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_jsonl(), encoding="utf-8")


def _describe(msg: Message) -> dict:
    d = {"type": type(msg).__name__, "bytes": msg.size_bytes}
    if isinstance(msg, ChunkData):
        d["chunk"] = msg.chunk.index
    elif isinstance(msg, ChunkRequest):
        d["round"] = msg.round
        d["count"] = len(msg.indices)
        d["indices"] = index_ranges(msg.indices)
    return d


def index_ranges(indices) -> str:
    """Compact form of a chunk index set, e.g. ``0-85,90``."""
    out = []
    for i in sorted(set(indices)):
        if out and out[-1][1] == i - 1:
            out[-1][1] = i
        else:
            out.append([i, i])
    return ",".join(f"{a}-{b}" if a != b else str(a) for a, b in out)


def parse_ranges(text: str) -> list[int]:
    out = []
    for part in filter(None, text.split(",")):
        a, _, b = part.partition("-")
        out.extend(range(int(a), int(b or a) + 1))
    return out


@dataclass
class _Transit:
    msg: Message
    src: int
    dst: int
    tx_start: float
    tx_end: float
    latency: float
    deliver_at: float
    credited: float = 0.0


class _Link:
    def __init__(self, trace: LinkTrace):
        self.trace = trace
        self.busy_until = 0.0
        self.inflight: deque[_Transit] = deque()


class Simulator:
    """Runs one recovery driver against its transfer sessions.

    ``offset_s`` shifts every trace lookup, so repetitions can start at
    different points of a long time-series trace. ``ingress_cap_mbps``
    optionally adds a shared store-and-forward stage in front of the
    recovery replica (off by default).
    """

    def __init__(
        self,
        topology: Topology,
        faults: Optional[FaultSpec] = None,
        *,
        offset_s: float = 0.0,
        ingress_cap_mbps: Optional[float] = None,
        max_time_s: float = 7200.0,
        record_messages: bool = True,
    ):
        self.topology = topology
        self.faults = faults or FaultSpec()
        self.offset_s = offset_s
        self.ingress_cap_mbps = ingress_cap_mbps
        self.max_time_s = max_time_s
        self.record_messages = record_messages
        self._links: dict[tuple[int, int], _Link] = {}
        self._ingress_busy = 0.0
        self._queue: list = []
        self._seq = 0
        self._recovery: Optional[int] = None
        self.trace = TraceLog()
        self.now = 0.0

    # -- link mechanics ----------------------------------------------------

    def _link(self, src: int, dst: int) -> _Link:
        key = (src, dst)
        if key not in self._links:
            self._links[key] = _Link(self.topology.link(src, dst))
        return self._links[key]

    def transmit(self, msg: Message, src: int, dst: int, at: float) -> _Transit:
        """Put ``msg`` on the ``src -> dst`` link at time ``at``; returns its transit."""
        if msg.size_bytes <= 0:
            raise ValueError("message size must be positive")
        link = self._link(src, dst)
        start = max(at, link.busy_until)
        off = self.offset_s
        tx_end = link.trace.finish_time(start + off, msg.size_bytes * 8) - off
        latency = link.trace.latency_s + self.faults.added_latency_s(src, dst, start)
        deliver = tx_end + latency
        if self.ingress_cap_mbps and dst == self._recovery:
            begin = max(deliver, self._ingress_busy)
            deliver = begin + msg.size_bytes * 8 / (self.ingress_cap_mbps * 1e6)
            self._ingress_busy = deliver
        link.busy_until = tx_end
        transit = _Transit(msg, src, dst, start, tx_end, latency, deliver)
        link.inflight.append(transit)
        return transit

    def send(self, msg: Message, src: int, dst: int, at: float) -> float:
        """Transmit and schedule delivery; returns the delivery time in seconds."""
        transit = self.transmit(msg, src, dst, at)
        self._push(transit.deliver_at, "deliver", transit)
        if self.record_messages:
            self.trace.add(at, "send", src, dst, _describe(msg))
        return transit.deliver_at

    def _received_bytes(self, tr: _Transit, now: float) -> float:
        if self.ingress_cap_mbps:
            return tr.msg.size_bytes if now >= tr.deliver_at else 0.0
        upto = min(now - tr.latency, tr.tx_end)
        if upto <= tr.tx_start:
            return 0.0
        off = self.offset_s
        bits = self._link(tr.src, tr.dst).trace.bits_between(tr.tx_start + off, upto + off)
        return min(tr.msg.size_bytes, bits / 8)

    def _credit_progress(self, now: float) -> None:
        for t in self._transfer_ids:
            link = self._links.get((t, self._recovery))
            if link is None:
                continue
            for tr in link.inflight:
                got = self._received_bytes(tr, now)
                if got > tr.credited:
                    self.driver.record_receipt(t, got - tr.credited, now)
                    tr.credited = got

    # -- event loop --------------------------------------------------------

    def _push(self, at_s: float, kind: str, payload=None) -> None:
        heapq.heappush(self._queue, (to_ticks(at_s), self._seq, kind, payload))
        self._seq += 1

    def _dispatch(self, outs: Iterable, now: float) -> None:
        for dst, msg in outs:
            self.send(msg, self._recovery, dst, now)

    def _drain_events(self) -> None:
        for t, kind, detail in self.driver.events[self._events_seen :]:
            self.trace.add(t, kind, self._recovery, None, detail)
        self._events_seen = len(self.driver.events)

    def _pump(self, t: int, now: float) -> None:
        if t in self._crashed:
            return
        link = self._link(t, self._recovery)
        if link.busy_until > now + 1e-9:
            return
        session = self.sessions[t]
        msg = session.next_outbound(now)
        if msg is not None:
            transit = self.transmit(msg, t, self._recovery, now)
            self._push(transit.deliver_at, "deliver", transit)
            self._push(transit.tx_end, "tx_done", t)
            if self.record_messages:
                self.trace.add(now, "send", t, self._recovery, _describe(msg))
        elif session.has_outbound() and session.ready_at is not None and session.ready_at > now:
            if self._wake_at.get(t) != session.ready_at:
                self._wake_at[t] = session.ready_at
                self._push(session.ready_at, "wake", t)

    def run(
        self,
        driver,
        sessions: Mapping[int, TransferSession],
        *,
        recovery: int,
        tick_interval_s: Optional[float] = None,
        log_entries: Sequence[tuple[float, LogEntry]] = (),
    ) -> TraceLog:
        self.trace = TraceLog()
        self.driver = driver
        self.sessions = dict(sessions)
        self._recovery = recovery
        self._transfer_ids = sorted(self.sessions)
        self._crashed: set[int] = set()
        self._wake_at: dict[int, float] = {}
        self._events_seen = 0
        self.now = 0.0

        for t in self._transfer_ids:
            fault = self.faults.replicas.get(t)
            if fault is not None and fault.behavior == CRASH:
                self._push(fault.crash_at_s, "crash", t)
        for at, entry in log_entries:
            self._push(at, "log_entry", entry)
        self._push(0.0, "start")

        while True:
            if driver.done:
                break
            if not self._queue:
                raise DeadlockError("event queue drained before the transfer completed")
            ticks, _, kind, payload = heapq.heappop(self._queue)
            now = ticks / US
            if now > self.max_time_s:
                raise DeadlockError(f"no completion within {self.max_time_s} s of virtual time")
            self.now = now
            self._step(kind, payload, now, tick_interval_s)
            self._drain_events()

        return self._summarize(driver)

    def _step(self, kind: str, payload, now: float, tick_interval_s: Optional[float]) -> None:
        driver = self.driver
        if kind == "start":
            self._dispatch(driver.start(now), now)
            if tick_interval_s:
                self._push(now + tick_interval_s, "tick")
        elif kind == "tick":
            self._credit_progress(now)
            self._dispatch(driver.on_tick(now), now)
            if not driver.done:
                self._push(now + tick_interval_s, "tick")
        elif kind == "deliver":
            tr: _Transit = payload
            link = self._links[(tr.src, tr.dst)]
            link.inflight.remove(tr)
            if self.record_messages:
                self.trace.add(now, "deliver", tr.src, tr.dst, _describe(tr.msg))
            if tr.dst == self._recovery:
                self.trace.bytes_from[tr.src] = self.trace.bytes_from.get(tr.src, 0) + tr.msg.size_bytes
                rest = tr.msg.size_bytes - tr.credited
                if rest > 0:
                    driver.record_receipt(tr.src, rest, now)
                self._dispatch(driver.on_message(tr.msg, now, credit=False), now)
            elif tr.dst not in self._crashed:
                self.sessions[tr.dst].on_request(tr.msg, now)
                self._pump(tr.dst, now)
        elif kind in ("tx_done", "wake"):
            self._pump(payload, now)
        elif kind == "crash":
            self._crashed.add(payload)
            self.sessions[payload].crash()
            self.trace.add(now, "crash", payload)
        elif kind == "log_entry":
            driver.buffer_log_entry(payload)

    def _summarize(self, driver) -> TraceLog:
        trace = self.trace
        trace.completion_s = driver.done_s
        trace.finish_times = dict(sorted(driver.finish_times.items()))
        trace.fallback = bool(getattr(driver, "fallback_taken", False))
        trace.rounds = getattr(driver, "round", 0)
        trace.estimates = list(getattr(driver, "estimates", []))
        trace.failures = list(getattr(driver, "failures", []))
        trace.result = driver.result
        trace.add(driver.done_s, "complete", self._recovery, None, {
            "completion_s": round(driver.done_s, 6),
            "finish": {str(k): round(v, 6) for k, v in trace.finish_times.items()},
            "fallback": trace.fallback,
        })
        return trace


# -- trace files ---------------------------------------------------------


def _parse_mbps(cell: str, line: int) -> float:
    try:
        value = float(cell)
    except ValueError:
        raise TraceParseError(f"not a number: {cell!r}", line) from None
    if value < 0:
        raise TraceParseError(f"negative bandwidth {value}", line)
    if value == 0:
        raise TraceParseError("bandwidth must be positive", line)
    return value


def parse_matrix_csv(text: str, latency_ms: Optional[Mapping[tuple[str, str], float]] = None) -> Topology:
    """Static bandwidth matrix: header row of receivers, one row per sender."""
    rows = list(csv.reader(io.StringIO(text)))
    rows = [(i + 1, r) for i, r in enumerate(rows) if any(c.strip() for c in r)]
    if not rows:
        raise TraceParseError("empty matrix", 1)
    head_line, header = rows[0]
    receivers = [c.strip() for c in header[1:]]
    if not all(receivers):
        raise TraceParseError("empty receiver label in header", head_line)
    replicas = [ReplicaId(i, label) for i, label in enumerate(receivers)]
    ids = {r.label: r.id for r in replicas}
    links = {}
    seen = set()
    for line, row in rows[1:]:
        sender = row[0].strip()
        if sender not in ids:
            raise TraceParseError(f"unknown replica label {sender!r}", line)
        if sender in seen:
            raise TraceParseError(f"duplicate row for {sender!r}", line)
        seen.add(sender)
        if len(row) - 1 > len(receivers):
            raise TraceParseError("more cells than receivers", line)
        for receiver, cell in zip(receivers, row[1:]):
            cell = cell.strip()
            if not cell:
                continue
            if receiver == sender:
                raise TraceParseError("diagonal cell must be empty", line)
            mbps = _parse_mbps(cell, line)
            s, d = ids[sender], ids[receiver]
            lat = (latency_ms or {}).get((sender, receiver), 0.0)
            links[(s, d)] = LinkTrace.constant(s, d, mbps, lat)
    return Topology(replicas, links, premeasured={k: v.segments[0][1] for k, v in links.items()})


def parse_timeseries_csv(
    text: str,
    labels: Optional[Sequence[str]] = None,
    latency_ms: Optional[Mapping[tuple[str, str], float]] = None,
) -> Topology:
    """Rows of ``time_s,src,dst,mbps``; each row opens a new constant segment."""
    reader = csv.reader(io.StringIO(text))
    series: dict[tuple[str, str], list[tuple[float, float]]] = {}
    order: list[str] = list(labels or [])
    for i, row in enumerate(reader, start=1):
        if not any(c.strip() for c in row):
            continue
        if i == 1 and row[0].strip() == "time_s":
            continue
        if len(row) != 4:
            raise TraceParseError(f"expected 4 columns, got {len(row)}", i)
        t_raw, src, dst, bw = (c.strip() for c in row)
        try:
            t = float(t_raw)
        except ValueError:
            raise TraceParseError(f"not a time: {t_raw!r}", i) from None
        mbps = _parse_mbps(bw, i)
        for name in (src, dst):
            if name not in order:
                if labels is not None:
                    raise TraceParseError(f"unknown replica label {name!r}", i)
                order.append(name)
        segs = series.setdefault((src, dst), [])
        if segs and t <= segs[-1][0]:
            raise TraceParseError("segment times must increase per link", i)
        if not segs and t != 0:
            raise TraceParseError("first segment of a link must start at 0", i)
        segs.append((t, mbps))
    replicas = [ReplicaId(i, label) for i, label in enumerate(order)]
    ids = {r.label: r.id for r in replicas}
    links = {}
    for (src, dst), segs in series.items():
        s, d = ids[src], ids[dst]
        lat = (latency_ms or {}).get((src, dst), 0.0)
        links[(s, d)] = LinkTrace(s, d, tuple(segs), lat)
    return Topology(replicas, links)


def load_trace(path: str | Path, latency_ms: Optional[Mapping[tuple[str, str], float]] = None) -> Topology:
    """Load a static matrix CSV or a ``time_s,src,dst,mbps`` time-series CSV."""
    text = Path(path).read_text(encoding="utf-8")
    first = text.lstrip().split("\n", 1)[0].replace(" ", "")
    if first.startswith("time_s,src,dst,mbps"):
        return parse_timeseries_csv(text, latency_ms=latency_ms)
    return parse_matrix_csv(text, latency_ms=latency_ms)


def synthesize_traces(
    topology: Topology,
    *,
    seed: int,
    duration_s: float = 3600.0,
    step_s: float = 1.0,
    period_s: float = 60.0,
    amplitude: float = 0.4,
    noise: float = 0.1,
    floor_fraction: float = 0.05,
) -> Topology:
    """Time-varying traces around each link's premeasured mean.

    Bandwidth follows ``mean * (1 + amplitude*sin(2*pi*t/period + phase) + noise*N(0,1))``
    with a random phase per link, sampled every ``step_s`` and held constant
    in between.
    """
    rng = random.Random(seed)
    links = {}
    for key in sorted(topology.links):
        trace = topology.links[key]
        mean = topology.bandwidth(*key)
        phase = rng.uniform(0, 2 * math.pi)
        segs = []
        n = max(1, int(duration_s / step_s))
        for k in range(n):
            t = k * step_s
            factor = 1 + amplitude * math.sin(2 * math.pi * t / period_s + phase) + noise * rng.gauss(0, 1)
            segs.append((t, mean * max(floor_fraction, factor)))
        links[key] = LinkTrace(key[0], key[1], tuple(segs), trace.latency_ms)
    premeasured = {k: topology.bandwidth(*k) for k in topology.links}
    return Topology(list(topology.replicas), links, dict(topology.hash_seconds), premeasured)
