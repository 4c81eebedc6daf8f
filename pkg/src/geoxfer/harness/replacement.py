"""Replica replacement: add a replica at a better location, transfer state
to it, then drop the replica it replaces.

Client-visible latency uses a simple quorum proxy rather than running
consensus: one client-leader round trip plus the leader's round trip to the
slowest member of its fastest 2f peers. Reconfiguration stalls request
processing for a fixed pause.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from geoxfer.core import MIB, Mode, TransferConfig, validate_config
from geoxfer.harness.experiments import RunSetup, make_state, simulate
from geoxfer.harness.topologies import (
    CALIFORNIA,
    IRELAND,
    LONDON,
    N_VIRGINIA,
    SAO_PAULO,
    SYDNEY,
    region_topology,
    rtt_ms,
)
from geoxfer.netsim import FaultSpec, LinkDelay


@dataclass(frozen=True)
class DelayInjection:
    replica: str
    added_ms: float
    at_s: float


@dataclass
class ReplacementScenario:
    name: str
    members: tuple[str, ...]
    removal: str
    addition: str
    leader: str
    client: Optional[str] = None
    delay: Optional[DelayInjection] = None
    removal_participates: bool = False
    add_at_s: float = 60.0
    settle_s: float = 30.0
    request_period_s: float = 1.0
    pause_s: float = 1.0
    state_mib: float = 1000.0
    f_max: int = 1
    n_chunks: int = 256
    interval_ms: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.removal not in self.members:
            raise ValueError(f"removal replica {self.removal!r} is not a member")
        if self.addition in self.members:
            raise ValueError(f"additional replica {self.addition!r} is already a member")
        if self.leader not in self.members or self.leader == self.removal:
            raise ValueError("leader must be a member that stays")
        if self.delay is not None and self.delay.replica not in self.members:
            raise ValueError("delay injection names an unknown member")

    @property
    def client_at(self) -> str:
        return self.client or self.leader

    @property
    def transfer_members(self) -> tuple[str, ...]:
        if self.removal_participates:
            return self.members
        return tuple(m for m in self.members if m != self.removal)


# Leader in Sydney; London's links degrade, Ireland replaces it. London is
# treated as unusable and does not serve state.
SCENARIO_LONDON_TO_IRELAND = ReplacementScenario(
    name="london-to-ireland",
    members=(SYDNEY, SAO_PAULO, N_VIRGINIA, LONDON),
    removal=LONDON,
    addition=IRELAND,
    leader=SYDNEY,
    delay=DelayInjection(LONDON, 100.0, 30.0),
    removal_participates=False,
    add_at_s=60.0,
)

# Leader in N. Virginia; Sydney migrates to California to cut quorum latency.
SCENARIO_SYDNEY_TO_CALIFORNIA = ReplacementScenario(
    name="sydney-to-california",
    members=(SYDNEY, SAO_PAULO, N_VIRGINIA, IRELAND),
    removal=SYDNEY,
    addition=CALIFORNIA,
    leader=N_VIRGINIA,
    removal_participates=True,
    add_at_s=30.0,
)

SCENARIOS = {s.name: s for s in (SCENARIO_LONDON_TO_IRELAND, SCENARIO_SYDNEY_TO_CALIFORNIA)}


def quorum_latency_ms(
    members, leader: str, client: str, f: int, extra_ms: Optional[dict[str, float]] = None
) -> float:
    extra_ms = extra_ms or {}
    peers = sorted(rtt_ms(leader, m) + extra_ms.get(m, 0.0) for m in members if m != leader)
    if len(peers) < 2 * f:
        raise ValueError("not enough members for a quorum")
    return rtt_ms(client, leader) + (peers[2 * f - 1] if f else 0.0)


@dataclass
class ReplacementResult:
    scenario: str
    method: str
    transfer_s: float
    timeline: list[tuple[float, float]] = field(default_factory=list)
    pre_ms: float = 0.0
    degraded_ms: float = 0.0
    post_ms: float = 0.0
    fallback: bool = False


def transfer_setup(scenario: ReplacementScenario, method: str) -> RunSetup:
    labels = (*scenario.transfer_members, scenario.addition)
    topo = region_topology(labels)
    ids = {r.label: r.id for r in topo.replicas}
    cfg = TransferConfig(
        n_replicas=len(labels),
        f_max=scenario.f_max,
        n_chunks=scenario.n_chunks,
        interval_ms=scenario.interval_ms,
        mode=Mode.BFT,
    )
    validate_config(cfg)
    delays = []
    d = scenario.delay
    if d is not None and d.replica in ids:
        # transfer time is measured from the moment the replica is added
        start = max(0.0, d.at_s - scenario.add_at_s)
        delays.append(LinkDelay(ids[d.replica], ids[scenario.addition], d.added_ms, start))
    recovery = ids[scenario.addition]
    return RunSetup(
        method=method,
        topology=topo,
        recovery=recovery,
        transfer=[i for i in topo.ids if i != recovery],
        config=cfg,
        state_bytes=int(round(scenario.state_mib * MIB)),
        snapshot=make_state(scenario.seed),
        faults=FaultSpec(link_delays=delays),
        seed=scenario.seed,
    )


def run_replacement(scenario: ReplacementScenario, method: str = "proposed") -> ReplacementResult:
    setup = transfer_setup(scenario, method)
    trace = simulate(setup)
    transfer_s = trace.completion_s

    f = scenario.f_max
    client = scenario.client_at
    before = scenario.members
    after = tuple(m for m in scenario.members if m != scenario.removal) + (scenario.addition,)
    d = scenario.delay
    switch_at = scenario.add_at_s + transfer_s
    resume_at = switch_at + scenario.pause_s
    end = resume_at + scenario.settle_s

    def latency(t: float) -> float:
        extra = {d.replica: d.added_ms} if d is not None and t >= d.at_s else {}
        members = before if t < switch_at else after
        base = quorum_latency_ms(members, scenario.leader, client, f, extra)
        if switch_at <= t < resume_at:
            base += (resume_at - t) * 1000.0
        return base

    timeline = []
    k = 0
    while k * scenario.request_period_s <= end:
        t = round(k * scenario.request_period_s, 6)
        timeline.append((t, round(latency(t), 3)))
        k += 1

    degraded_at = d.at_s if d is not None else scenario.add_at_s
    return ReplacementResult(
        scenario=scenario.name,
        method=method,
        transfer_s=round(transfer_s, 6),
        timeline=timeline,
        pre_ms=quorum_latency_ms(before, scenario.leader, client, f),
        degraded_ms=latency(degraded_at),
        post_ms=latency(end),
        fallback=trace.fallback,
    )
