"""Built-in region topologies.

Bandwidths for the Worldwide and European groups are the premeasured EC2
inter-region means (Mbps, sender row -> receiver column). Latencies are
one-way delays derived from typical public inter-region RTTs; they are
modeling inputs, not measurements. London and California only appear in the
replacement scenarios, and their bandwidths to the Worldwide regions are
likewise assumed values.
"""

from __future__ import annotations

from geoxfer.core import ReplicaId
from geoxfer.netsim import LinkTrace, Topology

SYDNEY = "Sydney"
SAO_PAULO = "São Paulo"
N_VIRGINIA = "N. Virginia"
IRELAND = "Ireland"
LONDON = "London"
PARIS = "Paris"
FRANKFURT = "Frankfurt"
CALIFORNIA = "California"

WORLDWIDE = (SYDNEY, SAO_PAULO, N_VIRGINIA, IRELAND)
EUROPEAN = (IRELAND, LONDON, PARIS, FRANKFURT)

WORLDWIDE_MATRIX = {
    SYDNEY: {SAO_PAULO: 33.7, N_VIRGINIA: 57.0, IRELAND: 42.9},
    SAO_PAULO: {SYDNEY: 33.3, N_VIRGINIA: 102.2, IRELAND: 64.5},
    N_VIRGINIA: {SYDNEY: 56.6, SAO_PAULO: 103.0, IRELAND: 174.3},
    IRELAND: {SYDNEY: 42.9, SAO_PAULO: 64.4, N_VIRGINIA: 173.3},
}

EUROPEAN_MATRIX = {
    IRELAND: {LONDON: 857.8, PARIS: 578.1, FRANKFURT: 420.8},
    LONDON: {IRELAND: 866.8, PARIS: 1219.6, FRANKFURT: 667.2},
    PARIS: {IRELAND: 594.4, LONDON: 1234.4, FRANKFURT: 1115.5},
    FRANKFURT: {IRELAND: 420.0, LONDON: 662.4, PARIS: 1113.6},
}

# assumed symmetric bandwidths for regions outside the two measured groups
EXTRA_BANDWIDTH = {
    frozenset((LONDON, SYDNEY)): 40.0,
    frozenset((LONDON, SAO_PAULO)): 62.0,
    frozenset((LONDON, N_VIRGINIA)): 165.0,
    frozenset((CALIFORNIA, SYDNEY)): 95.0,
    frozenset((CALIFORNIA, SAO_PAULO)): 70.0,
    frozenset((CALIFORNIA, N_VIRGINIA)): 190.0,
    frozenset((CALIFORNIA, IRELAND)): 110.0,
    frozenset((CALIFORNIA, LONDON)): 105.0,
}

RTT_MS = {
    frozenset((SYDNEY, SAO_PAULO)): 310,
    frozenset((SYDNEY, N_VIRGINIA)): 198,
    frozenset((SYDNEY, IRELAND)): 255,
    frozenset((SYDNEY, LONDON)): 265,
    frozenset((SYDNEY, PARIS)): 280,
    frozenset((SYDNEY, FRANKFURT)): 290,
    frozenset((SYDNEY, CALIFORNIA)): 140,
    frozenset((SAO_PAULO, N_VIRGINIA)): 115,
    frozenset((SAO_PAULO, IRELAND)): 180,
    frozenset((SAO_PAULO, LONDON)): 185,
    frozenset((SAO_PAULO, PARIS)): 190,
    frozenset((SAO_PAULO, FRANKFURT)): 200,
    frozenset((SAO_PAULO, CALIFORNIA)): 175,
    frozenset((N_VIRGINIA, IRELAND)): 68,
    frozenset((N_VIRGINIA, LONDON)): 75,
    frozenset((N_VIRGINIA, PARIS)): 80,
    frozenset((N_VIRGINIA, FRANKFURT)): 90,
    frozenset((N_VIRGINIA, CALIFORNIA)): 62,
    frozenset((IRELAND, LONDON)): 12,
    frozenset((IRELAND, PARIS)): 18,
    frozenset((IRELAND, FRANKFURT)): 25,
    frozenset((IRELAND, CALIFORNIA)): 135,
    frozenset((LONDON, PARIS)): 8,
    frozenset((LONDON, FRANKFURT)): 15,
    frozenset((LONDON, CALIFORNIA)): 140,
    frozenset((PARIS, FRANKFURT)): 10,
    frozenset((PARIS, CALIFORNIA)): 145,
    frozenset((FRANKFURT, CALIFORNIA)): 150,
}

INTRA_REGION_RTT_MS = 1.0


def rtt_ms(a: str, b: str) -> float:
    if a == b:
        return INTRA_REGION_RTT_MS
    return float(RTT_MS[frozenset((a, b))])


def bandwidth_mbps(src: str, dst: str) -> float:
    for matrix in (WORLDWIDE_MATRIX, EUROPEAN_MATRIX):
        if src in matrix and dst in matrix[src]:
            return matrix[src][dst]
    return EXTRA_BANDWIDTH[frozenset((src, dst))]


def region_topology(labels, *, with_latency: bool = True) -> Topology:
    """Full mesh over ``labels`` with the tabulated bandwidths and latencies."""
    replicas = [ReplicaId(i, label) for i, label in enumerate(labels)]
    links = {}
    premeasured = {}
    for s in replicas:
        for d in replicas:
            if s.id == d.id:
                continue
            bw = bandwidth_mbps(s.label, d.label)
            lat = rtt_ms(s.label, d.label) / 2 if with_latency else 0.0
            links[(s.id, d.id)] = LinkTrace.constant(s.id, d.id, bw, lat)
            premeasured[(s.id, d.id)] = bw
    return Topology(replicas, links, premeasured=premeasured)


BUILTIN = {"worldwide": WORLDWIDE, "european": EUROPEAN}


def builtin_topology(name: str, *, with_latency: bool = True) -> Topology:
    try:
        labels = BUILTIN[name.lower()]
    except KeyError:
        raise KeyError(f"unknown builtin topology {name!r}; choose from {sorted(BUILTIN)}") from None
    return region_topology(labels, with_latency=with_latency)


def matrix_csv(name: str) -> str:
    """The builtin group's bandwidth matrix in the static-matrix CSV format."""
    labels = BUILTIN[name.lower()]
    lines = ["," + ",".join(labels)]
    for s in labels:
        cells = ["" if s == d else f"{bandwidth_mbps(s, d):.1f}" for d in labels]
        lines.append(s + "," + ",".join(cells))
    return "\n".join(lines) + "\n"
