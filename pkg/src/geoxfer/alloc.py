"""Passive bandwidth estimation and bandwidth-proportional chunk assignment."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping

BOOTSTRAP_ESTIMATE = 1.0
SILENT_DECAY = 0.5
MIN_ESTIMATE_MBPS = 0.01


class UnknownReplica(KeyError):
    pass


class EmptyRemaining(ValueError):
    pass


class ReceiptLedger:
    """Bytes received per transfer replica, bucketed by estimation interval.

    Interval ``k`` covers virtual time ``(start + k*I, start + (k+1)*I]``; a
    receipt stamped exactly on a boundary belongs to the interval it closes.
    Byte counts may be fractional when the caller credits a message while it
    is still arriving.
    """

    def __init__(self, replicas: Iterable[int], interval_ms: int, start_s: float = 0.0):
        if interval_ms <= 0:
            raise ValueError("interval_ms must be positive")
        self.interval_ms = interval_ms
        self.start_s = start_s
        self._buckets: dict[int, defaultdict[int, float]] = {
            r: defaultdict(float) for r in replicas
        }
        self._total = {r: 0.0 for r in self._buckets}
        self.last_progress_s = {r: start_s for r in self._buckets}
        self.last_record_s = {r: start_s for r in self._buckets}
        self._estimates: dict[int, list[float]] = {r: [] for r in self._buckets}

    @property
    def replicas(self) -> list[int]:
        return list(self._buckets)

    @property
    def interval_s(self) -> float:
        return self.interval_ms / 1000.0

    def interval_index(self, at_s: float) -> int:
        elapsed = at_s - self.start_s
        if elapsed <= 0:
            return 0
        return max(0, math.ceil(elapsed / self.interval_s - 1e-12) - 1)

    def record(self, replica: int, nbytes: float, at_s: float) -> None:
        if replica not in self._buckets:
            raise UnknownReplica(replica)
        if nbytes < 0:
            raise ValueError("received byte count must be non-negative")
        self.last_record_s[replica] = max(self.last_record_s[replica], at_s)
        if nbytes == 0:
            return
        self._buckets[replica][self.interval_index(at_s)] += nbytes
        self._total[replica] += nbytes
        self.last_progress_s[replica] = max(self.last_progress_s[replica], at_s)

    def interval_bytes(self, replica: int, k: int) -> float:
        if replica not in self._buckets:
            raise UnknownReplica(replica)
        return self._buckets[replica].get(k, 0.0)

    def total_bytes(self, replica: int) -> float:
        return self._total[replica]


def record_receipt(ledger: ReceiptLedger, replica: int, nbytes: float, at_s: float) -> ReceiptLedger:
    ledger.record(replica, nbytes, at_s)
    return ledger


def estimate(ledger: ReceiptLedger, replica: int, round_index: int) -> float:
    """Bandwidth (Mbps) seen from ``replica`` over the interval before round ``round_index``.

    Round 0 has no data and returns the bootstrap value 1. A silent interval
    halves the previous estimate, never going below ``MIN_ESTIMATE_MBPS``.
    """
    if round_index < 0:
        raise ValueError("round index must be >= 0")
    history = ledger._estimates[replica]
    while len(history) <= round_index:
        i = len(history)
        if i == 0:
            history.append(BOOTSTRAP_ESTIMATE)
            continue
        nbytes = ledger.interval_bytes(replica, i - 1)
        if nbytes > 0:
            history.append(nbytes * 8 / 1e6 / ledger.interval_s)
        else:
            history.append(max(history[-1] * SILENT_DECAY, MIN_ESTIMATE_MBPS))
    return history[round_index]


@dataclass(frozen=True)
class BandwidthEstimate:
    round: int
    values: Mapping[int, float]

    @property
    def total(self) -> float:
        return sum(self.values.values())


@dataclass(frozen=True)
class Assignment:
    round: int
    sets: Mapping[int, tuple[int, ...]]
    duplicates: int = 0
    target_sizes: Mapping[int, int] = field(default_factory=dict)

    def size(self, replica: int) -> int:
        return len(self.sets.get(replica, ()))

    def covered(self) -> frozenset[int]:
        return frozenset(i for s in self.sets.values() for i in s)


def largest_remainder(total: int, weights: Mapping[int, float]) -> dict[int, int]:
    """Apportion ``total`` seats by ``weights``; remainder ties go to the lower key."""
    exact = {k: Fraction(w) for k, w in weights.items()}
    if any(w <= 0 for w in exact.values()):
        raise ValueError("weights must be positive")
    denom = sum(exact.values())
    quotas = {k: total * w / denom for k, w in exact.items()}
    seats = {k: math.floor(q) for k, q in quotas.items()}
    leftover = total - sum(seats.values())
    for k in sorted(quotas, key=lambda k: (-(quotas[k] - seats[k]), k))[:leftover]:
        seats[k] += 1
    return seats


def dealing_order(estimates: Mapping[int, float]) -> list[int]:
    return sorted(estimates, key=lambda r: (-estimates[r], r))


def assign(
    remaining: Iterable[int],
    estimates: Mapping[int, float],
    n_chunks: int,
    verified: Iterable[int] = (),
    round_index: int = 0,
) -> Assignment:
    remaining = sorted(set(remaining))
    if not remaining:
        raise EmptyRemaining("nothing left to assign")
    if set(remaining) | set(verified) != set(range(n_chunks)):
        raise ValueError("remaining and verified chunks must together cover all chunks")
    if not estimates:
        raise ValueError("need at least one transfer replica")
    sizes = largest_remainder(len(remaining), estimates)
    order = dealing_order(estimates)

    sets: dict[int, list[int]] = {}
    pos = 0
    for r in order:
        sets[r] = remaining[pos : pos + sizes[r]]
        pos += sizes[r]

    duplicates = 0
    largest = max(order, key=lambda r: len(sets[r]))
    donor_head = sets[largest][0]
    for r in order:
        if not sets[r]:
            sets[r] = [donor_head]
            duplicates += 1

    return Assignment(
        round=round_index,
        sets={r: tuple(sets[r]) for r in sorted(sets)},
        duplicates=duplicates,
        target_sizes=sizes,
    )
