"""Closed-form transfer times for the three methods and the worst-case
estimation-error construction.

Units: ``state_bytes`` in bytes, bandwidths in Mbps (10^6 bits/s).
"""

from __future__ import annotations

import csv
import io
import math
import statistics
from dataclasses import dataclass
from typing import Sequence


class NonPositiveBandwidth(ValueError):
    """A profile point would need a bandwidth of zero or less."""


@dataclass(frozen=True)
class BandwidthProfile:
    """Actual bandwidth from each transfer replica to the recovery replica."""

    mbps: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "mbps", tuple(float(w) for w in self.mbps))
        if not self.mbps:
            raise ValueError("profile needs at least one transfer replica")
        if any(not w > 0 for w in self.mbps):
            raise NonPositiveBandwidth(f"bandwidths must be positive: {self.mbps}")

    @property
    def total(self) -> float:
        return math.fsum(self.mbps)

    @property
    def min(self) -> float:
        return min(self.mbps)

    @property
    def max(self) -> float:
        return max(self.mbps)

    @property
    def mean(self) -> float:
        return self.total / len(self.mbps)

    @property
    def stddev(self) -> float:
        return statistics.pstdev(self.mbps)

    def __len__(self) -> int:
        return len(self.mbps)

    @classmethod
    def symmetric(cls, mean: float, stddev: float, k: int = 3) -> "BandwidthProfile":
        """``k`` bandwidths evenly spaced from ``mean - stddev`` to ``mean + stddev``."""
        if stddev < 0:
            raise ValueError("stddev must be >= 0")
        if mean - stddev <= 0:
            raise NonPositiveBandwidth(f"mean {mean} must exceed stddev {stddev}")
        if k == 1:
            return cls((mean,))
        step = 2 * stddev / (k - 1)
        return cls(tuple(mean - stddev + i * step for i in range(k)))


def _bits(state_bytes: float) -> float:
    if state_bytes <= 0:
        raise ValueError("state size must be positive")
    return state_bytes * 8 / 1e6  # megabits


def t_pbft(state_bytes: float, profile: BandwidthProfile) -> float:
    return _bits(state_bytes) / profile.max


def t_cst(state_bytes: float, profile: BandwidthProfile) -> float:
    return _bits(state_bytes) / (len(profile) * profile.min)


def t_proposed(state_bytes: float, profile: BandwidthProfile) -> float:
    return _bits(state_bytes) / profile.total


def worst_case_estimates(profile: BandwidthProfile, x_pct: float) -> tuple[float, ...]:
    """Estimates that slow the proposed method down the most at error ``x_pct``.

    Fast replicas are underestimated and slow ones overestimated. Replicas
    exactly at the mean are underestimated too, unless nothing would be
    overestimated; then the first of them is overestimated instead.
    """
    if not 0 <= x_pct < 100:
        raise ValueError("error percent must be in [0, 100)")
    x = x_pct / 100
    mean = profile.mean
    at_mean = [math.isclose(w, mean, rel_tol=1e-12) for w in profile.mbps]
    over = [w < mean and not m for w, m in zip(profile.mbps, at_mean)]
    if not any(over):
        over[at_mean.index(True)] = True
    return tuple(w * (1 + x) if o else w * (1 - x) for w, o in zip(profile.mbps, over))


def t_proposed_with_error(state_bytes: float, profile: BandwidthProfile, x_pct: float) -> float:
    est = worst_case_estimates(profile, x_pct)
    return _bits(state_bytes) * (1 + x_pct / 100) / math.fsum(est)


CURVE_COLUMNS = ("stddev", "error_pct", "method", "normalized_time_pct")


def emit_curves(
    mean: float,
    stddevs: Sequence[float],
    errors: Sequence[float],
    n_replicas: int = 4,
) -> list[tuple[float, float, str, float]]:
    """Rows of (stddev, error_pct, method, time as percent of PBFT's).

    PBFT and CST rows carry error 0; the proposed method gets one row per
    error value (0 meaning exact estimates).
    """
    k = n_replicas - 1
    rows = []
    for s in stddevs:
        prof = BandwidthProfile.symmetric(mean, s, k)
        base = t_pbft(1, prof)
        rows.append((s, 0.0, "pbft", 100.0))
        rows.append((s, 0.0, "cst", 100 * t_cst(1, prof) / base))
        for x in errors:
            rows.append((s, float(x), "proposed", 100 * t_proposed_with_error(1, prof, x) / base))
    return rows


def curves_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CURVE_COLUMNS)
    for s, x, method, pct in rows:
        w.writerow([f"{s:g}", f"{x:g}", method, f"{pct:.4f}"])
    return buf.getvalue()
