import pytest
from hypothesis import given
from hypothesis import strategies as st

from geoxfer.analysis import (
    BandwidthProfile,
    NonPositiveBandwidth,
    curves_csv,
    emit_curves,
    t_cst,
    t_pbft,
    t_proposed,
    t_proposed_with_error,
    worst_case_estimates,
)
from geoxfer.core import MIB

S = 1000 * MIB


def test_pbft_thousand_mib():
    assert t_pbft(S, BandwidthProfile((57.0, 102.2, 173.3))) == pytest.approx(48.41, abs=0.01)


def test_single_replica_degenerates():
    p = BandwidthProfile((80.0,))
    assert t_pbft(S, p) == t_cst(S, p) == t_proposed(S, p) == pytest.approx(S * 8 / 1e6 / 80)


def test_cst_three_times_pbft():
    p = BandwidthProfile((20, 100, 180))
    assert t_cst(S, p) / t_pbft(S, p) == pytest.approx(3.0)


def test_stddev_forty_ratios():
    p = BandwidthProfile((60, 100, 140))
    assert t_cst(S, p) / t_pbft(S, p) == pytest.approx(140 / 180)
    assert t_proposed(S, p) / t_pbft(S, p) == pytest.approx(140 / 300)


def test_proposed_ignores_spread():
    assert t_proposed(S, BandwidthProfile((20, 100, 180))) == t_proposed(S, BandwidthProfile((100, 100, 100)))


def test_worst_case_constructions():
    assert worst_case_estimates(BandwidthProfile((100, 100, 100)), 40) == pytest.approx((140, 60, 60))
    assert worst_case_estimates(BandwidthProfile((20, 100, 180)), 40) == pytest.approx((28, 60, 108))


def test_error_ratios():
    flat = BandwidthProfile((100, 100, 100))
    wide = BandwidthProfile((20, 100, 180))
    assert t_proposed_with_error(S, flat, 40) / t_proposed(S, flat) == pytest.approx(1.615, abs=0.002)
    assert t_proposed_with_error(S, wide, 40) / t_proposed(S, wide) == pytest.approx(2.143, abs=0.002)


def test_doubling_bandwidth_halves_time():
    p = BandwidthProfile((10, 30, 70))
    q = BandwidthProfile((20, 60, 140))
    for f in (t_pbft, t_cst, t_proposed):
        assert f(S, q) == pytest.approx(f(S, p) / 2)


profiles = st.lists(st.floats(0.5, 2000), min_size=1, max_size=8).map(lambda ws: BandwidthProfile(tuple(ws)))


@given(profiles)
def test_proposed_never_slower(p):
    assert t_proposed(S, p) <= t_cst(S, p) * (1 + 1e-12)
    assert t_proposed(S, p) <= t_pbft(S, p) * (1 + 1e-12)


@given(profiles, st.floats(0, 99), st.floats(0, 99))
def test_error_monotone_in_x(p, x, y):
    assert t_proposed_with_error(S, p, 0) == pytest.approx(t_proposed(S, p))
    lo, hi = sorted((x, y))
    assert t_proposed_with_error(S, p, lo) <= t_proposed_with_error(S, p, hi) * (1 + 1e-12)


@given(profiles, st.floats(0, 99))
def test_at_least_one_overestimated(p, x):
    est = worst_case_estimates(p, x)
    assert any(e >= w for e, w in zip(est, p.mbps))


def test_curve_rows():
    rows = {(s, x, m): v for s, x, m, v in emit_curves(100, [0, 80], [0, 40], 4)}
    assert rows[(0, 0.0, "pbft")] == 100
    assert rows[(0, 0.0, "cst")] == pytest.approx(100 / 3)
    assert rows[(0, 0.0, "proposed")] == pytest.approx(100 / 3)
    assert rows[(80, 0.0, "cst")] == pytest.approx(300)
    assert rows[(80, 40.0, "proposed")] > 100


def test_curve_errors_and_csv():
    with pytest.raises(NonPositiveBandwidth):
        emit_curves(100, [100], [0])
    text = curves_csv(emit_curves(100, [40], [0], 4))
    assert text.splitlines()[0] == "stddev,error_pct,method,normalized_time_pct"
    assert BandwidthProfile.symmetric(100, 40, 5).mbps == (60, 80, 100, 120, 140)
