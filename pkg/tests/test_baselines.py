import pytest

from geoxfer.baselines import (
    BaselineKind,
    ExhaustedReplicas,
    cst_config,
    cst_transfer,
    pbft_order,
    pbft_session,
    pbft_transfer,
    premeasured_transfer,
)
from geoxfer.core import MIB, TransferConfig
from geoxfer.harness.experiments import expected_state
from geoxfer.netsim import FaultSpec, ReplicaFault
from simkit import BARE, make_setup, rerun, run

MEGABITS = 1000 * MIB * 8 / 1e6


def test_kinds():
    assert [k.value for k in BaselineKind] == ["pbft", "cst", "premeasured"]


def test_pbft_static_time():
    _, trace = run("pbft", **BARE)
    assert trace.completion_s == pytest.approx(MEGABITS / 173.3, rel=0.05)


def test_cst_static_time():
    _, trace = run("cst", **BARE)
    assert trace.completion_s == pytest.approx(MEGABITS / 3 / 57.0, rel=0.05)


def test_pbft_moves_whole_state_over_one_link():
    setup, trace = run("pbft", **BARE)
    ireland = setup.topology.by_label("Ireland").id
    big = {r: b for r, b in trace.bytes_from.items() if b > MIB}
    assert list(big) == [ireland] and big[ireland] >= 1000 * MIB


def test_cst_splits_evenly():
    _, trace = run("cst", **BARE)
    parts = sorted(trace.bytes_from.values())
    assert parts[-1] - parts[0] <= 64
    assert sum(parts) >= 1000 * MIB


def test_pbft_retries_after_corrupt_sender():
    setup = make_setup("pbft", **BARE)
    ireland = setup.topology.by_label("Ireland").id
    faults = FaultSpec({ireland: ReplicaFault("byz_corrupt_chunks", corrupt_probability=1.0)})
    setup, trace = rerun(setup, faults=faults)
    retries = trace.of_kind("pbft_retry")
    assert retries and retries[0]["detail"]["failed"] == ireland
    assert trace.result == expected_state(setup)
    assert trace.finish_times and ireland not in trace.finish_times


def test_pbft_exhausted_when_everyone_lies():
    setup = make_setup("pbft", **BARE)
    faults = FaultSpec({t: ReplicaFault("byz_corrupt_chunks", corrupt_probability=1.0) for t in setup.transfer})
    with pytest.raises(ExhaustedReplicas):
        rerun(setup, faults=faults, stall_timeout_s=1.0)


def test_pbft_prefers_widest_and_honours_choice():
    assert pbft_order({1: 50.0, 2: 170.0, 3: 170.0}) == [2, 3, 1]
    s = pbft_session(TransferConfig(), 0, [1, 2, 3], {1: 1.0, 2: 9.0, 3: 5.0}, chosen=1)
    assert s.order == [1, 2, 3]
    with pytest.raises(ValueError):
        pbft_session(TransferConfig(), 0, [1, 2, 3], {1: 1.0, 2: 1.0, 3: 1.0}, chosen=0)


def test_cst_config_one_part_per_replica():
    assert cst_config(TransferConfig(n_replicas=5)).n_chunks == 4


def test_runners_return_snapshot():
    setup = make_setup("proposed", **BARE)
    want = expected_state(setup)
    assert pbft_transfer(setup, setup.transfer[0]) == want
    assert cst_transfer(setup) == want
    assert premeasured_transfer(setup, {t: 10.0 for t in setup.transfer}) == want
    with pytest.raises(ValueError):
        premeasured_transfer(setup, {setup.transfer[0]: 10.0})


def test_premeasured_matches_proposed_on_static_traces():
    _, pre = run("premeasured", **BARE)
    _, dyn = run("proposed", **BARE)
    assert pre.completion_s == pytest.approx(dyn.completion_s, rel=0.05)


def test_equal_estimates_degenerate_to_equal_split():
    setup = make_setup("premeasured", **BARE)
    setup, trace = rerun(setup, static_estimates={t: 7.0 for t in setup.transfer})
    rounds = [e["detail"]["sizes"] for e in trace.of_kind("round")]
    assert sorted(rounds[0].values(), reverse=True) == [86, 85, 85]
    for sizes in rounds:
        assert max(sizes.values()) - min(sizes.values()) <= 1


def test_premeasured_not_faster_under_swinging_traces():
    wins = 0
    for seed in range(6):
        kw = dict(topology="european", recovery="Ireland", varying=True, trace_amplitude=0.5, seed=seed)
        _, pre = run("premeasured", **kw)
        _, dyn = run("proposed", **kw)
        wins += dyn.completion_s <= pre.completion_s
    assert wins >= 5
