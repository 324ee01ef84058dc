import csv
import json

import numpy as np
import pytest

from apse.errors import InfeasibleSampleError, MeasurementError
from apse.grid import NetworkGraph, build_ybus
from apse.measurements import MeasurementSet
from apse.physics import eval_injections
from apse.uq import (
    APSE,
    GNVQR,
    SampleBatch,
    UncertaintyRegion,
    run_batch,
    run_gnvqr_stream,
    solve_power_flow,
    summarize,
)

from conftest import make_stream


def test_zero_load_gives_flat_profile(feeder):
    x = solve_power_flow(feeder.model, np.zeros(feeder.model.n))
    assert np.max(np.abs(x.V - 1.0)) < 1e-12 and np.max(np.abs(x.theta)) < 1e-12


def test_two_bus_power_flow_closed_form():
    r, xl = 0.02, 0.06
    m = build_ybus(NetworkGraph(2, [(0, 1)]), [1 / (r + 1j * xl)])
    P, Q = 0.8, 0.3
    x = solve_power_flow(m, np.array([0, P + 1j * Q]))
    # |V|^4 + (2(Pr + Qx) - 1)|V|^2 + (P^2 + Q^2)(r^2 + x^2) = 0, upper root
    b = 2 * (P * r + Q * xl) - 1
    c = (P**2 + Q**2) * (r**2 + xl**2)
    v2 = (-b + np.sqrt(b * b - 4 * c)) / 2
    assert abs(x.V[0] - np.sqrt(v2)) < 1e-12


def test_power_flow_residual(feeder):
    load = feeder.nominal_load * 1.3
    x = solve_power_flow(feeder.model, load)
    s = eval_injections(x, feeder.model)
    p = feeder.model.p
    target = -load[feeder.model.nonslack]
    assert np.max(np.abs(s[:p] - target.real)) <= 1e-10 and np.max(np.abs(s[p:] - target.imag)) <= 1e-10


def test_overload_is_infeasible(feeder):
    with pytest.raises(InfeasibleSampleError):
        solve_power_flow(feeder.model, feeder.nominal_load * 40)


def test_region_validation(sparse_set):
    with pytest.raises(ValueError):
        UncertaintyRegion([3], 0.5, 0.5)
    with pytest.raises(ValueError):
        UncertaintyRegion([3], -1.5, 0.5)
    with pytest.raises(MeasurementError, match="no injection"):
        UncertaintyRegion([3], -0.5, 0.5, "x").check(MeasurementSet([1], [], [2]))


def test_draws_are_seeded_and_bounded(regions):
    a, b = SampleBatch.draw(regions, 500, 7), SampleBatch.draw(regions, 500, 7)
    np.testing.assert_array_equal(a.multipliers, b.multipliers)
    assert not np.array_equal(a.multipliers, SampleBatch.draw(regions, 500, 8).multipliers)
    assert a.multipliers.min() >= -0.5 and a.multipliers.max() < 0.5
    # uniform on [-0.5, 0.5): mean 0, sd 1/sqrt(12)
    assert np.all(np.abs(a.multipliers.mean(axis=0)) <= 3 / np.sqrt(12) / np.sqrt(500))
    np.testing.assert_array_equal(a.redraw(3, 1), b.redraw(3, 1))


def test_region_loads_scale_p_and_q_together(feeder, regions):
    batch = SampleBatch.draw(regions, 1, 0)
    loads = batch.loads(feeder.nominal_load, batch.multipliers[0])
    ratio = loads / np.where(feeder.nominal_load == 0, 1, feeder.nominal_load)
    for k, b in enumerate(batch.members):
        assert ratio[b] == pytest.approx(1 + batch.multipliers[0, k], rel=1e-14)
    others = np.setdiff1d(np.arange(feeder.model.n), batch.members)
    np.testing.assert_array_equal(loads[others], feeder.nominal_load[others])


def test_noise_free_zero_width_profiles_are_the_truth(feeder, sparse_physics, sparse_cov):
    narrow = [UncertaintyRegion([13, 14], -1e-300, 1e-300)]
    s = make_stream(feeder, sparse_physics, sparse_cov, narrow, 3, 0, 0.0)
    for prof, x in zip(s.profiles, s.truths):
        np.testing.assert_allclose(prof.values, s.bootstrap.values, rtol=0, atol=1e-12)
        np.testing.assert_allclose(x.vector, s.bootstrap_truth.vector, rtol=0, atol=1e-12)


def test_synthesis_is_deterministic_and_noise_off_region(feeder, sparse_physics, sparse_cov, regions):
    a = make_stream(feeder, sparse_physics, sparse_cov, regions, 4, 9, 1.0)
    b = make_stream(feeder, sparse_physics, sparse_cov, regions, 4, 9, 1.0)
    for pa, pb in zip(a.profiles, b.profiles):
        np.testing.assert_array_equal(pa.values, pb.values)
    clean = make_stream(feeder, sparse_physics, sparse_cov, regions, 4, 9, 0.0)
    diff = a.profiles[0].values - clean.profiles[0].values
    inj = list(sparse_physics.mset.inj_buses)
    ss = sparse_physics.mset.slices[2]
    for b in regions[0].buses:
        k = inj.index(b)
        assert diff[ss.start + k] == 0 and diff[ss.start + len(inj) + k] == 0
    assert np.count_nonzero(diff) == len(diff) - 2 * sum(len(r.buses) for r in regions)
    assert a.bootstrap.profile_id == -1


def test_batch_gnvqr_recovers_truth(sparse_stream, sparse_physics, sparse_cov):
    stats = run_batch(sparse_stream.profiles[:10], sparse_physics, sparse_cov, comparison="gnvqr")
    assert set(stats.runs) == {GNVQR} and stats.speedup() is None
    run = stats.runs[GNVQR]
    assert run.converged.all()
    truth = np.array([x.vector for x in sparse_stream.truths[:10]])
    assert np.max(np.abs(run.states - truth)) <= 1e-8


def test_threads_give_the_same_states(sparse_stream, sparse_physics, sparse_cov):
    one = run_gnvqr_stream(sparse_stream.profiles[:12], sparse_physics, sparse_cov)
    four = run_gnvqr_stream(sparse_stream.profiles[:12], sparse_physics, sparse_cov, workers=4)
    assert four.converged.all()
    assert np.max(np.abs(one.states - four.states)) <= 1e-8


def test_single_profile_histograms(sparse_stream, sparse_physics, sparse_cov):
    stats = run_batch(sparse_stream.profiles[:1], sparse_physics, sparse_cov, comparison="gnvqr", bins=10)
    for counts, edges in stats.voltage_hist[GNVQR]:
        assert counts.sum() == 1 and len(edges) == 2


@pytest.fixture(scope="module")
def both_stats(sparse_stream, sparse_physics, sparse_cov):
    return run_batch(sparse_stream.profiles, sparse_physics, sparse_cov, comparison="both",
                     bootstrap_profile=sparse_stream.bootstrap, bins=12)


def test_histograms_hold_all_mass(both_stats):
    for name in (GNVQR, APSE):
        for counts, edges in both_stats.voltage_hist[name] + both_stats.current_hist[name]:
            assert counts.sum() == both_stats.sample_count
            assert np.all(np.diff(edges) > 0)


def test_paired_states_and_curve(both_stats):
    assert np.max(both_stats.paired_max_diff) <= 1e-7
    curve = both_stats.acceptance_curve(window=10)
    assert len(curve) == both_stats.sample_count and np.all((curve >= 0) & (curve <= 1))


def test_uncertainty_regions_spread_more_than_substation(both_stats, sparse_physics):
    V = both_stats.runs[GNVQR].states[:, : sparse_physics.p]
    pos = {b: k for k, b in enumerate(sparse_physics.model.nonslack)}
    assert V[:, pos[17]].std() > 5 * V[:, pos[1]].std()


def test_summarize_writes_all_files(tmp_path, both_stats):
    s = summarize(both_stats, tmp_path)
    for f in ("histograms/voltage_gnvqr.csv", "histograms/current_apse.csv", "timing/timing.csv",
              "timing/acceptance.csv", "states/apse.csv", "summary.json"):
        assert (tmp_path / f).exists(), f
    assert json.loads((tmp_path / "summary.json").read_text())["samples"] == both_stats.sample_count
    assert s["speedup"] == both_stats.speedup()
    rows = list(csv.reader(open(tmp_path / "timing" / "timing.csv")))
    assert len(rows) == both_stats.sample_count + 1 and "apse_path" in rows[0]


def test_summarize_single_path(tmp_path, sparse_stream, sparse_physics, sparse_cov):
    stats = run_batch(sparse_stream.profiles[:3], sparse_physics, sparse_cov, comparison="gnvqr")
    s = summarize(stats, tmp_path)
    assert s["paths"] == [GNVQR] and s["speedup"] is None and s["acceptance_rate_curve"] == []
    # the apse histogram file exists but is only a header
    assert len(list(csv.reader(open(tmp_path / "histograms" / "voltage_apse.csv")))) == 1


def test_unknown_comparison(sparse_physics, sparse_cov):
    with pytest.raises(ValueError):
        run_batch([], sparse_physics, sparse_cov, comparison="fast")
