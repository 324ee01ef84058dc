import numpy as np
import pytest

from apse.errors import DimensionError, MeasurementError
from apse.grid import PolarState
from apse.measurements import (
    CovarianceModel,
    MeasurementProfile,
    MeasurementSet,
    assemble_residual,
    layout_from_dict,
    layout_to_dict,
    load_layout,
    read_profiles,
    squared_magnitude_transform,
    validate_redundancy,
    write_profiles,
)
from apse.solver import gnvqr_solve

from conftest import random_state, small_radial


def test_redundancy_examples():
    ok, diag = validate_redundancy(MeasurementSet([1], [0], [1]), 2)
    assert ok and diag["rows"] == 5 and diag["slack"] == 1
    ok, diag = validate_redundancy(MeasurementSet([], [0], [1]), 2)
    assert not ok and diag["slack"] == 0


def test_desk_layout_redundancy(feeder, sparse_set):
    ok, diag = validate_redundancy(sparse_set, feeder.model.p)
    assert ok
    assert diag["rows"] == 2 + 2 + 64 and diag["two_p"] == 64
    # same order of magnitude as a few-percent smart-meter redundancy
    assert 0.01 < diag["redundancy_ratio"] < 0.1


def test_duplicate_devices_rejected():
    with pytest.raises(MeasurementError):
        MeasurementSet([1, 1], [], [])


def test_devices_checked_against_model():
    m = small_radial()
    with pytest.raises(MeasurementError, match="slack"):
        MeasurementSet([0], [], []).check_against(m)
    with pytest.raises(MeasurementError, match="slack"):
        MeasurementSet([], [], [0, 1]).check_against(m)
    with pytest.raises(MeasurementError, match="flow_lines"):
        MeasurementSet([], [2], []).check_against(m)


def test_covariance_weights():
    cov = CovarianceModel(np.array([1e-4, 4e-2, 2.5e-5]))
    np.testing.assert_allclose(cov.weight_sqrt**2 * cov.sigma_diag, 1.0, rtol=1e-14, atol=0)
    with pytest.raises(MeasurementError):
        CovarianceModel(np.array([1.0, 0.0]))


def test_squared_magnitude_transform_examples():
    mset = MeasurementSet([1, 2], [], [])
    cov = CovarianceModel(np.array([1e-4, 1e-4]))
    vals, cov2 = squared_magnitude_transform(MeasurementProfile([1.0, 0.5]), cov, mset)
    np.testing.assert_allclose(vals, [1.0, 0.25])
    np.testing.assert_allclose(cov2.sigma_diag, [4e-4, 1e-4], rtol=1e-15)
    with pytest.raises(MeasurementError):
        squared_magnitude_transform(MeasurementProfile([1.0, 0.0]), cov, mset)


def test_transform_leaves_other_rows_alone():
    mset = MeasurementSet([1], [0], [2])
    prof = MeasurementProfile([0.9, 0.1, 0.2, 0.3, 0.4])
    cov = CovarianceModel(np.arange(1, 6) * 1e-4)
    vals, cov2 = squared_magnitude_transform(prof, cov, mset)
    np.testing.assert_array_equal(vals[1:], prof.values[1:])
    np.testing.assert_array_equal(cov2.sigma_diag[1:], cov.sigma_diag[1:])


def _dense_h(x, model, mset):
    # independent dense evaluation straight from the admittance definition
    Y = model.ybus.toarray()
    v = model.full_voltage(x.complex)
    s = v * np.conj(Y @ v)
    pos = {b: k for k, b in enumerate(model.nonslack)}
    mags = [x.V[pos[b]] for b in mset.mag_buses]
    flows = []
    for ln in mset.flow_lines:
        a, b = model.graph.edges[ln]
        flows.append(v[a] * np.conj(model.line_admittances[ln] * (v[a] - v[b])))
    flows = np.array(flows, dtype=complex)
    inj = s[mset.inj_buses]
    return np.concatenate([mags, flows.real, flows.imag, inj.real, inj.imag])


def test_residual_zero_at_model_outputs(feeder, full_set):
    x = random_state(np.random.default_rng(1), feeder.model.p)
    z = _dense_h(x, feeder.model, full_set)
    r = assemble_residual(x, MeasurementProfile(z), full_set, feeder.model)
    assert np.max(np.abs(r)) < 1e-12


def test_residual_linear_in_measurement(feeder, full_set):
    x = random_state(np.random.default_rng(2), feeder.model.p)
    z = _dense_h(x, feeder.model, full_set)
    z[3] += 0.01
    r = assemble_residual(x, MeasurementProfile(z), full_set, feeder.model)
    assert abs(r[3] + 0.01) < 1e-14
    assert np.sum(np.abs(r) > 1e-12) == 1


def test_residual_matches_dense_oracle(feeder):
    rng = np.random.default_rng(3)
    mset = MeasurementSet([3, 9, 17], [0, 4, 20], [1, 2, 5, 8, 30])
    for _ in range(5):
        x = random_state(rng, feeder.model.p)
        z = rng.normal(size=mset.n_rows)
        r = assemble_residual(x, MeasurementProfile(z), mset, feeder.model)
        np.testing.assert_allclose(r, _dense_h(x, feeder.model, mset) - z, rtol=1e-12, atol=1e-12)


def test_residual_dimension_check(feeder, full_set):
    with pytest.raises(DimensionError):
        assemble_residual(feeder.model.flat_state(), MeasurementProfile(np.zeros(3)), full_set, feeder.model)


def test_weighted_residual_scale_invariance():
    rng = np.random.default_rng(4)
    var = rng.uniform(1e-5, 1e-3, 50)
    e = rng.standard_normal(50)
    for c in (0.1, 3.0, 17.0):
        r1 = CovarianceModel(var).weight_sqrt * (np.sqrt(var) * e)
        r2 = CovarianceModel(c**2 * var).weight_sqrt * (c * np.sqrt(var) * e)
        np.testing.assert_allclose(r1, r2, rtol=1e-14)


def test_transform_does_not_move_noise_free_estimate(feeder, full_physics, full_cov, full_set):
    # both weightings share the same zero-residual optimum
    truth = random_state(np.random.default_rng(5), feeder.model.p, 0.95, 1.02, 0.05)
    prof = MeasurementProfile(full_physics.h(truth))
    _, cov2 = squared_magnitude_transform(prof, full_cov, full_set)
    a = gnvqr_solve(feeder.model.flat_state(), prof, full_physics, full_cov).final_state
    b = gnvqr_solve(feeder.model.flat_state(), prof, full_physics, cov2).final_state
    assert np.max(np.abs(a.vector - b.vector)) <= 1e-8
    assert np.max(np.abs(a.vector - truth.vector)) <= 1e-8


def test_profile_parts_and_order():
    mset = MeasurementSet([1], [0], [1, 2])
    prof = MeasurementProfile.from_parts([1.0], [2.0, 3.0], [4, 5, 6, 7], profile_id=9)
    m, f, s = prof.split(mset)
    assert m.tolist() == [1.0] and f.tolist() == [2.0, 3.0] and s.tolist() == [4, 5, 6, 7]
    assert mset.row_labels() == ["V:1", "Pf:0", "Qf:0", "P:1", "P:2", "Q:1", "Q:2"]


def test_layout_json(tmp_path, feeder, sparse_set):
    d = layout_to_dict(sparse_set, {"mag": 0.01, "flow": 0.02, "inj": 0.03}, feeder)
    path = tmp_path / "layout.json"
    path.write_text(__import__("json").dumps(d))
    mset, sig = load_layout(path, feeder)
    assert mset.row_labels() == sparse_set.row_labels()
    assert sig == {"mag": 0.01, "flow": 0.02, "inj": 0.03}
    with pytest.raises(MeasurementError, match="mag_buses\\[0\\]"):
        layout_from_dict(dict(d, mag_buses=[999]), feeder)


def test_layout_defaults_sigmas():
    _, sig = layout_from_dict({"mag_buses": [1], "flow_lines": [], "inj_buses": []})
    assert sig == {"mag": 0.004, "flow": 0.01, "inj": 0.02}


def test_profiles_csv_round_trip(tmp_path):
    mset = MeasurementSet([1], [0], [1, 2])
    rng = np.random.default_rng(6)
    profs = [MeasurementProfile(rng.normal(size=mset.n_rows), k) for k in range(4)]
    path = tmp_path / "p.csv"
    write_profiles(path, profs, mset.row_labels())
    back = read_profiles(path, mset, mset.row_labels())
    assert [p.profile_id for p in back] == [0, 1, 2, 3]
    for a, b in zip(profs, back):
        np.testing.assert_array_equal(a.values, b.values)
    with pytest.raises(MeasurementError):
        read_profiles(path, mset, ["x"] * mset.n_rows)
    with pytest.raises(DimensionError):
        read_profiles(path, MeasurementSet([1, 2], [0], [1, 2]))
