"""Build the quadratic model at a base state, grow a basis from power-flow states, solve a new profile in it."""

import numpy as np

from apse import CovarianceModel, PhysicsModel, build_quadratic_model, full_layout, ieee33, solve_power_flow
from apse.grid import cartesian_to_polar, polar_to_cartesian
from apse.rom import dse_update, init_subspace, lift, reduce_profile, rmse_solve

feeder = ieee33()
mset = full_layout(feeder)
physics = PhysicsModel(feeder.model, mset)
cov = CovarianceModel.from_sigmas(mset, 0.004, 0.01, 0.02)
x0 = polar_to_cartesian(solve_power_flow(feeder.model, feeder.nominal_load))
qrm = build_quadratic_model(physics, x0, cov.weight_sqrt)
print(f"Hessian tensor: {qrm.hessian.nnz} nonzeros over {mset.n_rows} rows of {qrm.dim}x{qrm.dim}")

rng = np.random.default_rng(0)
sub, ops = init_subspace(x0, qrm)
for _ in range(12):
    load = feeder.nominal_load * (1 + rng.uniform(-0.5, 0.5, feeder.model.n))
    dse_update(sub, ops, polar_to_cartesian(solve_power_flow(feeder.model, load)), qrm)
print(f"basis size {sub.q}, orthogonality error {sub.orthogonality_error():.1e}")

truth = solve_power_flow(feeder.model, feeder.nominal_load * (1 + rng.uniform(-0.3, 0.3, feeder.model.n)))
z = physics.h(truth)
z[mset.slices[0]] **= 2
for label in ("before", "after"):
    res = rmse_solve(ops, reduce_profile(qrm.weighted_profile(z), ops))
    x = cartesian_to_polar(lift(sub, res.d, x0))
    print(f"{label} absorbing the state: q = {sub.q}, {res.iterations} chord iterations, "
          f"|V - V_true| max {np.abs(x.V - truth.V).max():.1e}")
    dse_update(sub, ops, polar_to_cartesian(truth), qrm)
