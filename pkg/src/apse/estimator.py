"""Accelerated probabilistic state estimation over a stream of profiles.

For each profile the reduced model is solved first and the lifted state is
checked on the full model with a Gauss-Newton step taken from QR factors
computed once at the bootstrap state. If that step is not below ``step_tol``
the profile is re-solved with GNvQR and the solution is offered to the basis.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla

from .errors import ApseError, DegenerateBasisError, DegenerateStateError
from .grid import CartesianState, PolarState, cartesian_to_polar, polar_to_cartesian
from .measurements import squared_magnitude_transform
from .physics import build_quadratic_model
from .rom import dse_update, init_subspace, lift, reduce_profile, rmse_solve
from .solver import SolverConfig, gnvqr_solve, weighted_qr

RMSE_ACCEPTED = "rmse-accepted"
FALLBACK = "fallback-gnvqr"
FAILED = "failed"


@dataclass
class RecycledFactors:
    Q0: np.ndarray
    R0: np.ndarray
    x_ref: PolarState
    staleness: int = 0


def prefactor(x_ref: PolarState, physics, covariance) -> RecycledFactors:
    Q, R = weighted_qr(physics.jacobian_polar(x_ref), covariance.weight_sqrt)
    return RecycledFactors(Q, R, x_ref)


def accept_test(factors: RecycledFactors, x_candidate: PolarState, profile, physics, covariance, step_tol):
    """Return ``(accepted, value)`` with ``value = ||R0^-1 Q0^T W^{1/2} r(x)||_inf``."""
    r = covariance.weight_sqrt * (physics.h(x_candidate) - profile.values)
    step = sla.solve_triangular(factors.R0, factors.Q0.T @ r, check_finite=False)
    value = float(np.max(np.abs(step)))
    return value < step_tol, value


@dataclass(frozen=True)
class ApseConfig:
    solver: SolverConfig = SolverConfig()
    expansion_tol: float = 1e-9
    hessian_cap: int = 50
    reduced_tol: float = 1e-10
    reduced_max_iters: int = 50
    refresh_on_fallback: bool = False


@dataclass
class ProfileResult:
    profile_id: int
    state: PolarState
    path: str
    rmse_iters: int
    gnvqr_iters: int
    basis_size: int
    accept_value: float
    wall_time: float
    rmse_time: float = 0.0
    test_time: float = 0.0
    expanded: bool = False
    converged: bool = True

    def row(self) -> dict:
        d = asdict(self)
        d.pop("state")
        return d


@dataclass
class ApseResult:
    records: list = field(default_factory=list)
    subspace: object = None
    operators: object = None
    bootstrap: object = None

    def __iter__(self):
        return iter(self.records)

    def __len__(self):
        return len(self.records)

    @property
    def paths(self):
        return [r.path for r in self.records]

    @property
    def basis_sizes(self):
        return [r.basis_size for r in self.records]

    def states(self) -> np.ndarray:
        return np.array([r.state.vector for r in self.records])

    def fallback_rate(self, last=None) -> float:
        recs = self.records if last is None else self.records[-last:]
        return sum(r.path != RMSE_ACCEPTED for r in recs) / max(len(recs), 1)

    def total_time(self) -> float:
        return float(sum(r.wall_time for r in self.records))

    def write_csv(self, path) -> None:
        cols = ["profile_id", "path", "rmse_iters", "gnvqr_iters", "accept_value", "wall_time", "basis_size"]
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for r in self.records:
                row = r.row()
                w.writerow([row[c] for c in cols])

    def summary(self) -> dict:
        n = len(self.records)
        return {
            "profiles": n,
            "rmse_accepted": sum(r.path == RMSE_ACCEPTED for r in self.records),
            "fallbacks": sum(r.path == FALLBACK for r in self.records),
            "failed": sum(r.path == FAILED for r in self.records),
            "final_basis_size": self.records[-1].basis_size if n else 0,
            "hessian_dim": self.operators.hessian_dim if self.operators is not None else 0,
            "total_time": self.total_time(),
        }

    def write_summary(self, path) -> None:
        with open(Path(path), "w") as fh:
            json.dump(self.summary(), fh, indent=1)


class Apse:
    """Stateful estimator: bootstrap once, then feed profiles in order."""

    def __init__(self, physics, covariance, config: ApseConfig = ApseConfig()):
        self.physics = physics
        self.covariance = covariance
        self.config = config
        self.factors = None
        self.qrm = None
        self.subspace = None
        self.ops = None
        self.bootstrap_report = None

    def bootstrap(self, profile, x0: PolarState | None = None):
        """Solve ``profile`` with GNvQR and build factors, quadratic model and a 1-d basis."""
        x0 = self.physics.model.flat_state() if x0 is None else x0
        rep = gnvqr_solve(x0, profile, self.physics, self.covariance, self.config.solver)
        if not rep.converged:
            raise ApseError(f"bootstrap solve did not converge ({rep.reason})")
        self.bootstrap_report = rep
        x_ref = rep.final_state
        self.factors = prefactor(x_ref, self.physics, self.covariance)
        # squared-magnitude weights are frozen at the bootstrap profile
        _, cov_c = squared_magnitude_transform(profile, self.covariance, self.physics.mset)
        xc0 = polar_to_cartesian(x_ref)
        self.qrm = build_quadratic_model(self.physics, xc0, cov_c.weight_sqrt)
        self.subspace, self.ops = init_subspace(
            xc0, self.qrm, self.config.expansion_tol, self.config.hessian_cap
        )
        return rep

    def _weighted_transformed(self, profile):
        z = profile.values.copy()
        sm = self.physics.mset.slices[0]
        z[sm] = z[sm] ** 2
        return self.qrm.weighted_profile(z)

    def try_rmse(self, profile):
        """Reduced solve and lift; returns ``(state or None, rmse result)``."""
        z_hat = reduce_profile(self._weighted_transformed(profile), self.ops)
        res = rmse_solve(self.ops, z_hat, self.config.reduced_tol, self.config.reduced_max_iters)
        if not res.converged:
            return None, res
        try:
            return cartesian_to_polar(lift(self.subspace, res.d, self.qrm.x_c0)), res
        except DegenerateStateError:
            return None, res

    def solve(self, profile, warm_start: PolarState | None = None) -> ProfileResult:
        if self.ops is None:
            raise ApseError("call bootstrap() before solving profiles")
        cfg = self.config
        t0 = time.perf_counter()
        state, res = self.try_rmse(profile)
        t1 = time.perf_counter()
        value = np.inf
        if state is not None:
            ok, value = accept_test(
                self.factors, state, profile, self.physics, self.covariance, cfg.solver.step_tol
            )
            if ok:
                t2 = time.perf_counter()
                self.ops.profiles_seen += 1
                self.factors.staleness += 1
                return ProfileResult(
                    profile.profile_id, state, RMSE_ACCEPTED, res.iterations, 0,
                    self.subspace.q, value, t2 - t0, t1 - t0, t2 - t1,
                )
        t2 = time.perf_counter()
        start = state if state is not None else (warm_start or self.factors.x_ref)
        rep = gnvqr_solve(start, profile, self.physics, self.covariance, cfg.solver)
        basis_size = self.subspace.q
        expanded = False
        if rep.converged:
            try:
                expanded = dse_update(self.subspace, self.ops, polar_to_cartesian(rep.final_state), self.qrm)
            except DegenerateBasisError:
                expanded = False
            if cfg.refresh_on_fallback:
                self.factors = prefactor(rep.final_state, self.physics, self.covariance)
        self.ops.profiles_seen += 1
        self.factors.staleness += 1
        t3 = time.perf_counter()
        return ProfileResult(
            profile.profile_id,
            rep.final_state,
            FALLBACK if rep.converged else FAILED,
            res.iterations,
            rep.iterations,
            basis_size,
            value,
            t3 - t0,
            t1 - t0,
            t2 - t1,
            expanded,
            rep.converged,
        )

    def run(self, profiles) -> ApseResult:
        out = ApseResult(subspace=self.subspace, operators=self.ops, bootstrap=self.bootstrap_report)
        prev = None
        for prof in profiles:
            rec = self.solve(prof, warm_start=prev)
            if rec.converged:
                prev = rec.state
            out.records.append(rec)
        return out


def apse_run(profiles, bootstrap_profile, physics, covariance, config: ApseConfig = ApseConfig()) -> ApseResult:
    est = Apse(physics, covariance, config)
    est.bootstrap(bootstrap_profile)
    return est.run(profiles)
