"""Full-order Gauss-Newton state estimation.

``gnvqr_solve`` takes each step from a fresh Householder QR of the weighted
Jacobian; ``gain_matrix_step`` solves the normal equations instead and is kept
as an independent check of the QR step.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import ConditioningError, ObservabilityError
from .grid import PolarState

#: relative pivot size below which the weighted Jacobian is treated as rank deficient
RANK_TOL = 1e-10


@dataclass(frozen=True)
class SolverConfig:
    step_tol: float = 1e-8
    max_iters: int = 25
    min_magnitude: float = 0.2
    divergence_step: float = 10.0

    def __post_init__(self):
        if not self.step_tol > 0:
            raise ValueError("step_tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")


@dataclass
class SolveReport:
    final_state: PolarState
    iterations: int
    final_step_norm: float
    converged: bool
    wall_time: float = 0.0
    step_norms: list = field(default_factory=list)
    reason: str = ""


def step_converged(dx, config: SolverConfig) -> bool:
    return bool(np.max(np.abs(dx), initial=0.0) < config.step_tol)


def weighted_qr(J, weight_sqrt):
    """Thin QR of ``diag(w) J``; raises when the factor is numerically singular."""
    Q, R = sla.qr(weight_sqrt[:, None] * J, mode="economic", check_finite=False)
    d = np.abs(np.diag(R))
    if d.size == 0 or d.min() <= RANK_TOL * d.max():
        rank = int(np.sum(d > RANK_TOL * d.max())) if d.size else 0
        raise ObservabilityError(
            f"weighted Jacobian is rank deficient (numerical rank {rank} of {J.shape[1]})",
            rank=rank,
            columns=J.shape[1],
        )
    return Q, R


def qr_step(residual, J, weight_sqrt, factors=None):
    """Gauss-Newton step ``dx = -R^{-1} Q^T W^{1/2} r``; pass ``factors`` to reuse a QR."""
    Q, R = factors if factors is not None else weighted_qr(J, weight_sqrt)
    return -sla.solve_triangular(R, Q.T @ (weight_sqrt * residual), check_finite=False)


def gain_matrix_step(residual, J, covariance, max_condition=1e14):
    """Gauss-Newton step from the normal equations ``G dx = -J^T S^-1 r``."""
    w = covariance.weights
    G = J.T @ (w[:, None] * J)
    cond = np.linalg.cond(G)
    if not np.isfinite(cond) or cond > max_condition:
        raise ConditioningError(f"gain matrix condition number {cond:.3e}", condition=cond)
    c = sla.cho_factor(G)
    return -sla.cho_solve(c, J.T @ (w * residual))


def gnvqr_solve(x0: PolarState, profile, physics, covariance, config: SolverConfig = SolverConfig()) -> SolveReport:
    """Iterate QR-based Gauss-Newton steps from ``x0`` until the step is below tolerance.

    Non-convergence is reported, not raised. A rank-deficient weighted Jacobian
    raises :class:`ObservabilityError`.
    """
    t0 = time.perf_counter()
    z = profile.values
    w = covariance.weight_sqrt
    x = x0.vector.copy()
    p = len(x) // 2
    norms = []
    reason = "max_iters"
    converged = False
    for _ in range(config.max_iters):
        state = PolarState(x[:p], x[p:])
        r = physics.h(state) - z
        dx = qr_step(r, physics.jacobian_polar(state), w)
        step = float(np.max(np.abs(dx)))
        norms.append(step)
        if not np.isfinite(step) or step > config.divergence_step:
            reason = "diverged"
            break
        if np.min(x[:p] + dx[:p]) < config.min_magnitude:
            reason = "magnitude below guard"  # x keeps the last admissible iterate
            break
        x += dx
        if step < config.step_tol:
            converged = True
            reason = ""
            break
    return SolveReport(
        PolarState(x[:p], x[p:]),
        len(norms),
        norms[-1] if norms else 0.0,
        converged,
        time.perf_counter() - t0,
        norms,
        reason,
    )
