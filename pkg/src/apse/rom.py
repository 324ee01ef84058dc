"""Reduced-order model of the exact quadratic residual.

With an orthonormal basis ``V`` the weighted residual is projected onto
``(J_c0 V)^T``::

    r_hat(d) = R_hat + G_hat d + 0.5 H_hat (d (x) d) - z_hat

``H_hat`` is kept as a ``q x qh x qh`` array ``H_hat[a, b, c]`` (output ``a``,
inputs ``b, c``), the ``q x qh**2`` Kronecker-form matrix with its columns
reshaped. While the Hessian is expanding ``qh == q``. Once the cap is reached
the input slots freeze at ``qh``: later basis directions still get an output
row (their projection of the quadratic term in the first ``qh`` coordinates)
but enter no quadratic products themselves.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla

from .errors import DegenerateBasisError, DegenerateStateError
from .grid import CartesianState

ORTHO_TOL = 1e-12


@dataclass
class Subspace:
    V: np.ndarray
    expansion_tol: float = 1e-9  # relative to ||x_c||

    @property
    def q(self) -> int:
        return self.V.shape[1]

    @property
    def dim(self) -> int:
        return self.V.shape[0]

    def orthogonality_error(self) -> float:
        return float(np.max(np.abs(self.V.T @ self.V - np.eye(self.q))))


@dataclass
class ReducedOperators:
    JV: np.ndarray
    R_hat: np.ndarray
    G_hat: np.ndarray
    H_hat: np.ndarray
    hessian_cap: int = 50
    profiles_seen: int = 0
    G_factor: tuple = field(default=None, repr=False)

    def __post_init__(self):
        self.refactor()

    @property
    def q(self) -> int:
        return self.G_hat.shape[0]

    @property
    def hessian_dim(self) -> int:
        return self.H_hat.shape[1]

    @property
    def hessian_active(self) -> bool:
        return self.profiles_seen < self.hessian_cap and self.hessian_dim == self.q

    def refactor(self):
        try:
            self.G_factor = sla.cho_factor(self.G_hat, check_finite=False)
        except np.linalg.LinAlgError:
            raise DegenerateBasisError("reduced gain matrix is not positive definite") from None

    def quadratic(self, d) -> np.ndarray:
        dh = d[: self.hessian_dim]
        return 0.5 * ((self.H_hat @ dh) @ dh)

    def quadratic_kron(self, d) -> np.ndarray:
        qh = self.hessian_dim
        dh = d[:qh]
        return 0.5 * (self.H_hat.reshape(self.q, qh * qh) @ np.kron(dh, dh))

    def residual(self, d, z_hat) -> np.ndarray:
        return self.R_hat + self.G_hat @ d + self.quadratic(d) - z_hat


def _hessian_projection(qrm, Vh, JV) -> np.ndarray:
    T = qrm.hessian.project(Vh)
    return np.einsum("ia,ibc->abc", JV, T, optimize=True)


def assemble_operators(qrm, V, hessian_dim=None, hessian_cap=50, profiles_seen=0) -> ReducedOperators:
    """Dense from-scratch projection of the quadratic model onto ``V``."""
    JV = qrm.J_c0 @ V
    qh = V.shape[1] if hessian_dim is None else hessian_dim
    H_hat = _hessian_projection(qrm, V[:, :qh], JV)
    return ReducedOperators(JV, JV.T @ qrm.R_c0, JV.T @ JV, H_hat, hessian_cap, profiles_seen)


def init_subspace(x_c0, qrm, expansion_tol=1e-9, hessian_cap=50):
    x = np.asarray(x_c0.vector if isinstance(x_c0, CartesianState) else x_c0, dtype=float)
    nrm = np.linalg.norm(x)
    if nrm == 0:
        raise DegenerateStateError("cannot seed a basis from a zero state")
    V = (x / nrm)[:, None]
    return Subspace(V, expansion_tol), assemble_operators(qrm, V, hessian_cap=hessian_cap)


def reduce_profile(weighted_profile, ops: ReducedOperators) -> np.ndarray:
    """``(J_c0 V)^T W^{1/2} z`` for an already weighted, magnitude-squared profile."""
    return ops.JV.T @ weighted_profile


@dataclass
class RmseResult:
    d: np.ndarray
    converged: bool
    iterations: int
    step_norm: float


def rmse_solve(ops: ReducedOperators, z_hat, tol=1e-10, max_iters=50, d0=None) -> RmseResult:
    """Chord iteration ``d <- d - G_hat^{-1} r_hat(d)`` with the factor of ``G_hat`` reused.

    Stops when the scaled residual ``||G_hat^{-1} r_hat||_inf`` drops below ``tol``.
    """
    d = np.zeros(ops.q) if d0 is None else np.array(d0, dtype=float)
    step_norm = np.inf
    for k in range(1, max_iters + 1):
        step = sla.cho_solve(ops.G_factor, ops.residual(d, z_hat), check_finite=False)
        d -= step
        step_norm = float(np.max(np.abs(step)))
        if not np.isfinite(step_norm):
            return RmseResult(d, False, k, step_norm)
        if step_norm < tol:
            return RmseResult(d, True, k, step_norm)
    return RmseResult(d, False, max_iters, step_norm)


def lift(subspace: Subspace, d, x_c0) -> CartesianState:
    x0 = x_c0.vector if isinstance(x_c0, CartesianState) else np.asarray(x_c0)
    return CartesianState.from_vector(x0 + subspace.V @ d)


def dse_update(subspace: Subspace, ops: ReducedOperators, x_c, qrm) -> bool:
    """Grow the basis with the component of ``x_c`` outside ``span(V)``.

    Returns True when a column was added. Operators are extended in place:
    one new column of ``J_c0 V``, one entry of ``R_hat``, a border of
    ``G_hat``, a new output slice of ``H_hat`` and, while the Hessian is
    still expanding, the input slices touching the new direction.
    """
    x = np.asarray(x_c.vector if isinstance(x_c, CartesianState) else x_c, dtype=float)
    V = subspace.V
    v = x - V @ (V.T @ x)
    v -= V @ (V.T @ v)  # second pass keeps V orthonormal to working precision
    nv = np.linalg.norm(v)
    if nv <= subspace.expansion_tol * np.linalg.norm(x):
        return False
    v /= nv
    grow_h = ops.hessian_active
    Vn = np.column_stack([V, v])
    w = qrm.J_c0 @ v
    JVw = ops.JV.T @ w
    q = ops.q

    G = np.empty((q + 1, q + 1))
    G[:q, :q] = ops.G_hat
    G[:q, q] = G[q, :q] = JVw
    G[q, q] = w @ w

    M = qrm.hessian.combine(w)
    if grow_h:
        H = np.empty((q + 1, q + 1, q + 1))
        H[:q, :q, :q] = ops.H_hat
        # C[a, b] = sum_i JV[i, a] * (Vn[:, b]^T H_i v)
        C = ops.JV.T @ (qrm.hessian.apply(v) @ Vn)
        H[:q, :, q] = C
        H[:q, q, :] = C
        H[q] = Vn.T @ (M @ Vn)
    else:
        Vh = V[:, : ops.hessian_dim]
        H = np.concatenate([ops.H_hat, (Vh.T @ (M @ Vh))[None]], axis=0)
    ops.H_hat = H

    subspace.V = Vn
    ops.JV = np.column_stack([ops.JV, w])
    ops.R_hat = np.append(ops.R_hat, w @ qrm.R_c0)
    ops.G_hat = G
    ops.refactor()

    if subspace.orthogonality_error() > ORTHO_TOL:
        _reorthonormalize(subspace, ops, qrm)
    return True


def _reorthonormalize(subspace, ops, qrm):
    Q, _ = np.linalg.qr(subspace.V)
    # keep column signs so earlier reduced coordinates keep their meaning
    Q *= np.sign(np.sum(Q * subspace.V, axis=0))
    subspace.V = Q
    fresh = assemble_operators(qrm, Q, ops.hessian_dim, ops.hessian_cap, ops.profiles_seen)
    ops.JV, ops.R_hat, ops.G_hat, ops.H_hat = fresh.JV, fresh.R_hat, fresh.G_hat, fresh.H_hat
    ops.refactor()


def save_basis(path, subspace: Subspace) -> None:
    np.save(Path(path), subspace.V)


def load_basis(path, qrm, expansion_tol=1e-9, hessian_cap=50):
    V = np.load(Path(path))
    if V.shape[0] != qrm.dim:
        raise DegenerateBasisError(f"basis has {V.shape[0]} rows, model has {qrm.dim} states")
    sub = Subspace(V, expansion_tol)
    if sub.orthogonality_error() > ORTHO_TOL:
        raise DegenerateBasisError("checkpointed basis is not orthonormal")
    return sub, assemble_operators(qrm, V, hessian_cap=hessian_cap)
