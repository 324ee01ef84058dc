"""Measurement functions, Jacobians, constant Hessians and the exact quadratic model.

Every metered complex power has the form ``S = (A v) * conj(B v)`` with ``v``
the full complex voltage vector (slack included): for injections ``A`` selects
the bus and ``B`` is its Y-bus row, for sending-end flows ``A`` selects the
sending bus and ``B = y_l * (row of E)``. All derivatives below are written
once for that form.

In Cartesian coordinates these functions (and squared magnitudes) are
quadratic, so the Hessians are constant and the second-order expansion about
any point is exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import MeasurementError
from .grid import AdmittanceModel, CartesianState, PolarState


def realify(A) -> sp.csr_matrix:
    """Real stacking ``[[Re A, -Im A], [Im A, Re A]]`` of a complex matrix."""
    A = sp.csr_matrix(A)
    return sp.csr_matrix(sp.bmat([[A.real, -A.imag], [A.imag, A.real]]))


def conj_stack(k: int) -> sp.csr_matrix:
    """``N = diag(I, -I)``: complex conjugation acting on ``[Re; Im]``."""
    return sp.diags(np.concatenate([np.ones(k), -np.ones(k)])).tocsr()


class _PowerBlock:
    """``(A v) * conj(B v)`` for a set of metered rows."""

    def __init__(self, a_idx, B, n):
        self.a_idx = np.asarray(a_idx, dtype=np.int64)
        self.B = sp.csr_matrix(B, dtype=complex)
        self.n = n
        self.rows = len(self.a_idx)
        self.A = sp.csr_matrix(
            (np.ones(self.rows), (np.arange(self.rows), self.a_idx)), shape=(self.rows, n)
        )
        # dense rows are faster for desk-sized feeders
        self.Bd = self.B.toarray() if n <= 500 else self.B

    def power(self, v):
        return v[self.a_idx] * np.conj(self.Bd @ v)

    def jac_complex(self, v, dv_cols):
        """dS/dp for a real parameter with ``dv = dv_cols`` (n x k complex, column per parameter)."""
        ibv = np.conj(self.Bd @ v)
        return ibv[:, None] * dv_cols[self.a_idx, :] + v[self.a_idx][:, None] * np.conj(self.Bd @ dv_cols)

    def jac_cartesian_full(self, v) -> sp.csr_matrix:
        """``<d(conj(Bv)) A> + <d(Av)> N <B>`` over the full real vector [Re v; Im v]."""
        first = realify(sp.diags(np.conj(self.B @ v)) @ self.A)
        second = realify(sp.diags(self.A @ v)) @ conj_stack(self.rows) @ realify(self.B)
        return sp.csr_matrix(first + second)

    def bilinear_terms(self, row_offset, n_rows_block):
        """Coefficient triplets ``(row, j, k, c)`` with ``P = z^T C z`` over ``z = [Re v; Im v]``.

        Active rows are ``row_offset + r``, reactive rows ``row_offset + n_rows_block + r``.
        """
        n = self.n
        B = self.B.tocoo()
        r, l = B.row, B.col
        a = self.a_idx[r]
        g, b = B.data.real, B.data.imag
        ar, ai, lr, li = a, n + a, l, n + l
        P = row_offset + r
        Q = row_offset + n_rows_block + r
        rows = np.concatenate([P, P, P, P, Q, Q, Q, Q])
        js = np.concatenate([ar, ai, ai, ar, ai, ar, ar, ai])
        ks = np.concatenate([lr, li, lr, li, lr, li, lr, li])
        cs = np.concatenate([g, g, b, -b, g, -g, -b, -b])
        return rows, js, ks, cs


class PhysicsModel:
    """Cached measurement operators for one network and one measurement set."""

    def __init__(self, model: AdmittanceModel, mset):
        mset.check_against(model)
        self.model = model
        self.mset = mset
        n, p = model.n, model.p
        self.n, self.p = n, p
        pos = -np.ones(n, dtype=np.int64)
        pos[model.nonslack] = np.arange(p)
        self.pos = pos
        self.mag_pos = pos[mset.mag_buses]
        E = model.incidence.tocsr()
        lines = mset.flow_lines
        self.flow = _PowerBlock(
            model.graph.edges[lines, 0],
            sp.diags(model.line_admittances[lines]) @ E[lines, :].astype(complex),
            n,
        )
        self.inj = _PowerBlock(mset.inj_buses, model.ybus[mset.inj_buses, :], n)
        # real index [Re v; Im v] (2n) -> Cartesian state index (2p), -1 for slack
        self.real_pos = np.concatenate([pos, np.where(pos >= 0, pos + p, -1)])
        self.state_cols = np.concatenate([model.nonslack, n + model.nonslack])

    # --- evaluation ---------------------------------------------------------

    def full_voltage(self, x) -> np.ndarray:
        if isinstance(x, PolarState):
            return self.model.full_voltage(x.complex)
        if isinstance(x, CartesianState):
            return self.model.full_voltage(x.complex)
        raise TypeError(f"expected PolarState or CartesianState, got {type(x).__name__}")

    def _stack(self, v, mags):
        sf = self.flow.power(v)
        ss = self.inj.power(v)
        return np.concatenate([mags, sf.real, sf.imag, ss.real, ss.imag])

    def h(self, x: PolarState) -> np.ndarray:
        """Measurement function with plain magnitudes."""
        v = self.full_voltage(x)
        return self._stack(v, x.V[self.mag_pos])

    def h_squared(self, xc: CartesianState) -> np.ndarray:
        """Measurement function with squared magnitudes (quadratic in Cartesian)."""
        v = self.full_voltage(xc)
        k = self.mag_pos
        return self._stack(v, xc.vr[k] ** 2 + xc.vi[k] ** 2)

    # --- Jacobians ------------------------------------------------------------

    def jacobian_polar(self, x: PolarState) -> np.ndarray:
        """Dense ``[dh/dV, dh/dtheta]`` with plain magnitude rows."""
        p, ns = self.p, self.model.nonslack
        v = self.full_voltage(x)
        unit = np.exp(1j * x.theta)
        dv = np.zeros((self.n, 2 * p), dtype=complex)
        dv[ns, np.arange(p)] = unit
        dv[ns, p + np.arange(p)] = 1j * v[ns]
        jm = np.zeros((self.mset.n_mag, 2 * p))
        jm[np.arange(self.mset.n_mag), self.mag_pos] = 1.0
        jf = self.flow.jac_complex(v, dv)
        js = self.inj.jac_complex(v, dv)
        return np.vstack([jm, jf.real, jf.imag, js.real, js.imag])

    def jacobian_cartesian(self, xc: CartesianState) -> "JacobianBlocks":
        v = self.full_voltage(xc)
        cols = self.state_cols
        k = self.mag_pos
        nm, p = self.mset.n_mag, self.p
        jm = np.zeros((nm, 2 * p))
        jm[np.arange(nm), k] = 2.0 * xc.vr[k]
        jm[np.arange(nm), p + k] = 2.0 * xc.vi[k]
        jf = self.flow.jac_cartesian_full(v)[:, cols].toarray()
        js = self.inj.jac_cartesian_full(v)[:, cols].toarray()
        return JacobianBlocks(jm, jf, js)

    # --- Hessians -------------------------------------------------------------

    def hessian(self) -> "HessianTensor":
        nm, nf, ns_ = self.mset.n_mag, self.mset.n_flow, self.mset.n_inj
        n, p = self.n, self.p
        a = self.mset.mag_buses
        mag_rows = np.arange(nm)
        parts = [
            (np.concatenate([mag_rows, mag_rows]), np.concatenate([a, n + a]),
             np.concatenate([a, n + a]), np.ones(2 * nm)),
            self.flow.bilinear_terms(nm, self.flow.rows),
            self.inj.bilinear_terms(nm + nf, self.inj.rows),
        ]
        rows, js, ks, cs = (np.concatenate(t) for t in zip(*parts))
        # symmetrize: H = C + C^T in full real coordinates, then drop slack
        rows = np.concatenate([rows, rows])
        js, ks = np.concatenate([js, ks]), np.concatenate([ks, js])
        cs = np.concatenate([cs, cs])
        jj, kk = self.real_pos[js], self.real_pos[ks]
        keep = (jj >= 0) & (kk >= 0)
        return HessianTensor.from_triplets(rows[keep], jj[keep], kk[keep], cs[keep], nm + nf + ns_, 2 * p)


@dataclass(frozen=True, eq=False)
class JacobianBlocks:
    mag: np.ndarray
    flow: np.ndarray
    inj: np.ndarray

    @property
    def stacked(self) -> np.ndarray:
        return np.vstack([self.mag, self.flow, self.inj])

    def weighted(self, weight_sqrt) -> np.ndarray:
        return weight_sqrt[:, None] * self.stacked


class HessianTensor:
    """Constant per-row symmetric Hessians ``H_i`` (each ``dim x dim``).

    Stored as coalesced triplets; ``kron`` is the same data laid out as a
    sparse ``rows x dim**2`` matrix acting on ``d (x) d``, and ``stacked`` as a
    ``(rows*dim) x dim`` matrix whose row blocks are the ``H_i``.
    """

    def __init__(self, kron: sp.csr_matrix, nrows: int, dim: int):
        kron = sp.csr_matrix(kron)
        kron.sum_duplicates()
        kron.eliminate_zeros()
        self.kron = kron
        self.nrows, self.dim = nrows, dim
        coo = kron.tocoo()
        self.row = coo.row.astype(np.int64)
        self.j = (coo.col // dim).astype(np.int64)
        self.k = (coo.col % dim).astype(np.int64)
        self.data = coo.data
        self.stacked = sp.csr_matrix(
            (self.data, (self.row * dim + self.j, self.k)), shape=(nrows * dim, dim)
        )

    @classmethod
    def from_triplets(cls, rows, js, ks, vals, nrows, dim):
        kron = sp.csr_matrix((vals, (rows, js * dim + ks)), shape=(nrows, dim * dim))
        return cls(kron, nrows, dim)

    def __len__(self):
        return self.nrows

    @property
    def nnz(self):
        return len(self.data)

    def row_matrix(self, i) -> sp.csr_matrix:
        sel = self.row == i
        return sp.csr_matrix((self.data[sel], (self.j[sel], self.k[sel])), shape=(self.dim, self.dim))

    def scaled(self, w) -> "HessianTensor":
        """Row scaling ``diag(w) H`` (applies a measurement weighting)."""
        return HessianTensor(sp.diags(np.asarray(w, dtype=float)) @ self.kron, self.nrows, self.dim)

    def quad(self, d) -> np.ndarray:
        """``[0.5 d^T H_i d]_i`` as per-row quadratic forms."""
        Hd = (self.stacked @ d).reshape(self.nrows, self.dim)
        return 0.5 * (Hd @ d)

    def quad_kron(self, d) -> np.ndarray:
        """``0.5 H (d (x) d)`` through the Kronecker layout."""
        return 0.5 * (self.kron @ np.kron(d, d))

    def bilinear(self, u, v) -> np.ndarray:
        return np.bincount(self.row, self.data * u[self.j] * v[self.k], minlength=self.nrows)

    def apply(self, v) -> np.ndarray:
        """Rows of the result are ``H_i v`` (nrows x dim)."""
        return (self.stacked @ v).reshape(self.nrows, self.dim)

    def combine(self, w) -> sp.csr_matrix:
        """``sum_i w_i H_i``."""
        return sp.csr_matrix((self.data * w[self.row], (self.j, self.k)), shape=(self.dim, self.dim))

    def project(self, V) -> np.ndarray:
        """``T[i] = V^T H_i V`` for every row (nrows x q x q)."""
        q = V.shape[1]
        HV = (self.stacked @ V).reshape(self.nrows, self.dim, q)
        return np.einsum("ija,jb->iab", HV, V)

    def is_symmetric(self) -> bool:
        S = sp.csr_matrix((self.data, (self.row * self.dim + self.j, self.k)), shape=self.stacked.shape)
        T = sp.csr_matrix((self.data, (self.row * self.dim + self.k, self.j)), shape=self.stacked.shape)
        return (S != T).nnz == 0


# --- module-level operations ------------------------------------------------


def eval_injections(x: PolarState, model: AdmittanceModel) -> np.ndarray:
    """``[P; Q]`` injected at every non-slack bus."""
    v = model.full_voltage(x.complex)
    s = v * np.conj(model.ybus @ v)
    s = s[model.nonslack]
    return np.concatenate([s.real, s.imag])


def eval_flows(x: PolarState, model: AdmittanceModel, lines) -> np.ndarray:
    """``[P; Q]`` leaving the sending end of each requested line."""
    lines = np.asarray(lines, dtype=np.int64).ravel()
    if lines.size and (lines.min() < 0 or lines.max() >= model.graph.m):
        raise MeasurementError("requested flow on a line that does not exist")
    v = model.full_voltage(x.complex)
    send, recv = model.graph.edges[lines, 0], model.graph.edges[lines, 1]
    s = v[send] * np.conj(model.line_admittances[lines] * (v[send] - v[recv]))
    return np.concatenate([s.real, s.imag])


def eval_magnitudes(x: PolarState, model: AdmittanceModel, buses) -> np.ndarray:
    buses = np.asarray(buses, dtype=np.int64).ravel()
    if np.any(buses == model.slack):
        raise MeasurementError("the slack magnitude is fixed, not a state")
    pos = np.searchsorted(model.nonslack, buses)
    return x.V[pos]


def measurement_function(x: PolarState, model: AdmittanceModel, mset) -> np.ndarray:
    return np.concatenate(
        [
            eval_magnitudes(x, model, mset.mag_buses),
            eval_flows(x, model, mset.flow_lines),
            _inj_subset(eval_injections(x, model), model, mset.inj_buses),
        ]
    )


def _inj_subset(s, model, buses):
    p = model.p
    pos = np.searchsorted(model.nonslack, buses)
    return np.concatenate([s[pos], s[p + pos]])


def jacobian_polar(x: PolarState, model: AdmittanceModel, mset) -> np.ndarray:
    return PhysicsModel(model, mset).jacobian_polar(x)


def jacobian_cartesian(xc: CartesianState, model: AdmittanceModel, mset) -> JacobianBlocks:
    return PhysicsModel(model, mset).jacobian_cartesian(xc)


def hessian_tensors(model: AdmittanceModel, mset) -> HessianTensor:
    return PhysicsModel(model, mset).hessian()


def polar_to_cartesian_jacobian(x: PolarState) -> np.ndarray:
    """``d x_c / d x`` for ``x = [V; theta]``, ``x_c = [V_r; V_i]``."""
    c, s = np.cos(x.theta), np.sin(x.theta)
    return np.block([[np.diag(c), np.diag(-x.V * s)], [np.diag(s), np.diag(x.V * c)]])


# --- exact quadratic residual model ------------------------------------------


@dataclass(frozen=True, eq=False)
class QuadraticResidualModel:
    """Weighted, exact second-order residual about ``x_c0``.

    ``r(d) = R_c0 + J_c0 d + 0.5 H (d (x) d) - w * z`` where ``z`` is a profile
    with squared magnitude rows and ``w`` the matching inverse standard deviations.
    """

    x_c0: np.ndarray
    R_c0: np.ndarray
    J_c0: np.ndarray
    hessian: HessianTensor
    weight_sqrt: np.ndarray

    def weighted_profile(self, transformed_values) -> np.ndarray:
        return self.weight_sqrt * transformed_values

    @property
    def nrows(self):
        return len(self.R_c0)

    @property
    def dim(self):
        return len(self.x_c0)


def build_quadratic_model(physics: PhysicsModel, x_c0: CartesianState, weight_sqrt) -> QuadraticResidualModel:
    w = np.asarray(weight_sqrt, dtype=float)
    if w.shape != (physics.mset.n_rows,):
        raise MeasurementError("weight vector does not match the measurement set")
    return QuadraticResidualModel(
        x_c0.vector.copy(),
        w * physics.h_squared(x_c0),
        physics.jacobian_cartesian(x_c0).weighted(w),
        physics.hessian().scaled(w),
        w,
    )


def quadratic_residual(qrm: QuadraticResidualModel, dxc, weighted_profile, kron=False) -> np.ndarray:
    dxc = np.asarray(dxc, dtype=float)
    quad = qrm.hessian.quad_kron(dxc) if kron else qrm.hessian.quad(dxc)
    return qrm.R_c0 + qrm.J_c0 @ dxc + quad - weighted_profile


def direct_weighted_residual(physics: PhysicsModel, xc: CartesianState, weight_sqrt, transformed_values) -> np.ndarray:
    """Weighted squared-magnitude residual evaluated straight from the physics."""
    return weight_sqrt * (physics.h_squared(xc) - transformed_values)


__all__ = [
    "PhysicsModel",
    "JacobianBlocks",
    "HessianTensor",
    "QuadraticResidualModel",
    "build_quadratic_model",
    "quadratic_residual",
    "direct_weighted_residual",
    "eval_injections",
    "eval_flows",
    "eval_magnitudes",
    "measurement_function",
    "jacobian_polar",
    "jacobian_cartesian",
    "hessian_tensors",
    "polar_to_cartesian_jacobian",
    "realify",
    "conj_stack",
]
