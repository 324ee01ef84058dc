"""Single-phase network graph, admittance assembly and state coordinates.

Everything here is per-unit. Objects that include the substation (slack) bus
are the "full" objects; the state vectors exclude it. The slack is dropped in
exactly one place, :meth:`AdmittanceModel.nonslack`, which every other module
uses to slice full-size quantities.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .errors import DegenerateStateError, DimensionError, MalformedGraphError


@dataclass(frozen=True)
class NetworkGraph:
    n: int
    edges: np.ndarray  # (m, 2) int, ordered (sending, receiving)
    substation: int = 0
    slack_voltage: complex = 1.0 + 0.0j

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "slack_voltage", complex(self.slack_voltage))
        if self.n < 2:
            raise MalformedGraphError("a network needs at least two buses")
        if not 0 <= self.substation < self.n:
            raise MalformedGraphError(f"substation index {self.substation} out of range")
        if edges.size and (edges.min() < 0 or edges.max() >= self.n):
            raise MalformedGraphError("edge references a bus index out of range")
        loops = np.flatnonzero(edges[:, 0] == edges[:, 1])
        if loops.size:
            raise MalformedGraphError(f"edge {loops[0]} has identical endpoints")
        adj = sp.coo_matrix(
            (np.ones(len(edges)), (edges[:, 0], edges[:, 1])), shape=(self.n, self.n)
        )
        ncomp, _ = connected_components(adj, directed=False)
        if ncomp != 1:
            raise MalformedGraphError(f"graph is not connected ({ncomp} components)")

    @property
    def m(self) -> int:
        return len(self.edges)

    @property
    def p(self) -> int:
        return self.n - 1


def build_incidence(graph: NetworkGraph):
    """Signed incidence ``E`` (+1 sending, -1 receiving) and sending selector ``E1``."""
    m, n = graph.m, graph.n
    rows = np.repeat(np.arange(m), 2)
    cols = graph.edges.ravel()
    vals = np.tile([1, -1], m)
    E = sp.csr_matrix((vals, (rows, cols)), shape=(m, n), dtype=np.int64)
    E1 = ((abs(E) + E) / 2).astype(np.int64)
    return E, sp.csr_matrix(E1)


@dataclass(frozen=True, eq=False)
class AdmittanceModel:
    graph: NetworkGraph
    line_admittances: np.ndarray
    shunt_admittances: np.ndarray
    incidence: sp.csr_matrix
    sending_selector: sp.csr_matrix
    ybus: sp.csr_matrix
    nonslack: np.ndarray = field(init=False)

    def __post_init__(self):
        s = self.graph.substation
        object.__setattr__(
            self, "nonslack", np.array([k for k in range(self.graph.n) if k != s])
        )

    @property
    def n(self):
        return self.graph.n

    @property
    def p(self):
        return self.graph.p

    @property
    def slack(self):
        return self.graph.substation

    @property
    def slack_voltage(self):
        return self.graph.slack_voltage

    def reassemble(self) -> sp.csr_matrix:
        E = self.incidence.astype(complex)
        return sp.csr_matrix(E.T @ sp.diags(self.line_admittances) @ E + sp.diags(self.shunt_admittances))

    def full_voltage(self, v_nonslack: np.ndarray) -> np.ndarray:
        """Insert the fixed slack voltage into a complex non-slack voltage vector."""
        v = np.empty(self.n, dtype=complex)
        v[self.slack] = self.slack_voltage
        v[self.nonslack] = v_nonslack
        return v

    def flat_state(self) -> "PolarState":
        return PolarState(np.ones(self.p), np.zeros(self.p))


def build_ybus(graph: NetworkGraph, line_admittances, shunt_admittances=None) -> AdmittanceModel:
    yl = np.asarray(line_admittances, dtype=complex).ravel()
    ys = (
        np.zeros(graph.n, dtype=complex)
        if shunt_admittances is None
        else np.asarray(shunt_admittances, dtype=complex).ravel()
    )
    if yl.shape != (graph.m,):
        raise DimensionError(f"expected {graph.m} line admittances, got {yl.shape[0]}")
    if ys.shape != (graph.n,):
        raise DimensionError(f"expected {graph.n} shunt admittances, got {ys.shape[0]}")
    E, E1 = build_incidence(graph)
    Ec = E.astype(complex)
    ybus = sp.csr_matrix(Ec.T @ sp.diags(yl) @ Ec + sp.diags(ys))
    ybus.sort_indices()
    return AdmittanceModel(graph, yl, ys, E, E1, ybus)


@dataclass(frozen=True, eq=False)
class PolarState:
    V: np.ndarray
    theta: np.ndarray

    def __post_init__(self):
        V = np.asarray(self.V, dtype=float).ravel()
        th = np.asarray(self.theta, dtype=float).ravel()
        if V.shape != th.shape:
            raise DimensionError("magnitude and angle vectors differ in length")
        if not np.all(V > 0):
            raise DegenerateStateError("voltage magnitudes must be strictly positive")
        object.__setattr__(self, "V", V)
        object.__setattr__(self, "theta", th)

    @classmethod
    def from_vector(cls, x) -> "PolarState":
        x = np.asarray(x, dtype=float)
        p = x.size // 2
        return cls(x[:p], x[p:])

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.V, self.theta])

    @property
    def complex(self) -> np.ndarray:
        return self.V * np.exp(1j * self.theta)


@dataclass(frozen=True, eq=False)
class CartesianState:
    vr: np.ndarray
    vi: np.ndarray

    def __post_init__(self):
        vr = np.asarray(self.vr, dtype=float).ravel()
        vi = np.asarray(self.vi, dtype=float).ravel()
        if vr.shape != vi.shape:
            raise DimensionError("real and imaginary vectors differ in length")
        object.__setattr__(self, "vr", vr)
        object.__setattr__(self, "vi", vi)

    @classmethod
    def from_vector(cls, x) -> "CartesianState":
        x = np.asarray(x, dtype=float)
        p = x.size // 2
        return cls(x[:p], x[p:])

    @classmethod
    def from_complex(cls, v) -> "CartesianState":
        return cls(v.real, v.imag)

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.vr, self.vi])

    @property
    def complex(self) -> np.ndarray:
        return self.vr + 1j * self.vi


def _wrap_angle(theta):
    # atan2 returns [-pi, pi]; move the -pi endpoint to +pi
    return np.where(theta <= -np.pi, theta + 2 * np.pi, theta)


def polar_to_cartesian(x: PolarState) -> CartesianState:
    return CartesianState(x.V * np.cos(x.theta), x.V * np.sin(x.theta))


def cartesian_to_polar(xc: CartesianState) -> PolarState:
    V = np.hypot(xc.vr, xc.vi)
    if np.any(V == 0):
        raise DegenerateStateError(f"zero-magnitude voltage at index {int(np.argmin(V))}")
    return PolarState(V, _wrap_angle(np.arctan2(xc.vi, xc.vr)))


@dataclass(frozen=True, eq=False)
class Feeder:
    """An admittance model plus per-bus nominal loads (consumption, pu)."""

    model: AdmittanceModel
    nominal_load: np.ndarray
    bus_ids: tuple = ()

    @property
    def bus_index(self) -> dict:
        return {b: k for k, b in enumerate(self.bus_ids)}


def feeder_from_dict(data: dict) -> Feeder:
    """Build a feeder from the network JSON schema.

    ``{"buses": [{id, shunt_g, shunt_b}], "lines": [{from, to, g, b}],
    "slack": {id, v_re, v_im}}``. Buses may also carry ``p_load``/``q_load``.
    """
    try:
        buses = data["buses"]
        lines = data["lines"]
        slack = data["slack"]
    except KeyError as exc:
        raise MalformedGraphError(f"network description is missing field {exc.args[0]!r}") from None
    ids = [b["id"] for b in buses]
    if len(set(ids)) != len(ids):
        raise MalformedGraphError("duplicate bus id in 'buses'")
    index = {b: k for k, b in enumerate(ids)}

    def lookup(bus, where):
        try:
            return index[bus]
        except KeyError:
            raise MalformedGraphError(f"{where} references unknown bus {bus!r}") from None

    edges = [
        (lookup(ln["from"], f"lines[{k}].from"), lookup(ln["to"], f"lines[{k}].to"))
        for k, ln in enumerate(lines)
    ]
    yl = [complex(ln["g"], ln["b"]) for ln in lines]
    ys = [complex(b.get("shunt_g", 0.0), b.get("shunt_b", 0.0)) for b in buses]
    load = np.array([complex(b.get("p_load", 0.0), b.get("q_load", 0.0)) for b in buses])
    graph = NetworkGraph(
        len(buses),
        np.array(edges, dtype=np.int64).reshape(-1, 2),
        lookup(slack["id"], "slack.id"),
        complex(slack.get("v_re", 1.0), slack.get("v_im", 0.0)),
    )
    return Feeder(build_ybus(graph, yl, ys), load, tuple(ids))


def feeder_to_dict(feeder: Feeder) -> dict:
    model = feeder.model
    ids = list(feeder.bus_ids) or list(range(model.n))
    buses = []
    for k in range(model.n):
        entry = {
            "id": ids[k],
            "shunt_g": float(model.shunt_admittances[k].real),
            "shunt_b": float(model.shunt_admittances[k].imag),
        }
        if np.any(feeder.nominal_load != 0):
            entry["p_load"] = float(feeder.nominal_load[k].real)
            entry["q_load"] = float(feeder.nominal_load[k].imag)
        buses.append(entry)
    lines = [
        {"from": ids[s], "to": ids[r], "g": float(y.real), "b": float(y.imag)}
        for (s, r), y in zip(model.graph.edges, model.line_admittances)
    ]
    vs = model.slack_voltage
    return {
        "buses": buses,
        "lines": lines,
        "slack": {"id": ids[model.slack], "v_re": vs.real, "v_im": vs.imag},
    }


def load_feeder(path) -> Feeder:
    with open(Path(path)) as fh:
        return feeder_from_dict(json.load(fh))


def save_feeder(feeder: Feeder, path) -> None:
    with open(Path(path), "w") as fh:
        json.dump(feeder_to_dict(feeder), fh, indent=1)
