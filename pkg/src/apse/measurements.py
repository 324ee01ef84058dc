"""Measurement device sets, covariance, profiles and residual assembly.

Rows are always ordered ``[magnitudes; flows; injections]``. Flow and
injection devices contribute an active block followed by a reactive block, so
for ``k`` metered lines the flow rows are ``[P_1..P_k, Q_1..Q_k]``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionError, MeasurementError


@dataclass(frozen=True, eq=False)
class MeasurementSet:
    mag_buses: np.ndarray
    flow_lines: np.ndarray
    inj_buses: np.ndarray

    def __post_init__(self):
        for name in ("mag_buses", "flow_lines", "inj_buses"):
            arr = np.asarray(getattr(self, name), dtype=np.int64).ravel()
            if len(np.unique(arr)) != len(arr):
                raise MeasurementError(f"duplicate device in {name}")
            object.__setattr__(self, name, arr)

    @property
    def n_mag(self) -> int:
        return len(self.mag_buses)

    @property
    def n_flow(self) -> int:
        return 2 * len(self.flow_lines)

    @property
    def n_inj(self) -> int:
        return 2 * len(self.inj_buses)

    @property
    def n_rows(self) -> int:
        return self.n_mag + self.n_flow + self.n_inj

    @property
    def slices(self):
        a, b = self.n_mag, self.n_mag + self.n_flow
        return slice(0, a), slice(a, b), slice(b, self.n_rows)

    def check_against(self, model) -> None:
        """Raise if a device references a bus/line the model does not have."""
        n, m, slack = model.n, model.graph.m, model.slack
        for name, arr, bound in (
            ("mag_buses", self.mag_buses, n),
            ("flow_lines", self.flow_lines, m),
            ("inj_buses", self.inj_buses, n),
        ):
            bad = arr[(arr < 0) | (arr >= bound)]
            if bad.size:
                raise MeasurementError(f"{name} references unknown index {int(bad[0])}")
        if slack in self.mag_buses:
            raise MeasurementError("mag_buses: the slack magnitude is not a state")
        if slack in self.inj_buses:
            raise MeasurementError("inj_buses: the slack injection is excluded from the state model")

    def row_labels(self, bus_ids=None, line_ids=None) -> list:
        bus = (lambda k: bus_ids[k]) if bus_ids else (lambda k: k)
        line = (lambda k: line_ids[k]) if line_ids else (lambda k: k)
        return (
            [f"V:{bus(k)}" for k in self.mag_buses]
            + [f"Pf:{line(k)}" for k in self.flow_lines]
            + [f"Qf:{line(k)}" for k in self.flow_lines]
            + [f"P:{bus(k)}" for k in self.inj_buses]
            + [f"Q:{bus(k)}" for k in self.inj_buses]
        )


def validate_redundancy(mset: MeasurementSet, p: int):
    rows = mset.n_rows
    diag = {
        "m": mset.n_mag,
        "f": mset.n_flow,
        "s": mset.n_inj,
        "rows": rows,
        "two_p": 2 * p,
        "slack": rows - 2 * p,
        "redundancy_ratio": (rows - 2 * p) / (2 * p),
    }
    return rows > 2 * p, diag


@dataclass(frozen=True, eq=False)
class CovarianceModel:
    """Diagonal measurement covariance, stored as variances."""

    sigma_diag: np.ndarray
    weight_sqrt: np.ndarray = field(init=False)

    def __post_init__(self):
        var = np.asarray(self.sigma_diag, dtype=float).ravel()
        if np.any(~(var > 0)):
            raise MeasurementError("all variances must be strictly positive")
        object.__setattr__(self, "sigma_diag", var)
        object.__setattr__(self, "weight_sqrt", 1.0 / np.sqrt(var))

    @classmethod
    def from_sigmas(cls, mset: MeasurementSet, mag: float, flow: float, inj: float):
        """Per-class standard deviations -> per-row variances."""
        std = np.concatenate(
            [np.full(mset.n_mag, mag), np.full(mset.n_flow, flow), np.full(mset.n_inj, inj)]
        )
        return cls(std**2)

    @property
    def weights(self) -> np.ndarray:
        return 1.0 / self.sigma_diag

    def __len__(self):
        return len(self.sigma_diag)


@dataclass(frozen=True, eq=False)
class MeasurementProfile:
    values: np.ndarray
    profile_id: int = 0

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float).ravel())

    @classmethod
    def from_parts(cls, mag, flow, inj, profile_id=0):
        mag, flow, inj = (np.asarray(a, dtype=float).ravel() for a in (mag, flow, inj))
        return cls(np.concatenate([mag, flow, inj]), profile_id)

    def split(self, mset: MeasurementSet):
        self.check(mset)
        sm, sf, ss = mset.slices
        return self.values[sm], self.values[sf], self.values[ss]

    def check(self, mset: MeasurementSet):
        if self.values.shape != (mset.n_rows,):
            raise DimensionError(
                f"profile {self.profile_id} has {self.values.size} rows, layout expects {mset.n_rows}"
            )


def squared_magnitude_transform(profile: MeasurementProfile, covariance: CovarianceModel, mset: MeasurementSet):
    """Square the magnitude rows and rescale their variances by ``(2 m)^2``.

    Returns the transformed measurement vector and a new ``CovarianceModel``.
    """
    profile.check(mset)
    sm = mset.slices[0]
    mag = profile.values[sm]
    if np.any(mag <= 0):
        raise MeasurementError("magnitude measurements must be strictly positive")
    values = profile.values.copy()
    values[sm] = mag**2
    var = covariance.sigma_diag.copy()
    var[sm] = (2.0 * mag) ** 2 * var[sm]
    return values, CovarianceModel(var)


def assemble_residual(x, profile: MeasurementProfile, mset: MeasurementSet, model) -> np.ndarray:
    """``r(x) = h(x) - z`` in ``[m; f; s]`` order for a polar state ``x``."""
    from .physics import measurement_function

    profile.check(mset)
    return measurement_function(x, model, mset) - profile.values


# --- file formats -----------------------------------------------------------


def layout_from_dict(data: dict, feeder=None):
    """Parse the measurement layout JSON into ``(MeasurementSet, sigmas)``.

    Bus entries are resolved through ``feeder.bus_ids`` when a feeder is given;
    line entries are line positions in the network file.
    """
    index = feeder.bus_index if feeder is not None and feeder.bus_ids else None

    def resolve(key):
        out = []
        for k, b in enumerate(data.get(key, [])):
            if index is None:
                out.append(int(b))
            elif b in index:
                out.append(index[b])
            else:
                raise MeasurementError(f"{key}[{k}] references unknown bus {b!r}")
        return out

    mset = MeasurementSet(resolve("mag_buses"), [int(k) for k in data.get("flow_lines", [])], resolve("inj_buses"))
    if feeder is not None:
        mset.check_against(feeder.model)
    sig = data.get("sigmas", {})
    sigmas = {"mag": float(sig.get("mag", 0.004)), "flow": float(sig.get("flow", 0.01)), "inj": float(sig.get("inj", 0.02))}
    return mset, sigmas


def load_layout(path, feeder=None):
    with open(Path(path)) as fh:
        return layout_from_dict(json.load(fh), feeder)


def layout_to_dict(mset: MeasurementSet, sigmas: dict, feeder=None) -> dict:
    ids = feeder.bus_ids if feeder is not None and feeder.bus_ids else None
    bus = (lambda k: ids[k]) if ids else int
    return {
        "mag_buses": [bus(k) for k in mset.mag_buses],
        "flow_lines": [int(k) for k in mset.flow_lines],
        "inj_buses": [bus(k) for k in mset.inj_buses],
        "sigmas": dict(sigmas),
    }


def write_profiles(path, profiles, labels) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["profile_id", *labels])
        for prof in profiles:
            w.writerow([prof.profile_id, *(repr(float(v)) for v in prof.values)])


def read_profiles(path, mset: MeasurementSet, labels=None) -> list:
    """Read a profiles CSV. The header must match ``labels`` when given."""
    out = []
    with open(Path(path), newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        has_id = header and header[0] == "profile_id"
        cols = header[1:] if has_id else header
        if len(cols) != mset.n_rows:
            raise DimensionError(f"profiles file has {len(cols)} measurement columns, layout expects {mset.n_rows}")
        if labels is not None and list(cols) != list(labels):
            raise MeasurementError("profiles header does not match the measurement layout")
        for lineno, row in enumerate(reader, start=2):
            try:
                vals = [float(v) for v in row]
            except ValueError:
                raise MeasurementError(f"non-numeric value on line {lineno}") from None
            pid = int(vals[0]) if has_id else lineno - 2
            out.append(MeasurementProfile(vals[1:] if has_id else vals, pid))
    return out
