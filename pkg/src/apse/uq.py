"""Monte-Carlo harness: uncertainty regions, synthetic profiles, batch runs.

Loads are consumption (``P + jQ``, pu); injections are their negatives.
Each uncertainty-region member bus gets one uniform multiplier per sample
that scales its nominal ``P`` and ``Q`` together.
"""

from __future__ import annotations

import csv
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InfeasibleSampleError, MeasurementError, ObservabilityError
from .estimator import FALLBACK, RMSE_ACCEPTED, Apse, ApseConfig
from .grid import AdmittanceModel, PolarState
from .measurements import MeasurementProfile, MeasurementSet
from .physics import PhysicsModel, eval_injections
from .solver import SolverConfig, gnvqr_solve

GNVQR = "gnvqr"
APSE = "apse"


@dataclass(frozen=True)
class UncertaintyRegion:
    buses: tuple
    lower: float = -0.5
    upper: float = 0.5
    region_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "buses", tuple(int(b) for b in self.buses))
        if not self.lower < self.upper:
            raise ValueError(f"region {self.region_id!r}: lower bound must be below upper bound")
        if self.lower < -1.0:
            raise ValueError(f"region {self.region_id!r}: load cannot drop below zero")

    def check(self, mset) -> None:
        missing = set(self.buses) - set(int(b) for b in mset.inj_buses)
        if missing:
            raise MeasurementError(
                f"region {self.region_id!r}: buses {sorted(missing)} carry no injection measurement"
            )


@dataclass
class SampleBatch:
    count: int
    seed: int
    multipliers: np.ndarray  # (count, members), relative deviation from nominal
    members: np.ndarray
    bounds: np.ndarray  # (members, 2)

    @classmethod
    def draw(cls, regions, count, seed) -> "SampleBatch":
        members = np.array([b for r in regions for b in r.buses], dtype=np.int64)
        bounds = np.array([(r.lower, r.upper) for r in regions for _ in r.buses]).reshape(-1, 2)
        rng = np.random.default_rng(seed)
        u = rng.uniform(bounds[:, 0], bounds[:, 1], size=(count, len(members)))
        return cls(count, seed, u, members, bounds)

    def redraw(self, i: int, attempt: int) -> np.ndarray:
        rng = np.random.default_rng([self.seed, i, attempt])
        return rng.uniform(self.bounds[:, 0], self.bounds[:, 1])

    def loads(self, nominal: np.ndarray, u: np.ndarray) -> np.ndarray:
        load = nominal.copy()
        load[self.members] = nominal[self.members] * (1.0 + u)
        return load


def solve_power_flow(model: AdmittanceModel, loads, tol=1e-10, max_iters=30, x0=None) -> PolarState:
    """Newton power flow with every non-slack bus a PQ bus consuming ``loads``."""
    target = -np.asarray(loads, dtype=complex)[model.nonslack]
    target = np.concatenate([target.real, target.imag])
    phys = PhysicsModel(model, MeasurementSet([], [], model.nonslack))
    x = (x0 or model.flat_state()).vector.copy()
    p = model.p
    for _ in range(max_iters):
        state = PolarState(x[:p], x[p:])
        mis = eval_injections(state, model) - target
        if np.max(np.abs(mis)) <= tol:
            return state
        try:
            dx = np.linalg.solve(phys.jacobian_polar(state), -mis)
        except np.linalg.LinAlgError:
            break
        x += dx
        if not np.all(np.isfinite(x)) or np.min(x[:p]) < 0.2:
            break
    raise InfeasibleSampleError("power flow did not converge")


@dataclass
class SyntheticStream:
    profiles: list
    truths: list
    multipliers: np.ndarray
    redraws: int = 0
    bootstrap: MeasurementProfile = None
    bootstrap_truth: PolarState = None


def _region_rows(mset, members):
    """Positions of the P and Q rows of the given buses inside a profile."""
    ss = mset.slices[2]
    inj = list(mset.inj_buses)
    pos = np.array([inj.index(b) for b in members], dtype=np.int64)
    k = len(inj)
    return np.concatenate([ss.start + pos, ss.start + k + pos])


def synthesize_profiles(feeder, physics: PhysicsModel, covariance, batch: SampleBatch, regions,
                        noise_seed=None, noise_scale=1.0, max_retries=20) -> SyntheticStream:
    """Truth by power flow, metered values at truth, Gaussian noise off-region.

    Region-member injection rows carry the drawn loads themselves (they are the
    uncertain pseudo-measurements). ``noise_scale=0`` gives noise-free meters.
    """
    for r in regions:
        r.check(physics.mset)
    model = feeder.model
    ur_rows = _region_rows(physics.mset, batch.members)
    noise_mask = np.ones(physics.mset.n_rows, dtype=bool)
    noise_mask[ur_rows] = False
    std = np.sqrt(covariance.sigma_diag) * noise_scale
    rng = np.random.default_rng(noise_seed)
    nm = len(batch.members)

    def measured(truth, loads, noise):
        z = physics.h(truth) + noise * noise_mask
        inj = -loads[batch.members]
        z[ur_rows[:nm]] = inj.real
        z[ur_rows[nm:]] = inj.imag
        return z

    nominal = feeder.nominal_load
    base_truth = solve_power_flow(model, nominal)
    boot = MeasurementProfile(measured(base_truth, nominal, 0.0), -1)

    profiles, truths, used = [], [], []
    redraws = 0
    prev = base_truth
    for i in range(batch.count):
        u = batch.multipliers[i]
        for attempt in range(max_retries + 1):
            loads = batch.loads(nominal, u)
            try:
                truth = solve_power_flow(model, loads, x0=prev)
                break
            except InfeasibleSampleError:
                redraws += 1
                u = batch.redraw(i, attempt + 1)
        else:
            raise InfeasibleSampleError(f"sample {i}: no feasible draw after {max_retries} retries")
        noise = rng.standard_normal(physics.mset.n_rows) * std
        profiles.append(MeasurementProfile(measured(truth, loads, noise), i))
        truths.append(truth)
        used.append(u)
        prev = truth
    mult = np.array(used).reshape(batch.count, nm)
    return SyntheticStream(profiles, truths, mult, redraws, boot, base_truth)


# --- batch execution -------------------------------------------------------


@dataclass
class PathRun:
    name: str
    states: np.ndarray  # (M, 2p) polar
    times: np.ndarray
    converged: np.ndarray
    iterations: np.ndarray
    paths: list = field(default_factory=list)
    basis_sizes: list = field(default_factory=list)
    accept_values: list = field(default_factory=list)
    overhead_time: float = 0.0

    @property
    def total_time(self) -> float:
        return float(self.times.sum() + self.overhead_time)


@dataclass
class RunStatistics:
    runs: dict
    profile_ids: list
    bus_ids: list
    line_ids: list
    voltage_hist: dict = field(default_factory=dict)  # path -> list[(counts, edges)] per bus
    current_hist: dict = field(default_factory=dict)
    paired_max_diff: np.ndarray = None  # per profile, inf-norm apse vs gnvqr (both mode)
    extras: dict = field(default_factory=dict)

    @property
    def sample_count(self) -> int:
        return len(self.profile_ids)

    def acceptance_curve(self, window=50) -> np.ndarray:
        run = self.runs.get(APSE)
        if run is None or not run.paths:
            return np.zeros(0)
        acc = np.array([p == RMSE_ACCEPTED for p in run.paths], dtype=float)
        c = np.cumsum(np.concatenate([[0.0], acc]))
        idx = np.arange(1, len(acc) + 1)
        lo = np.maximum(idx - window, 0)
        return (c[idx] - c[lo]) / (idx - lo)

    def speedup(self):
        if APSE in self.runs and GNVQR in self.runs and self.runs[APSE].total_time > 0:
            return self.runs[GNVQR].total_time / self.runs[APSE].total_time
        return None


def run_gnvqr_stream(profiles, physics, covariance, config: SolverConfig = SolverConfig(), x0=None,
                     workers=1) -> PathRun:
    """Cold solves in order; each starts from the previous converged state.

    With ``workers > 1`` the stream is cut into contiguous chunks solved on a
    thread pool, each chunk warm-starting within itself.
    """
    x = x0 or physics.model.flat_state()
    M, p2 = len(profiles), 2 * physics.p
    states = np.full((M, p2), np.nan)
    times, conv, iters = np.zeros(M), np.zeros(M, dtype=bool), np.zeros(M, dtype=int)

    def solve_range(lo, hi):
        xs = x
        for i in range(lo, hi):
            try:
                rep = gnvqr_solve(xs, profiles[i], physics, covariance, config)
            except ObservabilityError:
                continue
            times[i], conv[i], iters[i] = rep.wall_time, rep.converged, rep.iterations
            states[i] = rep.final_state.vector
            if rep.converged:
                xs = rep.final_state

    workers = max(1, min(int(workers), M))
    if workers == 1:
        solve_range(0, M)
    else:
        cuts = np.linspace(0, M, workers + 1).astype(int)
        with ThreadPoolExecutor(workers) as pool:
            list(pool.map(solve_range, cuts[:-1], cuts[1:]))
    return PathRun(GNVQR, states, times, conv, iters)


def run_apse_stream(profiles, bootstrap_profile, physics, covariance, config: ApseConfig = ApseConfig()):
    t0 = time.perf_counter()
    est = Apse(physics, covariance, config)
    est.bootstrap(bootstrap_profile)
    overhead = time.perf_counter() - t0
    result = est.run(profiles)
    recs = result.records
    run = PathRun(
        APSE,
        np.array([r.state.vector for r in recs]).reshape(len(recs), -1),
        np.array([r.wall_time for r in recs]),
        np.array([r.converged for r in recs], dtype=bool),
        np.array([r.rmse_iters + r.gnvqr_iters for r in recs], dtype=int),
        [r.path for r in recs],
        [r.basis_size for r in recs],
        [r.accept_value for r in recs],
        overhead,
    )
    return run, result


def line_currents(states: np.ndarray, model: AdmittanceModel) -> np.ndarray:
    """``|y_l (v_s - v_r)|`` per line for each row of polar states."""
    p = model.p
    out = np.empty((len(states), model.graph.m))
    s, r = model.graph.edges[:, 0], model.graph.edges[:, 1]
    for i, x in enumerate(states):
        v = model.full_voltage(x[:p] * np.exp(1j * x[p:]))
        out[i] = np.abs(model.line_admittances * (v[s] - v[r]))
    return out


def _histograms(values: np.ndarray, bins: int):
    out = []
    for col in values.T:
        col = col[np.isfinite(col)]
        if col.size == 0:
            out.append((np.zeros(0, dtype=int), np.zeros(1)))
            continue
        lo, hi = col.min(), col.max()
        nb = 1 if col.size == 1 or hi == lo else bins
        counts, edges = np.histogram(col, bins=nb, range=(lo, hi) if hi > lo else (lo - 0.5e-9, hi + 0.5e-9))
        out.append((counts, edges))
    return out


def run_batch(profiles, physics, covariance, apse_config: ApseConfig = ApseConfig(),
              comparison="both", bootstrap_profile=None, bins=30, bus_ids=None, workers=1) -> RunStatistics:
    """Run the selected solver path(s) over ``profiles`` and collect statistics."""
    if comparison not in ("apse", "gnvqr", "gnvqr-only", "both"):
        raise ValueError(f"unknown comparison mode {comparison!r}")
    model = physics.model
    runs, extras = {}, {}
    if comparison in ("gnvqr", "gnvqr-only", "both"):
        # timing comparisons stay single-threaded
        w = 1 if comparison == "both" else workers
        runs[GNVQR] = run_gnvqr_stream(profiles, physics, covariance, apse_config.solver, workers=w)
    if comparison in ("apse", "both") and profiles:
        boot = bootstrap_profile if bootstrap_profile is not None else profiles[0]
        runs[APSE], result = run_apse_stream(profiles, boot, physics, covariance, apse_config)
        extras["apse_summary"] = result.summary()
        extras["apse_result"] = result
    stats = RunStatistics(
        runs,
        [pr.profile_id for pr in profiles],
        list(bus_ids) if bus_ids else [int(b) for b in model.nonslack],
        list(range(model.graph.m)),
        extras=extras,
    )
    for name, run in runs.items():
        p = physics.p
        stats.voltage_hist[name] = _histograms(run.states[:, :p], bins)
        stats.current_hist[name] = _histograms(line_currents(run.states, model), bins)
    if GNVQR in runs and APSE in runs:
        stats.paired_max_diff = np.max(np.abs(runs[APSE].states - runs[GNVQR].states), axis=1)
    return stats


def summarize(stats: RunStatistics, out_dir) -> dict:
    """Write histogram, timing and acceptance CSVs plus ``summary.json``."""
    out = Path(out_dir)
    for sub in ("histograms", "timing", "states"):
        (out / sub).mkdir(parents=True, exist_ok=True)

    for kind, hists, labels in (
        ("voltage", stats.voltage_hist, stats.bus_ids),
        ("current", stats.current_hist, stats.line_ids),
    ):
        for name in (GNVQR, APSE):
            with open(out / "histograms" / f"{kind}_{name}.csv", "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["quantity", "bin_lo", "bin_hi", "count"])
                for label, (counts, edges) in zip(labels, hists.get(name, [])):
                    for c, lo, hi in zip(counts, edges[:-1], edges[1:]):
                        w.writerow([label, repr(float(lo)), repr(float(hi)), int(c)])

    names = [n for n in (GNVQR, APSE) if n in stats.runs]
    with open(out / "timing" / "timing.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        header = ["profile_id"]
        for n in names:
            header += [f"{n}_time", f"{n}_cumulative"]
        if APSE in stats.runs:
            header += ["apse_path", "apse_basis_size", "apse_accept_value"]
        w.writerow(header)
        cums = {n: np.cumsum(stats.runs[n].times) for n in names}
        for i, pid in enumerate(stats.profile_ids):
            row = [pid]
            for n in names:
                row += [repr(float(stats.runs[n].times[i])), repr(float(cums[n][i]))]
            if APSE in stats.runs:
                a = stats.runs[APSE]
                row += [a.paths[i], a.basis_sizes[i], repr(float(a.accept_values[i]))]
            w.writerow(row)

    curve = stats.acceptance_curve()
    with open(out / "timing" / "acceptance.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["profile_index", "acceptance_rate"])
        for i, a in enumerate(curve):
            w.writerow([i, repr(float(a))])

    for n in names:
        with open(out / "states" / f"{n}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["profile_id"] + [f"V:{b}" for b in stats.bus_ids] + [f"theta:{b}" for b in stats.bus_ids])
            for pid, x in zip(stats.profile_ids, stats.runs[n].states):
                w.writerow([pid, *(repr(float(v)) for v in x)])

    summary = {
        "samples": stats.sample_count,
        "paths": names,
        "solved": {n: int(stats.runs[n].converged.sum()) for n in names},
        "total_time": {n: stats.runs[n].total_time for n in names},
        "speedup": stats.speedup(),
        "acceptance_rate_curve": [float(a) for a in curve],
    }
    if APSE in stats.runs:
        a = stats.runs[APSE]
        summary["apse"] = {
            "rmse_accepted": sum(p == RMSE_ACCEPTED for p in a.paths),
            "fallbacks": sum(p == FALLBACK for p in a.paths),
            "final_basis_size": a.basis_sizes[-1] if a.basis_sizes else 0,
            **stats.extras.get("apse_summary", {}),
        }
    if stats.paired_max_diff is not None:
        summary["paired_max_state_diff"] = float(np.max(stats.paired_max_diff, initial=0.0))
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=1)
    return summary
