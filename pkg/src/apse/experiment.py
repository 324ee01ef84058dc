"""Experiment configuration files and the objects they expand into.

An experiment file names a network file, a measurement layout, the
uncertainty regions and the run knobs::

    {"network": "ieee33.json", "measurements": "layout_sparse.json",
     "regions": [{"id": "trunk", "buses": [13, 14], "lower": -0.5, "upper": 0.5}],
     "samples": 1000, "seeds": {"sample": 0, "noise": 1}, "noise_scale": 0.0,
     "solver": {"eps_n": 1e-8, "max_iters": 25},
     "expansion_tol": 1e-9, "hessian_cap": 50, "compare": "both"}

Relative paths are resolved against the experiment file's directory.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

from .estimator import ApseConfig
from .grid import load_feeder
from .errors import MeasurementError
from .measurements import CovarianceModel, load_layout
from .physics import PhysicsModel
from .solver import SolverConfig
from .uq import SampleBatch, UncertaintyRegion, synthesize_profiles

COMPARISONS = ("apse", "gnvqr", "gnvqr-only", "both")


def data_path(name: str) -> Path:
    """Path of a file shipped in ``apse/data``."""
    return Path(str(resources.files("apse") / "data" / name))


@dataclass(frozen=True)
class ExperimentConfig:
    network: Path
    measurements: Path
    regions: tuple = ()  # (id, bus ids as in the network file, lower, upper)
    samples: int = 1000
    sample_seed: int = 0
    noise_seed: int = 1
    noise_scale: float = 1.0
    eps_n: float = 1e-8
    max_iters: int = 25
    expansion_tol: float = 1e-9
    hessian_cap: int = 50
    compare: str = "both"
    bins: int = 30

    def __post_init__(self):
        if self.samples < 1:
            raise ValueError("samples must be at least 1")
        if self.compare not in COMPARISONS:
            raise ValueError(f"compare must be one of {COMPARISONS}, got {self.compare!r}")

    def with_overrides(self, **kw) -> "ExperimentConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})

    def apse_config(self) -> ApseConfig:
        return ApseConfig(
            solver=SolverConfig(step_tol=self.eps_n, max_iters=self.max_iters),
            expansion_tol=self.expansion_tol,
            hessian_cap=self.hessian_cap,
        )


def experiment_from_dict(data: dict, base=".") -> ExperimentConfig:
    base = Path(base)
    try:
        network = base / data["network"]
        measurements = base / data["measurements"]
    except KeyError as exc:
        raise ValueError(f"experiment file is missing field {exc.args[0]!r}") from None
    regions = []
    for k, r in enumerate(data.get("regions", [])):
        if "buses" not in r:
            raise ValueError(f"regions[{k}] has no 'buses'")
        regions.append((str(r.get("id", k)), tuple(r["buses"]), float(r.get("lower", -0.5)), float(r.get("upper", 0.5))))
    seeds = data.get("seeds", {})
    solver = data.get("solver", {})
    return ExperimentConfig(
        network,
        measurements,
        tuple(regions),
        int(data.get("samples", 1000)),
        int(seeds.get("sample", 0)),
        int(seeds.get("noise", 1)),
        float(data.get("noise_scale", 1.0)),
        float(solver.get("eps_n", 1e-8)),
        int(solver.get("max_iters", 25)),
        float(data.get("expansion_tol", 1e-9)),
        int(data.get("hessian_cap", 50)),
        str(data.get("compare", "both")),
        int(data.get("bins", 30)),
    )


def load_experiment(path) -> ExperimentConfig:
    path = Path(path)
    with open(path) as fh:
        return experiment_from_dict(json.load(fh), path.parent)


@dataclass
class Experiment:
    """Everything needed to run a batch: model objects plus the synthetic stream."""

    config: ExperimentConfig
    feeder: object
    mset: object
    covariance: CovarianceModel
    physics: PhysicsModel
    regions: list
    stream: object = field(default=None, repr=False)

    @classmethod
    def prepare(cls, config: ExperimentConfig, synthesize=True) -> "Experiment":
        feeder = load_feeder(config.network)
        mset, sig = load_layout(config.measurements, feeder)
        cov = CovarianceModel.from_sigmas(mset, sig["mag"], sig["flow"], sig["inj"])
        physics = PhysicsModel(feeder.model, mset)
        index = feeder.bus_index
        regions = []
        for rid, buses, lo, hi in config.regions:
            unknown = [b for b in buses if b not in index]
            if unknown:
                raise MeasurementError(f"region {rid!r} references unknown buses {unknown}")
            regions.append(UncertaintyRegion([index[b] for b in buses], lo, hi, rid))
        exp = cls(config, feeder, mset, cov, physics, regions)
        if synthesize:
            exp.synthesize()
        return exp

    def synthesize(self):
        cfg = self.config
        batch = SampleBatch.draw(self.regions, cfg.samples, cfg.sample_seed)
        self.stream = synthesize_profiles(
            self.feeder, self.physics, self.covariance, batch, self.regions, cfg.noise_seed, cfg.noise_scale
        )
        return self.stream
