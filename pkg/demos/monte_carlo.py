"""Shipped experiment with fewer samples: APSE and GNvQR side by side."""

import sys

import numpy as np

from apse.experiment import Experiment, data_path, load_experiment
from apse.uq import APSE, GNVQR, run_batch

samples = int(sys.argv[1]) if len(sys.argv) > 1 else 300
cfg = load_experiment(data_path("experiment_ieee33.json")).with_overrides(samples=samples)
exp = Experiment.prepare(cfg)
stats = run_batch(exp.stream.profiles, exp.physics, exp.covariance, cfg.apse_config(), "both", exp.stream.bootstrap)

apse = stats.runs[APSE]
curve = stats.acceptance_curve()
print(f"{samples} profiles, final basis {apse.basis_sizes[-1]}, speedup {stats.speedup():.2f}x")
for k in range(0, samples, max(samples // 6, 1)):
    print(f"  profile {k:4d}: acceptance over last 50 = {curve[k]:.2f}")
print(f"max paired difference {np.max(stats.paired_max_diff):.1e}")
b = exp.physics.p - 1  # the feeder end
V = stats.runs[GNVQR].states[:, b]
print(f"bus {exp.feeder.bus_ids[exp.feeder.model.nonslack[b]]}: V in [{V.min():.4f}, {V.max():.4f}] pu")
