import numpy as np
import pytest

from apse import CovarianceModel, MeasurementSet, PhysicsModel, build_ybus, ieee33, sparse_layout, full_layout
from apse.feeders import IEEE33_REGIONS
from apse.grid import NetworkGraph, PolarState
from apse.uq import SampleBatch, UncertaintyRegion, synthesize_profiles

SIGMAS = (0.004, 0.01, 0.02)


def small_radial():
    """3-bus chain 0->1->2 with shunts, used wherever a hand-checkable case helps."""
    g = NetworkGraph(3, [(0, 1), (1, 2)])
    return build_ybus(g, np.array([2 - 8j, 1.5 - 5j]), np.array([0.0, 0.01 + 0.02j, 0.03j]))


def random_state(rng, p, vlo=0.9, vhi=1.1, amax=0.1):
    return PolarState(rng.uniform(vlo, vhi, p), rng.uniform(-amax, amax, p))


@pytest.fixture(scope="session")
def feeder():
    return ieee33()


@pytest.fixture(scope="session")
def full_set(feeder):
    return full_layout(feeder)


@pytest.fixture(scope="session")
def sparse_set(feeder):
    return sparse_layout(feeder)


@pytest.fixture(scope="session")
def full_physics(feeder, full_set):
    return PhysicsModel(feeder.model, full_set)


@pytest.fixture(scope="session")
def sparse_physics(feeder, sparse_set):
    return PhysicsModel(feeder.model, sparse_set)


@pytest.fixture(scope="session")
def full_cov(full_set):
    return CovarianceModel.from_sigmas(full_set, *SIGMAS)


@pytest.fixture(scope="session")
def sparse_cov(sparse_set):
    return CovarianceModel.from_sigmas(sparse_set, *SIGMAS)


@pytest.fixture(scope="session")
def regions():
    return [UncertaintyRegion(b, -0.5, 0.5, f"ur{k}") for k, b in enumerate(IEEE33_REGIONS)]


def make_stream(feeder, physics, cov, regions, count, seed, noise_scale):
    batch = SampleBatch.draw(regions, count, seed)
    return synthesize_profiles(feeder, physics, cov, batch, regions, noise_seed=seed + 1, noise_scale=noise_scale)


@pytest.fixture(scope="session")
def sparse_stream(feeder, sparse_physics, sparse_cov, regions):
    """60 noise-free profiles on the sparse layout."""
    return make_stream(feeder, sparse_physics, sparse_cov, regions, 60, 11, 0.0)


@pytest.fixture(scope="session")
def noisy_stream(feeder, sparse_physics, sparse_cov, regions):
    return make_stream(feeder, sparse_physics, sparse_cov, regions, 20, 3, 1.0)


@pytest.fixture(scope="session")
def full_stream(feeder, full_physics, full_cov, regions):
    return make_stream(feeder, full_physics, full_cov, regions, 10, 5, 0.0)
