"""Shared fixtures: acceptance channels, fixture paths and seeded generators."""

import os
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

# Keep test logs quiet unless a run asks otherwise.
os.environ.setdefault("COORDCAP_LOG_LEVEL", "WARNING")

from models.distributions import CompoundChannel, Distribution  # noqa: E402
from models.schemas import AdaptiveProblem  # noqa: E402
from services.capacity_solver import CapacitySolver  # noqa: E402

FIXTURES = Path(__file__).parent / "fixtures"

IDENTITY = [[1.0, 0.0], [0.0, 1.0]]


def noiseless_channel() -> CompoundChannel:
    return CompoundChannel.from_matrices([IDENTITY], [IDENTITY], name="noiseless-binary")


def random_kernel(rng: np.random.Generator, rows: int = 2, cols: int = 2) -> np.ndarray:
    return rng.dirichlet(np.ones(cols), size=rows)


def separated_kernel_z(rng: np.random.Generator) -> np.ndarray:
    """Binary kernel whose two rows are well apart, so small precisions still leave room."""

    a = rng.uniform(0.75, 0.95)
    b = rng.uniform(0.05, 0.25)
    return np.array([[a, 1.0 - a], [b, 1.0 - b]])


def random_adaptive_problem(seed: int, solver: CapacitySolver) -> AdaptiveProblem:
    """Seeded 2x2x2 two-state adaptive problem that is feasible with some margin."""

    rng = np.random.default_rng(seed)
    while True:
        channel = CompoundChannel.from_matrices(
            [random_kernel(rng), random_kernel(rng)],
            [separated_kernel_z(rng), separated_kernel_z(rng)],
            name=f"random-{seed}",
        )
        target = Distribution(probs=rng.dirichlet(np.ones(2)))
        deltas = tuple(float(d) for d in rng.uniform(0.25, 1.0, size=2))
        problem = AdaptiveProblem(channel=channel, target=target, deltas=deltas)
        if solver.feasibility(problem)[0]:
            return problem


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture
def noiseless() -> CompoundChannel:
    return noiseless_channel()


@pytest.fixture
def two_state() -> CompoundChannel:
    return CompoundChannel.from_matrices(
        [[[0.9, 0.1], [0.1, 0.9]], [[0.75, 0.25], [0.25, 0.75]]],
        [[[0.8, 0.2], [0.2, 0.8]], [[0.9, 0.1], [0.3, 0.7]]],
        name="two-state-bsc",
    )


@pytest.fixture
def solver() -> CapacitySolver:
    return CapacitySolver(tol=1e-7, threads=2)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240601)
