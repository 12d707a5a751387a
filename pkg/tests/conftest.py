"""
pytest configuration and fixtures for conformal DeepONet tests.
"""

import shutil
import sys
import tempfile
from pathlib import Path

# Add src directory to Python path for imports
src_path = Path(__file__).parent.parent / "src"
if str(src_path) not in sys.path:
    sys.path.insert(0, str(src_path))

import numpy as np
import pytest

from models import DeepONetSpec, HeadKind, TrainConfig
from services.datasets import TrajectoryDataset, TripletDataset


def make_spec(head_kind: HeadKind = HeadKind.POINT, m: int = 4, width: int = 6, alpha: float = 0.1) -> DeepONetSpec:
    """Small DeepONet spec used across unit tests."""
    return DeepONetSpec.from_table(
        m=m,
        d=1,
        width=width,
        shared_depth=2,
        independent_depth=1,
        head_kind=head_kind,
        quantile_alpha=alpha if head_kind is HeadKind.QUANTILE else None,
    )


def linear_triplets(n: int, m: int = 4, seed: int = 0, noise: float = 0.0) -> TripletDataset:
    """G = mean(u) * x (+ Gaussian noise): a simple learnable operator."""
    rng = np.random.default_rng(seed)
    U = rng.normal(size=(n, m))
    X = rng.uniform(0.0, 1.0, size=(n, 1))
    G = U.mean(axis=1) * X[:, 0] + noise * rng.normal(size=n)
    return TripletDataset(U, X, G)


@pytest.fixture
def rng() -> np.random.Generator:
    """Seeded generator."""
    return np.random.default_rng(1234)


@pytest.fixture
def point_spec() -> DeepONetSpec:
    return make_spec(HeadKind.POINT)


@pytest.fixture
def prob_spec() -> DeepONetSpec:
    return make_spec(HeadKind.PROB)


@pytest.fixture
def quantile_spec() -> DeepONetSpec:
    return make_spec(HeadKind.QUANTILE)


@pytest.fixture
def tiny_train_config() -> TrainConfig:
    """A few epochs of full-batch-ish training."""
    return TrainConfig(epochs=5, batch_size=16, seed=0, learning_rate=1e-2)


@pytest.fixture
def spec_factory():
    """Factory for small DeepONet specs: spec_factory(head_kind, m=4, width=6, alpha=0.1)."""
    return make_spec


@pytest.fixture
def triplet_factory():
    """Factory for G = mean(u) * x datasets: triplet_factory(n, m=4, seed=0, noise=0.0)."""
    return linear_triplets


@pytest.fixture
def small_triplets() -> TripletDataset:
    return linear_triplets(64)


@pytest.fixture
def small_trajectories() -> TrajectoryDataset:
    """3 trajectories of 5 points with G = mean(u) * x."""
    rng = np.random.default_rng(7)
    U = rng.normal(size=(3, 4))
    X = np.tile(np.linspace(0.0, 1.0, 5), (3, 1))
    G = U.mean(axis=1)[:, None] * X
    return TrajectoryDataset(U, X, G)


# Cleanup fixtures
@pytest.fixture
def temporary_directory():
    """Fixture that creates a temporary directory and cleans it up after tests."""
    temp_dir = tempfile.mkdtemp()
    yield Path(temp_dir)
    if Path(temp_dir).exists():
        shutil.rmtree(temp_dir)


# pytest configuration
def pytest_configure(config):
    """Configure pytest with custom markers."""
    config.addinivalue_line("markers", "unit: Unit tests (fast, no external dependencies)")
    config.addinivalue_line("markers", "integration: Integration tests (small end-to-end pipelines)")
    config.addinivalue_line("markers", "contract: Contract tests (command-line interface behaviour)")
    config.addinivalue_line("markers", "slow: Full-size reproduction runs")


def pytest_collection_modifyitems(config, items):
    """Modify test collection to add markers based on test location."""
    for item in items:
        if "tests/unit" in str(item.fspath):
            item.add_marker(pytest.mark.unit)
        elif "tests/integration" in str(item.fspath):
            item.add_marker(pytest.mark.integration)
        elif "tests/contract" in str(item.fspath):
            item.add_marker(pytest.mark.contract)
