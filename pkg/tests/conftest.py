"""
Pytest configuration and fixtures for cognimap tests
"""

import os

import numpy as np
import pytest

# Set test environment before the package reads its settings
os.environ["ENVIRONMENT"] = "test"
os.environ["LOG_LEVEL"] = "WARNING"
os.environ["LOG_FORMAT"] = "default"
os.environ["LOG_TO_FILE"] = "false"
os.environ["REPORT_PEAK_MEMORY"] = "false"
os.environ.pop("DEFAULT_BANK_DIR", None)

from cognimap.core.config import PipelineConfig  # noqa: E402
from cognimap.models.geometry_models import Intrinsics  # noqa: E402
from cognimap.models.memory_models import PointCloud  # noqa: E402
from cognimap.synth.renderer import generate  # noqa: E402
from cognimap.synth.scene import random_scene_config  # noqa: E402
from cognimap.synth.writer import write_sequence  # noqa: E402

SMALL_WIDTH = 64
SMALL_HEIGHT = 48
SMALL_FOCAL = 50.0


def small_scene(seed: int, n_frames: int = 8, **kwargs):
    """Quarter-size scene with the default field of view"""
    return random_scene_config(seed, n_frames=n_frames, width=SMALL_WIDTH, height=SMALL_HEIGHT,
                               focal=SMALL_FOCAL, **kwargs)


def structured_cloud(rng: np.random.Generator, n: int = 600) -> PointCloud:
    """Anisotropic blob with an off-centre lobe, free of rotational symmetry"""
    body = rng.normal(size=(n, 3)) * np.array([1.0, 0.5, 0.25])
    lobe = rng.normal(size=(n // 4, 3)) * 0.15 + np.array([0.9, 0.4, 0.1])
    return PointCloud(np.vstack([body, lobe]))


@pytest.fixture
def rng():
    """Seeded generator for test data"""
    return np.random.default_rng(1234)


@pytest.fixture
def sample_intrinsics():
    """640x480 camera with fx = fy = 100"""
    return Intrinsics(fx=100.0, fy=100.0, cx=320.0, cy=240.0, width=640, height=480)


@pytest.fixture
def small_intrinsics():
    return Intrinsics.centered(SMALL_WIDTH, SMALL_HEIGHT, SMALL_FOCAL)


@pytest.fixture
def sample_config():
    """Default pipeline configuration"""
    return PipelineConfig()


@pytest.fixture
def sample_cloud(rng):
    return structured_cloud(rng)


@pytest.fixture(scope="session")
def sample_scene():
    """Small scene with one mover and exact priors"""
    return small_scene(7, n_frames=8)


@pytest.fixture(scope="session")
def sample_sequence(sample_scene):
    """(frames, ground truth) of sample_scene"""
    return generate(sample_scene)


@pytest.fixture(scope="session")
def static_sequence():
    """(frames, ground truth) of a small scene without movers"""
    return generate(small_scene(11, n_frames=8, n_movers=0))


@pytest.fixture(scope="session")
def sample_sequence_dir(tmp_path_factory, sample_sequence):
    """sample_sequence written to disk with its ground truth"""
    frames, truth = sample_sequence
    root = tmp_path_factory.mktemp("sequences") / "scene7"
    return write_sequence(frames, root, truth)
