import numpy as np
import pytest

from ivbench.camera import CameraParams, Convention, Intrinsics, Pose
from ivbench.harness import ExperimentConfig
from ivbench.rasterizer import GaussianScene
from ivbench.scenegen import generate

from pathlib import Path

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


def config_path(name: str) -> Path:
    return CONFIG_DIR / f"{name}.json"


@pytest.fixture(scope="session")
def default_config() -> ExperimentConfig:
    return ExperimentConfig.load(config_path("default"))


@pytest.fixture(scope="session")
def plane_dataset(default_config):
    """The committed textured_plane dataset (seed 11, 320x176, linear_4)."""
    return generate(default_config.scene)


@pytest.fixture(scope="session")
def consistency_config() -> ExperimentConfig:
    return ExperimentConfig.load(config_path("consistency"))


@pytest.fixture(scope="session")
def regularizer_config() -> ExperimentConfig:
    return ExperimentConfig.load(config_path("regularizer"))


def make_camera(cam_id="cam", width=320, height=180, focal=300.0,
                position=(0.0, 0.0, 0.0), yaw=0.0, pitch=0.0, roll=0.0,
                convention=Convention.MIV) -> CameraParams:
    intr = Intrinsics(focal, focal, (width - 1) / 2.0, (height - 1) / 2.0, width, height)
    return CameraParams(cam_id, intr, Pose(yaw, pitch, roll, position, convention))


def random_scene(rng: np.random.Generator, n: int, sh_degree: int = 0,
                 depth_range=(1.5, 4.0), opacity_range=(0.2, 0.95),
                 log_scale_range=(-4.5, -2.5)) -> GaussianScene:
    mu = np.column_stack([rng.uniform(*depth_range, n),
                          rng.uniform(-1.5, 1.5, n),
                          rng.uniform(-1.0, 1.0, n)])
    rot = rng.normal(size=(n, 4))
    rot /= np.linalg.norm(rot, axis=1, keepdims=True)
    k = (sh_degree + 1) ** 2
    sh = np.zeros((n, k, 3))
    sh[:, 0, :] = rng.uniform(0.0, 2.5, (n, 3))
    return GaussianScene(mu=mu, rot=rot,
                         log_scale=rng.uniform(*log_scale_range, (n, 3)),
                         opacity=rng.uniform(*opacity_range, n),
                         sh=sh, sh_degree=sh_degree)
