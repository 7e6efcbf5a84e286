import numpy as np
import pytest

from src.geometry.camera import CameraIntrinsics
from tests.helpers import small_pipeline_config


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def intrinsics():
    return CameraIntrinsics(fx=500.0, fy=500.0, cx=320.0, cy=240.0, width=640, height=480)


@pytest.fixture
def small_config():
    return small_pipeline_config()
