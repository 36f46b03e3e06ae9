import os
import sys

import numpy as np
import pytest

current_dir = os.path.dirname(os.path.abspath(__file__))
if current_dir not in sys.path:
    sys.path.insert(0, current_dir)

from src.align import AlignmentConfig
from src.scenegen import SceneSpec, camera_pose, default_intrinsics, generate_scene, generate_trajectory, preset


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_k():
    """320x256 camera: divisible by 2^4 for four-level pyramids"""
    return default_intrinsics(320, 256, 80.0)


@pytest.fixture(scope="session")
def small_align_config():
    return AlignmentConfig(levels_total=4, levels_used=3, iters_per_level=10)


@pytest.fixture(scope="session")
def street_mesh():
    spec = SceneSpec(
        street_length=120.0, sidewalk_width=2.0, building_density=6.0,
        pole_count=16, sign_count=8, marking_count=20, nature_count=6, seed=3,
    )
    return generate_scene(spec)


@pytest.fixture(scope="session")
def street_pose():
    return camera_pose((30.0, -1.75, 1.5), 0.0)


@pytest.fixture(scope="session")
def urban_street():
    """(mesh, 640x480 camera, 200 ground-truth poses) of the urban-street preset"""
    scene, trajectory, _ = preset("urban-street")
    return generate_scene(scene), default_intrinsics(), generate_trajectory(trajectory)


@pytest.fixture(scope="session")
def qt_app():
    from PyQt6.QtCore import QCoreApplication
    app = QCoreApplication.instance() or QCoreApplication([])
    yield app
