import numpy as np
import pytest

from varibr.camera import intrinsics, look_at, make_camera
from varibr.synth import render_scene, single_plane_scene, two_plane_scene


def random_rotation(rng):
    q = rng.standard_normal(4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def random_intrinsics(rng):
    fx, fy = rng.uniform(40, 400, 2)
    return np.array([[fx, rng.uniform(-2, 2), rng.uniform(10, 90)],
                     [0.0, fy, rng.uniform(10, 90)],
                     [0.0, 0.0, 1.0]])


def random_pair(rng):
    """Source/target cameras a small baseline apart, both facing a point ~5 units ahead."""
    center = rng.uniform(-1, 1, 3)
    aim = center + np.array([0, 0, 5.0]) + rng.uniform(-1, 1, 3)
    up = (0.0, -1.0, 0.0) + rng.uniform(-0.2, 0.2, 3)
    cam_k = look_at(center, aim, random_intrinsics(rng), up=up)
    c_u = center + rng.uniform(-0.5, 0.5, 3)
    cam_u = look_at(c_u, aim + rng.uniform(-0.5, 0.5, 3), random_intrinsics(rng), up=up)
    return cam_k, cam_u


def random_camera(rng):
    return make_camera(random_intrinsics(rng), random_rotation(rng), rng.uniform(-2, 2, 3))


def identity_camera(width=16, height=12, focal=20.0):
    return make_camera(intrinsics(focal, width, height), np.eye(3), np.zeros(3))


@pytest.fixture(scope="session")
def single_plane_ds():
    return render_scene(single_plane_scene())


@pytest.fixture(scope="session")
def two_plane_ds():
    return render_scene(two_plane_scene())


@pytest.fixture(scope="session")
def small_ds():
    """A 16x16 three-view scene small enough for dense oracles."""
    return render_scene(single_plane_scene(width=16, height=16, focal=16.0, n_views=3, supersample=2))
