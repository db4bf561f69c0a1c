import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from varibr.camera import intrinsics, make_camera
from varibr.depth import (
    DepthMap,
    InvalidDepth,
    central_differences,
    depth_from_radial,
    fill_holes,
    orthogonal_to_radial,
    radial_gradient_to_orthogonal,
    radial_to_orthogonal,
)
from varibr.warp import pixel_grid

from conftest import random_camera


def test_radial_orthogonal_round_trip():
    rng = np.random.default_rng(0)
    cam = random_camera(rng)
    x = rng.uniform(0, 90, (100, 2))
    h = rng.uniform(1, 10, 100)
    z = radial_to_orthogonal(h, x, cam)
    assert np.all(z <= h + 1e-12)
    assert np.allclose(orthogonal_to_radial(z, x, cam), h)


def test_radial_matches_euclidean_distance():
    rng = np.random.default_rng(1)
    cam = random_camera(rng)
    x = rng.uniform(0, 90, (50, 2))
    z = rng.uniform(1, 10, 50)
    X = cam.backproject(x, z)
    assert np.allclose(orthogonal_to_radial(z, x, cam), np.linalg.norm(X - cam.C, axis=1))


def test_radial_rejects_nonpositive():
    cam = random_camera(np.random.default_rng(2))
    with pytest.raises(InvalidDepth):
        radial_to_orthogonal(np.array([1.0, 0.0]), np.zeros((2, 2)), cam)
    with pytest.raises(InvalidDepth):
        radial_gradient_to_orthogonal(np.array([-1.0]), np.zeros((1, 2)), np.zeros((1, 2)), cam)


def test_radial_gradient_finite_differences():
    rng = np.random.default_rng(3)
    h = 1e-4
    for _ in range(200):
        cam = random_camera(rng)
        x0 = rng.uniform(0, 90, 2)
        h0 = rng.uniform(1, 10)
        hx = rng.uniform(-0.05, 0.05, 2)

        def z_of(x):
            return radial_to_orthogonal(h0 + hx @ (x - x0), x[None], cam)[0]

        fd = np.array([(z_of(x0 + h * e) - z_of(x0 - h * e)) / (2 * h) for e in np.eye(2)])
        got = radial_gradient_to_orthogonal(np.array([h0]), hx[None], x0[None], cam)[0]
        assert np.allclose(got, fd, rtol=1e-6, atol=1e-9)


def test_central_differences_on_plane():
    ys, xs = np.mgrid[0:6, 0:7]
    z = 2.0 + 0.3 * xs - 0.1 * ys
    valid = np.ones_like(z, bool)
    valid[2, 3] = False
    d = central_differences(np.where(valid, z, 0), valid)
    assert np.allclose(d[valid][:, 0], 0.3)
    assert np.allclose(d[valid][:, 1], -0.1)
    assert np.all(d[2, 3] == 0)


def test_depth_map_zeroes_invalid():
    z = np.array([[1.0, -1.0], [np.nan, 2.0]])
    d = DepthMap.from_z(z)
    assert d.valid.tolist() == [[True, False], [False, True]]
    assert d.z[0, 1] == 0 and d.z[1, 0] == 0
    assert np.all(np.isfinite(d.z_x))


def test_depth_map_shape_check():
    with pytest.raises(ValueError):
        DepthMap(np.ones((3, 3)), np.zeros((3, 3)), np.ones((3, 3), bool))


def test_depth_from_radial_plane():
    cam = make_camera(intrinsics(20.0, 16, 12), np.eye(3), np.zeros(3))
    x = pixel_grid(12, 16)
    z_true = np.full((12, 16), 4.0)
    h = orthogonal_to_radial(z_true, x, cam)
    d = depth_from_radial(h, cam)
    assert np.allclose(d.z, 4.0)
    assert np.allclose(d.z_x, 0.0, atol=1e-12)


def test_fill_holes_leaves_valid_untouched():
    rng = np.random.default_rng(4)
    z = rng.uniform(2, 3, (20, 20))
    valid = rng.random((20, 20)) > 0.1
    d = DepthMap.from_z(z, valid)
    out = fill_holes(d, rng.random((20, 20, 3)))
    assert np.array_equal(out.z[valid], d.z[valid])
    assert np.array_equal(out.z_x[valid], d.z_x[valid])
    assert out.valid.all()


def test_fill_holes_constant_and_bounded():
    z = np.full((15, 15), 3.0)
    valid = np.ones_like(z, bool)
    valid[5:9, 5:9] = False
    out = fill_holes(DepthMap.from_z(z, valid), np.zeros((15, 15)))
    assert np.allclose(out.z, 3.0)


def test_fill_holes_large_hole_stays_invalid():
    z = np.full((40, 40), 3.0)
    valid = np.zeros_like(z, bool)
    valid[:, :3] = True
    out = fill_holes(DepthMap.from_z(z, valid), np.zeros((40, 40)), window=5, passes=2)
    assert out.valid[:, :7].all()
    assert not out.valid[:, 7:].any()


def test_fill_holes_respects_guide_edges():
    z = np.where(np.arange(20)[None, :] < 10, 2.0, 5.0) * np.ones((20, 1))
    guide = (np.arange(20)[None, :] >= 10).astype(float) * np.ones((20, 1))
    valid = np.ones_like(z, bool)
    valid[8:12, 9] = False
    valid[8:12, 10] = False
    out = fill_holes(DepthMap.from_z(z, valid), guide, sigma_range=0.05)
    assert np.allclose(out.z[8:12, 9], 2.0, atol=1e-6)
    assert np.allclose(out.z[8:12, 10], 5.0, atol=1e-6)


def test_fill_holes_needs_some_depth():
    with pytest.raises(InvalidDepth):
        fill_holes(DepthMap.from_z(np.zeros((4, 4))), np.zeros((4, 4)))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.0, 0.6))
def test_fill_holes_values_within_valid_range(seed, frac):
    rng = np.random.default_rng(seed)
    z = rng.uniform(1, 4, (12, 12))
    valid = rng.random((12, 12)) >= frac
    valid[0, 0] = True
    d = DepthMap.from_z(z, valid)
    out = fill_holes(d, rng.random((12, 12)))
    lo, hi = z[valid].min(), z[valid].max()
    assert np.all(out.z[out.valid] >= lo - 1e-12)
    assert np.all(out.z[out.valid] <= hi + 1e-12)
