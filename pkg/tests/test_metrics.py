import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from varibr.metrics import dssim, gaussian_kernel, psnr, seam_gradient_excess, ssim, ssim_map

from oracles import psnr_oracle, ssim_oracle


@pytest.fixture(scope="module")
def pair():
    rng = np.random.default_rng(0)
    a = rng.random((24, 20, 3))
    b = np.clip(a + 0.05 * rng.standard_normal(a.shape), 0, 1)
    mask = rng.random((24, 20)) > 0.3
    return a, b, mask


def test_psnr_matches_oracle(pair):
    a, b, mask = pair
    assert abs(psnr(a, b) - psnr_oracle(a, b)) < 1e-9
    assert abs(psnr(a, b, mask=mask) - psnr_oracle(a, b, mask=mask)) < 1e-9
    assert abs(psnr(a * 255, b * 255, peak=255) - psnr_oracle(a, b)) < 1e-9


def test_ssim_matches_oracle(pair):
    a, b, mask = pair
    assert abs(ssim(a, b) - ssim_oracle(a, b)) < 1e-9
    assert abs(ssim(a, b, mask=mask) - ssim_oracle(a, b, mask=mask)) < 1e-9
    assert abs(ssim(a[..., 0], b[..., 0]) - ssim_oracle(a[..., 0], b[..., 0])) < 1e-9


def test_identical_images():
    a = np.random.default_rng(1).random((16, 16, 3))
    assert psnr(a, a) == float("inf")
    assert dssim(a, a) == pytest.approx(0.0, abs=1e-9)


def test_ssim_map_shape():
    a = np.zeros((20, 30))
    assert ssim_map(a, a).shape == (10, 20)


def test_kernel_normalized():
    k = gaussian_kernel()
    assert k.size == 11 and np.isclose(k.sum(), 1.0) and np.argmax(k) == 5


def test_errors():
    with pytest.raises(ValueError):
        psnr(np.zeros((4, 4)), np.zeros((4, 5)))
    with pytest.raises(ValueError):
        ssim(np.zeros((8, 8)), np.zeros((8, 8)))
    with pytest.raises(ValueError):
        psnr(np.zeros((4, 4)), np.ones((4, 4)), mask=np.zeros((4, 4), bool))


def test_seam_excess_zero_for_reference():
    rng = np.random.default_rng(2)
    a = rng.random((12, 12, 3))
    seam = np.zeros((12, 12), bool)
    seam[:, 5] = True
    assert seam_gradient_excess(a, a, seam) == 0.0
    step = a.copy()
    step[:, 6:] += 0.2
    assert seam_gradient_excess(step, a, seam) > 0
    with pytest.raises(ValueError):
        seam_gradient_excess(a, a, np.zeros((12, 12), bool))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_symmetry_and_bounds(seed):
    rng = np.random.default_rng(seed)
    a = rng.random((14, 13))
    b = rng.random((14, 13))
    assert np.isclose(psnr(a, b), psnr(b, a))
    s = ssim(a, b)
    assert np.isclose(s, ssim(b, a))
    assert -1 <= s <= 1
