import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from varibr.inpaint import NothingCovered, push_pull_inpaint


def test_full_mask_is_identity():
    img = np.random.default_rng(0).random((9, 7, 3))
    out = push_pull_inpaint(img, np.ones((9, 7), bool))
    assert np.array_equal(out, img)


def test_single_covered_pixel_floods_everything():
    img = np.zeros((13, 10, 3))
    img[4, 6] = [0.2, 0.5, 0.9]
    mask = np.zeros((13, 10), bool)
    mask[4, 6] = True
    out = push_pull_inpaint(img, mask)
    assert np.allclose(out, [0.2, 0.5, 0.9])


def test_nothing_covered():
    with pytest.raises(NothingCovered):
        push_pull_inpaint(np.zeros((4, 4)), np.zeros((4, 4), bool))


def test_shape_mismatch():
    with pytest.raises(ValueError):
        push_pull_inpaint(np.zeros((4, 4)), np.zeros((4, 5), bool))


def test_small_hole_in_ramp_is_close_to_linear():
    ys, xs = np.mgrid[0:32, 0:32]
    img = 0.01 * xs + 0.02 * ys
    mask = np.ones((32, 32), bool)
    mask[14:17, 14:17] = False
    out = push_pull_inpaint(img, mask)
    assert np.max(np.abs(out - img)) < 0.05


def test_hole_values_ignore_garbage_under_mask():
    rng = np.random.default_rng(1)
    img = rng.random((16, 16))
    mask = rng.random((16, 16)) > 0.4
    a = push_pull_inpaint(img, mask)
    b = push_pull_inpaint(np.where(mask, img, 1e6), mask)
    assert np.allclose(a, b)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 40), st.integers(1, 40), st.floats(0.02, 0.98))
def test_covered_unchanged_and_fill_in_hull(seed, H, W, frac):
    rng = np.random.default_rng(seed)
    img = rng.random((H, W, 2))
    mask = rng.random((H, W)) < frac
    mask[rng.integers(H), rng.integers(W)] = True
    out = push_pull_inpaint(img, mask)
    assert np.array_equal(out[mask], img[mask])
    lo = img[mask].min(axis=0)
    hi = img[mask].max(axis=0)
    assert np.all(out >= lo - 1e-12) and np.all(out <= hi + 1e-12)
