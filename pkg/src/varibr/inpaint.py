"""Push/pull pyramid inpainting of target pixels no source view covers."""

from __future__ import annotations

import numpy as np


class NothingCovered(ValueError):
    pass


def _push(img: np.ndarray, mask: np.ndarray):
    H, W = mask.shape
    Hc, Wc = (H + 1) // 2, (W + 1) // 2
    ph, pw = 2 * Hc - H, 2 * Wc - W
    pad = ((0, ph), (0, pw)) + ((0, 0),) * (img.ndim - 2)
    m = np.pad(mask.astype(float), ((0, ph), (0, pw)))
    v = np.pad(img * mask.reshape(mask.shape + (1,) * (img.ndim - 2)), pad)
    m4 = m.reshape(Hc, 2, Wc, 2)
    v4 = v.reshape((Hc, 2, Wc, 2) + img.shape[2:])
    cnt = m4.sum(axis=(1, 3))
    tot = v4.sum(axis=(1, 3))
    covered = cnt > 0
    safe = np.where(covered, cnt, 1.0).reshape(cnt.shape + (1,) * (img.ndim - 2))
    return tot / safe, covered


def _upsample(coarse: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Bilinear resampling of a coarse level onto the finer grid.

    Coarse pixel ``j`` is centered at fine coordinate ``2 j + 0.5``.
    """
    H, W = shape
    Hc, Wc = coarse.shape[:2]

    def axis_weights(n, nc):
        c = (np.arange(n) - 0.5) / 2.0
        c = np.clip(c, 0, nc - 1)
        i0 = np.floor(c).astype(np.int64)
        i1 = np.minimum(i0 + 1, nc - 1)
        return i0, i1, c - i0

    y0, y1, fy = axis_weights(H, Hc)
    x0, x1, fx = axis_weights(W, Wc)
    extra = (1,) * (coarse.ndim - 2)
    fy = fy.reshape((-1, 1) + extra)
    fx = fx.reshape((1, -1) + extra)
    top = coarse[y0][:, x0] * (1 - fx) + coarse[y0][:, x1] * fx
    bot = coarse[y1][:, x0] * (1 - fx) + coarse[y1][:, x1] * fx
    return top * (1 - fy) + bot * fy


def push_pull_inpaint(image: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Fill pixels where ``mask`` is False by pyramid diffusion.

    Push: each coarser level averages the covered pixels of 2x2 blocks.
    Pull: from the coarsest level down, holes take the bilinearly upsampled
    coarser value. Covered pixels are returned unchanged and every filled
    value is a convex combination of covered values.
    """
    image = np.asarray(image, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != image.shape[:2]:
        raise ValueError("mask and image dimensions differ")
    if not mask.any():
        raise NothingCovered("push/pull needs at least one covered pixel")
    if mask.all():
        return image.copy()

    levels = [(image * mask.reshape(mask.shape + (1,) * (image.ndim - 2)), mask)]
    while not levels[-1][1].all():
        img, m = levels[-1]
        if m.shape == (1, 1):
            break
        levels.append(_push(img, m))

    filled = levels[-1][0]
    for img, m in reversed(levels[:-1]):
        up = _upsample(filled, m.shape)
        mm = m.reshape(m.shape + (1,) * (img.ndim - 2))
        filled = np.where(mm, img, up)
    return np.where(mask.reshape(mask.shape + (1,) * (image.ndim - 2)), image, filled)
