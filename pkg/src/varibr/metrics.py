"""Image quality measures over an optional evaluation mask."""

from __future__ import annotations

from typing import Optional

import numpy as np
from scipy.ndimage import correlate1d

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5


def _check(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b, peak: float = 1.0, mask: Optional[np.ndarray] = None) -> float:
    """``10 log10(peak^2 / MSE)``; ``inf`` for identical inputs."""
    a, b = _check(a, b)
    d2 = (a - b) ** 2
    if mask is not None:
        mask = np.asarray(mask, bool)
        d2 = d2[mask]
    if d2.size == 0:
        raise ValueError("empty evaluation mask")
    mse = float(d2.mean())
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(peak**2 / mse))


def gaussian_kernel(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    k = np.exp(-(x**2) / (2 * sigma**2))
    return k / k.sum()


def _filter_valid(img: np.ndarray, k: np.ndarray) -> np.ndarray:
    r = k.size // 2
    out = correlate1d(correlate1d(img, k, axis=0, mode="constant"), k, axis=1, mode="constant")
    return out[r : img.shape[0] - r, r : img.shape[1] - r]


def ssim_map(a, b, peak: float = 1.0) -> np.ndarray:
    """Per-window SSIM over windows fully inside the image, averaged over channels.

    Output has shape ``(H - 10, W - 10)``; entry ``(i, j)`` is centered on
    pixel ``(i + 5, j + 5)``.
    """
    a, b = _check(a, b)
    if a.shape[0] < SSIM_WINDOW or a.shape[1] < SSIM_WINDOW:
        raise ValueError(f"image smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")
    if a.ndim == 2:
        a = a[..., None]
        b = b[..., None]
    k = gaussian_kernel()
    C1 = (0.01 * peak) ** 2
    C2 = (0.03 * peak) ** 2
    maps = []
    for c in range(a.shape[2]):
        x, y = a[..., c], b[..., c]
        mx = _filter_valid(x, k)
        my = _filter_valid(y, k)
        sxx = _filter_valid(x * x, k) - mx * mx
        syy = _filter_valid(y * y, k) - my * my
        sxy = _filter_valid(x * y, k) - mx * my
        maps.append(((2 * mx * my + C1) * (2 * sxy + C2)) / ((mx * mx + my * my + C1) * (sxx + syy + C2)))
    return np.mean(maps, axis=0)


def ssim(a, b, peak: float = 1.0, mask: Optional[np.ndarray] = None) -> float:
    m = ssim_map(a, b, peak)
    if mask is not None:
        r = SSIM_WINDOW // 2
        mask = np.asarray(mask, bool)[r:-r, r:-r]
        m = m[mask]
        if m.size == 0:
            raise ValueError("evaluation mask has no pixel away from the border")
    return float(m.mean())


def dssim(a, b, peak: float = 1.0, mask: Optional[np.ndarray] = None) -> float:
    """``1e4 * (1 - SSIM)``."""
    return 1e4 * (1.0 - ssim(a, b, peak, mask))


def gradient_magnitude(img) -> np.ndarray:
    """Central-difference gradient magnitude of the channel mean."""
    img = np.asarray(img, dtype=float)
    L = img.mean(axis=-1) if img.ndim == 3 else img
    gy, gx = np.gradient(L)
    return np.hypot(gx, gy)


def seam_gradient_excess(img, reference, seam: np.ndarray) -> float:
    """Mean gradient magnitude of ``img`` on ``seam`` minus that of ``reference``."""
    seam = np.asarray(seam, bool)
    if not seam.any():
        raise ValueError("empty seam mask")
    return float(gradient_magnitude(img)[seam].mean() - gradient_magnitude(reference)[seam].mean())
