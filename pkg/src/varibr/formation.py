"""Forward image-formation model ``V = B U``.

Each visible source pixel is one row of ``B``. Under the pixel-preserving
unit-square PSF the row holds the bilinear interpolation weights of the
target image at the warped position ``tau_k(x_m)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .warp import WarpField

SNAP = 1e-9


@dataclass(frozen=True)
class FootprintRow:
    """Target pixel ``(x, y)`` entries with their coefficients."""

    pixels: tuple[tuple[int, int], ...]
    weights: tuple[float, ...]

    def as_dict(self) -> dict[tuple[int, int], float]:
        return dict(zip(self.pixels, self.weights))


def bilinear_footprint(tau: np.ndarray, shape: tuple[int, int]):
    """Vectorized footprints for positions ``(R, 2)``.

    Returns ``(cols, weights)`` of shape ``(R, 4)``: flat target indices and
    bilinear weights, with out-of-image neighbours given weight zero and
    column zero.
    """
    H, W = shape
    tau = np.asarray(tau, dtype=float).reshape(-1, 2)
    # positions within SNAP of a pixel center are treated as exactly on it, so
    # round-off in the warp does not leak tiny weights into neighbours
    r = np.round(tau)
    tau = np.where(np.abs(tau - r) < SNAP, r, tau)
    x0 = np.floor(tau[:, 0])
    y0 = np.floor(tau[:, 1])
    fx = tau[:, 0] - x0
    fy = tau[:, 1] - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    xs = np.stack([x0, x0 + 1, x0, x0 + 1], axis=1)
    ys = np.stack([y0, y0, y0 + 1, y0 + 1], axis=1)
    w = np.stack([(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy], axis=1)
    inside = (xs >= 0) & (xs < W) & (ys >= 0) & (ys < H)
    w = np.where(inside, w, 0.0)
    cols = np.where(inside, ys * W + xs, 0)
    return cols, w


def footprint_coefficients(x_p, shape: tuple[int, int]) -> FootprintRow:
    """Footprint of a single warped source pixel centered at ``x_p``."""
    x_p = np.asarray(x_p, dtype=float)
    if not np.all(np.isfinite(x_p)):
        raise ValueError("footprint position must be finite")
    W = shape[1]
    cols, w = bilinear_footprint(x_p[None], shape)
    pixels, weights = [], []
    for c, wi in zip(cols[0], w[0]):
        if wi > 0:
            pixels.append((int(c % W), int(c // W)))
            weights.append(float(wi))
    return FootprintRow(tuple(pixels), tuple(weights))


@dataclass(frozen=True, eq=False)
class ForwardSystem:
    """Sparse forward operator over all visible source pixels.

    Rows are ordered by view, then row-major source pixel index.
    """

    B: sp.csr_matrix
    view: np.ndarray  # (R,) view id per row
    source_index: np.ndarray  # (R,) flat source pixel index within its view
    target_shape: tuple[int, int]
    source_shapes: tuple[tuple[int, int], ...]

    @property
    def n_rows(self) -> int:
        return self.B.shape[0]

    @property
    def n_target(self) -> int:
        return self.B.shape[1]

    def rows_of(self, k: int) -> np.ndarray:
        return np.nonzero(self.view == k)[0]

    def gather(self, per_view: Sequence[np.ndarray]) -> np.ndarray:
        """Stack per-view source arrays ``(H, W, ...)`` into row order."""
        out = []
        for k, arr in enumerate(per_view):
            arr = np.asarray(arr)
            flat = arr.reshape((-1,) + arr.shape[2:])
            out.append(flat[self.source_index[self.view == k]])
        return np.concatenate(out, axis=0)

    def scatter(self, values: np.ndarray, k: int, fill=0.0) -> np.ndarray:
        """Inverse of :meth:`gather` for view ``k``."""
        H, W = self.source_shapes[k]
        values = np.asarray(values)
        out = np.full((H * W,) + values.shape[1:], fill, dtype=values.dtype)
        sel = self.view == k
        out[self.source_index[sel]] = values[sel]
        return out.reshape((H, W) + values.shape[1:])


def assemble_system(fields: Sequence[WarpField], target_shape: tuple[int, int]) -> ForwardSystem:
    H, W = target_shape
    cols_all, w_all, view, src = [], [], [], []
    for k, f in enumerate(fields):
        idx = np.flatnonzero(f.visible)
        tau = f.tau.reshape(-1, 2)[idx]
        cols, w = bilinear_footprint(tau, target_shape)
        cols_all.append(cols)
        w_all.append(w)
        view.append(np.full(idx.size, k, dtype=np.int64))
        src.append(idx)
    cols = np.concatenate(cols_all) if cols_all else np.zeros((0, 4), np.int64)
    w = np.concatenate(w_all) if w_all else np.zeros((0, 4))
    R = cols.shape[0]
    rows = np.repeat(np.arange(R), 4)
    keep = w.reshape(-1) > 0
    B = sp.csr_matrix(
        (w.reshape(-1)[keep], (rows[keep], cols.reshape(-1)[keep])), shape=(R, H * W)
    )
    B.sort_indices()
    return ForwardSystem(
        B=B,
        view=np.concatenate(view) if view else np.zeros(0, np.int64),
        source_index=np.concatenate(src) if src else np.zeros(0, np.int64),
        target_shape=(H, W),
        source_shapes=tuple(f.shape for f in fields),
    )


def _as_columns(x: np.ndarray, n: int, what: str) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[0] == n and x.ndim <= 2:
        return x
    if x.ndim >= 2 and x.shape[0] * x.shape[1] == n:
        return x.reshape((n,) + x.shape[2:])
    raise ValueError(f"{what} has shape {x.shape}, expected leading size {n}")


def apply_B(system: ForwardSystem, U: np.ndarray) -> np.ndarray:
    """``B U`` for a target image given flat ``(N[, C])`` or as ``(H, W[, C])``."""
    return system.B @ _as_columns(U, system.n_target, "U")


def apply_B_adjoint(system: ForwardSystem, V: np.ndarray) -> np.ndarray:
    """``B^T V``, returned flat ``(N[, C])``."""
    V = np.asarray(V, dtype=float)
    if V.shape[0] != system.n_rows:
        raise ValueError(f"V has {V.shape[0]} rows, expected {system.n_rows}")
    return system.B.T @ V
