"""Source-to-target warps, their Jacobians, target depth splatting and visibility.

A source pixel ``x_m`` with orthogonal depth ``z_m`` maps to the target
homogeneous point ``x~_p = z_m A x_bar_m + b`` with
``A = K_u R_u R_k^T K_k^-1`` and ``b = K_u (R_u C_k + t_u)``; the warp is
``tau(x_m) = N_e(x~_p)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .camera import PinholeCamera, _jacobian_normalize_unchecked, extend_homogeneous
from .depth import DepthMap

EPS_BEHIND = 1e-9


class BehindCamera(ArithmeticError):
    pass


def _chain(cam_k: PinholeCamera, cam_u: PinholeCamera):
    A = cam_u.K @ cam_u.R @ cam_k.R.T @ cam_k.K_inv
    b = cam_u.K @ (cam_u.R @ cam_k.C + cam_u.t)
    return A, b


def _homogeneous_target(x, z, cam_k, cam_u):
    A, b = _chain(cam_k, cam_u)
    xbar = extend_homogeneous(x)
    xh = np.asarray(z, float)[..., None] * (xbar @ A.T) + b
    return xh, xbar, A


def _check_front(xh):
    if np.any(xh[..., 2] <= EPS_BEHIND):
        raise BehindCamera("point lies behind the target camera")


def warp_point(x_m, z_m, cam_k: PinholeCamera, cam_u: PinholeCamera):
    """Warp source pixels to the target view.

    Returns ``(tau, depth)`` where ``depth`` is the orthogonal depth of the
    3D point in the target camera. Works on single points or arrays
    ``(..., 2)`` / ``(...)``.
    """
    xh, _, _ = _homogeneous_target(x_m, z_m, cam_k, cam_u)
    _check_front(xh)
    return xh[..., :2] / xh[..., 2:3], xh[..., 2]


def warp_jacobian_spatial(x_m, z_m, z_x, cam_k: PinholeCamera, cam_u: PinholeCamera):
    """d tau / d x_m for a locally linear depth field, shape ``(..., 2, 2)``."""
    xh, xbar, A = _homogeneous_target(x_m, z_m, cam_k, cam_u)
    _check_front(xh)
    return _spatial_jacobian(xh, xbar, A, np.asarray(z_m, float), np.asarray(z_x, float))


def _spatial_jacobian(xh, xbar, A, z, z_x):
    # d x~_m / d x_m = z J_h + x_bar z_x^T
    M = xbar[..., :, None] * z_x[..., None, :]
    M[..., 0, 0] += z
    M[..., 1, 1] += z
    return _jacobian_normalize_unchecked(xh) @ (A @ M)


def warp_jacobian_depth(x_m, z_m, cam_k: PinholeCamera, cam_u: PinholeCamera):
    """d tau / d z_m, shape ``(..., 2)``."""
    xh, xbar, A = _homogeneous_target(x_m, z_m, cam_k, cam_u)
    _check_front(xh)
    return _depth_jacobian(xh, xbar, A)


def _depth_jacobian(xh, xbar, A):
    return np.einsum("...ij,...j->...i", _jacobian_normalize_unchecked(xh), xbar @ A.T)


def pixel_grid(height: int, width: int) -> np.ndarray:
    ys, xs = np.mgrid[0:height, 0:width]
    return np.stack([xs, ys], axis=-1).astype(float)


# ---------------------------------------------------------------------------
# target depth by quad splatting


@dataclass(frozen=True, eq=False)
class TargetDepth:
    """Z-buffer of the target view.

    ``z``/``valid`` are sampled at target pixel centers. ``z_fine`` is the
    underlying buffer at ``supersample`` times the resolution, kept for
    sub-pixel visibility queries; fine pixel ``i`` has its center at target
    coordinate ``(i - (s - 1) / 2) / s``.
    """

    z: np.ndarray
    valid: np.ndarray
    z_fine: np.ndarray
    supersample: int

    @property
    def shape(self) -> tuple[int, int]:
        return self.z.shape

    def sample(self, tau: np.ndarray):
        """Nearest fine-buffer depth at target positions ``tau`` (``inf`` if empty)."""
        s = self.supersample
        Hf, Wf = self.z_fine.shape
        f = s * np.asarray(tau, float) + (s - 1) / 2.0
        fx = np.clip(np.floor(f[..., 0] + 0.5).astype(np.int64), 0, Wf - 1)
        fy = np.clip(np.floor(f[..., 1] + 0.5).astype(np.int64), 0, Hf - 1)
        return self.z_fine[fy, fx]


_QUAD_CORNERS = np.array([[-0.5, -0.5], [0.5, -0.5], [0.5, 0.5], [-0.5, 0.5]])
_SMALL_BBOX = 8


def _view_quads(depth: DepthMap, cam_k: PinholeCamera, cam_u: PinholeCamera, s: int):
    """Projected quad corners (fine-grid units) and inverse target depths."""
    ys, xs = np.nonzero(depth.valid)
    if xs.size == 0:
        return np.zeros((0, 4, 2)), np.zeros((0, 4))
    centers = np.stack([xs, ys], axis=-1).astype(float)
    z = depth.z[ys, xs]
    zx = depth.z_x[ys, xs]
    corners = centers[:, None, :] + _QUAD_CORNERS[None]
    zc = z[:, None] + zx @ _QUAD_CORNERS.T
    ok = np.all(zc > 0, axis=1)
    xh, _, _ = _homogeneous_target(corners, zc, cam_k, cam_u)
    ok &= np.all(xh[..., 2] > EPS_BEHIND, axis=1)
    xh = xh[ok]
    d = xh[..., 2]
    p = xh[..., :2] / d[..., None]
    return s * p + (s - 1) / 2.0, 1.0 / d


def _edge(ax, ay, bx, by, px, py):
    return (bx - ax) * (py - ay) - (by - ay) * (px - ax)


def _owned(ax, ay, bx, by):
    # Each shared edge is traversed in opposite directions by its two
    # triangles, so an antisymmetric rule assigns it to exactly one of them.
    dx = bx - ax
    dy = by - ay
    return (dy < 0) | ((dy == 0) & (dx > 0))


def _rasterize(P: np.ndarray, invd: np.ndarray, zbuf: np.ndarray) -> None:
    """Min-accumulate triangles ``P (T, 3, 2)`` with inverse depths ``(T, 3)``."""
    if P.shape[0] == 0:
        return
    Hf, Wf = zbuf.shape
    area = _edge(P[:, 0, 0], P[:, 0, 1], P[:, 1, 0], P[:, 1, 1], P[:, 2, 0], P[:, 2, 1])
    flip = area < 0
    P = P.copy()
    invd = invd.copy()
    P[flip, 1], P[flip, 2] = P[flip, 2].copy(), P[flip, 1].copy()
    invd[flip, 1], invd[flip, 2] = invd[flip, 2].copy(), invd[flip, 1].copy()
    area = np.abs(area)
    keep = area > 1e-12
    xmin = np.maximum(np.ceil(P[..., 0].min(axis=1)), 0)
    xmax = np.minimum(np.floor(P[..., 0].max(axis=1)), Wf - 1)
    ymin = np.maximum(np.ceil(P[..., 1].min(axis=1)), 0)
    ymax = np.minimum(np.floor(P[..., 1].max(axis=1)), Hf - 1)
    keep &= (xmin <= xmax) & (ymin <= ymax)
    P, invd, area = P[keep], invd[keep], area[keep]
    xmin, xmax, ymin, ymax = xmin[keep], xmax[keep], ymin[keep], ymax[keep]
    if P.shape[0] == 0:
        return
    xmin = xmin.astype(np.int64)
    ymin = ymin.astype(np.int64)
    xmax = xmax.astype(np.int64)
    ymax = ymax.astype(np.int64)
    bw = xmax - xmin + 1
    bh = ymax - ymin + 1
    small = (bw <= _SMALL_BBOX) & (bh <= _SMALL_BBOX)

    flat = zbuf.reshape(-1)

    def test(Pt, it, at, px, py):
        x0, y0 = Pt[:, 0, 0], Pt[:, 0, 1]
        x1, y1 = Pt[:, 1, 0], Pt[:, 1, 1]
        x2, y2 = Pt[:, 2, 0], Pt[:, 2, 1]
        w0 = _edge(x1, y1, x2, y2, px, py)
        w1 = _edge(x2, y2, x0, y0, px, py)
        w2 = _edge(x0, y0, x1, y1, px, py)
        inside = (
            ((w0 > 0) | ((w0 == 0) & _owned(x1, y1, x2, y2)))
            & ((w1 > 0) | ((w1 == 0) & _owned(x2, y2, x0, y0)))
            & ((w2 > 0) | ((w2 == 0) & _owned(x0, y0, x1, y1)))
        )
        inv = (w0 * it[:, 0] + w1 * it[:, 1] + w2 * it[:, 2]) / at
        return inside, inv

    if small.any():
        Ps, its, ats = P[small], invd[small], area[small]
        xs0, ys0, bws, bhs = xmin[small], ymin[small], bw[small], bh[small]
        S_w, S_h = int(bws.max()), int(bhs.max())
        for oy in range(S_h):
            for ox in range(S_w):
                sel = (ox < bws) & (oy < bhs)
                if not sel.any():
                    continue
                px = (xs0[sel] + ox).astype(float)
                py = (ys0[sel] + oy).astype(float)
                inside, inv = test(Ps[sel], its[sel], ats[sel], px, py)
                inside &= inv > 0
                if inside.any():
                    idx = (ys0[sel] + oy)[inside] * Wf + (xs0[sel] + ox)[inside]
                    np.minimum.at(flat, idx, 1.0 / inv[inside])

    for i in np.nonzero(~small)[0]:
        gy, gx = np.mgrid[ymin[i] : ymax[i] + 1, xmin[i] : xmax[i] + 1]
        gx = gx.reshape(-1)
        gy = gy.reshape(-1)
        n = gx.size
        inside, inv = test(
            np.broadcast_to(P[i], (n, 3, 2)),
            np.broadcast_to(invd[i], (n, 3)),
            np.full(n, area[i]),
            gx.astype(float),
            gy.astype(float),
        )
        inside &= inv > 0
        if inside.any():
            np.minimum.at(flat, gy[inside] * Wf + gx[inside], 1.0 / inv[inside])


def splat_target_depth(
    views: Sequence[tuple[DepthMap, PinholeCamera]],
    cam_u: PinholeCamera,
    shape: tuple[int, int],
    supersample: int = 3,
) -> TargetDepth:
    """Target-view depth by z-buffered splatting of per-pixel 3D quads.

    Every valid source pixel becomes a quad spanning its footprint, lifted to
    3D with the locally linear depth ``z + z_x . offset``; the projected quad
    is rasterized as two triangles with perspective-correct depth and the
    nearest depth is kept.
    """
    if supersample < 1 or supersample % 2 == 0:
        raise ValueError("supersample must be a positive odd integer")
    H, W = shape
    s = supersample
    zbuf = np.full((H * s, W * s), np.inf)
    for depth, cam_k in views:
        corners, invd = _view_quads(depth, cam_k, cam_u, s)
        for tri in ((0, 1, 2), (0, 2, 3)):
            _rasterize(corners[:, tri, :], invd[:, tri], zbuf)
    c = (s - 1) // 2
    z = zbuf[c::s, c::s]
    valid = np.isfinite(z)
    z = np.where(valid, z, 0.0)
    return TargetDepth(z, valid, zbuf, s)


# ---------------------------------------------------------------------------
# visibility and warp fields


@dataclass(frozen=True, eq=False)
class WarpField:
    """Per-source-pixel warp data for one view.

    ``defined`` marks pixels with a valid depth in front of the target camera;
    ``visible`` further requires the warp to land inside the target and pass
    the z-buffer test. Quantities on undefined pixels are zero.
    """

    tau: np.ndarray  # (H, W, 2)
    target_z: np.ndarray  # (H, W) orthogonal depth in the target camera
    J_spatial: np.ndarray  # (H, W, 2, 2)
    dtau_dz: np.ndarray  # (H, W, 2)
    defined: np.ndarray  # (H, W)
    visible: np.ndarray  # (H, W)
    deformation_weight: np.ndarray  # (H, W)
    sigma_z2: float
    target_shape: tuple[int, int]

    @property
    def shape(self) -> tuple[int, int]:
        return self.visible.shape

    @property
    def n_visible(self) -> int:
        return int(self.visible.sum())


def in_target(tau: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    H, W = shape
    return (
        (tau[..., 0] >= -0.5) & (tau[..., 0] < W - 0.5) & (tau[..., 1] >= -0.5) & (tau[..., 1] < H - 0.5)
    )


def _warp_all(depth: DepthMap, cam_k: PinholeCamera, cam_u: PinholeCamera):
    grid = pixel_grid(*depth.shape)
    xh, xbar, A = _homogeneous_target(grid, depth.z, cam_k, cam_u)
    defined = depth.valid & (xh[..., 2] > EPS_BEHIND)
    safe = np.where(defined[..., None], xh, np.array([0.0, 0.0, 1.0]))
    tau = safe[..., :2] / safe[..., 2:3]
    return tau, safe, xbar, A, defined


def visibility_mask(
    depth: DepthMap,
    cam_k: PinholeCamera,
    target_depth: TargetDepth,
    cam_u: PinholeCamera,
    threshold: float,
) -> np.ndarray:
    """Source pixels seen by the target camera.

    A pixel is visible when its warp lands inside the target image, the
    target z-buffer is set there, and the point's target depth does not
    exceed the buffered depth by more than ``threshold``.
    """
    tau, xh, _, _, defined = _warp_all(depth, cam_k, cam_u)
    return _visible(tau, xh[..., 2], defined, target_depth, threshold)


def _visible(tau, zt, defined, target_depth: TargetDepth, threshold: float):
    vis = defined & in_target(tau, target_depth.shape)
    zu = target_depth.sample(np.where(vis[..., None], tau, 0.0))
    vis &= np.isfinite(zu)
    vis &= zt <= zu + threshold
    return vis


def build_warp_field(
    depth: DepthMap,
    cam_k: PinholeCamera,
    cam_u: PinholeCamera,
    target_depth: TargetDepth,
    threshold: float,
) -> WarpField:
    tau, xh, xbar, A, defined = _warp_all(depth, cam_k, cam_u)
    J = _spatial_jacobian(xh, xbar, A, depth.z, depth.z_x)
    dz = _depth_jacobian(xh, xbar, A)
    vis = _visible(tau, xh[..., 2], defined, target_depth, threshold)
    J = np.where(defined[..., None, None], J, 0.0)
    dz = np.where(defined[..., None], dz, 0.0)
    det = np.abs(J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0])
    return WarpField(
        tau=np.where(defined[..., None], tau, 0.0),
        target_z=np.where(defined, xh[..., 2], 0.0),
        J_spatial=J,
        dtau_dz=dz,
        defined=defined,
        visible=vis,
        deformation_weight=det,
        sigma_z2=depth.sigma_z2,
        target_shape=tuple(target_depth.shape),
    )


def build_warp_fields(
    views: Sequence[tuple[DepthMap, PinholeCamera]],
    cam_u: PinholeCamera,
    shape: tuple[int, int],
    threshold: float,
    supersample: int = 3,
) -> tuple[list[WarpField], TargetDepth]:
    target_depth = splat_target_depth(views, cam_u, shape, supersample)
    fields = [build_warp_field(d, c, cam_u, target_depth, threshold) for d, c in views]
    return fields, target_depth
