"""Pinhole cameras and homogeneous-coordinate helpers.

Pixel coordinates are ``(x, y)`` = (column, row) with pixel centers on
integers. A world point ``X`` maps to the homogeneous image point
``x~ = K (R X + t)`` whose last component is the orthogonal depth.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

EPS_INFINITY = 1e-12
ORTHONORMAL_TOL = 1e-9

# Jacobian of (x, y) -> (x, y, 1); constant.
J_H = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])


class CameraError(ValueError):
    """Raised for invalid intrinsics or rotation matrices."""


class PointAtInfinity(ArithmeticError):
    """Raised when normalizing a homogeneous point with a vanishing last component."""


@dataclass(frozen=True, eq=False)
class PinholeCamera:
    K: np.ndarray
    R: np.ndarray
    t: np.ndarray
    C: np.ndarray = field(init=False)
    K_inv: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        K = np.array(self.K, dtype=float)
        R = np.array(self.R, dtype=float)
        t = np.array(self.t, dtype=float).reshape(3)
        if K.shape != (3, 3) or R.shape != (3, 3):
            raise CameraError("K and R must be 3x3")
        if not np.all(np.isfinite(K)) or not np.all(np.isfinite(R)) or not np.all(np.isfinite(t)):
            raise CameraError("camera parameters must be finite")
        if np.max(np.abs(R.T @ R - np.eye(3))) >= ORTHONORMAL_TOL:
            raise CameraError("R is not orthonormal")
        if np.any(np.tril(K, -1) != 0.0) or K[2, 2] != 1.0:
            raise CameraError("K must be upper-triangular with K[2, 2] == 1")
        if K[0, 0] <= 0.0 or K[1, 1] <= 0.0:
            raise CameraError("focal lengths must be strictly positive")
        for name, arr in (("K", K), ("R", R), ("t", t)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        C = -R.T @ t
        K_inv = np.linalg.inv(K)
        C.setflags(write=False)
        K_inv.setflags(write=False)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "K_inv", K_inv)

    def to_camera_frame(self, X: np.ndarray) -> np.ndarray:
        """World points ``(..., 3)`` to camera-frame coordinates."""
        return np.asarray(X) @ self.R.T + self.t

    def project_homogeneous(self, X: np.ndarray) -> np.ndarray:
        """World points ``(..., 3)`` to homogeneous image points ``K (R X + t)``."""
        return self.to_camera_frame(X) @ self.K.T

    def backproject(self, x: np.ndarray, z: np.ndarray) -> np.ndarray:
        """Pixels ``(..., 2)`` at orthogonal depth ``z`` to world points."""
        xh = extend_homogeneous(x) * np.asarray(z, dtype=float)[..., None]
        return xh @ (self.R.T @ self.K_inv).T + self.C

    def rays(self, x: np.ndarray) -> np.ndarray:
        """World-frame ray directions ``R^T K^-1 x_bar`` (unit orthogonal depth)."""
        return extend_homogeneous(x) @ (self.R.T @ self.K_inv).T


def make_camera(K, R, t) -> PinholeCamera:
    return PinholeCamera(np.asarray(K, float), np.asarray(R, float), np.asarray(t, float))


def look_at(center, target, K, up=(0.0, -1.0, 0.0)) -> PinholeCamera:
    """Camera at ``center`` whose optical axis points at ``target``.

    Image ``y`` grows along ``-up``; with the default up vector a camera at the
    origin looking down ``+z`` gets ``R = I``.
    """
    center = np.asarray(center, float)
    fwd = np.asarray(target, float) - center
    fwd /= np.linalg.norm(fwd)
    down = -np.asarray(up, float)
    right = np.cross(down, fwd)
    n = np.linalg.norm(right)
    if n < 1e-12:
        raise CameraError("up vector is parallel to the viewing direction")
    right /= n
    down = np.cross(fwd, right)
    R = np.stack([right, down, fwd])
    return make_camera(K, R, -R @ center)


def intrinsics(focal: float, width: int, height: int) -> np.ndarray:
    """Square-pixel intrinsics with the principal point at the image center."""
    return np.array(
        [[focal, 0.0, (width - 1) / 2.0], [0.0, focal, (height - 1) / 2.0], [0.0, 0.0, 1.0]]
    )


def normalize_euclidean(xh: np.ndarray) -> np.ndarray:
    """``N_e``: divide homogeneous points ``(..., 3)`` by their last component."""
    xh = np.asarray(xh, dtype=float)
    w = xh[..., 2]
    if np.any(np.abs(w) <= EPS_INFINITY):
        raise PointAtInfinity("homogeneous point has a vanishing last component")
    return xh[..., :2] / w[..., None]


def extend_homogeneous(x: np.ndarray) -> np.ndarray:
    """``N_h``: append a unit third coordinate to points ``(..., 2)``."""
    x = np.asarray(x, dtype=float)
    return np.concatenate([x, np.ones(x.shape[:-1] + (1,))], axis=-1)


def jacobian_normalize(xh: np.ndarray) -> np.ndarray:
    """Jacobian of ``N_e`` at ``xh``, shape ``(..., 2, 3)``."""
    xh = np.asarray(xh, dtype=float)
    w = xh[..., 2]
    if np.any(np.abs(w) <= EPS_INFINITY):
        raise PointAtInfinity("homogeneous point has a vanishing last component")
    return _jacobian_normalize_unchecked(xh)


def _jacobian_normalize_unchecked(xh: np.ndarray) -> np.ndarray:
    w = xh[..., 2]
    J = np.zeros(xh.shape[:-1] + (2, 3))
    J[..., 0, 0] = 1.0 / w
    J[..., 1, 1] = 1.0 / w
    J[..., 0, 2] = -xh[..., 0] / w**2
    J[..., 1, 2] = -xh[..., 1] / w**2
    return J


def fundamental_matrix(cam_k: PinholeCamera, cam_u: PinholeCamera) -> np.ndarray:
    """``F`` with ``x_u^T F x_k = 0`` for corresponding pixels."""
    R = cam_u.R @ cam_k.R.T
    t = cam_u.t - R @ cam_k.t
    tx = np.array([[0.0, -t[2], t[1]], [t[2], 0.0, -t[0]], [-t[1], t[0], 0.0]])
    return cam_u.K_inv.T @ tx @ R @ cam_k.K_inv
