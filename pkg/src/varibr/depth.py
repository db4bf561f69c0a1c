"""Per-view depth maps: radial/orthogonal conversion and hole filling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import PinholeCamera, extend_homogeneous


class InvalidDepth(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class DepthMap:
    """Orthogonal depth ``z`` with its image-space derivative ``z_x``.

    ``z_x[..., 0]`` is dz/dx (along columns), ``z_x[..., 1]`` is dz/dy.
    Invalid pixels hold ``z = 0`` and ``z_x = 0``.
    """

    z: np.ndarray
    z_x: np.ndarray
    valid: np.ndarray
    sigma_z2: float = 0.0

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float)
        valid = np.asarray(self.valid, dtype=bool) & np.isfinite(z) & (z > 0)
        z_x = np.asarray(self.z_x, dtype=float)
        if z_x.shape != z.shape + (2,):
            raise ValueError(f"z_x shape {z_x.shape} does not match depth shape {z.shape}")
        z = np.where(valid, z, 0.0)
        z_x = np.where(valid[..., None] & np.isfinite(z_x), z_x, 0.0)
        for name, arr in (("z", z), ("z_x", z_x), ("valid", valid)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "sigma_z2", float(self.sigma_z2))

    @property
    def height(self) -> int:
        return self.z.shape[0]

    @property
    def width(self) -> int:
        return self.z.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.z.shape

    @classmethod
    def from_z(cls, z, valid=None, sigma_z2: float = 0.0) -> "DepthMap":
        """Build a map whose derivative comes from central differences of ``z``."""
        z = np.asarray(z, dtype=float)
        if valid is None:
            valid = np.isfinite(z) & (z > 0)
        valid = np.asarray(valid, bool) & np.isfinite(z) & (z > 0)
        return cls(z, central_differences(np.where(valid, z, 0.0), valid), valid, sigma_z2)

    def with_sigma(self, sigma_z2: float) -> "DepthMap":
        return DepthMap(self.z, self.z_x, self.valid, sigma_z2)


def central_differences(z: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Image-space derivative of ``z`` using only valid neighbours.

    Central differences where both neighbours are valid, one-sided where only
    one is, zero where neither is.
    """
    out = np.zeros(z.shape + (2,))
    for axis, comp in ((1, 0), (0, 1)):
        zp = np.zeros_like(z)
        zm = np.zeros_like(z)
        vp = np.zeros_like(valid)
        vm = np.zeros_like(valid)
        sl_hi = [slice(None)] * 2
        sl_lo = [slice(None)] * 2
        sl_hi[axis] = slice(1, None)
        sl_lo[axis] = slice(None, -1)
        zp[tuple(sl_lo)] = z[tuple(sl_hi)]
        vp[tuple(sl_lo)] = valid[tuple(sl_hi)]
        zm[tuple(sl_hi)] = z[tuple(sl_lo)]
        vm[tuple(sl_hi)] = valid[tuple(sl_lo)]
        d = np.zeros_like(z)
        both = vp & vm
        d[both] = (zp[both] - zm[both]) / 2.0
        only_p = vp & ~vm
        d[only_p] = zp[only_p] - z[only_p]
        only_m = vm & ~vp
        d[only_m] = z[only_m] - zm[only_m]
        out[..., comp] = np.where(valid, d, 0.0)
    return out


def _ray_norm(x: np.ndarray, cam: PinholeCamera):
    r = extend_homogeneous(x) @ cam.K_inv.T
    return r, np.linalg.norm(r, axis=-1)


def radial_to_orthogonal(h, x, cam: PinholeCamera):
    """Orthogonal depth ``z = h / |K^-1 x_bar|`` from radial distance ``h``."""
    h = np.asarray(h, dtype=float)
    if np.any(h <= 0):
        raise InvalidDepth("radial depth must be strictly positive")
    _, n = _ray_norm(x, cam)
    return h / n


def orthogonal_to_radial(z, x, cam: PinholeCamera):
    _, n = _ray_norm(x, cam)
    return np.asarray(z, dtype=float) * n


def radial_gradient_to_orthogonal(h, h_x, x, cam: PinholeCamera):
    """Convert the image-space derivative of a radial depth field to ``z_x``."""
    h = np.asarray(h, dtype=float)
    if np.any(h <= 0):
        raise InvalidDepth("radial depth must be strictly positive")
    h_x = np.asarray(h_x, dtype=float)
    r, n = _ray_norm(x, cam)
    # d|r|/dx_i * |r| = r . K^-1[:, i]
    proj = r @ cam.K_inv[:, :2]
    return (h_x - (h / n**2)[..., None] * proj) / n[..., None]


def depth_from_radial(h: np.ndarray, cam: PinholeCamera, sigma_z2: float = 0.0) -> DepthMap:
    """Full radial depth image (non-positive = invalid) to a :class:`DepthMap`."""
    h = np.asarray(h, dtype=float)
    H, W = h.shape
    ys, xs = np.mgrid[0:H, 0:W]
    pix = np.stack([xs, ys], axis=-1).astype(float)
    valid = np.isfinite(h) & (h > 0)
    _, n = _ray_norm(pix, cam)
    z = np.where(valid, h / n, 0.0)
    return DepthMap.from_z(z, valid, sigma_z2)


def fill_holes(
    depth: DepthMap,
    guide: np.ndarray,
    sigma_spatial: float = 3.0,
    sigma_range: float = 0.1,
    window: int = 7,
    passes: int = 2,
) -> DepthMap:
    """Fill invalid pixels with a joint-bilateral average of valid neighbours.

    Each pass fills every invalid pixel that has at least one valid pixel in
    its ``window x window`` neighbourhood; spatial weights are Gaussian in
    pixel distance, range weights Gaussian in guide intensity difference.
    Valid pixels are never modified. Holes wider than ``passes * window // 2``
    stay invalid.
    """
    if not depth.valid.any():
        raise InvalidDepth("depth map has no valid pixel")
    if depth.valid.all():
        return depth
    guide = np.asarray(guide, dtype=float)
    if guide.ndim == 3:
        guide = guide @ np.array([0.2126, 0.7152, 0.0722])[: guide.shape[2]]
    if guide.shape != depth.shape:
        raise ValueError("guide image and depth map dimensions differ")

    r = window // 2
    H, W = depth.shape
    z = depth.z.copy()
    valid = depth.valid.copy()
    gpad = np.pad(guide, r, mode="edge")
    for _ in range(passes):
        zpad = np.pad(z, r)
        vpad = np.pad(valid, r)
        num = np.zeros((H, W))
        den = np.zeros((H, W))
        for dy in range(-r, r + 1):
            for dx in range(-r, r + 1):
                ws = np.exp(-(dx * dx + dy * dy) / (2 * sigma_spatial**2))
                zn = zpad[r + dy : r + dy + H, r + dx : r + dx + W]
                vn = vpad[r + dy : r + dy + H, r + dx : r + dx + W]
                gn = gpad[r + dy : r + dy + H, r + dx : r + dx + W]
                w = ws * np.exp(-((gn - guide) ** 2) / (2 * sigma_range**2)) * vn
                num += w * zn
                den += w
        fill = ~valid & (den > 0)
        if not fill.any():
            break
        z[fill] = num[fill] / den[fill]
        valid = valid | fill

    z_x = depth.z_x.copy()
    filled = valid & ~depth.valid
    z_x[filled] = central_differences(z, valid)[filled]
    return DepthMap(z, z_x, valid, depth.sigma_z2)
