"""Synthetic multi-view scenes of textured planes with analytic ground truth."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from .camera import PinholeCamera, extend_homogeneous, intrinsics, look_at, make_camera
from .dataset import Dataset
from .depth import DepthMap
from .warp import in_target, pixel_grid


class SceneError(ValueError):
    pass


@dataclass(frozen=True)
class Texture:
    kind: str = "sines"  # "sines" or "checker"
    n_terms: int = 6
    period: tuple[float, float] = (0.4, 1.0)  # world units
    amplitude: float = 0.35
    checker_size: float = 0.25
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("sines", "checker"):
            raise SceneError(f"unknown texture kind {self.kind!r}")
        if not 1 <= self.n_terms <= 8:
            raise SceneError("sines textures use between 1 and 8 terms")

    def evaluate(self, uv: np.ndarray) -> np.ndarray:
        """RGB values in ``[0, 1]`` at plane coordinates ``(..., 2)``."""
        rng = np.random.default_rng(self.seed)
        if self.kind == "checker":
            base = rng.uniform(0.2, 0.4, 3)
            high = rng.uniform(0.6, 0.8, 3)
            q = np.floor(uv[..., 0] / self.checker_size) + np.floor(uv[..., 1] / self.checker_size)
            odd = (q.astype(np.int64) % 2).astype(bool)
            return np.where(odd[..., None], high, base)
        base = rng.uniform(0.4, 0.6, 3)
        theta = rng.uniform(0, np.pi, self.n_terms)
        periods = rng.uniform(*self.period, self.n_terms)
        freq = np.stack([np.cos(theta), np.sin(theta)], axis=1) / periods[:, None]
        phase = rng.uniform(0, 2 * np.pi, (self.n_terms, 3))
        amp = rng.uniform(0.5, 1.0, self.n_terms)
        amp *= self.amplitude / amp.sum()
        arg = 2 * np.pi * (uv @ freq.T)  # (..., n_terms)
        out = np.empty(uv.shape[:-1] + (3,))
        for c in range(3):
            out[..., c] = base[c] + np.sin(arg + phase[:, c]) @ amp
        return out


@dataclass(frozen=True)
class Plane:
    """Points ``X`` with ``normal . X = offset``.

    ``origin`` is the texture origin (projected onto the plane) and
    ``half_extent`` limits the plane to a rectangle along its two in-plane
    axes; ``None`` makes it unbounded.
    """

    normal: tuple[float, float, float] = (0.0, 0.0, -1.0)
    offset: float = -5.0
    origin: tuple[float, float, float] = (0.0, 0.0, 5.0)
    half_extent: Optional[tuple[float, float]] = None
    texture: Texture = field(default_factory=Texture)

    @property
    def n(self) -> np.ndarray:
        n = np.asarray(self.normal, float)
        return n / np.linalg.norm(n)

    @property
    def d(self) -> float:
        return float(self.offset) / float(np.linalg.norm(self.normal))

    def axes(self) -> tuple[np.ndarray, np.ndarray]:
        n = self.n
        ref = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        e1 = ref - (ref @ n) * n
        e1 /= np.linalg.norm(e1)
        return e1, np.cross(n, e1)

    def center(self) -> np.ndarray:
        o = np.asarray(self.origin, float)
        return o - (self.n @ o - self.d) * self.n

    def local(self, X: np.ndarray) -> np.ndarray:
        e1, e2 = self.axes()
        rel = X - self.center()
        return np.stack([rel @ e1, rel @ e2], axis=-1)

    def contains(self, X: np.ndarray) -> np.ndarray:
        if self.half_extent is None:
            return np.ones(X.shape[:-1], bool)
        uv = self.local(X)
        return (np.abs(uv[..., 0]) <= self.half_extent[0]) & (np.abs(uv[..., 1]) <= self.half_extent[1])

    def intersect(self, C: np.ndarray, rays: np.ndarray) -> np.ndarray:
        """Ray parameter ``s`` with ``X = C + s * ray`` on the plane, ``inf`` if missed."""
        n = self.n
        den = rays @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            s = (self.d - n @ C) / den
        X = C + s[..., None] * rays
        hit = np.isfinite(s) & (s > 0) & self.contains(np.where(np.isfinite(X), X, 0.0))
        return np.where(hit, s, np.inf)


@dataclass(frozen=True)
class SceneSpec:
    """Planes seen by a rig of source cameras and one target camera.

    Rigs: ``"ring"`` places ``n_views`` cameras on a circle of radius
    ``baseline`` around the target, all looking at ``look_at``; ``"grid"``
    places parallel cameras on a ``grid`` lattice with spacing ``baseline``
    around the target, skipping the target slot; ``"custom"`` uses
    ``centers``, each looking at the matching entry of ``aims`` or, when
    ``aims`` is empty, at ``look_at``.
    """

    planes: tuple[Plane, ...] = (Plane(),)
    rig: str = "ring"
    n_views: int = 5
    grid: tuple[int, int] = (3, 3)
    baseline: float = 0.4
    centers: tuple[tuple[float, float, float], ...] = ()
    aims: tuple[tuple[float, float, float], ...] = ()
    target_center: tuple[float, float, float] = (0.0, 0.0, 0.0)
    look_at: tuple[float, float, float] = (0.0, 0.0, 5.0)
    width: int = 96
    height: int = 96
    focal: float = 96.0
    supersample: int = 4
    depth_noise: float = 0.0  # std as a fraction of the mean depth
    gains: tuple[float, ...] = ()  # per-view photometric gain, default 1
    seed: int = 0

    def __post_init__(self):
        if self.rig not in ("ring", "grid", "custom"):
            raise SceneError(f"unknown rig {self.rig!r}")
        if self.width < 2 or self.height < 2 or self.focal <= 0 or self.supersample < 1:
            raise SceneError("invalid image geometry")
        if self.aims and len(self.aims) != len(self.centers):
            raise SceneError("aims must match centers")
        if not self.planes:
            raise SceneError("scene needs at least one plane")
        if self.depth_noise < 0:
            raise SceneError("depth_noise must be nonnegative")


def _rig_cameras(spec: SceneSpec) -> tuple[list[PinholeCamera], PinholeCamera]:
    K = intrinsics(spec.focal, spec.width, spec.height)
    tc = np.asarray(spec.target_center, float)
    target = look_at(tc, spec.look_at, K)
    if spec.rig == "ring":
        if spec.n_views < 1:
            raise SceneError("ring rig needs at least one view")
        ang = 2 * np.pi * np.arange(spec.n_views) / spec.n_views + np.pi / 7
        centers = [tc + target.R.T @ np.array([np.cos(a), np.sin(a), 0.0]) * spec.baseline for a in ang]
        cams = [look_at(c, spec.look_at, K) for c in centers]
    elif spec.rig == "grid":
        rows, cols = spec.grid
        cams = []
        for i in range(rows):
            for j in range(cols):
                off = np.array([j - (cols - 1) / 2.0, i - (rows - 1) / 2.0, 0.0]) * spec.baseline
                if np.allclose(off, 0):
                    continue
                c = tc + target.R.T @ off
                cams.append(make_camera(K, target.R, -target.R @ c))
    else:
        if not spec.centers:
            raise SceneError("custom rig needs camera centers")
        aims = spec.aims or [spec.look_at] * len(spec.centers)
        cams = [look_at(c, a, K) for c, a in zip(spec.centers, aims)]
    return cams, target


def _first_hit(planes: Sequence[Plane], C: np.ndarray, rays: np.ndarray):
    s_all = np.stack([p.intersect(C, rays) for p in planes])
    idx = np.argmin(s_all, axis=0)
    s = np.take_along_axis(s_all, idx[None], axis=0)[0]
    return s, idx


def render_view(spec: SceneSpec, cam: PinholeCamera):
    """Supersampled image, exact orthogonal depth and depth derivative for one camera."""
    H, W, ss = spec.height, spec.width, spec.supersample
    grid = pixel_grid(H, W)
    offs = (np.arange(ss) + 0.5) / ss - 0.5
    img = np.zeros((H, W, 3))
    hits = np.zeros((H, W), dtype=np.int64)
    for oy in offs:
        for ox in offs:
            x = grid + np.array([ox, oy])
            rays = cam.rays(x)
            s, idx = _first_hit(spec.planes, cam.C, rays)
            ok = np.isfinite(s)
            hits += ok
            X = cam.C + np.where(ok, s, 0.0)[..., None] * rays
            col = np.zeros((H, W, 3))
            for i, p in enumerate(spec.planes):
                sel = ok & (idx == i)
                if sel.any():
                    col[sel] = p.texture.evaluate(p.local(X[sel]))
            img += col
    if np.any(hits < ss * ss):
        raise SceneError("some camera rays miss every plane; add an unbounded background plane")
    img /= ss * ss

    rays = cam.rays(grid)
    s, idx = _first_hit(spec.planes, cam.C, rays)
    z = s  # rays have unit orthogonal depth, so the ray parameter is z
    z_x = np.zeros((H, W, 2))
    xbar = extend_homogeneous(grid)
    for i, p in enumerate(spec.planes):
        sel = idx == i
        g = cam.K_inv.T @ cam.R @ p.n
        c0 = p.d - p.n @ cam.C
        z_x[sel] = -(z[sel] ** 2)[:, None] * g[:2][None, :] / c0
        assert np.allclose(z[sel], c0 / (xbar[sel] @ g))
    return img, DepthMap(z, z_x, np.isfinite(z), 0.0)


def analytic_visibility(spec: SceneSpec, depth: DepthMap, cam_k: PinholeCamera,
                        cam_u: PinholeCamera) -> np.ndarray:
    """Source pixels whose 3D point is the first surface hit from the target camera."""
    grid = pixel_grid(*depth.shape)
    X = cam_k.backproject(grid, depth.z)
    xh = cam_u.project_homogeneous(X)
    front = xh[..., 2] > 1e-9
    tau = xh[..., :2] / np.where(front, xh[..., 2], 1.0)[..., None]
    vis = depth.valid & front & in_target(tau, (spec.height, spec.width))
    d = X - cam_u.C
    for p in spec.planes:
        s = p.intersect(cam_u.C, d)
        vis &= ~(s < 1.0 - 1e-9)
    return vis


def plane_homography(plane: Plane, cam_k: PinholeCamera, cam_u: PinholeCamera) -> np.ndarray:
    """Homography taking source pixels on ``plane`` to target pixels."""
    n, d = plane.n, plane.d
    M = np.eye(3) + np.outer(cam_k.C - cam_u.C, n) / (d - n @ cam_k.C)
    return cam_u.K @ cam_u.R @ M @ cam_k.R.T @ cam_k.K_inv


def render_scene(spec: SceneSpec) -> Dataset:
    cams, target = _rig_cameras(spec)
    for cam in cams + [target]:
        for p in spec.planes:
            if p.n @ cam.C - p.d == 0 or (cam.to_camera_frame(p.center())[2] <= 0):
                raise SceneError("a plane is not in front of every camera")
    gains = list(spec.gains) + [1.0] * (len(cams) - len(spec.gains))
    images, depths = [], []
    for cam, g in zip(cams, gains):
        img, dm = render_view(spec, cam)
        images.append(img * g)
        depths.append(dm)
    gt, gt_depth = render_view(spec, target)
    vis = [analytic_visibility(spec, d, c, target) for d, c in zip(depths, cams)]
    ds = Dataset(
        images=images,
        cameras=cams,
        depths=depths,
        target_camera=target,
        target_shape=(spec.height, spec.width),
        target_image=gt,
        visibility=vis,
        meta={"spec": spec, "target_depth": gt_depth},
    )
    if spec.depth_noise > 0:
        zmean = float(np.mean([d.z[d.valid].mean() for d in depths]))
        ds = perturb_depths(ds, spec.depth_noise * zmean, seed=spec.seed)
    return ds


def perturb_depths(ds: Dataset, sigma: float, seed: int = 0) -> Dataset:
    """Add seeded i.i.d. Gaussian noise of std ``sigma`` to every valid depth."""
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    if sigma == 0:
        return ds
    rng = np.random.default_rng(seed)
    out = []
    for d in ds.depths:
        noise = rng.standard_normal(d.shape) * sigma
        z = np.where(d.valid, d.z + noise, 0.0)
        valid = d.valid & (z > 0)
        out.append(DepthMap(z, d.z_x, valid, sigma**2))
    res = ds.with_depths(out)
    res.meta = dict(ds.meta, depth_noise_sigma=sigma)
    return res


# ---------------------------------------------------------------------------
# stock scenes


def single_plane_scene(**kw) -> SceneSpec:
    """One unbounded textured plane 5 units away, 5-view ring rig."""
    plane = Plane(normal=(0.0, 0.0, -1.0), offset=-5.0, origin=(0.0, 0.0, 5.0),
                  texture=Texture(seed=kw.pop("texture_seed", 1)))
    return SceneSpec(planes=(plane,), **kw)


def two_plane_scene(**kw) -> SceneSpec:
    """A bounded front plane at depth 3.5 over an unbounded back plane at depth 5."""
    front = Plane(normal=(0.0, 0.0, -1.0), offset=-3.5, origin=(0.15, -0.1, 3.5),
                  half_extent=(0.75, 0.6), texture=Texture(seed=kw.pop("front_seed", 2), period=(0.2, 0.6)))
    back = Plane(normal=(0.0, 0.0, -1.0), offset=-5.0, origin=(0.0, 0.0, 5.0),
                 texture=Texture(seed=kw.pop("back_seed", 3)))
    kw.setdefault("look_at", (0.0, 0.0, 4.5))
    return SceneSpec(planes=(front, back), **kw)


def seam_scene(offset=(0.0, 0.0), n_ring: int = 3, depth_noise: float = 0.02, aim_shift: float = 2.0,
               **kw) -> SceneSpec:
    """Noisy two-plane scene whose last view only covers part of the target.

    A sparse ring of ``n_ring`` views sees the whole target; an extra camera
    at ``offset`` in the target plane is turned sideways by ``aim_shift``
    so that the left edge of its field of view runs through the image.
    """
    base = two_plane_scene(n_views=n_ring)
    ring, _ = _rig_cameras(base)
    ox, oy = float(offset[0]), float(offset[1])
    centers = tuple(tuple(float(v) for v in c.C) for c in ring) + ((ox, oy, 0.0),)
    aims = (base.look_at,) * len(ring) + ((ox + aim_shift, oy, 5.0),)
    return two_plane_scene(rig="custom", centers=centers, aims=aims, depth_noise=depth_noise, **kw)


def fov_seam_mask(ds: Dataset, view: int, margin: int = 6, edge_clearance: int = 3) -> np.ndarray:
    """Target pixels on the field-of-view boundary of one source view.

    Uses the exact target depth of a synthetic dataset.  Pixels near depth
    discontinuities of the target or within ``margin`` of the image border
    are dropped so the band only follows the field-of-view edge.
    """
    zt = ds.meta["target_depth"]
    H, W = ds.target_shape
    cam_k = ds.cameras[view]
    X = ds.target_camera.backproject(pixel_grid(H, W), zt.z)
    xh = cam_k.project_homogeneous(X)
    front = xh[..., 2] > 0
    x = xh[..., :2] / np.where(front, xh[..., 2], 1.0)[..., None]
    inside = front & in_target(x, ds.images[view].shape[:2])
    seam = ndimage.binary_dilation(inside) & ndimage.binary_dilation(~inside)
    gy, gx = np.gradient(zt.z)
    jump = np.abs(gx) + np.abs(gy) > 0.1
    seam &= ~ndimage.binary_dilation(jump, iterations=edge_clearance)
    seam[:margin] = seam[H - margin:] = False
    seam[:, :margin] = seam[:, W - margin:] = False
    return seam


def spec_to_dict(spec: SceneSpec) -> dict:
    from dataclasses import asdict

    return asdict(spec)


def spec_from_dict(d: dict) -> SceneSpec:
    d = dict(d)
    planes = []
    for p in d.pop("planes", [{}]):
        p = dict(p)
        tex = Texture(**{k: tuple(v) if isinstance(v, list) else v for k, v in p.pop("texture", {}).items()})
        for key in ("normal", "origin", "half_extent"):
            if p.get(key) is not None:
                p[key] = tuple(p[key])
        planes.append(Plane(texture=tex, **p))
    for key in ("grid", "target_center", "look_at", "gains"):
        if key in d:
            d[key] = tuple(d[key])
    for key in ("centers", "aims"):
        if key in d:
            d[key] = tuple(tuple(c) for c in d[key])
    return SceneSpec(planes=tuple(planes), **d)
