"""End-to-end rendering: warps, forward system, weights, solve, inpaint."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dataset import Dataset
from .energy import (
    RenderConfig,
    SolveResult,
    minimize,
    source_gradients,
    weight_diagonal,
)
from .formation import ForwardSystem, apply_B_adjoint, assemble_system
from .inpaint import push_pull_inpaint
from .metrics import dssim, psnr
from .warp import TargetDepth, WarpField, build_warp_fields

log = logging.getLogger(__name__)


class RenderError(RuntimeError):
    pass


@dataclass(eq=False)
class RenderResult:
    image: np.ndarray  # (H, W, 3) linear, after inpainting
    coverage: np.ndarray  # (H, W) bool
    solve: SolveResult
    system: ForwardSystem
    warp_fields: list[WarpField]
    target_depth: TargetDepth
    threshold: float
    metrics: dict[str, float] = field(default_factory=dict)


def default_threshold(ds: Dataset, config: RenderConfig) -> float:
    """1% of the farthest scene depth, widened by three depth standard deviations."""
    if config.visibility_threshold is not None:
        return float(config.visibility_threshold)
    _, zmax = ds.depth_extent()
    s2 = config.sigma_z2 if config.sigma_z2 is not None else max((d.sigma_z2 for d in ds.depths), default=0.0)
    return 0.01 * zmax + 3.0 * float(np.sqrt(s2))


def coverage_mask(system: ForwardSystem, weights: np.ndarray) -> np.ndarray:
    """Target pixels reached by at least one weighted source footprint."""
    return (apply_B_adjoint(system, weights) > 0).reshape(system.target_shape)


def splat_average(system: ForwardSystem, weights: np.ndarray, V: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Weighted average of source values pushed to the target, holes push/pull filled."""
    H, W = system.target_shape
    den = apply_B_adjoint(system, weights)
    num = apply_B_adjoint(system, weights[:, None] * V)
    covered = den > 0
    U = np.zeros_like(num)
    U[covered] = num[covered] / den[covered, None]
    mask = covered.reshape(H, W)
    img = push_pull_inpaint(U.reshape(H, W, -1), mask)
    return img.reshape(H * W, -1), mask


def run_render(ds: Dataset, config: RenderConfig) -> RenderResult:
    H, W = ds.target_shape
    theta = default_threshold(ds, config)
    depths = ds.depths
    if config.sigma_z2 is not None:
        depths = [d.with_sigma(config.sigma_z2) for d in depths]
    views = list(zip(depths, ds.cameras))
    fields, zbuf = build_warp_fields(views, ds.target_camera, (H, W), theta)
    system = assemble_system(fields, (H, W))
    if system.n_rows == 0:
        raise RenderError("no source pixel is visible from the target camera")
    log.info("%d visible source pixels over %d views", system.n_rows, ds.n_views)

    images = [np.asarray(im, float).reshape(im.shape[0], im.shape[1], -1) for im in ds.images]
    V = system.gather(images)
    gd = source_gradients(images, system)

    w0 = weight_diagonal(system, fields, None, config)
    coverage = coverage_mask(system, w0)
    if not coverage.any():
        raise RenderError("no target pixel is covered")
    U0, _ = splat_average(system, w0, V)
    w = weight_diagonal(system, fields, U0, config)

    def reweight(U):
        return weight_diagonal(system, fields, U, config)

    res = minimize(config, system, w, V, gd, U0, reweight=reweight if config.reweight_every > 0 else None)
    img = push_pull_inpaint(res.U.reshape(H, W, -1), coverage)
    out = RenderResult(img, coverage, res, system, fields, zbuf, theta)
    if ds.target_image is not None:
        out.metrics = evaluate(img, ds.target_image, coverage)
    return out


def evaluate(img: np.ndarray, reference: np.ndarray, mask: Optional[np.ndarray] = None) -> dict[str, float]:
    return {"psnr": psnr(img, reference, mask=mask), "dssim": dssim(img, reference, mask=mask)}
