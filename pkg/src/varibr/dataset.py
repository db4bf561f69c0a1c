from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any, Optional

import numpy as np

from .camera import PinholeCamera
from .depth import DepthMap


@dataclass(eq=False)
class Dataset:
    """Posed source views with per-view depth, plus the target camera.

    Images are linear-light float arrays ``(H, W, 3)`` in ``[0, 1]``.
    ``visibility`` (synthetic scenes only) holds the analytic per-view masks
    of source pixels seen by the target camera.
    """

    images: list[np.ndarray]
    cameras: list[PinholeCamera]
    depths: list[DepthMap]
    target_camera: PinholeCamera
    target_shape: tuple[int, int]
    target_image: Optional[np.ndarray] = None
    visibility: Optional[list[np.ndarray]] = None
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.images)
        if len(self.cameras) != n or len(self.depths) != n:
            raise ValueError("images, cameras and depths must have the same length")
        for k, (img, d) in enumerate(zip(self.images, self.depths)):
            if img.shape[:2] != d.shape:
                raise ValueError(f"view {k}: image {img.shape[:2]} and depth {d.shape} dimensions differ")
        self.target_shape = tuple(int(v) for v in self.target_shape)

    @property
    def n_views(self) -> int:
        return len(self.images)

    def views(self) -> list[tuple[DepthMap, PinholeCamera]]:
        return list(zip(self.depths, self.cameras))

    def with_depths(self, depths: list[DepthMap]) -> "Dataset":
        return replace(self, depths=list(depths))

    def depth_extent(self) -> tuple[float, float]:
        vals = [d.z[d.valid] for d in self.depths if d.valid.any()]
        if not vals:
            return 0.0, 0.0
        allz = np.concatenate(vals)
        return float(allz.min()), float(allz.max())
