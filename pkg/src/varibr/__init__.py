"""Variational novel-view synthesis from posed images and depth maps."""

from .camera import PinholeCamera, make_camera
from .dataset import Dataset
from .depth import DepthMap
from .energy import STRUCTURED, UNSTRUCTURED, RenderConfig
from .pipeline import RenderResult, run_render

__all__ = [
    "PinholeCamera",
    "make_camera",
    "Dataset",
    "DepthMap",
    "RenderConfig",
    "STRUCTURED",
    "UNSTRUCTURED",
    "RenderResult",
    "run_render",
]
__version__ = "0.1.0"
