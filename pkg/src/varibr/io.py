"""Dataset directories, PFM/PNG files, camera files and run configuration.

Layout::

    views/NNN.png      8-bit sRGB source images
    cams/NNN.txt       K (3 rows), R (3 rows), t (1 row)
    depth/NNN.pfm      orthogonal (or radial, see config) depth; <= 0 is invalid
    target_cam.txt
    target_gt.png      optional
"""

from __future__ import annotations

import csv
import re
from dataclasses import fields as dc_fields
from pathlib import Path
from typing import Iterable, Optional, Union

import numpy as np
from PIL import Image

from .camera import PinholeCamera, make_camera
from .dataset import Dataset
from .depth import DepthMap, depth_from_radial, fill_holes
from .energy import RenderConfig, TraceRow

PathLike = Union[str, Path]


class DatasetError(ValueError):
    pass


# ---------------------------------------------------------------------------
# colour


def srgb_to_linear(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.where(x <= 0.04045, x / 12.92, ((x + 0.055) / 1.055) ** 2.4)


def linear_to_srgb(x: np.ndarray) -> np.ndarray:
    x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
    return np.where(x <= 0.0031308, 12.92 * x, 1.055 * x ** (1 / 2.4) - 0.055)


def read_png(path: PathLike, linear: bool = True) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    x = arr.astype(float) / 255.0
    return srgb_to_linear(x) if linear else x


def write_png(path: PathLike, img: np.ndarray, linear: bool = True) -> None:
    img = np.asarray(img, dtype=float)
    x = linear_to_srgb(img) if linear else np.clip(img, 0.0, 1.0)
    q = np.round(x * 255.0).astype(np.uint8)
    Image.fromarray(q).save(path)


def write_mask_png(path: PathLike, mask: np.ndarray) -> None:
    Image.fromarray(np.asarray(mask, bool).astype(np.uint8) * 255).save(path)


def read_mask_png(path: PathLike) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("L")) > 127


# ---------------------------------------------------------------------------
# PFM


def write_pfm(path: PathLike, data: np.ndarray) -> None:
    """Little-endian single-channel (``Pf``) or RGB (``PF``) portable float map."""
    data = np.asarray(data, dtype="<f4")
    if data.ndim == 2:
        header = "Pf"
    elif data.ndim == 3 and data.shape[2] == 3:
        header = "PF"
    else:
        raise ValueError("PFM holds 1 or 3 channels")
    H, W = data.shape[:2]
    with open(path, "wb") as f:
        f.write(f"{header}\n{W} {H}\n-1.0\n".encode("ascii"))
        f.write(np.ascontiguousarray(data[::-1]).tobytes())


def read_pfm(path: PathLike) -> np.ndarray:
    with open(path, "rb") as f:
        header = f.readline().strip()
        if header not in (b"Pf", b"PF"):
            raise DatasetError(f"{path}: not a PFM file")
        dims = f.readline().split()
        while not dims:
            dims = f.readline().split()
        W, H = int(dims[0]), int(dims[1])
        scale = float(f.readline().strip())
        dtype = "<f4" if scale < 0 else ">f4"
        ch = 3 if header == b"PF" else 1
        data = np.frombuffer(f.read(), dtype=dtype)
    if data.size != W * H * ch:
        raise DatasetError(f"{path}: truncated PFM payload")
    shape = (H, W, 3) if ch == 3 else (H, W)
    return data.reshape(shape)[::-1].astype(np.float32)


# ---------------------------------------------------------------------------
# cameras and config


def write_camera(path: PathLike, cam: PinholeCamera) -> None:
    lines = [" ".join(repr(float(v)) for v in row) for row in cam.K]
    lines += [" ".join(repr(float(v)) for v in row) for row in cam.R]
    lines.append(" ".join(repr(float(v)) for v in cam.t))
    Path(path).write_text("\n".join(lines) + "\n")


def read_camera(path: PathLike) -> PinholeCamera:
    rows = [l.split() for l in Path(path).read_text().splitlines() if l.strip()]
    if len(rows) != 7 or any(len(r) != 3 for r in rows):
        raise DatasetError(f"{path}: expected 7 lines of 3 numbers (K, R, t)")
    try:
        vals = np.array([[float(v) for v in r] for r in rows])
    except ValueError as e:
        raise DatasetError(f"{path}: {e}") from None
    try:
        return make_camera(vals[:3], vals[3:6], vals[6])
    except ValueError as e:
        raise DatasetError(f"{path}: {e}") from None


_CONFIG_KEYS = {
    "alpha": ("alpha", float),
    "gamma": ("gamma", float),
    "lambda": ("lam", float),
    "sigma_s2": ("sigma_s2", float),
    "sigma_z2": ("sigma_z2", float),
    "visibility_threshold": ("visibility_threshold", float),
    "max_iters": ("max_iters", int),
    "rel_tol": ("rel_tol", float),
    "reweight_every": ("reweight_every", int),
    "seed": ("seed", int),
    "tv_inner_iters": ("tv_inner_iters", int),
    "radial_depth": ("radial_depth", lambda s: s.strip().lower() in ("1", "true", "yes")),
}


def parse_config(text: str, base: Optional[RenderConfig] = None) -> RenderConfig:
    """Flat ``key = value`` lines; ``#`` starts a comment; unknown keys are errors."""
    kw = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = re.fullmatch(r"([A-Za-z_][A-Za-z0-9_]*)\s*[=:]\s*(.+)", line)
        if not m:
            raise ValueError(f"config line {n}: expected key=value, got {raw!r}")
        key, val = m.group(1), m.group(2).strip()
        if key not in _CONFIG_KEYS:
            raise ValueError(f"config line {n}: unknown key {key!r}")
        name, conv = _CONFIG_KEYS[key]
        kw[name] = None if val.lower() in ("none", "auto") else conv(val)
    base = base or RenderConfig()
    merged = {f.name: getattr(base, f.name) for f in dc_fields(base)}
    merged.update(kw)
    return RenderConfig(**merged)


def read_config(path: PathLike) -> RenderConfig:
    return parse_config(Path(path).read_text())


def format_config(config: RenderConfig) -> str:
    lines = []
    for key, (name, _) in _CONFIG_KEYS.items():
        v = getattr(config, name)
        lines.append(f"{key} = {'auto' if v is None else v}")
    return "\n".join(lines) + "\n"


def write_trace_csv(path: PathLike, trace: Iterable[TraceRow]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["iteration", "E_color", "E_grad", "E_tv", "total"])
        for r in trace:
            w.writerow([r.iteration, repr(r.e_color), repr(r.e_grad), repr(r.e_tv), repr(r.total)])


# ---------------------------------------------------------------------------
# datasets


def save_dataset(ds: Dataset, root: PathLike) -> Path:
    root = Path(root)
    for sub in ("views", "cams", "depth"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    for k, (img, cam, d) in enumerate(zip(ds.images, ds.cameras, ds.depths)):
        write_png(root / "views" / f"{k:03d}.png", img)
        write_camera(root / "cams" / f"{k:03d}.txt", cam)
        write_pfm(root / "depth" / f"{k:03d}.pfm", np.where(d.valid, d.z, 0.0))
    write_camera(root / "target_cam.txt", ds.target_camera)
    if ds.target_image is not None:
        write_png(root / "target_gt.png", ds.target_image)
    return root


def load_dataset(root: PathLike, config: Optional[RenderConfig] = None) -> Dataset:
    """Load a dataset directory; images come back linear in ``[0, 1]``.

    Radial depths (``config.radial_depth``) are converted to orthogonal ones,
    small holes are filled and ``sigma_z2`` is taken from the config or, if
    unset, defaults to ``1e-4 * (depth range)^2``.
    """
    root = Path(root)
    config = config or RenderConfig()
    for need in ("views", "cams", "depth"):
        if not (root / need).is_dir():
            raise DatasetError(f"{root / need}: missing directory")
    view_files = sorted((root / "views").glob("*.png"))
    if not view_files:
        raise DatasetError(f"{root / 'views'}: no source images")
    if not (root / "target_cam.txt").is_file():
        raise DatasetError(f"{root / 'target_cam.txt'}: missing target camera")

    images, cams, raw = [], [], []
    for vf in view_files:
        stem = vf.stem
        cf = root / "cams" / f"{stem}.txt"
        df = root / "depth" / f"{stem}.pfm"
        if not cf.is_file():
            raise DatasetError(f"{cf}: missing camera for view {vf.name}")
        if not df.is_file():
            raise DatasetError(f"{df}: missing depth for view {vf.name}")
        img = read_png(vf)
        z = read_pfm(df)
        if z.ndim != 2:
            raise DatasetError(f"{df}: depth must have one channel")
        if z.shape != img.shape[:2]:
            raise DatasetError(f"{df}: depth is {z.shape[1]}x{z.shape[0]} but {vf} is {img.shape[1]}x{img.shape[0]}")
        images.append(img)
        cams.append(read_camera(cf))
        raw.append(z.astype(float))

    depths = []
    for img, cam, z in zip(images, cams, raw):
        if config.radial_depth:
            d = depth_from_radial(z, cam)
        else:
            d = DepthMap.from_z(z)
        if not d.valid.any():
            raise DatasetError("a depth map has no valid pixel")
        depths.append(fill_holes(d, img))

    if config.sigma_z2 is not None:
        s2 = config.sigma_z2
    else:
        allz = np.concatenate([d.z[d.valid] for d in depths])
        s2 = 1e-4 * float(allz.max() - allz.min()) ** 2
    depths = [d.with_sigma(s2) for d in depths]

    target_cam = read_camera(root / "target_cam.txt")
    gt = None
    shape = images[0].shape[:2]
    if (root / "target_gt.png").is_file():
        gt = read_png(root / "target_gt.png")
        shape = gt.shape[:2]
    return Dataset(images, cams, depths, target_cam, shape, gt, meta={"root": str(root)})
