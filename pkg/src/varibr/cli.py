"""Command-line entry point: ``varibr synth|render|eval|warp-debug``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .energy import RenderConfig
from .metrics import dssim, psnr
from .pipeline import run_render
from .synth import render_scene, single_plane_scene, spec_from_dict, two_plane_scene
from .warp import build_warp_fields

PRESETS = {"single-plane": single_plane_scene, "two-plane": two_plane_scene}


def _cmd_synth(args) -> int:
    if args.spec:
        spec = spec_from_dict(json.loads(Path(args.spec).read_text()))
    else:
        spec = PRESETS[args.preset]()
    ds = render_scene(spec)
    out = io.save_dataset(ds, args.out)
    print(f"wrote {ds.n_views} views to {out}")
    return 0


def _load_config(path) -> RenderConfig:
    return io.read_config(path) if path else RenderConfig()


def _cmd_render(args) -> int:
    config = _load_config(args.config)
    ds = io.load_dataset(args.data, config)
    res = run_render(ds, config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io.write_png(out / "out.png", res.image)
    io.write_mask_png(out / "coverage.png", res.coverage)
    if args.trace:
        io.write_trace_csv(out / "objective.csv", res.solve.trace)
    if res.metrics:
        print(f"PSNR={res.metrics['psnr']:.4f} DSSIM={res.metrics['dssim']:.4f}")
    return 0


def _cmd_eval(args) -> int:
    a = io.read_png(args.a)
    b = io.read_png(args.b)
    mask = io.read_mask_png(args.mask) if args.mask else None
    p = psnr(a, b, mask=mask)
    d = dssim(a, b, mask=mask)
    print(f"PSNR={p:.4f} DSSIM={d:.4f}")
    if args.json:
        Path(args.json).write_text(json.dumps({"a": str(args.a), "b": str(args.b), "psnr": p, "dssim": d}) + "\n")
    return 0


def _cmd_warp_debug(args) -> int:
    config = _load_config(args.config)
    ds = io.load_dataset(args.data, config)
    if not 0 <= args.view < ds.n_views:
        raise SystemExit(f"view {args.view} out of range (dataset has {ds.n_views} views)")
    from .formation import assemble_system
    from .pipeline import default_threshold

    fields, zbuf = build_warp_fields(ds.views(), ds.target_camera, ds.target_shape, default_threshold(ds, config))
    f = fields[args.view]
    system = assemble_system(fields, ds.target_shape)
    rowsum = np.asarray(system.B.sum(axis=1)).ravel()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io.write_pfm(out / "tau_x.pfm", f.tau[..., 0])
    io.write_pfm(out / "tau_y.pfm", f.tau[..., 1])
    io.write_pfm(out / "det_j.pfm", f.deformation_weight)
    io.write_pfm(out / "rowsum.pfm", system.scatter(rowsum, args.view))
    io.write_pfm(out / "target_depth.pfm", zbuf.z)
    io.write_mask_png(out / "visible.png", f.visible)
    print(f"view {args.view}: {f.n_visible} visible pixels of {f.visible.size}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="varibr", description="Variational image-based rendering")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a synthetic dataset")
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--spec", help="scene description (JSON)")
    g.add_argument("--preset", choices=sorted(PRESETS))
    s.add_argument("--out", required=True)
    s.set_defaults(func=_cmd_synth)

    r = sub.add_parser("render", help="render the target view of a dataset")
    r.add_argument("--data", required=True)
    r.add_argument("--config")
    r.add_argument("--out", required=True)
    r.add_argument("--trace", action="store_true", help="also write objective.csv")
    r.set_defaults(func=_cmd_render)

    e = sub.add_parser("eval", help="PSNR and DSSIM between two images")
    e.add_argument("--a", required=True)
    e.add_argument("--b", required=True)
    e.add_argument("--mask")
    e.add_argument("--json", help="also write the result as JSON")
    e.set_defaults(func=_cmd_eval)

    w = sub.add_parser("warp-debug", help="dump warp, Jacobian and visibility layers of one view")
    w.add_argument("--data", required=True)
    w.add_argument("--view", type=int, required=True)
    w.add_argument("--config")
    w.add_argument("--out", required=True)
    w.set_defaults(func=_cmd_warp_debug)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ValueError, RuntimeError, OSError) as e:
        print(f"varibr: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
