"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run on its own with ``pytest tests/test_acceptance.py -v``; the report lines
are written straight to the terminal.
"""

import shutil
import subprocess
import sys
import time

import numpy as np
import pytest

from varibr.camera import jacobian_normalize, normalize_euclidean
from varibr.depth import DepthMap, radial_gradient_to_orthogonal, radial_to_orthogonal
from varibr.energy import RenderConfig, minimize, source_gradients, weight_diagonal
from varibr.formation import apply_B, apply_B_adjoint, assemble_system
from varibr.metrics import dssim, psnr, seam_gradient_excess, ssim
from varibr.pipeline import default_threshold, run_render, splat_average
from varibr.synth import fov_seam_mask, render_scene, seam_scene, single_plane_scene, two_plane_scene
from varibr.warp import build_warp_fields, warp_jacobian_depth, warp_jacobian_spatial, warp_point

from conftest import identity_camera, random_camera, random_pair
from oracles import DenseQuadratic, psnr_oracle, ssim_oracle, tv_dual_oracle


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")
        return ok

    return emit


def rel_err(a, b):
    return np.linalg.norm(np.asarray(a) - np.asarray(b)) / max(np.linalg.norm(b), 1e-300)


# 1 ---------------------------------------------------------------------------


def test_1_jacobian_suite(report):
    rng = np.random.default_rng(2024)
    n_cfg = 1000
    h = 1e-4
    worst = {"spatial": 0.0, "depth": 0.0, "normalize": 0.0, "radial": 0.0}
    t0 = time.perf_counter()
    for _ in range(n_cfg):
        cam_k, cam_u = random_pair(rng)
        x0 = rng.uniform(0, 100, 2)
        z0 = rng.uniform(3, 8)
        zx = rng.uniform(-0.05, 0.05, 2)

        J = warp_jacobian_spatial(x0, z0, zx, cam_k, cam_u)
        cols = []
        for e in np.eye(2):
            tp = warp_point(x0 + h * e, z0 + zx @ (h * e), cam_k, cam_u)[0]
            tm = warp_point(x0 - h * e, z0 - zx @ (h * e), cam_k, cam_u)[0]
            cols.append((tp - tm) / (2 * h))
        worst["spatial"] = max(worst["spatial"], rel_err(J, np.stack(cols, axis=-1)))

        g = warp_jacobian_depth(x0, z0, cam_k, cam_u)
        fd = (warp_point(x0, z0 + h, cam_k, cam_u)[0] - warp_point(x0, z0 - h, cam_k, cam_u)[0]) / (2 * h)
        worst["depth"] = max(worst["depth"], rel_err(g, fd))

        xh = rng.uniform(-5, 5, 3)
        xh[2] = rng.uniform(0.5, 5) * rng.choice([-1.0, 1.0])
        Jn = jacobian_normalize(xh)
        fdn = np.stack([(normalize_euclidean(xh + 1e-6 * e) - normalize_euclidean(xh - 1e-6 * e)) / 2e-6
                        for e in np.eye(3)], axis=1)
        worst["normalize"] = max(worst["normalize"], rel_err(Jn, fdn))

        cam = random_camera(rng)
        hr = rng.uniform(1, 10)
        hx = rng.uniform(-0.05, 0.05, 2)

        def z_of(x):
            return radial_to_orthogonal(hr + hx @ (x - x0), x[None], cam)[0]

        fdr = np.array([(z_of(x0 + h * e) - z_of(x0 - h * e)) / (2 * h) for e in np.eye(2)])
        zr = radial_gradient_to_orthogonal(np.array([hr]), hx[None], x0[None], cam)[0]
        worst["radial"] = max(worst["radial"], rel_err(zr, fdr))
    dt = time.perf_counter() - t0
    ok = max(worst.values()) <= 1e-4 and dt < 10
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    report(1, ok, f"{n_cfg} configs, worst relative error {detail}; {dt:.1f} s")
    assert ok


# 2 ---------------------------------------------------------------------------


def test_2_forward_model(report, two_plane_ds):
    ds = two_plane_ds
    fields, _ = build_warp_fields(ds.views(), ds.target_camera, ds.target_shape, 0.05)
    system = assemble_system(fields, ds.target_shape)
    H, W = ds.target_shape
    tau = system.gather([f.tau for f in fields])
    interior = (tau[:, 0] >= 0) & (tau[:, 0] <= W - 1) & (tau[:, 1] >= 0) & (tau[:, 1] <= H - 1)
    sums = np.asarray(system.B.sum(axis=1)).ravel()
    pou = float(np.max(np.abs(sums[interior] - 1.0)))

    rng = np.random.default_rng(7)
    U = rng.standard_normal((system.n_target, 3))
    V = rng.standard_normal((system.n_rows, 3))
    lhs = np.sum(apply_B(system, U) * V)
    adj = abs(lhs - np.sum(U * apply_B_adjoint(system, V))) / abs(lhs)

    cam = identity_camera(32, 24, 30.0)
    img = rng.random((24, 32, 3))
    f_id, _ = build_warp_fields([(DepthMap.from_z(np.full((24, 32), 3.0)), cam)], cam, (24, 32), 0.01)
    s_id = assemble_system(f_id, (24, 32))
    exact = s_id.n_rows == 24 * 32 and np.array_equal(apply_B(s_id, img), img.reshape(-1, 3))

    ok = pou <= 1e-12 and adj <= 1e-10 and exact
    report(2, ok, f"partition of unity {pou:.1e} over {interior.sum()} interior rows, "
                  f"adjoint {adj:.1e}, identity camera exact={exact}")
    assert ok


# 3 ---------------------------------------------------------------------------


def _small_problem():
    ds = render_scene(single_plane_scene(width=16, height=16, focal=16.0, n_views=3, supersample=2))
    fields, _ = build_warp_fields(ds.views(), ds.target_camera, ds.target_shape, 0.05)
    system = assemble_system(fields, ds.target_shape)
    V = system.gather(ds.images)
    gd = source_gradients(ds.images, system)
    return fields, system, V, gd


def test_3_solver_oracles(report):
    t0 = time.perf_counter()
    fields, system, V, gd = _small_problem()
    B = system.B.toarray()
    lines, ok = [], True
    for a, g, lam in [(1.0, 0.0, 0.0), (1.0, 1.0, 0.0), (0.1, 1.0, 0.0), (1.0, 1.0, 0.1), (0.1, 1.0, 0.002)]:
        cfg = RenderConfig(alpha=a, gamma=g, lam=lam, max_iters=20_000, rel_tol=1e-15)
        w0 = weight_diagonal(system, fields, None, cfg)
        U0, _ = splat_average(system, w0, V)
        w = weight_diagonal(system, fields, U0, cfg)
        res = minimize(cfg, system, w, V, gd if g > 0 else None, U0, record_trace=False)
        quad = DenseQuadratic(B, w, V, system.target_shape, a, g, gd.gx, gd.gy, gd.mx, gd.my)
        if lam == 0:
            err = rel_err(res.U, quad.minimizer())
            ok &= err <= 1e-6
            lines.append(f"({a},{g},0) |U-U*|/|U*| {err:.1e}")
        else:
            U_ref, gap = tv_dual_oracle(quad, lam, iters=100_000)
            F_ref = quad.objective(U_ref, lam)
            err = (quad.objective(res.U, lam) - F_ref) / F_ref
            ok &= abs(err) <= 1e-4
            lines.append(f"({a},{g},{lam}) objective {err:+.1e} (oracle gap {gap / F_ref:.0e})")
    dt = time.perf_counter() - t0
    ok &= dt < 60
    report(3, ok, "; ".join(lines) + f"; {dt:.1f} s")
    assert ok


# 4 ---------------------------------------------------------------------------


def test_4_single_plane_render(report):
    t0 = time.perf_counter()
    ds = render_scene(single_plane_scene())
    res = run_render(ds, RenderConfig())
    dt = time.perf_counter() - t0
    p, d = res.metrics["psnr"], res.metrics["dssim"]
    ok = p >= 35 and d <= 200 and dt < 120
    report(4, ok, f"96x96, 5 views: PSNR {p:.2f} dB, DSSIM {d:.1f}, {dt:.1f} s")
    assert ok


# 5 ---------------------------------------------------------------------------


def test_5_gradient_term_benefit(report):
    ds = render_scene(two_plane_scene(depth_noise=0.02))
    ps = [run_render(ds, RenderConfig(gamma=g)).metrics["psnr"] for g in (0.0, 1.0, 2.0, 3.0)]
    steps = np.diff(ps)
    ok = bool(np.all(steps >= -0.05)) and ps[-1] - ps[0] >= 0.2
    report(5, ok, "PSNR at gamma 0,1,2,3: " + ", ".join(f"{p:.2f}" for p in ps)
           + f" dB (gain {ps[-1] - ps[0]:+.2f})")
    assert ok


# 6 ---------------------------------------------------------------------------


def test_6_occlusion(report):
    parts, ok = [], True
    for rig in ("ring", "grid"):
        ds = render_scene(two_plane_scene(rig=rig))
        theta = default_threshold(ds, RenderConfig())
        fields, _ = build_warp_fields(ds.views(), ds.target_camera, ds.target_shape, theta)
        agree = sum(int((f.visible == v).sum()) for f, v in zip(fields, ds.visibility))
        total = sum(v.size for v in ds.visibility)
        worst = min(float((f.visible == v).mean()) for f, v in zip(fields, ds.visibility))
        frac = agree / total
        ok &= frac >= 0.995
        parts.append(f"{rig} rig {100 * frac:.2f}% (worst view {100 * worst:.2f}%)")
    report(6, ok, "visibility agreement " + ", ".join(parts))
    assert ok


# 7 ---------------------------------------------------------------------------


def test_7_seam_artifacts(report):
    base, grad = [], []
    for offset in [(0.0, 0.0), (0.4, 0.0), (-0.4, 0.0), (0.0, 0.4), (0.0, -0.4)]:
        ds = render_scene(seam_scene(offset))
        seam = fov_seam_mask(ds, ds.n_views - 1)
        a = run_render(ds, RenderConfig(alpha=1.0, gamma=0.0, lam=0.002)).image
        b = run_render(ds, RenderConfig(alpha=0.1, gamma=1.0, lam=0.002)).image
        base.append(seam_gradient_excess(a, ds.target_image, seam))
        grad.append(seam_gradient_excess(b, ds.target_image, seam))
    ea, eb = float(np.mean(base)), float(np.mean(grad))
    reduction = 1 - eb / ea
    ok = ea > 0 and reduction >= 0.30
    report(7, ok, f"seam gradient excess {ea:.2e} at (1,0,0.002) vs {eb:.2e} at (0.1,1,0.002), "
                  f"{100 * reduction:.0f}% lower over 5 seam placements")
    assert ok


# 8 ---------------------------------------------------------------------------


def test_8_metrics(report, single_plane_ds):
    ds = single_plane_ds
    res = run_render(ds, RenderConfig(max_iters=20))
    img, gt = res.image, ds.target_image
    mask = res.coverage.copy()
    mask[:30, :20] = False
    errs = [
        abs(psnr(img, gt) - psnr_oracle(img, gt)),
        abs(psnr(img, gt, mask=mask) - psnr_oracle(img, gt, mask=mask)),
        abs(ssim(img, gt) - ssim_oracle(img, gt)),
        abs(ssim(img, gt, mask=mask) - ssim_oracle(img, gt, mask=mask)),
        abs(dssim(img, gt) - 1e4 * (1 - ssim_oracle(img, gt))) * 1e-4,
    ]
    same = dssim(gt, gt)
    ok = max(errs) <= 1e-6 and same == 0.0
    report(8, ok, f"max deviation from oracles {max(errs):.1e}, DSSIM(identical) = {same}")
    assert ok


# 9 ---------------------------------------------------------------------------


def _cli():
    exe = shutil.which("varibr")
    return [exe] if exe else [sys.executable, "-m", "varibr.cli"]


def test_9_determinism(report, tmp_path):
    data = tmp_path / "data"
    subprocess.run(_cli() + ["synth", "--preset", "two-plane", "--out", str(data)], check=True,
                   capture_output=True)
    (tmp_path / "run.cfg").write_text("seed = 3\nmax_iters = 80\n")
    outs = []
    for run in ("a", "b"):
        out = tmp_path / run
        subprocess.run(_cli() + ["render", "--data", str(data), "--config", str(tmp_path / "run.cfg"),
                                 "--out", str(out)], check=True, capture_output=True)
        outs.append((out / "out.png").read_bytes())
    ok = outs[0] == outs[1]
    report(9, ok, f"two CLI renders give {'identical' if ok else 'different'} PNG bytes ({len(outs[0])} B)")
    assert ok
