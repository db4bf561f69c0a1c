"""Energy terms, contribution weights and the FISTA minimizer.

The rendered image ``U`` minimizes

    alpha * E_color(U) + gamma * E_grad(U) + lambda * TV(U)

with ``E_color = (BU - V*)^T W (BU - V*)`` and
``E_grad = sum_c (B D_c U - G*_c)^T M_c (B D_c U - G*_c)`` where ``D_c`` are
forward differences on the target grid, ``G*_c`` the same differences taken on
the source images and ``M_c`` masks rows whose difference stencil leaves the
visible domain. Images are handled as flat ``(N, C)`` arrays internally.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields as dc_fields, replace
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .formation import ForwardSystem
from .warp import WarpField

log = logging.getLogger(__name__)

LUMA = np.array([0.2126, 0.7152, 0.0722])
DEFORMATION_CLAMP = (1e-3, 1e3)


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class RenderConfig:
    alpha: float = 1.0
    gamma: float = 1.0
    lam: float = 0.1
    sigma_s2: float = 1e-3
    sigma_z2: Optional[float] = None  # None: take each depth map's own variance
    visibility_threshold: Optional[float] = None  # None: derived from the scene
    max_iters: int = 300
    rel_tol: float = 1e-7
    tv_inner_iters: int = 10
    reweight_every: int = 10
    seed: int = 0
    radial_depth: bool = False

    def __post_init__(self):
        for name in ("alpha", "gamma", "lam"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be a finite nonnegative number, got {v}")
        if self.alpha == 0 and self.gamma == 0:
            raise ValueError("alpha and gamma cannot both be zero")
        if not self.sigma_s2 > 0:
            raise ValueError("sigma_s2 must be strictly positive")
        if self.sigma_z2 is not None and self.sigma_z2 < 0:
            raise ValueError("sigma_z2 must be nonnegative")
        if self.visibility_threshold is not None and self.visibility_threshold < 0:
            raise ValueError("visibility_threshold must be nonnegative")
        if self.max_iters < 1 or self.tv_inner_iters < 1 or self.reweight_every < 0:
            raise ValueError("iteration counts must be positive")
        if self.rel_tol < 0:
            raise ValueError("rel_tol must be nonnegative")

    def with_weights(self, alpha: float, gamma: float, lam: float) -> "RenderConfig":
        return replace(self, alpha=alpha, gamma=gamma, lam=lam)

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in dc_fields(cls)]


STRUCTURED = RenderConfig(alpha=1.0, gamma=1.0, lam=0.1)
UNSTRUCTURED = RenderConfig(alpha=0.1, gamma=1.0, lam=0.002)


# ---------------------------------------------------------------------------
# discrete differential operators


class GradientOperator:
    """Forward differences with replicate (Neumann) boundary on an ``H x W`` grid.

    ``div`` is the negative adjoint of ``grad``. Works on ``(H, W)`` and
    ``(H, W, C)`` images; the sparse ``Dx``/``Dy`` act on flat row-major
    vectors and give identical results.
    """

    def __init__(self, shape: tuple[int, int]):
        self.shape = tuple(shape)
        H, W = self.shape
        self.N = H * W

        def diff(n):
            if n == 1:
                return sp.csr_matrix((1, 1))
            main = -np.ones(n)
            main[-1] = 0.0
            return sp.diags([main, np.ones(n - 1)], [0, 1], shape=(n, n), format="csr")

        self.Dx = sp.kron(sp.identity(H), diff(W), format="csr")
        self.Dy = sp.kron(diff(H), sp.identity(W), format="csr")

    def grad(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        g = np.zeros((2,) + u.shape)
        g[0, :, :-1] = u[:, 1:] - u[:, :-1]
        g[1, :-1, :] = u[1:, :] - u[:-1, :]
        return g

    def div(self, p: np.ndarray) -> np.ndarray:
        px = p[0].copy()
        py = p[1].copy()
        px[:, -1] = 0.0
        py[-1, :] = 0.0
        d = px + py
        d[:, 1:] -= px[:, :-1]
        d[1:, :] -= py[:-1, :]
        return d


def energy_tv(U: np.ndarray) -> float:
    """Isotropic total variation, summed over channels."""
    U = np.asarray(U, dtype=float)
    g = GradientOperator(U.shape[:2]).grad(U)
    return float(np.sqrt(g[0] ** 2 + g[1] ** 2).sum())


def prox_tv(V: np.ndarray, weight: float, n_iter: int = 50, p0: Optional[np.ndarray] = None,
            return_dual: bool = False):
    """``argmin_u 1/2 |u - V|^2 + weight * TV(u)`` by Chambolle's dual projection.

    Channels of ``(H, W, C)`` inputs are treated independently. ``p0`` warm
    starts the dual field.
    """
    V = np.asarray(V, dtype=float)
    if weight < 0:
        raise ValueError("weight must be nonnegative")
    if weight == 0:
        return (V.copy(), np.zeros((2,) + V.shape)) if return_dual else V.copy()
    op = GradientOperator(V.shape[:2])
    p = np.zeros((2,) + V.shape) if p0 is None else p0.copy()
    g = V / weight
    tau = 0.125
    for _ in range(n_iter):
        q = op.grad(op.div(p) - g)
        p = (p + tau * q) / (1.0 + tau * np.sqrt(q[0] ** 2 + q[1] ** 2))
    u = V - weight * op.div(p)
    return (u, p) if return_dual else u


# ---------------------------------------------------------------------------
# weights


def luma(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=float)
    if img.ndim == 3 and img.shape[2] == 3:
        return img @ LUMA
    if img.ndim == 3:
        return img.mean(axis=2)
    return img


def _row_sigma_z2(system: ForwardSystem, warp_fields: Sequence[WarpField], sigma_z2) -> np.ndarray:
    if sigma_z2 is None:
        per_view = np.array([f.sigma_z2 for f in warp_fields])
    else:
        per_view = np.broadcast_to(np.asarray(sigma_z2, dtype=float), (len(warp_fields),))
    return per_view[system.view]


def geometry_weight(grad_u: np.ndarray, system: ForwardSystem, warp_fields: Sequence[WarpField],
                    sigma_s2: float, sigma_z2=None) -> np.ndarray:
    """Per-row ``omega = 1 / (sigma_s2 + sigma_z2 * (dtau/dz . grad u(tau))^2)``.

    ``grad_u`` is the target gradient ``(N, 2)`` (or ``(2, H, W)``); it is
    sampled at the warped positions through the footprint coefficients.
    ``sigma_z2`` overrides the per-view depth variances when given.
    """
    if not sigma_s2 > 0:
        raise ValueError("sigma_s2 must be strictly positive")
    grad_u = np.asarray(grad_u, dtype=float)
    if grad_u.ndim == 3:
        grad_u = grad_u.reshape(2, -1).T
    g = system.B @ grad_u
    dz = system.gather([f.dtau_dz for f in warp_fields])
    s = np.einsum("ri,ri->r", dz, g)
    return 1.0 / (sigma_s2 + _row_sigma_z2(system, warp_fields, sigma_z2) * s**2)


def deformation_factor(system: ForwardSystem, warp_fields: Sequence[WarpField]) -> np.ndarray:
    """``|J(beta_k)| = 1 / |det d tau_k / d x_m|`` per row, clamped."""
    det = system.gather([f.deformation_weight for f in warp_fields])
    with np.errstate(divide="ignore"):
        inv = np.where(det > 0, 1.0 / det, np.inf)
    return np.clip(inv, *DEFORMATION_CLAMP)


def weight_diagonal(system: ForwardSystem, warp_fields: Sequence[WarpField], U: Optional[np.ndarray],
                    config: RenderConfig) -> np.ndarray:
    """Diagonal of ``W``: deformation factor times the geometry weight.

    The geometry weight is scaled by ``sigma_s2`` so that a row with no
    geometric uncertainty has weight equal to its deformation factor; this
    keeps ``alpha``, ``gamma`` and ``lambda`` on a common scale. ``U=None``
    evaluates the weights for a flat image.
    """
    H, W = system.target_shape
    if U is None:
        grad = np.zeros((H * W, 2))
    else:
        l = luma(np.asarray(U).reshape(H, W, -1)).reshape(H, W)
        grad = GradientOperator((H, W)).grad(l).reshape(2, -1).T
    omega = geometry_weight(grad, system, warp_fields, config.sigma_s2, config.sigma_z2)
    return deformation_factor(system, warp_fields) * omega * config.sigma_s2


# ---------------------------------------------------------------------------
# data terms


@dataclass(frozen=True, eq=False)
class GradientData:
    """Source-image forward differences in row order, with per-component row masks."""

    gx: np.ndarray  # (R, C)
    gy: np.ndarray  # (R, C)
    mx: np.ndarray  # (R,) float 0/1
    my: np.ndarray  # (R,)


def source_gradients(images: Sequence[np.ndarray], system: ForwardSystem) -> GradientData:
    """Forward differences of each source image at its visible rows.

    A component is kept only if the forward neighbour is itself a visible
    pixel of the same view, so the stencil never straddles the image border,
    an occlusion boundary or the edge of the target field of view.
    """
    gx, gy, mx, my = [], [], [], []
    for k, img in enumerate(images):
        img = np.asarray(img, dtype=float)
        if img.ndim == 2:
            img = img[..., None]
        H, W = img.shape[:2]
        op = GradientOperator((H, W))
        g = op.grad(img)
        vis = np.zeros(H * W, dtype=bool)
        vis[system.source_index[system.view == k]] = True
        vis = vis.reshape(H, W)
        okx = np.zeros((H, W), bool)
        okx[:, :-1] = vis[:, :-1] & vis[:, 1:]
        oky = np.zeros((H, W), bool)
        oky[:-1, :] = vis[:-1, :] & vis[1:, :]
        idx = system.source_index[system.view == k]
        gx.append(g[0].reshape(H * W, -1)[idx])
        gy.append(g[1].reshape(H * W, -1)[idx])
        mx.append(okx.reshape(-1)[idx])
        my.append(oky.reshape(-1)[idx])
    return GradientData(
        np.concatenate(gx), np.concatenate(gy),
        np.concatenate(mx).astype(float), np.concatenate(my).astype(float),
    )


class SmoothTerm:
    """``alpha * E_color + gamma * E_grad`` with its gradient and Lipschitz bound."""

    def __init__(self, system: ForwardSystem, weights: np.ndarray, V: np.ndarray,
                 grad_data: Optional[GradientData], alpha: float, gamma: float):
        self.system = system
        self.B = system.B
        self.w = np.asarray(weights, dtype=float)
        if self.w.shape != (system.n_rows,):
            raise ValueError(f"weights have shape {self.w.shape}, expected ({system.n_rows},)")
        V = np.asarray(V, dtype=float)
        if V.shape[0] != system.n_rows:
            raise ValueError(f"V* has {V.shape[0]} rows, expected {system.n_rows}")
        self.V = V
        self.alpha = float(alpha)
        self.gamma = float(gamma)
        self.op = GradientOperator(system.target_shape)
        self.gd = grad_data
        if self.gamma > 0 and grad_data is None:
            raise ValueError("gamma > 0 needs source gradient data")
        if grad_data is not None:
            self.BDx = (self.B @ self.op.Dx).tocsr()
            self.BDy = (self.B @ self.op.Dy).tocsr()

    def set_weights(self, weights: np.ndarray) -> None:
        self.w = np.asarray(weights, dtype=float)

    def _wcol(self, w, X):
        return w.reshape((-1,) + (1,) * (X.ndim - 1))

    def color(self, U) -> float:
        r = self.B @ U - self.V
        return float(np.sum(self._wcol(self.w, r) * r * r))

    def grad_energy(self, U) -> float:
        if self.gd is None:
            return 0.0
        rx = self.BDx @ U - self.gd.gx
        ry = self.BDy @ U - self.gd.gy
        return float(np.sum(self._wcol(self.gd.mx, rx) * rx * rx) + np.sum(self._wcol(self.gd.my, ry) * ry * ry))

    def value(self, U) -> float:
        v = 0.0
        if self.alpha > 0:
            v += self.alpha * self.color(U)
        if self.gamma > 0:
            v += self.gamma * self.grad_energy(U)
        return v

    def gradient(self, U) -> np.ndarray:
        g = np.zeros_like(U, dtype=float)
        if self.alpha > 0:
            r = self.B @ U - self.V
            g += 2.0 * self.alpha * (self.B.T @ (self._wcol(self.w, r) * r))
        if self.gamma > 0:
            rx = self.BDx @ U - self.gd.gx
            ry = self.BDy @ U - self.gd.gy
            g += 2.0 * self.gamma * (self.BDx.T @ (self._wcol(self.gd.mx, rx) * rx)
                                     + self.BDy.T @ (self._wcol(self.gd.my, ry) * ry))
        return g

    def hessian_apply(self, x: np.ndarray) -> np.ndarray:
        """Apply the (constant) Hessian ``2 (alpha B^T W B + gamma D^T B^T M B D)``."""
        h = np.zeros_like(x)
        if self.alpha > 0:
            h += 2.0 * self.alpha * (self.B.T @ (self._wcol(self.w, x) * (self.B @ x)))
        if self.gamma > 0:
            h += 2.0 * self.gamma * (self.BDx.T @ (self._wcol(self.gd.mx, x) * (self.BDx @ x))
                                     + self.BDy.T @ (self._wcol(self.gd.my, x) * (self.BDy @ x)))
        return h

    def lipschitz(self, n_iter: int = 20, safety: float = 1.05, seed: int = 0) -> float:
        x = np.random.default_rng(seed).standard_normal(self.B.shape[1])
        x /= np.linalg.norm(x)
        lam = 0.0
        for _ in range(n_iter):
            y = self.hessian_apply(x)
            lam = float(np.linalg.norm(y))
            if lam == 0.0:
                break
            x = y / lam
        return max(lam * safety, 1e-12)


def _flat(U, n):
    U = np.asarray(U, dtype=float)
    if U.shape[0] != n:
        U = U.reshape((n,) + U.shape[2:])
    return U


def energy_color(U, system: ForwardSystem, weights, V) -> float:
    """``(BU - V*)^T W (BU - V*)``."""
    U = _flat(U, system.n_target)
    return SmoothTerm(system, weights, V, None, 1.0, 0.0).color(U)


def energy_grad(U, system: ForwardSystem, grad_data: GradientData) -> float:
    """``sum_c (B D_c U - G*_c)^T M_c (B D_c U - G*_c)``."""
    U = _flat(U, system.n_target)
    V = np.zeros((system.n_rows,) + U.shape[1:])
    return SmoothTerm(system, np.ones(system.n_rows), V, grad_data, 0.0, 1.0).grad_energy(U)


def data_gradient(U, system: ForwardSystem, weights, V, grad_data: Optional[GradientData],
                  alpha: float, gamma: float) -> np.ndarray:
    """Gradient of ``alpha E_color + gamma E_grad`` with respect to flat ``U``."""
    U = _flat(U, system.n_target)
    if alpha == 0 and gamma == 0:
        return np.zeros_like(U)
    return SmoothTerm(system, weights, V, grad_data, alpha, gamma).gradient(U)


# ---------------------------------------------------------------------------
# minimizer


@dataclass
class TraceRow:
    iteration: int
    e_color: float
    e_grad: float
    e_tv: float
    total: float


@dataclass
class SolveResult:
    U: np.ndarray  # (N, C)
    iterations: int
    converged: bool
    trace: list[TraceRow] = field(default_factory=list)
    weights: Optional[np.ndarray] = None


def minimize(
    config: RenderConfig,
    system: ForwardSystem,
    weights: np.ndarray,
    V: np.ndarray,
    grad_data: Optional[GradientData],
    U0: np.ndarray,
    reweight: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    record_trace: bool = True,
) -> SolveResult:
    """FISTA with objective-based restart.

    The smooth part is ``alpha E_color + gamma E_grad`` with step ``1/L``;
    the proximal part is ``lambda TV`` solved by warm-started Chambolle
    iterations. A step that increases the objective resets the momentum and
    is retried from the last iterate; if that fails too, ``L`` is doubled.
    With ``reweight`` given, the weights are recomputed from the current
    iterate every ``config.reweight_every`` iterations.
    """
    H, Wd = system.target_shape
    N = H * Wd
    U0 = np.asarray(U0, dtype=float)
    squeeze = U0.ndim == 1 or (U0.ndim == 2 and U0.shape == (H, Wd))
    X = U0.reshape(N, -1).copy()
    C = X.shape[1]
    V = np.asarray(V, dtype=float).reshape(system.n_rows, -1)
    if V.shape[1] != C:
        raise ValueError("U0 and V* have different channel counts")
    gd = grad_data
    if gd is not None:
        gd = GradientData(gd.gx.reshape(system.n_rows, -1), gd.gy.reshape(system.n_rows, -1), gd.mx, gd.my)

    smooth = SmoothTerm(system, weights, V, gd if config.gamma > 0 else None, config.alpha, config.gamma)
    lam = config.lam
    img_shape = (H, Wd, C)

    def tv(Z):
        return energy_tv(Z.reshape(img_shape)) if lam > 0 else 0.0

    def objective(Z):
        return smooth.value(Z) + lam * tv(Z)

    def prox(Z, step, p):
        if lam == 0:
            return Z, p
        u, p = prox_tv(Z.reshape(img_shape), step * lam, config.tv_inner_iters, p0=p, return_dual=True)
        return u.reshape(N, C), p

    def record(it, Z, total):
        if not record_trace:
            return
        ec = smooth.color(Z) if config.alpha > 0 else 0.0
        eg = smooth.grad_energy(Z) if config.gamma > 0 else 0.0
        trace.append(TraceRow(it, ec, eg, tv(Z), total))

    trace: list[TraceRow] = []
    L = smooth.lipschitz(seed=config.seed)
    F = objective(X)
    if not np.isfinite(F):
        raise SolverError(f"initial objective is not finite ({F})")
    record(0, X, F)
    Y = X.copy()
    t = 1.0
    p = None
    converged = False
    it = 0
    for it in range(1, config.max_iters + 1):
        if reweight is not None and config.reweight_every > 0 and it > 1 and (it - 1) % config.reweight_every == 0:
            smooth.set_weights(reweight(X))
            L = smooth.lipschitz(seed=config.seed)
            F = objective(X)
            Y = X.copy()
            t = 1.0

        Z, p_new = prox(Y - smooth.gradient(Y) / L, 1.0 / L, p)
        Fz = objective(Z)
        if not np.isfinite(Fz):
            raise SolverError(f"objective became non-finite at iteration {it}")
        if Fz > F:
            # restart: plain proximal-gradient step from the last iterate
            t = 1.0
            for _ in range(4):
                Z, p_new = prox(X - smooth.gradient(X) / L, 1.0 / L, p)
                Fz = objective(Z)
                if Fz <= F:
                    break
                L *= 2.0
            if Fz > F:
                converged = True
                log.debug("no descent at iteration %d; stopping", it)
                break
        p = p_new
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        Y = Z + ((t - 1.0) / t_new) * (Z - X)
        X = Z
        t = t_new
        change = abs(F - Fz) / max(abs(F), 1e-300)
        F = Fz
        record(it, X, F)
        if change < config.rel_tol:
            converged = True
            break

    U = X[:, 0] if squeeze and C == 1 else X
    return SolveResult(U=U, iterations=it, converged=converged, trace=trace, weights=smooth.w)
