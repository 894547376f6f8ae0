"""Quadratic-cost optimal transport on the image rectangle.

The Brenier potential is written ``u = |x|^2 / 2 + v`` in pixel units, so
``T = grad u = x + grad v``. The Monge-Ampere equation
``det D^2 u = f / g(grad u)`` is solved by the fixed point

    Lap u_{n+1} = sqrt((u_xx - u_yy)^2 + 4 u_xy^2 + 4 f / g(grad u_n)),

whose fixed points satisfy the equation exactly because
``(u_xx + u_yy)^2 - (u_xx - u_yy)^2 - 4 u_xy^2 = 4 det D^2 u``. Each step is
one Poisson solve for ``v`` with homogeneous Neumann data, done with a
type-II cosine transform on the cell-centred grid. Zero normal derivative
of ``v`` keeps the boundary in place, so ``T`` maps the rectangle into itself.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.fft import dctn, idctn
from scipy.ndimage import distance_transform_edt

from ..raster import ScalarField, bilinear
from .maps import DiffeoMap, OrientationError, jacobian_det, trim_unresolved

log = logging.getLogger(__name__)

DENSITY_FLOOR = 0.05


class OTConvergenceError(RuntimeError):
    def __init__(self, msg, history):
        super().__init__(msg)
        self.history = list(history)


@dataclass(frozen=True)
class RoiSpec:
    center: tuple     # (x, y) in pixels
    sigma: float
    weight: float = 1.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("ROI sigma must be positive")
        if not self.weight > 0:
            raise ValueError("ROI weight must be positive")
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))

    def check_inside(self, shape):
        h, w = shape
        x, y = self.center
        if not (0 < x < w - 1 and 0 < y < h - 1):
            raise ValueError(f"ROI center ({x}, {y}) is not strictly inside the {w}x{h} grid")


def build_target_density(shape, rois, floor: float = DENSITY_FLOOR) -> ScalarField:
    """Gaussian-mixture density over the pixels of ``shape`` = (h, w).

    Each ROI adds ``weight * exp(-r^2 / (2 sigma^2))`` (peak value ``weight``)
    on top of a constant ``floor``; the result is scaled to unit pixel sum.
    """
    h, w = shape
    if not floor > 0 and not rois:
        raise ValueError("need a positive floor or at least one ROI")
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    g = np.full((h, w), float(floor))
    for roi in rois:
        roi.check_inside(shape)
        cx, cy = roi.center
        g += roi.weight * np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * roi.sigma ** 2))
    return ScalarField(g / g.sum(), None, "density")


@dataclass
class BrenierPotential:
    u: ScalarField                 # |x|^2/2 + v, pixel units
    v: np.ndarray                  # perturbation from the identity potential
    residual_history: list = field(default_factory=list)
    iterations: int = 0

    @property
    def residual(self) -> float:
        return self.residual_history[-1] if self.residual_history else 0.0

    @classmethod
    def from_perturbation(cls, v, **kw):
        v = np.asarray(v, np.float64)
        h, w = v.shape
        yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
        return cls(ScalarField(0.5 * (xx * xx + yy * yy) + v, None, "length"), v, **kw)


def _neumann_eigs(h, w):
    kx = 2 * np.cos(np.pi * np.arange(w) / w) - 2
    ky = 2 * np.cos(np.pi * np.arange(h) / h) - 2
    lam = ky[:, None] + kx[None, :]
    lam[0, 0] = 1.0
    return lam


def _poisson_neumann(rhs, lam):
    c = dctn(rhs, type=2, norm="ortho")
    c /= lam
    c[0, 0] = 0.0
    return idctn(c, type=2, norm="ortho")


def _derivatives(v):
    """Second derivatives and gradient of ``v`` with mirrored ghost cells."""
    p = np.pad(v, 1, mode="edge")
    vxx = p[1:-1, 2:] - 2 * v + p[1:-1, :-2]
    vyy = p[2:, 1:-1] - 2 * v + p[:-2, 1:-1]
    vxy = 0.25 * (p[2:, 2:] - p[2:, :-2] - p[:-2, 2:] + p[:-2, :-2])
    gx = 0.5 * (p[1:-1, 2:] - p[1:-1, :-2])
    gy = 0.5 * (p[2:, 1:-1] - p[:-2, 1:-1])
    return vxx, vyy, vxy, gx, gy


def monge_ampere_residual(v, ratio_target, ratio_source=1.0):
    """Per-pixel ``det D^2 u - f / g(grad u)`` with densities relative to uniform."""
    h, w = v.shape
    vxx, vyy, vxy, gx, gy = _derivatives(v)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    tx = np.clip(xx + gx, 0, w - 1)
    ty = np.clip(yy + gy, 0, h - 1)
    gt, _ = bilinear(ratio_target, np.ones((h, w), bool), tx, ty)
    rho = ratio_source / gt
    return (1 + vxx) * (1 + vyy) - vxy * vxy - rho, (vxx, vyy, vxy, rho)


def solve_fft_ot(target: ScalarField, tol: float = 1e-3, max_iter: int = 500,
                 source: ScalarField | None = None,
                 accept_plateau: bool = False) -> BrenierPotential:
    """Brenier potential pushing ``source`` (default uniform) onto ``target``.

    Both densities are pixel masses. The residual is the mean absolute
    Monge-Ampere defect in units of the uniform density. The relaxation
    factor is halved whenever the residual grows.

    On coarse grids the discretization error can sit above ``tol``. With
    ``accept_plateau`` the iteration stops once the residual stalls (under
    0.1% gain over 20 steps) and returns that potential instead of raising.
    """
    g = np.asarray(target.values, np.float64)
    if np.any(g <= 0) or not np.all(np.isfinite(g)):
        raise ValueError("target density must be finite and positive")
    h, w = g.shape
    ratio_t = g / g.sum() * (h * w)
    if source is None:
        ratio_s = 1.0
    else:
        f = np.asarray(source.values, np.float64)
        if f.shape != g.shape or np.any(f <= 0):
            raise ValueError("source density must be positive on the target grid")
        ratio_s = f / f.sum() * (h * w)
    lam = _neumann_eigs(h, w)
    v = np.zeros((h, w))
    omega = 1.0
    history = []
    best_v = v
    for it in range(max_iter + 1):
        r, (vxx, vyy, vxy, rho) = monge_ampere_residual(v, ratio_t, ratio_s)
        res = float(np.mean(np.abs(r)))
        if history and res > history[-1]:
            # overshoot: back off to the previous iterate with a smaller step
            omega *= 0.5
            if omega < 1e-3:
                break
            v = best_v
            continue
        history.append(res)
        best_v = v
        if res <= tol:
            log.debug("FFT-OT converged after %d iterations, residual %.3g", it, res)
            return BrenierPotential.from_perturbation(v, residual_history=history, iterations=it)
        if accept_plateau and len(history) > 20 and history[-21] - res < 1e-3 * history[-21]:
            log.info("FFT-OT stalled at residual %.3g (tol %g) after %d iterations", res, tol, it)
            return BrenierPotential.from_perturbation(v, residual_history=history, iterations=it)
        uxx, uyy = 1 + vxx, 1 + vyy
        lap = np.sqrt((uxx - uyy) ** 2 + 4 * vxy * vxy + 4 * rho)
        rhs = lap - 2
        rhs -= rhs.mean()
        v = v + omega * (_poisson_neumann(rhs, lam) - v)
    raise OTConvergenceError(
        f"FFT-OT did not reach residual {tol:g} in {max_iter} iterations "
        f"(last {history[-1]:.3g})", history)


def _grad(u):
    gy, gx = np.gradient(u, edge_order=2)
    return gx, gy


def ot_to_diffeo(pot: BrenierPotential, newton_iters: int = 30, name: str = "ot") -> DiffeoMap:
    """Turn a Brenier potential into a :class:`DiffeoMap` on its own grid.

    ``forward = grad u`` by central differences (second-order one-sided at
    the border). Target pixels whose image leaves the pixel domain
    ``[-0.5, W - 0.5] x [-0.5, H - 0.5]`` are masked; the stored coordinates are
    clamped to the pixel-centre rectangle. The inverse solves ``grad u(x) = p``
    by Newton's method, seeded from a nearest-neighbour scatter of the forward
    map.
    """
    u = pot.u.values
    h, w = u.shape
    tx, ty = _grad(u)
    det = jacobian_det(np.stack([tx, ty], -1), np.ones((h, w), bool))
    bad = ~(det > 0)
    if bad.any():
        y, x = np.argwhere(bad)[0]
        raise OrientationError(f"potential is not convex at pixel (x={x}, y={y}): "
                               f"Jacobian determinant {det[y, x]:.3g}")
    fmask = (tx >= -0.5) & (tx <= w - 0.5) & (ty >= -0.5) & (ty <= h - 0.5)
    fwd = np.stack([np.clip(tx, 0, w - 1), np.clip(ty, 0, h - 1)], -1)

    # seed: scatter every target pixel into the source pixel it lands on
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    ix = np.clip(np.rint(tx), 0, w - 1).astype(np.int64)
    iy = np.clip(np.rint(ty), 0, h - 1).astype(np.int64)
    seed_x = np.zeros((h, w))
    seed_y = np.zeros((h, w))
    hit = np.zeros((h, w), bool)
    seed_x[iy[fmask], ix[fmask]] = xx[fmask]
    seed_y[iy[fmask], ix[fmask]] = yy[fmask]
    hit[iy[fmask], ix[fmask]] = True
    if not hit.all():
        _, (ny, nx) = distance_transform_edt(~hit, return_indices=True)
        seed_x, seed_y = seed_x[ny, nx], seed_y[ny, nx]

    jxx, jxy = np.gradient(tx, axis=1, edge_order=2), np.gradient(tx, axis=0, edge_order=2)
    jyx, jyy = np.gradient(ty, axis=1, edge_order=2), np.gradient(ty, axis=0, edge_order=2)
    stack = np.stack([tx, ty, jxx, jxy, jyx, jyy], -1)
    full = np.ones((h, w), bool)
    px, py = seed_x, seed_y
    for _ in range(newton_iters):
        s, _ = bilinear(stack, full, px, py)
        rx, ry = s[..., 0] - xx, s[..., 1] - yy
        a, b, c, d = s[..., 2], s[..., 3], s[..., 4], s[..., 5]
        dj = a * d - b * c
        dj = np.where(np.abs(dj) > 1e-12, dj, 1e-12)
        px = np.clip(px - (d * rx - b * ry) / dj, 0, w - 1)
        py = np.clip(py - (a * ry - c * rx) / dj, 0, h - 1)
    s, _ = bilinear(stack[..., :2], full, px, py)
    miss = np.hypot(s[..., 0] - xx, s[..., 1] - yy)
    inv = np.stack([px, py], -1)
    dmap = DiffeoMap(fwd, fmask, inv, miss <= 0.5, name)
    return trim_unresolved(dmap)
