"""Analytic Riemann map from the image rectangle onto the unit disk.

The rectangle of pixel centres ``[0, W-1] x [0, H-1]`` is scaled onto
``[-K, K] x [0, K']`` where ``K, K'`` are the complete elliptic integrals of
a parameter ``m`` chosen so that ``2K / K'`` equals the aspect ratio. Jacobi's
``sn`` maps that rectangle onto the upper half plane (corners to
``+-1, +-1/sqrt(m)``), and a Cayley transform sends the half plane to the disk
with the rectangle centre at the origin. Image coordinates ``x + i y`` (y
down) are used directly as the complex variable, so every map here is
holomorphic, hence orientation preserving, in pixel coordinates.

The inverse uses Carlson's symmetric integral,
``sn^{-1}(z) = z R_F(1 - z^2, 1 - m z^2, 1)``, whose principal branch covers
the closed upper half plane.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.optimize import brentq
from scipy.special import ellipj, ellipk, ellipkm1, elliprf

from .maps import DiffeoMap, trim_unresolved
from .mobius import MobiusParams, _backward, _forward


@dataclass(frozen=True)
class RectDisk:
    """Parameters of the rectangle <-> disk map for one grid size."""
    width: int
    height: int
    m: float
    K: float
    Kp: float
    a: complex     # preimage of the disk centre in the upper half plane

    def to_disk(self, x, y):
        """Pixel coordinates on the rectangle -> complex disk coordinate."""
        u = -self.K + 2 * self.K * np.asarray(x, float) / (self.width - 1)
        v = self.Kp * np.asarray(y, float) / (self.height - 1)
        s, c, d, _ = ellipj(u, self.m)
        s1, c1, d1, _ = ellipj(v, 1 - self.m)
        num = s * d1 + 1j * c * d * s1 * c1
        den = c1 * c1 + self.m * s * s * s1 * s1
        # sn = num / den; keep the Cayley step finite at the pole (den == 0)
        return (num - self.a * den) / (num - np.conj(self.a) * den)

    def from_disk(self, w):
        """Complex disk coordinate (|w| <= 1) -> pixel coordinates (x, y)."""
        w = np.asarray(w, np.complex128)
        # pull boundary points a hair inside: R_F has its branch cut on the
        # negative real axis, which the image of the circle runs along
        r = np.abs(w)
        edge = r > 1 - 1e-10
        w = np.where(edge, (1 - 1e-10) * w / np.where(edge, r, 1), w)
        z = (self.a - np.conj(self.a) * w) / (1 - w)
        z = z.real + 1j * np.maximum(z.imag, 0.0)
        t = z * elliprf(1 - z * z, 1 - self.m * z * z, np.ones_like(z))
        x = (t.real + self.K) * (self.width - 1) / (2 * self.K)
        y = t.imag * (self.height - 1) / self.Kp
        return np.clip(x, 0, self.width - 1), np.clip(y, 0, self.height - 1)


@lru_cache(maxsize=16)
def rect_disk(width: int, height: int) -> RectDisk:
    aspect = (width - 1) / (height - 1)
    f = lambda m: 2 * ellipk(m) / ellipkm1(m) - aspect
    lo, hi = 1e-15, 1 - 1e-15
    if f(lo) > 0 or f(hi) < 0:
        raise ValueError(f"aspect ratio {aspect:.3g} outside the supported range")
    m = brentq(f, lo, hi, xtol=1e-300, rtol=1e-15)
    K, Kp = ellipk(m), ellipkm1(m)
    # sn(i K'/2 | m) = i sc(K'/2 | 1 - m)
    s, c, _, _ = ellipj(Kp / 2, 1 - m)
    return RectDisk(width, height, float(m), float(K), float(Kp), complex(1j * s / c))


def disk_grid(size: int):
    """Square target grid holding the unit disk: (w per pixel, disk mask)."""
    c = (size - 1) / 2
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    w = ((xx - c) + 1j * (yy - c)) / c
    return w, np.abs(w) <= 1 + 1e-12


def _to_pixels(w, size):
    c = (size - 1) / 2
    return np.stack([c + c * w.real, c + c * w.imag], axis=-1)


def conformal_map(shape, mobius: MobiusParams | None = None, name: str = "") -> DiffeoMap:
    """Rectangle -> disk Riemann map, optionally followed by a Mobius map.

    ``shape`` is ``(height, width)``; the target is a ``S x S`` grid with
    ``S = max(width, height)`` masked to the inscribed disk. Source pixels
    that the disk grid cannot resolve (round trip off by more than half a
    pixel, only near the corners) are masked on the source side.
    """
    h, w = shape
    rd = rect_disk(w, h)
    size = max(w, h)
    wt, tmask = disk_grid(size)
    wt = np.where(tmask, wt, 0)
    if mobius is not None:
        wt = _backward(mobius, wt)
    x, y = rd.from_disk(wt)
    fwd = np.stack([x, y], axis=-1)

    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    ws = rd.to_disk(xx, yy)
    if mobius is not None:
        ws = _forward(mobius, ws)
    inv = _to_pixels(ws, size)
    inv = np.clip(inv, 0, size - 1)
    dmap = DiffeoMap(fwd, tmask, inv, np.ones((h, w), bool), name)
    # near the corners the disk grid squeezes many source pixels into one
    return trim_unresolved(dmap)


def disk_mobius_map(size: int, mobius: MobiusParams, name: str = "") -> DiffeoMap:
    """Mobius automorphism of the disk inscribed in a ``size x size`` grid.

    Both sides are the disk grid; pixels outside the disk are masked.
    """
    w, mask = disk_grid(size)
    w = np.where(mask, w, 0)
    fwd = _to_pixels(_backward(mobius, w), size)
    inv = _to_pixels(_forward(mobius, w), size)
    return DiffeoMap(fwd, mask, inv, mask, name or "mobius")


def rect_to_disk(shape) -> DiffeoMap:
    return conformal_map(shape, None, "rect_to_disk")


def cauchy_riemann_residual(dmap: DiffeoMap, corner_margin: int = 1) -> float:
    """RMS of |dw/dy - i dw/dx| / |dw/dx| for the source-side map ``inverse``.

    Central differences on interior pixels; the ``corner_margin`` pixels
    nearest each corner (where the map is singular) are skipped.
    """
    w = dmap.inverse[..., 0] + 1j * dmap.inverse[..., 1]
    wx = 0.5 * (w[1:-1, 2:] - w[1:-1, :-2])
    wy = 0.5 * (w[2:, 1:-1] - w[:-2, 1:-1])
    r = np.abs(wy - 1j * wx) / np.maximum(np.abs(wx) + np.abs(wy), 1e-300) * 2
    h, wd = r.shape
    keep = np.ones(r.shape, bool)
    cm = corner_margin
    if cm > 0:
        for ys in (slice(0, cm), slice(h - cm, h)):
            for xs in (slice(0, cm), slice(wd - cm, wd)):
                keep[ys, xs] = False
    return float(np.sqrt(np.mean(r[keep] ** 2)))


def dirichlet_energy(values: np.ndarray, mask: np.ndarray | None = None) -> float:
    """Sum of squared differences over 4-connected edges with both ends valid."""
    if mask is None:
        mask = np.ones(values.shape, bool)
    hm = mask[:, 1:] & mask[:, :-1]
    vm = mask[1:] & mask[:-1]
    dh = (values[:, 1:] - values[:, :-1])[hm]
    dv = (values[1:] - values[:-1])[vm]
    return float(np.dot(dh, dh) + np.dot(dv, dv))


def disk_dirichlet_energy(func, shape, mobius: MobiusParams | None = None) -> float:
    """Discrete harmonic energy of ``func`` pulled onto the disk grid.

    ``func(x, y)`` is evaluated at source pixel coordinates. Edges that cross
    the unit circle are cut at the crossing point and contribute
    ``(f_in - f_boundary)^2 / t`` for the inside fraction ``t``, so the
    energy of the boundary band is not lost to the pixelated disk mask.
    """
    h, w = shape
    rd = rect_disk(w, h)
    size = max(w, h)
    wt, tmask = disk_grid(size)

    def pull(wd):
        if mobius is not None:
            wd = _backward(mobius, wd)
        x, y = rd.from_disk(wd)
        return func(x, y)

    vals = np.zeros(tmask.shape)
    vals[tmask] = pull(wt[tmask])
    energy = dirichlet_energy(vals, tmask)
    c = (size - 1) / 2
    r2 = c * c
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    for axis in (1, 0):
        a_in = tmask[:, :-1] if axis == 1 else tmask[:-1]
        b_in = tmask[:, 1:] if axis == 1 else tmask[1:]
        for inside, step in ((a_in & ~b_in, 1), (b_in & ~a_in, -1)):
            iy, ix = np.nonzero(inside)
            if step == -1:
                iy, ix = (iy, ix + 1) if axis == 1 else (iy + 1, ix)
            px, py = xx[iy, ix] - c, yy[iy, ix] - c
            if axis == 1:
                xb = step * np.sqrt(np.maximum(r2 - py * py, 0.0))
                t = np.abs(xb - px)
                wb = (xb + 1j * py) / c
            else:
                yb = step * np.sqrt(np.maximum(r2 - px * px, 0.0))
                t = np.abs(yb - py)
                wb = (px + 1j * yb) / c
            wb = wb / np.abs(wb)
            keep = t > 1e-9
            df = vals[iy, ix][keep] - pull(wb[keep])
            energy += float(np.sum(df * df / t[keep]))
    return energy
