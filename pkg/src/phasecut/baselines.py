"""Classical phase unwrappers used as comparison baselines.

* Itoh: integrate wrapped differences along the first row, then down columns.
* Goldstein: residues joined by branch cuts, flood-fill integration around them.
* Quality guided: region growing ordered by a phase-derivative-variance map.
* Least squares: unweighted Poisson solve with a cosine transform.
"""
from __future__ import annotations

import heapq
import time
from dataclasses import dataclass

import numba
import numpy as np
from scipy.fft import dctn, idctn
from scipy.ndimage import uniform_filter
from scipy.spatial import cKDTree

from .phaseshift import wrap
from .raster import LabelField, ScalarField
from .unwrap import UnwrapResult, _energy

TWO_PI = 2 * np.pi


def _finish(phi: ScalarField, phi_abs, mask, t0, method, **info):
    """Package an absolute phase that is congruent to ``phi`` on ``mask``."""
    k = np.where(mask, np.rint((phi_abs - phi.values) / TWO_PI), 0).astype(np.int64)
    vals = np.where(mask, phi.values + TWO_PI * k, 0.0)
    return UnwrapResult(
        k=LabelField(k, mask), phi_abs=ScalarField(vals, mask, "radians"),
        energy=_energy(phi.values, k, mask), iterations=1,
        wall_time=time.perf_counter() - t0, info={"method": method, **info})


# ------------------------------------------------------------------- Itoh

def itoh_integrate(phi: np.ndarray) -> np.ndarray:
    """Row 0 left to right, then every column top to bottom."""
    out = np.empty_like(phi, dtype=np.float64)
    out[0] = phi[0, 0] + np.concatenate([[0.0], np.cumsum(wrap(np.diff(phi[0])))])
    out[1:] = out[0] + np.cumsum(wrap(np.diff(phi, axis=0)), axis=0)
    return out


def unwrap_itoh(phi: ScalarField) -> UnwrapResult:
    t0 = time.perf_counter()
    return _finish(phi, itoh_integrate(phi.values), phi.mask, t0, "itoh")


# --------------------------------------------------------------- residues

@dataclass(frozen=True)
class ResidueField:
    charge: np.ndarray     # (H-1, W-1) int8, loop with top-left pixel (x, y)
    mask: np.ndarray       # loops whose four corners are valid

    @property
    def positions(self):
        """(x, y) of the top-left pixel of every charged loop, raster order."""
        ys, xs = np.nonzero(self.charge)
        return np.stack([xs, ys], -1)

    @property
    def total(self) -> int:
        return int(self.charge.sum())


def loop_circulation(phi: np.ndarray) -> np.ndarray:
    """Sum of wrapped differences around each elementary 2x2 loop
    (right, down, left, up, i.e. counter-clockwise for x right, y down)."""
    a, b = phi[:-1, :-1], phi[:-1, 1:]
    c, d = phi[1:, 1:], phi[1:, :-1]
    return wrap(b - a) + wrap(c - b) + wrap(d - c) + wrap(a - d)


def compute_residues(phi: ScalarField) -> ResidueField:
    m = phi.mask
    lm = m[:-1, :-1] & m[:-1, 1:] & m[1:, 1:] & m[1:, :-1]
    q = np.rint(loop_circulation(phi.values) / TWO_PI).astype(np.int8)
    return ResidueField(np.where(lm, q, 0).astype(np.int8), lm)


# -------------------------------------------------------------- Goldstein

def _line(x0, y0, x1, y1):
    """8-connected Bresenham pixels from (x0, y0) to (x1, y1) inclusive."""
    n = max(abs(x1 - x0), abs(y1 - y0))
    t = np.linspace(0.0, 1.0, n + 1)
    return np.rint(x0 + t * (x1 - x0)).astype(np.int64), np.rint(y0 + t * (y1 - y0)).astype(np.int64)


def branch_cuts(res: ResidueField, shape) -> tuple[np.ndarray, list]:
    """Place cuts pairing opposite residues, nearest first, with search
    radius 1, 2, 4, ...; residues closer to the border than the current
    radius and still unpaired are connected to the border."""
    h, w = shape
    pos = res.positions
    charge = res.charge[pos[:, 1], pos[:, 0]].astype(int) if len(pos) else np.zeros(0, int)
    cut = np.zeros((h, w), bool)
    segments = []
    if len(pos) == 0:
        return cut, segments
    # border distance of a loop measured from its top-left pixel
    border = np.minimum.reduce([pos[:, 0], pos[:, 1], w - 1 - pos[:, 0], h - 1 - pos[:, 1]])
    done = np.zeros(len(pos), bool)
    tree = cKDTree(pos)
    r = 1
    while not done.all():
        pairs = tree.query_pairs(r, p=np.inf, output_type="ndarray")
        if len(pairs):
            pairs = pairs[charge[pairs[:, 0]] + charge[pairs[:, 1]] == 0]
            d = np.hypot(*(pos[pairs[:, 0]] - pos[pairs[:, 1]]).T)
            order = np.lexsort((pairs[:, 1], pairs[:, 0], d))
            for i, j in pairs[order]:
                if done[i] or done[j]:
                    continue
                done[i] = done[j] = True
                segments.append((tuple(pos[i]), tuple(pos[j])))
        for i in np.nonzero(~done & (border <= r))[0]:
            x, y = pos[i]
            choices = [(x, (x, y), (0, y)), (w - 1 - x, (x, y), (w - 1, y)),
                       (y, (x, y), (x, 0)), (h - 1 - y, (x, y), (x, h - 1))]
            _, a, b = min(choices, key=lambda c: c[0])
            segments.append((a, b))
            done[i] = True
        r *= 2
    for (x0, y0), (x1, y1) in segments:
        xs, ys = _line(x0, y0, x1, y1)
        cut[ys, xs] = True
    return cut, segments


@numba.njit(cache=True)
def _flood(phi, allowed, seed_y, seed_x, out, done, from_done_only):
    """BFS over ``allowed`` pixels adding wrapped differences.

    With ``from_done_only`` the queue is filled with every pixel of
    ``allowed`` that touches ``done`` (used to fill cut pixels last).
    """
    h, w = phi.shape
    qy = np.empty(h * w, np.int64)
    qx = np.empty(h * w, np.int64)
    head = 0
    tail = 0
    if not from_done_only:
        done[seed_y, seed_x] = True
        out[seed_y, seed_x] = phi[seed_y, seed_x]
        qy[tail] = seed_y
        qx[tail] = seed_x
        tail += 1
    else:
        for y in range(h):
            for x in range(w):
                if done[y, x]:
                    qy[tail] = y
                    qx[tail] = x
                    tail += 1
    while head < tail:
        y = qy[head]
        x = qx[head]
        head += 1
        for k in range(4):
            ny = y + (k == 3) - (k == 2)
            nx = x + (k == 1) - (k == 0)
            if ny < 0 or ny >= h or nx < 0 or nx >= w:
                continue
            if done[ny, nx] or not allowed[ny, nx]:
                continue
            d = phi[ny, nx] - phi[y, x]
            d = np.pi - np.mod(np.pi - d, 2 * np.pi)
            out[ny, nx] = out[y, x] + d
            done[ny, nx] = True
            qy[tail] = ny
            qx[tail] = nx
            tail += 1


def _central_seed(allowed):
    h, w = allowed.shape
    ys, xs = np.nonzero(allowed)
    i = np.argmin((ys - (h - 1) / 2) ** 2 + (xs - (w - 1) / 2) ** 2)
    return int(ys[i]), int(xs[i])


def unwrap_goldstein(phi: ScalarField) -> UnwrapResult:
    """Branch-cut unwrapping. Pixels cut off from the main region are masked."""
    t0 = time.perf_counter()
    res = compute_residues(phi)
    cut, segments = branch_cuts(res, phi.values.shape)
    allowed = phi.mask & ~cut
    out = np.zeros(phi.values.shape)
    done = np.zeros(phi.values.shape, bool)
    if allowed.any():
        sy, sx = _central_seed(allowed)
        _flood(phi.values, allowed, sy, sx, out, done, False)
        # cut pixels take their value from an already unwrapped neighbour
        cut_ok = phi.mask & cut
        _flood(phi.values, cut_ok, 0, 0, out, done, True)
    if not done.any():
        raise ValueError("no pixel could be unwrapped")
    return _finish(phi, out, done, t0, "goldstein",
                   residues=int(np.abs(res.charge).sum()), cuts=len(segments),
                   unreached=int((phi.mask & ~done).sum()))


# ---------------------------------------------------------- quality guided

def derivative_variance_quality(phi: ScalarField) -> np.ndarray:
    """Negative 3x3 variance of the wrapped x and y differences (higher is better)."""
    p = phi.values
    dx = np.zeros_like(p)
    dy = np.zeros_like(p)
    dx[:, :-1] = wrap(np.diff(p, axis=1))
    dx[:, -1] = dx[:, -2]
    dy[:-1] = wrap(np.diff(p, axis=0))
    dy[-1] = dy[-2]
    var = 0.0
    for d in (dx, dy):
        m1 = uniform_filter(d, 3, mode="nearest")
        m2 = uniform_filter(d * d, 3, mode="nearest")
        var = var + np.maximum(m2 - m1 * m1, 0.0)
    return -var


def unwrap_quality_guided(phi: ScalarField, quality: np.ndarray | None = None,
                          record_order: bool = False) -> UnwrapResult:
    """Grow from the best pixel; always extend at the best frontier pixel.

    Ties in quality are broken by raster index so the result is deterministic.
    With ``record_order`` the popped sequence of (quality, frontier max) is
    kept in ``info["order"]`` for checking the priority contract.
    """
    t0 = time.perf_counter()
    q = derivative_variance_quality(phi) if quality is None else np.asarray(quality, float)
    p = phi.values
    mask = phi.mask
    h, w = p.shape
    out = np.zeros((h, w))
    done = np.zeros((h, w), bool)
    order = []
    total = int(mask.sum())
    n = 0
    flat_q = np.where(mask, q, -np.inf).ravel()
    while n < total:
        start = int(np.argmax(np.where(done.ravel(), -np.inf, flat_q)))
        sy, sx = divmod(start, w)
        done[sy, sx] = True
        out[sy, sx] = p[sy, sx]
        n += 1
        heap = []
        _push_neighbors(heap, sy, sx, q, mask, done, h, w)
        while heap:
            negq, idx, py, px = heapq.heappop(heap)
            y, x = divmod(idx, w)
            if done[y, x]:
                continue
            if record_order:
                frontier = max((-e[0] for e in heap if not done[divmod(e[1], w)]), default=-np.inf)
                order.append((-negq, frontier))
            out[y, x] = out[py, px] + wrap(p[y, x] - p[py, px])
            done[y, x] = True
            n += 1
            _push_neighbors(heap, y, x, q, mask, done, h, w)
    info = {"order": order} if record_order else {}
    return _finish(phi, out, mask, t0, "qguide", **info)


def _push_neighbors(heap, y, x, q, mask, done, h, w):
    for ny, nx in ((y, x - 1), (y, x + 1), (y - 1, x), (y + 1, x)):
        if 0 <= ny < h and 0 <= nx < w and mask[ny, nx] and not done[ny, nx]:
            heapq.heappush(heap, (-q[ny, nx], ny * w + nx, y, x))


# ----------------------------------------------------------- least squares

def _neumann_poisson(rhs):
    h, w = rhs.shape
    kx = 2 * np.cos(np.pi * np.arange(w) / w) - 2
    ky = 2 * np.cos(np.pi * np.arange(h) / h) - 2
    lam = ky[:, None] + kx[None, :]
    lam[0, 0] = 1.0
    c = dctn(rhs, type=2, norm="ortho") / lam
    c[0, 0] = 0.0
    return idctn(c, type=2, norm="ortho")


def least_squares_phase(phi: np.ndarray) -> np.ndarray:
    """Minimizer of sum |grad Phi - wrap(grad phi)|^2 over all grid edges."""
    gx = wrap(np.diff(phi, axis=1))
    gy = wrap(np.diff(phi, axis=0))
    div = np.zeros_like(phi, dtype=np.float64)
    div[:, :-1] += gx
    div[:, 1:] -= gx
    div[:-1] += gy
    div[1:] -= gy
    # with D the forward-difference operator, div = -D^T g and the mirrored
    # 5-point Laplacian is -D^T D, so the normal equations read Lap Phi = div
    return _neumann_poisson(div)


def unwrap_least_squares(phi: ScalarField) -> UnwrapResult:
    """Unweighted least squares on the full grid (mask ignored in the solve).

    The free additive constant is set to the circular mean of ``phi - Phi``
    over valid pixels so the output is as congruent to ``phi`` as it can be.
    The output is real valued; ``k = round((Phi - phi) / 2 pi)`` and the
    RMS congruence residual is reported in ``info``.
    """
    t0 = time.perf_counter()
    big = least_squares_phase(phi.values)
    m = phi.mask
    big = big + np.angle(np.mean(np.exp(1j * (phi.values[m] - big[m]))))
    k = np.where(m, np.rint((big - phi.values) / TWO_PI), 0).astype(np.int64)
    resid = np.where(m, big - phi.values - TWO_PI * k, 0.0)
    hm, vm = m[:, :-1] & m[:, 1:], m[:-1] & m[1:]
    energy = float(np.sum(np.diff(big, axis=1)[hm] ** 2) + np.sum(np.diff(big, axis=0)[vm] ** 2))
    return UnwrapResult(
        k=LabelField(k, m), phi_abs=ScalarField(np.where(m, big, 0.0), m, "radians"),
        energy=energy, iterations=1, wall_time=time.perf_counter() - t0,
        info={"method": "lsq", "congruence_rms": float(np.sqrt(np.mean(resid[m] ** 2)))})
