"""Phase-count energy, GraphCut jump-move unwrapping and its coarse-to-fine driver.

The energy of a count field ``k`` is the squared-difference smoothness of the
absolute phase ``Phi = phi + 2 pi k`` summed over 4-connected valid edges.
Expanding ``|Phi_p - Phi_q|^2`` gives a constant ``dphi^2`` plus a linear
term ``4 pi dphi (k_p - k_q)`` and a convex pairwise term
``4 pi^2 (k_p - k_q)^2``; convexity is what makes every +/-1 jump move a
submodular binary problem.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .mincut import build_grid_network, solve_maxflow
from .phaseshift import wrap
from .raster import LabelField, ScalarField

log = logging.getLogger(__name__)

TWO_PI = 2 * np.pi


@dataclass(frozen=True)
class UnwrapConfig:
    k_max: int = 256
    max_sweeps: int = 500
    epsilon: float | None = None   # None: 1e-6 per valid edge
    levels: int = 3

    def __post_init__(self):
        if self.k_max < 1 or self.levels < 1 or self.max_sweeps < 1:
            raise ValueError("k_max, levels and max_sweeps must be >= 1")
        if self.epsilon is not None and not self.epsilon > 0:
            raise ValueError("epsilon must be positive")


@dataclass
class UnwrapResult:
    k: LabelField
    phi_abs: ScalarField
    energy: float
    iterations: int
    wall_time: float
    energy_history: list = field(default_factory=list)
    info: dict = field(default_factory=dict)


def edge_energy(dphi, kp, kq):
    """Label-dependent part of ``(dphi + 2 pi (kp - kq))^2``."""
    dk = np.subtract(kp, kq)
    return 4 * np.pi * dphi * dk + 4 * np.pi ** 2 * dk * dk


def _edge_masks(mask):
    return mask[:, :-1] & mask[:, 1:], mask[:-1] & mask[1:]


def valid_edge_count(mask) -> int:
    h, v = _edge_masks(np.asarray(mask, bool))
    return int(h.sum() + v.sum())


def _energy(phi: np.ndarray, k: np.ndarray, mask: np.ndarray) -> float:
    big = phi + TWO_PI * k
    hm, vm = _edge_masks(mask)
    dh = (big[:, :-1] - big[:, 1:])[hm]
    dv = (big[:-1] - big[1:])[vm]
    return float(np.dot(dh, dh) + np.dot(dv, dv))


def total_energy(phi: ScalarField, k) -> float:
    labels = k.labels if isinstance(k, LabelField) else np.asarray(k)
    if labels.shape != phi.values.shape:
        raise ValueError(f"label shape {labels.shape} does not match phase {phi.values.shape}")
    mask = phi.mask if not isinstance(k, LabelField) else phi.mask & k.mask
    return _energy(phi.values, labels, mask)


def _jump(phi, k, mask, delta, k_max):
    """One exact binary move k -> k + delta * x. Returns (k_new, energy_new)."""
    big = phi + TWO_PI * k
    step = TWO_PI * delta
    tables = []
    for a in (big[:, :-1] - big[:, 1:], big[:-1] - big[1:]):
        t = np.empty(a.shape + (2, 2))
        t[..., 0, 0] = t[..., 1, 1] = a * a
        t[..., 1, 0] = (a + step) ** 2
        t[..., 0, 1] = (a - step) ** 2
        tables.append(t)
    unary = np.zeros(phi.shape + (2,))
    unary[..., 1] = np.where(np.abs(k + delta) > k_max, np.inf, 0.0)
    net, _ = build_grid_network(mask, unary, tables[0], tables[1])
    _, side = solve_maxflow(net)
    move = (side == 1) & mask
    k_new = k + delta * move.astype(k.dtype)
    return k_new, _energy(phi, k_new, mask)


def jump_move(phi: ScalarField, k: LabelField, delta: int, cfg: UnwrapConfig):
    """Best move offering every pixel ``k`` or ``k + delta``.

    Returns ``(k_new, improved)``; ``k`` comes back unchanged unless the
    energy strictly decreases.
    """
    if abs(delta) != 1:
        raise ValueError("delta must be +1 or -1")
    mask = phi.mask & k.mask
    labels = np.array(k.labels)
    e0 = _energy(phi.values, labels, mask)
    k_new, e1 = _jump(phi.values, labels, mask, delta, cfg.k_max)
    if e1 < e0:
        return LabelField(k_new, k.mask, cfg.k_max), True
    return k, False


def _sweeps(phi, mask, k, cfg: UnwrapConfig, history: list):
    eps = cfg.epsilon if cfg.epsilon is not None else 1e-6 * max(valid_edge_count(mask), 1)
    energy = _energy(phi, k, mask)
    history.append(energy)
    solves = 0
    for _ in range(cfg.max_sweeps):
        gain = 0.0
        for delta in (1, -1):
            k_new, e_new = _jump(phi, k, mask, delta, cfg.k_max)
            solves += 1
            if e_new < energy:
                gain += energy - e_new
                k, energy = k_new, e_new
            history.append(energy)
        if gain <= eps:
            break
    return k, energy, solves


def _result(phi: ScalarField, k, energy, solves, t0, history, k_max):
    k = np.where(phi.mask, k, 0)
    return UnwrapResult(
        k=LabelField(k, phi.mask, k_max),
        phi_abs=phi.with_values(phi.values + TWO_PI * k, units="radians"),
        energy=energy, iterations=solves, wall_time=time.perf_counter() - t0,
        energy_history=history)


def unwrap_graphcut(phi: ScalarField, cfg: UnwrapConfig = UnwrapConfig(), k0=None) -> UnwrapResult:
    """Flat GraphCut unwrapping: alternate +1/-1 jump moves from ``k0`` (default 0)."""
    t0 = time.perf_counter()
    mask = np.array(phi.mask)
    k = np.zeros(phi.values.shape, np.int64) if k0 is None else np.array(k0, np.int64)
    history = []
    k, energy, solves = _sweeps(phi.values, mask, k, cfg, history)
    return _result(phi, k, energy, solves, t0, history, cfg.k_max)


def build_pyramid(phi: ScalarField, levels: int) -> list[ScalarField]:
    """Phase pyramid by averaging unit phasors over 2x2 blocks.

    Level 0 is the input. Odd trailing rows/columns form partial blocks.
    Blocks without a valid pixel (or with a vanishing phasor sum) are masked.
    """
    if levels < 1:
        raise ValueError("levels must be >= 1")
    out = [phi]
    z = np.where(phi.mask, np.exp(1j * phi.values), 0)
    m = np.array(phi.mask)
    for lvl in range(1, levels):
        h, w = m.shape
        hh, ww = (h + 1) // 2, (w + 1) // 2
        if hh < 8 or ww < 8:
            raise ValueError(f"{levels} levels would shrink a {phi.values.shape[1]}x"
                             f"{phi.values.shape[0]} grid below 8x8 at level {lvl}")
        zp = np.zeros((2 * hh, 2 * ww), complex)
        mp = np.zeros((2 * hh, 2 * ww), bool)
        zp[:h, :w] = z
        mp[:h, :w] = m
        zs = zp.reshape(hh, 2, ww, 2).sum(axis=(1, 3))
        cnt = mp.reshape(hh, 2, ww, 2).sum(axis=(1, 3))
        m = (cnt > 0) & (np.abs(zs) > 1e-12)
        ang = np.where(m, np.angle(zs), 0.0)
        level = ScalarField(wrap(ang), m, "radians")
        out.append(level)
        z = np.where(m, zs / np.where(m, np.abs(zs), 1), 0)
    return out


def upsample_labels(k: np.ndarray, shape) -> np.ndarray:
    """Nearest-neighbor 2x label upsampling cropped to ``shape``."""
    up = np.repeat(np.repeat(k, 2, axis=0), 2, axis=1)
    return np.ascontiguousarray(up[:shape[0], :shape[1]])


def unwrap_hierarchical(phi: ScalarField, cfg: UnwrapConfig = UnwrapConfig()) -> UnwrapResult:
    """Coarse-to-fine GraphCut: solve the coarsest pyramid level, then refine."""
    t0 = time.perf_counter()
    pyr = build_pyramid(phi, cfg.levels)
    history = []
    solves = 0
    k = np.zeros(pyr[-1].values.shape, np.int64)
    for level in reversed(pyr):
        mask = np.array(level.mask)
        if k.shape != mask.shape:
            k = upsample_labels(k, mask.shape)
        k, energy, n = _sweeps(level.values, mask, k, cfg, history)
        solves += n
        log.debug("level %s: energy %.6g after %d solves", level.values.shape, energy, n)
    return _result(phi, k, energy, solves, t0, history, cfg.k_max)
