"""Invariance-under-diffeomorphism ensemble: deform, unwrap, pull back, vote.

Each member warps the wrapped phase through its diffeomorphism, runs the
hierarchical GraphCut on the deformed image and maps the result back to the
input grid. The absolute phase of the member is pulled back by bilinear
interpolation and the count recomputed against the input wrapped phase,
``k_i(p) = round((Phi_i(g_i^{-1}(p)) - phi(p)) / 2 pi)``. Members are then
brought to a common 2 pi gauge and fused by majority vote.
"""
from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .diffeo import (DiffeoMap, MobiusParams, RoiSpec, build_target_density, conformal_map,
                     ot_to_diffeo, solve_fft_ot, warp_field)
from .raster import LabelField, ScalarField, bilinear, write_mask, write_pfm, mask_path
from .unwrap import UnwrapConfig, UnwrapResult, _energy, unwrap_hierarchical

log = logging.getLogger(__name__)

TWO_PI = 2 * np.pi
KINDS = ("conformal", "ot", "mixed")


class MemberError(RuntimeError):
    pass


@dataclass(frozen=True)
class EnsembleConfig:
    members: int = 3
    kind: str = "mixed"
    mobius: tuple = ()          # MobiusParams for conformal members
    roi_groups: tuple = ()      # tuples of RoiSpec for OT members
    include_identity: bool = True
    threads: int = 1

    def __post_init__(self):
        if self.members < 1 or self.members % 2 == 0:
            raise ValueError(f"ensemble size must be odd and >= 1, got {self.members}")
        if self.kind not in KINDS:
            raise ValueError(f"unknown member kind {self.kind!r}")
        object.__setattr__(self, "mobius", tuple(self.mobius))
        object.__setattr__(self, "roi_groups", tuple(tuple(g) for g in self.roi_groups))
        self.member_specs()

    def member_specs(self) -> list:
        """``("identity", None) | ("conformal", MobiusParams) | ("ot", rois)``
        in member order."""
        specs = [("identity", None)] if self.include_identity else []
        pool = []
        if self.kind in ("conformal", "mixed"):
            pool += [("conformal", m) for m in self.mobius]
        if self.kind in ("ot", "mixed"):
            pool += [("ot", g) for g in self.roi_groups]
        need = self.members - len(specs)
        if len(pool) < need:
            raise ValueError(f"{self.members} members requested but only "
                             f"{len(specs) + len(pool)} specified")
        return specs + pool[:need]


def default_rois(shape, sigma_frac: float = 0.08, weight: float = 1.0):
    """Three ROIs at fixed fractions of the image extent."""
    h, w = shape
    sig = sigma_frac * min(w, h)
    return tuple(RoiSpec((fx * (w - 1), fy * (h - 1)), sig, weight)
                 for fx, fy in ((0.3, 0.35), (0.7, 0.4), (0.5, 0.72)))


def default_ensemble(shape, members: int = 3, threads: int = 1) -> EnsembleConfig:
    """Identity, one Mobius member and one 3-ROI optimal-transport member."""
    return EnsembleConfig(members=members, kind="mixed",
                          mobius=(MobiusParams(0.3, 0.12 + 0.08j),),
                          roi_groups=(default_rois(shape),), threads=threads)


def build_member_map(spec, shape) -> DiffeoMap | None:
    kind, params = spec
    if kind == "identity":
        return None
    if kind == "conformal":
        return conformal_map(shape, params, name=f"mobius{params.theta:.3f},{params.z0}")
    if kind == "ot":
        pot = solve_fft_ot(build_target_density(shape, params), accept_plateau=True)
        return ot_to_diffeo(pot, name="ot")
    raise ValueError(f"unknown member kind {kind!r}")


@dataclass
class MemberResult:
    counts: np.ndarray           # (H, W) int64 on the input grid
    valid: np.ndarray            # (H, W) bool
    result: UnwrapResult         # unwrap on the deformed grid


def pull_back(res: UnwrapResult, phi: ScalarField, dmap: DiffeoMap | None):
    """Counts of a member expressed on the input grid."""
    if dmap is None:
        return np.array(res.k.labels), np.array(res.phi_abs.mask & phi.mask)
    big = res.phi_abs
    at, ok = bilinear(big.values, big.mask, dmap.inverse[..., 0], dmap.inverse[..., 1])
    ok &= dmap.source_mask & phi.mask
    k = np.where(ok, np.rint((at - phi.values) / TWO_PI), 0).astype(np.int64)
    return k, ok


def run_member(phi: ScalarField, dmap: DiffeoMap | None, ucfg: UnwrapConfig) -> MemberResult:
    src = phi if dmap is None else warp_field(phi, dmap, "phase")
    res = unwrap_hierarchical(src, ucfg)
    k, ok = pull_back(res, phi, dmap)
    return MemberResult(k, ok, res)


def majority_vote(candidates, identity_index: int | None = None):
    """Most frequent value of ``candidates``; returns ``(winner, tie)``.

    ``tie`` is set when the mode is not unique. The tie is then broken in
    favour of the identity member's candidate when ``identity_index`` is
    given and that candidate is one of the modes, otherwise by the lower
    median of the tied values.
    """
    c = [int(v) for v in candidates]
    if not c:
        raise ValueError("majority vote of an empty candidate list")
    vals, counts = np.unique(c, return_counts=True)
    top = vals[counts == counts.max()]
    if len(top) == 1:
        return int(top[0]), False
    if identity_index is not None and c[identity_index] in top:
        return c[identity_index], True
    return int(top[(len(top) - 1) // 2]), True


def _vote_arrays(k, valid, identity_index):
    """Vectorized :func:`majority_vote` over a stack of (n, H, W) candidates."""
    n = k.shape[0]
    support = np.zeros(k.shape, np.int64)
    for i in range(n):
        for j in range(n):
            support[i] += valid[i] & valid[j] & (k[i] == k[j])
    support = np.where(valid, support, 0)
    best = support.max(axis=0)
    is_top = valid & (support == best)
    # distinct values among the tops: a top candidate is a duplicate if an
    # earlier top candidate has the same value
    distinct = np.zeros(k.shape[1:], np.int64)
    for i in range(n):
        dup = np.zeros(k.shape[1:], bool)
        for j in range(i):
            dup |= is_top[j] & (k[j] == k[i])
        distinct += is_top[i] & ~dup
    tie = distinct > 1
    first = np.argmax(is_top, axis=0)
    winner = np.take_along_axis(k, first[None], 0)[0]
    # ties are rare; resolve them with the scalar rule
    for y, x in np.argwhere(tie):
        members = np.nonzero(valid[:, y, x])[0]
        idx = None
        if identity_index is not None and valid[identity_index, y, x]:
            idx = int(np.searchsorted(members, identity_index))
        winner[y, x], _ = majority_vote(k[members, y, x], idx)
    return winner, tie, valid.sum(axis=0)


@dataclass
class VoteTrace:
    candidates: np.ndarray       # (n, H, W) int64
    valid: np.ndarray            # (n, H, W) bool
    winner: np.ndarray           # (H, W) int64
    tie: np.ndarray              # (H, W) bool
    mask: np.ndarray             # pixels with enough valid members
    members: list = field(default_factory=list)

    def dump(self, path) -> None:
        """Write the candidates as an n-channel PFM with the final mask beside it."""
        data = np.where(self.valid, self.candidates, 0).astype(np.float32)
        write_pfm(path, np.moveaxis(data, 0, -1))
        write_mask(mask_path(path), self.mask)


def _align_gauges(k, valid, ref):
    """Shift every member by the integer that makes it agree most with ``ref``."""
    out = k.copy()
    for i in range(k.shape[0]):
        if i == ref:
            continue
        both = valid[i] & valid[ref]
        if not both.any():
            continue
        d = (k[i] - k[ref])[both]
        vals, cnt = np.unique(d, return_counts=True)
        out[i] -= vals[np.argmax(cnt)]
    return out


def run_ensemble(phi: ScalarField, cfg: EnsembleConfig, ucfg: UnwrapConfig = UnwrapConfig(),
                 maps: list | None = None):
    """Unwrap ``phi`` through every ensemble member and fuse by majority vote.

    Returns ``(UnwrapResult, VoteTrace)``. ``maps`` may supply prebuilt member
    maps (``None`` for the identity) to keep map construction out of timings.
    """
    t0 = time.perf_counter()
    specs = cfg.member_specs()
    shape = phi.values.shape
    if maps is None:
        maps = build_maps(specs, shape, cfg.threads)
    if len(maps) != len(specs):
        raise ValueError("one map per member is required")

    def job(i):
        try:
            return run_member(phi, maps[i], ucfg)
        except Exception as exc:  # noqa: BLE001 - reported with the member name
            raise MemberError(f"member {i} ({specs[i][0]}) failed: {exc}") from exc

    if cfg.threads > 1 and len(specs) > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            results = list(pool.map(job, range(len(specs))))
    else:
        results = [job(i) for i in range(len(specs))]

    k = np.stack([r.counts for r in results])
    valid = np.stack([r.valid for r in results])
    ident = 0 if cfg.include_identity else None
    k = _align_gauges(k, valid, 0)
    winner, tie, nvalid = _vote_arrays(k, valid, ident)
    need = (len(specs) + 1) // 2
    mask = phi.mask & (nvalid >= need)
    if not mask.any():
        raise ValueError("no pixel has enough valid ensemble members")
    winner = np.where(mask, winner, 0)
    phi_abs = phi.with_values(np.where(mask, phi.values + TWO_PI * winner, 0.0), mask, "radians")
    solves = sum(r.result.iterations for r in results)
    result = UnwrapResult(
        k=LabelField(winner, mask), phi_abs=phi_abs,
        energy=_energy(phi.values, winner, mask), iterations=solves,
        wall_time=time.perf_counter() - t0,
        info={"method": "idhier", "members": [s[0] for s in specs],
              "ties": int((tie & mask).sum())})
    trace = VoteTrace(k, valid, winner, tie & mask, mask, [s[0] for s in specs])
    return result, trace


def build_maps(specs, shape, threads: int = 1) -> list:
    def make(i):
        try:
            return build_member_map(specs[i], shape)
        except Exception as exc:  # noqa: BLE001
            raise MemberError(f"member {i} ({specs[i][0]}) could not be built: {exc}") from exc

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(make, range(len(specs))))
    return [make(i) for i in range(len(specs))]


def id_invariance_check(phi: ScalarField, g1: DiffeoMap | None, g2: DiffeoMap | None,
                        ucfg: UnwrapConfig = UnwrapConfig()) -> float:
    """Fraction of commonly valid pixels whose pulled-back counts agree after
    removing one global 2 pi offset. ``None`` stands for the identity map."""
    r1 = run_member(phi, g1, ucfg)
    r2 = r1 if g2 is g1 else run_member(phi, g2, ucfg)
    both = r1.valid & r2.valid
    if not both.any():
        return 0.0
    d = (r1.counts - r2.counts)[both]
    vals, cnt = np.unique(d, return_counts=True)
    return float(cnt.max() / both.sum())
