"""Synthetic ground truth, error metrics, exhaustive oracle and the two
benchmark suites (speed versus fringe count, accuracy under noise)."""
from __future__ import annotations

import itertools
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .baselines import (unwrap_goldstein, unwrap_itoh, unwrap_least_squares,
                        unwrap_quality_guided)
from .ensemble import EnsembleConfig, build_maps, default_ensemble, run_ensemble
from .phaseshift import carrier_phase, wrap
from .raster import LabelField, ScalarField
from .unwrap import UnwrapConfig, _energy, unwrap_graphcut, unwrap_hierarchical

log = logging.getLogger(__name__)

TWO_PI = 2 * np.pi
METHODS = ("itoh", "goldstein", "qguide", "lsq", "graphcut", "hier", "idhier")


class OracleSizeError(ValueError):
    pass


# ----------------------------------------------------------- ground truth

@dataclass(frozen=True)
class GaussianComponent:
    cx: float          # pixels
    cy: float
    sigma: float
    amplitude: float   # radians at the peak

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("component sigma must be positive")
        if self.amplitude == 0:
            raise ValueError("component amplitude must be non-zero")


@dataclass(frozen=True)
class DoubleGaussianSpec:
    width: int = 512
    height: int = 512
    components: tuple = ()

    def __post_init__(self):
        if self.width < 2 or self.height < 2:
            raise ValueError("grid must be at least 2x2")
        comps = tuple(c if isinstance(c, GaussianComponent) else GaussianComponent(**c)
                      for c in self.components)
        if not comps:
            comps = default_components(self.width, self.height)
        object.__setattr__(self, "components", comps)

    @property
    def shape(self):
        return (self.height, self.width)

    def max_gradient(self) -> float:
        """Largest single-component slope, ``|amp| e^{-1/2} / sigma``."""
        return max(abs(c.amplitude) * math.exp(-0.5) / c.sigma for c in self.components)

    def to_dict(self):
        return {"width": self.width, "height": self.height,
                "components": [asdict(c) for c in self.components]}


def default_components(width: int, height: int):
    s = 0.09 * width
    return (GaussianComponent(0.35 * width, 0.5 * height, s, 14 * TWO_PI),
            GaussianComponent(0.65 * width, 0.5 * height, s, -10 * TWO_PI))


def gen_double_gaussian(spec: DoubleGaussianSpec = DoubleGaussianSpec()) -> ScalarField:
    yy, xx = np.mgrid[0:spec.height, 0:spec.width].astype(np.float64)
    phi = np.zeros(spec.shape)
    for c in spec.components:
        phi += c.amplitude * np.exp(-((xx - c.cx) ** 2 + (yy - c.cy) ** 2) / (2 * c.sigma ** 2))
    return ScalarField(phi, None, "radians")


@dataclass(frozen=True)
class NoiseSpec:
    sigma: float = 0.5
    seed: int = 0
    distribution: str = "normal"

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("noise sigma must be >= 0")
        if self.distribution != "normal":
            raise ValueError("only normal noise is supported")


def add_noise(phi_abs: ScalarField, noise: NoiseSpec) -> ScalarField:
    rng = np.random.default_rng(noise.seed)
    eps = rng.normal(0.0, noise.sigma, phi_abs.values.shape) if noise.sigma > 0 else 0.0
    return phi_abs.with_values(phi_abs.values + eps)


def l2_error(phi_est: ScalarField, phi_true: ScalarField, mask=None) -> float:
    """RMS difference after removing the integer 2 pi gauge
    ``c = round(median(est - true) / 2 pi)``; over pixels valid in both
    (and in ``mask`` when given)."""
    if phi_est.values.shape != phi_true.values.shape:
        raise ValueError("shape mismatch")
    m = phi_est.mask & phi_true.mask
    if mask is not None:
        m = m & mask
    if not m.any():
        raise ValueError("no pixel to compare")
    d = (phi_est.values - phi_true.values)[m]
    c = np.rint(np.median(d) / TWO_PI)
    d = d - TWO_PI * c
    return float(np.sqrt(np.mean(d * d)))


def count_errors(phi_est: ScalarField, phi_abs: ScalarField) -> int:
    """Valid pixels whose 2 pi count differs from the exact one after removing
    the modal gauge offset. Zero means the unwrap is exact up to a constant."""
    m = phi_est.mask & phi_abs.mask
    d = np.rint((phi_est.values - phi_abs.values)[m] / TWO_PI).astype(np.int64)
    if d.size == 0:
        return 0
    vals, cnt = np.unique(d, return_counts=True)
    return int(d.size - cnt.max())


# ----------------------------------------------------------------- oracle

def brute_force_unwrap(phi: ScalarField, k_max: int = 2, max_cells: int = 5 ** 12):
    """Exhaustive minimizer of the edge energy over ``|k| <= k_max``.

    Among equal-energy minimizers (within 1e-9) the one with ``k = 0`` at the
    first valid pixel is preferred, then the smallest ``sum |k|``, then the
    lexicographically smallest.
    """
    mask = phi.mask
    idx = np.argwhere(mask)
    n = len(idx)
    base = 2 * k_max + 1
    if k_max > 2 or base ** n > max_cells:
        raise OracleSizeError(f"{n} valid pixels with k_max={k_max} is too large to enumerate")
    pos = {tuple(p): i for i, p in enumerate(idx)}
    edges = []
    for (y, x), i in pos.items():
        for q in ((y, x + 1), (y + 1, x)):
            if q in pos:
                edges.append((i, pos[q]))
    labels = np.arange(-k_max, k_max + 1)
    vals = phi.values[mask]
    # enumerate the last `tail` pixels by broadcasting, the rest in a loop
    tail = min(n, 9)
    head = n - tail
    best = (np.inf, None)
    for prefix in itertools.product(range(base), repeat=head):
        e = np.zeros((base,) * tail)
        for i, j in edges:
            a = vals[i] + TWO_PI * labels
            b = vals[j] + TWO_PI * labels
            table = (a[:, None] - b[None, :]) ** 2
            if i < head and j < head:
                e = e + table[prefix[i], prefix[j]]
            elif i < head:
                e = e + _along(table[prefix[i]], j - head, tail)
            elif j < head:
                e = e + _along(table[:, prefix[j]], i - head, tail)
            else:
                e = e + _pair(table, i - head, j - head, tail)
        emin = e.min()
        if emin < best[0] + 1e-9:
            cand = np.argwhere(e <= emin + 1e-9)
            full = np.concatenate([np.tile(prefix, (len(cand), 1)), cand], axis=1) - k_max
            pick = min(full, key=_tie_key)
            if emin < best[0] - 1e-9 or _better(pick, best[1]):
                best = (min(emin, best[0]), pick)
    k = np.zeros(mask.shape, np.int64)
    if n:
        k[mask] = best[1]
    return LabelField(k, mask, k_max), _energy(phi.values, k, mask)


def _tie_key(k):
    return (abs(int(k[0])), int(np.abs(k).sum()), tuple(int(v) for v in k))


def _better(a, b):
    return b is None or _tie_key(a) < _tie_key(b)


def _along(vec, axis, ndim):
    shape = [1] * ndim
    shape[axis] = -1
    return vec.reshape(shape)


def _pair(table, ai, aj, ndim):
    shape = [1] * ndim
    if ai == aj:
        raise ValueError("self edge")
    shape[ai] = table.shape[0]
    shape[aj] = table.shape[1]
    t = table if ai < aj else table.T
    return t.reshape(shape)


# -------------------------------------------------------------- benchmarks

REPORT_SCHEMA = {
    "type": "object",
    "required": ["suite", "config", "rows"],
    "properties": {
        "suite": {"enum": ["table1", "table2"]},
        "config": {"type": "object"},
        "rows": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["method", "energy", "iterations", "seconds"],
                "properties": {
                    "method": {"type": "string"},
                    "period": {"type": "integer"},
                    "trial": {"type": ["integer", "string"]},
                    "l2": {"type": ["number", "null"]},
                    "energy": {"type": ["number", "null"]},
                    "iterations": {"type": ["integer", "null"]},
                    "seconds": {"type": ["number", "null"]},
                    "valid": {"type": "integer"},
                    "scored": {"type": "integer"},
                    "count_errors": {"type": "integer"},
                    "error": {"type": "string"},
                },
            },
        },
        "summary": {"type": "object"},
    },
}

TIMING_KEYS = ("seconds", "speedup")


@dataclass
class BenchConfig:
    size: int = 512
    periods: tuple = (8, 16, 24, 32, 48)
    period_margin: int = 4
    trials: int = 3
    noise_sigma: float = 0.5
    seed: int = 0
    methods: tuple = METHODS
    k_max: int | None = None          # table2; default from the surface range
    levels: int = 3
    bump_periods: float = 2.0         # table1 surface relief on top of the carrier
    repeats: int = 2                  # table1 keeps the fastest of this many runs
    ensemble: EnsembleConfig | None = None
    surface: DoubleGaussianSpec | None = None   # table2 surface; default layout at `size`
    threads: int = 1

    def __post_init__(self):
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ValueError(f"unknown methods {sorted(unknown)}")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")
        if self.surface is not None:
            self.size = self.surface.width
        self.periods = tuple(int(p) for p in self.periods)
        self.methods = tuple(self.methods)

    def to_dict(self):
        d = {k: v for k, v in asdict(self).items() if k not in ("ensemble", "surface")}
        d["periods"] = list(self.periods)
        d["methods"] = list(self.methods)
        d["ensemble"] = None if self.ensemble is None else _ensemble_dict(self.ensemble)
        return d


def _ensemble_dict(e: EnsembleConfig):
    return {"members": e.members, "kind": e.kind, "include_identity": e.include_identity,
            "mobius": [{"theta": m.theta, "z0": [m.z0.real, m.z0.imag]} for m in e.mobius],
            "roi_groups": [[{"center": list(r.center), "sigma": r.sigma, "weight": r.weight}
                            for r in g] for g in e.roi_groups]}


@dataclass
class BenchReport:
    suite: str
    config: dict
    rows: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def to_json(self, include_timing: bool = True) -> str:
        d = {"suite": self.suite, "config": self.config, "rows": self.rows,
             "summary": self.summary}
        if not include_timing:
            d = strip_timing(d)
        return json.dumps(d, indent=2, sort_keys=True)

    def write(self, prefix) -> tuple:
        js, txt = f"{prefix}.json", f"{prefix}.txt"
        with open(js, "w") as fh:
            fh.write(self.to_json() + "\n")
        with open(txt, "w") as fh:
            fh.write(self.table() + "\n")
        return js, txt

    def table(self) -> str:
        return _table1_text(self) if self.suite == "table1" else _table2_text(self)


def strip_timing(obj):
    """Copy of a report dict without wall-clock fields."""
    if isinstance(obj, dict):
        return {k: strip_timing(v) for k, v in obj.items() if k not in TIMING_KEYS}
    if isinstance(obj, list):
        return [strip_timing(v) for v in obj]
    return obj


def table1_surface(size: int, periods: int, bump_periods: float = 2.0) -> ScalarField:
    """Carrier of ``periods`` fringes across the width plus a double-Gaussian relief."""
    spec = DoubleGaussianSpec(size, size, (
        GaussianComponent(0.35 * size, 0.5 * size, 0.09 * size, bump_periods * TWO_PI),
        GaussianComponent(0.65 * size, 0.5 * size, 0.09 * size, -bump_periods * TWO_PI)))
    carrier = carrier_phase(size, size, size / periods)
    return ScalarField(carrier + gen_double_gaussian(spec).values, None, "radians")


def _row(method, res, **extra):
    return {"method": method, "energy": float(res.energy), "iterations": int(res.iterations),
            "seconds": float(res.wall_time), **extra}


def _timed(fn, phi, ucfg, repeats):
    """Run ``fn`` ``repeats`` times; the result of the fastest run is kept."""
    best = None
    for _ in range(repeats):
        res = fn(phi, ucfg)
        if best is None or res.wall_time < best.wall_time:
            best = res
    return best


def _warm_up():
    # the first call loads the compiled max-flow kernel; keep it out of the timings
    small = ScalarField(wrap(carrier_phase(16, 16, 4.0)), None, "radians")
    unwrap_graphcut(small, UnwrapConfig(k_max=8))


def run_table1(cfg: BenchConfig) -> BenchReport:
    rep = BenchReport("table1", cfg.to_dict())
    speed = {}
    _warm_up()
    for p in cfg.periods:
        truth = table1_surface(cfg.size, p, cfg.bump_periods)
        phi = truth.with_values(wrap(truth.values))
        ucfg = UnwrapConfig(k_max=p + cfg.period_margin, levels=cfg.levels)
        times = {}
        for name, fn in (("graphcut", unwrap_graphcut), ("hier", unwrap_hierarchical)):
            try:
                res = _timed(fn, phi, ucfg, cfg.repeats)
            except Exception as exc:  # noqa: BLE001 - recorded per cell
                log.exception("table1 %s at %d periods failed", name, p)
                rep.rows.append({"method": name, "period": p, "energy": None,
                                 "iterations": None, "seconds": None, "error": str(exc)})
                continue
            times[name] = res.wall_time
            rep.rows.append(_row(name, res, period=p, l2=l2_error(res.phi_abs, truth)))
            log.info("table1 P=%d %s: %.2fs, %d solves", p, name, res.wall_time, res.iterations)
        if len(times) == 2:
            speed[str(p)] = times["graphcut"] / times["hier"]
    rep.summary = {"speedup": speed}
    return rep


def table2_spec(cfg: BenchConfig) -> DoubleGaussianSpec:
    return cfg.surface or DoubleGaussianSpec(cfg.size, cfg.size)


def table2_inputs(cfg: BenchConfig):
    spec = table2_spec(cfg)
    truth = gen_double_gaussian(spec)
    for t in range(cfg.trials):
        noisy = add_noise(truth, NoiseSpec(cfg.noise_sigma, cfg.seed + t))
        yield t, truth, noisy.with_values(wrap(noisy.values)), noisy


def _table2_kmax(cfg, truth):
    if cfg.k_max is not None:
        return cfg.k_max
    return int(np.ceil(np.abs(truth.values).max() / TWO_PI)) + 2


def run_table2(cfg: BenchConfig) -> BenchReport:
    spec = table2_spec(cfg)
    rep = BenchReport("table2", {**cfg.to_dict(), "surface": spec.to_dict()})
    truth = gen_double_gaussian(spec)
    ucfg = UnwrapConfig(k_max=_table2_kmax(cfg, truth), levels=cfg.levels)
    ens = cfg.ensemble or default_ensemble(truth.values.shape, threads=cfg.threads)
    maps = None
    if "idhier" in cfg.methods:
        # map construction is precomputation and stays out of the timings
        maps = build_maps(ens.member_specs(), truth.values.shape, cfg.threads)
    runners = {
        "itoh": unwrap_itoh, "goldstein": unwrap_goldstein, "qguide": unwrap_quality_guided,
        "lsq": unwrap_least_squares,
        "graphcut": lambda phi: unwrap_graphcut(phi, ucfg),
        "hier": lambda phi: unwrap_hierarchical(phi, ucfg),
        "idhier": lambda phi: run_ensemble(phi, ens, ucfg, maps)[0],
    }
    per = {m: [] for m in cfg.methods}
    for t, truth_t, phi, noisy in table2_inputs(cfg):
        done = {}
        for m in cfg.methods:
            try:
                done[m] = runners[m](phi)
            except Exception as exc:  # noqa: BLE001 - recorded per cell
                log.exception("table2 %s trial %d failed", m, t)
                rep.rows.append({"method": m, "trial": t, "l2": None, "energy": None,
                                 "iterations": None, "seconds": None, "error": str(exc)})
        # methods may mask pixels (unreached by Goldstein, short of the vote
        # quorum); all of them are scored on the pixels every method kept
        common = np.logical_and.reduce([r.phi_abs.mask for r in done.values()]) \
            if done else None
        for m, res in done.items():
            err = l2_error(res.phi_abs, truth_t, common)
            per[m].append(err)
            rep.rows.append(_row(m, res, trial=t, l2=err, valid=int(res.phi_abs.mask.sum()),
                                 scored=int(common.sum()),
                                 count_errors=count_errors(res.phi_abs, noisy)))
            log.info("table2 trial %d %s: L2 %.6f (%.2fs)", t, m, err, res.wall_time)
    for m in cfg.methods:
        if per[m]:
            rows = [r for r in rep.rows if r["method"] == m and "error" not in r]
            rep.rows.append({"method": m, "trial": "avg", "l2": float(np.mean(per[m])),
                             "energy": float(np.mean([r["energy"] for r in rows])),
                             "iterations": int(round(np.mean([r["iterations"] for r in rows]))),
                             "seconds": float(np.mean([r["seconds"] for r in rows]))})
    rep.summary = {"avg_l2": {m: float(np.mean(v)) for m, v in per.items() if v}}
    return rep


def run_benchmark(suite: str, cfg: BenchConfig = BenchConfig()) -> BenchReport:
    if suite == "table1":
        return run_table1(cfg)
    if suite == "table2":
        return run_table2(cfg)
    raise ValueError(f"unknown suite {suite!r} (expected table1 or table2)")


def _fmt(v, spec):
    return "-" if v is None else format(v, spec)


def _table1_text(rep: BenchReport) -> str:
    lines = [f"{'periods':>8} {'flat s':>10} {'iter':>5} {'hier s':>10} {'iter':>5} {'speedup':>8}"]
    by = {}
    for r in rep.rows:
        by.setdefault(r["period"], {})[r["method"]] = r
    for p in sorted(by):
        f, h = by[p].get("graphcut", {}), by[p].get("hier", {})
        fs, hs = f.get("seconds"), h.get("seconds")
        sp = fs / hs if fs and hs else None
        lines.append(f"{p:>8} {_fmt(fs, '10.2f')} {_fmt(f.get('iterations'), '5d')} "
                     f"{_fmt(hs, '10.2f')} {_fmt(h.get('iterations'), '5d')} {_fmt(sp, '8.2f')}")
    return "\n".join(lines)


def _table2_text(rep: BenchReport) -> str:
    trials = sorted({r["trial"] for r in rep.rows if isinstance(r["trial"], int)})
    head = f"{'method':<10}" + "".join(f"{'trial ' + str(t + 1):>10}" for t in trials) + f"{'avg':>10}"
    lines = [head]
    methods = list(dict.fromkeys(r["method"] for r in rep.rows))
    for m in methods:
        cells = {r["trial"]: r.get("l2") for r in rep.rows if r["method"] == m}
        lines.append(f"{m:<10}" + "".join(_fmt(cells.get(t), "10.4f") for t in trials)
                     + _fmt(cells.get("avg"), "10.4f"))
    return "\n".join(lines)
