"""``phasecut`` command line: synth, decode, unwrap, warp, bench, reconstruct.

Exit codes: 0 success, 1 runtime or data failure, 2 usage or config failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .baselines import unwrap_goldstein, unwrap_itoh, unwrap_least_squares, unwrap_quality_guided
from .config import ConfigError, RunConfig
from .diffeo import (DiffeoMap, MobiusParams, RoiSpec, build_target_density, conformal_map,
                     disk_mobius_map,
                     ot_to_diffeo, solve_fft_ot, warp_field)
from .ensemble import EnsembleConfig, run_ensemble
from .phaseshift import FringeTriple, decode, quantize, synthesize_fringes
from .raster import LabelField, RasterFormatError, ScalarField, load_field, save_field, write_pgm
from .reconstruct import export_ply, phase_to_depth
from .simbench import METHODS, add_noise, gen_double_gaussian, run_benchmark, table2_spec
from .unwrap import unwrap_graphcut, unwrap_hierarchical

log = logging.getLogger("phasecut")

COUNT_OFFSET = 32768   # PGM16 count encoding: stored = k + offset, 0 marks invalid pixels


class UsageError(Exception):
    pass


def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.threads is not None:
        cfg.threads = args.threads
    return cfg


def _out(args, cfg) -> Path:
    out = cfg.out_dir(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path, obj):
    with open(path, "w") as fh:
        fh.write(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------- commands

def cmd_synth(args, cfg: RunConfig):
    """Ground truth, wrapped phase and the three fringe images."""
    out = _out(args, cfg)
    truth = gen_double_gaussian(cfg.surface_spec())
    phase = add_noise(truth, cfg.noise_spec())
    fringes = synthesize_fringes(phase, cfg.fringe_params())
    bits = cfg.fringe_bits
    if bits:
        fringes = quantize(fringes, bits)
    files = [out / "truth.pfm", out / "wrapped.pfm"]
    save_field(truth, files[0])
    stored = []
    for i, f in enumerate((fringes.i0, fringes.i1, fringes.i2)):
        if bits:
            p = out / f"fringe{i}.pgm"
            top = 2 ** bits - 1
            write_pgm(p, np.rint(f.values * top).astype(np.uint16), top)
        else:
            p = out / f"fringe{i}.pfm"
            save_field(f, p)
        files.append(p)
        stored.append(load_field(p, "intensity"))
    # wrapped phase of exactly what was written, so `decode` reproduces it
    wrapped, _, _ = decode(FringeTriple(*stored), cfg.threshold)
    save_field(wrapped, files[1])
    for p in files:
        print(p)


def cmd_decode(args, cfg: RunConfig):
    out = _out(args, cfg)
    ims = [load_field(p, "intensity") for p in args.fringes]
    phi, ambient, modulation = decode(FringeTriple(*ims), cfg.threshold)
    for name, f in (("wrapped", phi), ("ambient", ambient), ("modulation", modulation)):
        p = out / f"{args.prefix}{name}.pfm"
        save_field(f, p)
        print(p)


def _unwrap(method, phi, cfg: RunConfig, trace_path=None):
    ucfg = cfg.unwrap_config()
    if method == "itoh":
        return unwrap_itoh(phi)
    if method == "goldstein":
        return unwrap_goldstein(phi)
    if method == "qguide":
        return unwrap_quality_guided(phi)
    if method == "lsq":
        return unwrap_least_squares(phi)
    if method == "graphcut":
        return unwrap_graphcut(phi, ucfg)
    if method == "hier":
        return unwrap_hierarchical(phi, ucfg)
    ecfg = cfg.ensemble_config(phi.values.shape)
    res, trace = run_ensemble(phi, ecfg, ucfg)
    if trace_path is not None:
        trace.dump(trace_path)
    return res


def cmd_unwrap(args, cfg: RunConfig):
    if args.k_max is not None:
        cfg.unwrap["k_max"] = args.k_max
    if args.levels is not None:
        cfg.unwrap["levels"] = args.levels
    cfg.check()
    out = _out(args, cfg)
    phi = load_field(args.input, "radians")
    if np.any(np.abs(phi.values[phi.mask]) > np.pi + 1e-6):
        raise RasterFormatError(f"{args.input}: values outside [-pi, pi]; not a wrapped phase")
    stem = args.prefix or Path(args.input).stem
    trace = out / f"{stem}.votes.pfm" if args.method == "idhier" else None
    res = _unwrap(args.method, phi, cfg, trace)
    abs_path = out / f"{stem}.abs.pfm"
    save_field(res.phi_abs, abs_path)
    k = np.asarray(res.k.labels)
    if np.any(np.abs(k[res.k.mask]) >= COUNT_OFFSET):
        raise ValueError("phase counts do not fit the 16-bit encoding")
    enc = np.where(res.k.mask, k + COUNT_OFFSET, 0).astype(np.uint16)
    count_path = out / f"{stem}.count.pgm"
    write_pgm(count_path, enc, 65535)
    stats = {"method": args.method, "energy": float(res.energy),
             "iterations": int(res.iterations), "seconds": float(res.wall_time),
             "width": int(k.shape[1]), "height": int(k.shape[0]),
             "valid": int(res.k.mask.sum()), "count_offset": COUNT_OFFSET}
    stats_path = out / f"{stem}.stats.json"
    _write_json(stats_path, stats)
    for p in (abs_path, count_path, stats_path):
        print(p)


def _parse_rois(items):
    rois = []
    for it in items:
        vals = [float(v) for v in it.split(",")]
        if len(vals) not in (3, 4):
            raise UsageError(f"--roi expects x,y,sigma[,weight], got {it!r}")
        rois.append(RoiSpec((vals[0], vals[1]), vals[2], vals[3] if len(vals) == 4 else 1.0))
    return tuple(rois)


def build_warp_map(args, shape) -> DiffeoMap:
    if args.map_in:
        return DiffeoMap.load(args.map_in)
    if args.roi:
        pot = solve_fft_ot(build_target_density(shape, _parse_rois(args.roi)), accept_plateau=True)
        return ot_to_diffeo(pot)
    if args.mobius is not None:
        theta, re, im = args.mobius
        h, w = shape
        if h != w:
            raise UsageError("--mobius acts on the inscribed disk of a square image; "
                             "use --conformal for rectangles")
        return disk_mobius_map(h, MobiusParams(theta, complex(re, im)))
    if args.conformal is not None:
        theta, re, im = args.conformal
        return conformal_map(shape, MobiusParams(theta, complex(re, im)))
    raise UsageError("warp needs --mobius, --conformal, --roi or --map")


def cmd_warp(args, cfg: RunConfig):
    out = _out(args, cfg)
    units = "radians" if args.kind == "phase" else "dimensionless"
    field = load_field(args.input, units)
    try:
        dmap = build_warp_map(args, field.values.shape)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if args.inverse:
        dmap = dmap.inverted()
    if args.kind == "label":
        src = LabelField(np.rint(field.values).astype(np.int64), field.mask)
        res = warp_field(src, dmap, "label")
        warped = ScalarField(res.labels.astype(np.float64), res.mask) if res.mask.any() else None
    else:
        warped = warp_field(field, dmap, args.kind)
    if warped is None or not warped.mask.any():
        raise ValueError("warp left no valid pixel")
    stem = args.prefix or Path(args.input).stem
    p = out / f"{stem}.warped.pfm"
    save_field(warped, p)
    print(p)
    if args.save_map:
        for q in dmap.save(out / f"{stem}.map"):
            print(q)


def cmd_bench(args, cfg: RunConfig):
    out = _out(args, cfg)
    for key in ("size", "trials"):
        if getattr(args, key) is not None:
            cfg.bench[key] = getattr(args, key)
    if args.periods:
        cfg.bench["periods"] = list(args.periods)
    if args.noise is not None:
        cfg.bench["noise_sigma"] = args.noise
    if args.methods:
        cfg.bench["methods"] = list(args.methods)
    cfg.check()
    bcfg = cfg.bench_config()
    if cfg.surface and args.size is None:
        # an explicit surface section sets the table2 surface (and grid size)
        bcfg = replace(bcfg, surface=cfg.surface_spec())
    if cfg.ensemble:
        bcfg = replace(bcfg, ensemble=cfg.ensemble_config(table2_spec(bcfg).shape))
    rep = run_benchmark(args.suite, bcfg)
    for p in rep.write(out / args.suite):
        print(p)
    print(rep.table())


def cmd_reconstruct(args, cfg: RunConfig):
    out = _out(args, cfg)
    phi = load_field(args.input, "radians")
    model = cfg.depth_model()
    depth = phase_to_depth(phi, model)
    tex = load_field(args.texture, "intensity") if args.texture else None
    stem = args.prefix or Path(args.input).stem
    save_field(depth, out / f"{stem}.depth.pfm")
    p = out / f"{stem}.ply"
    n = export_ply(depth, tex, model, p)
    print(out / f"{stem}.depth.pfm")
    print(p)
    log.info("%d vertices", n)


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="overrides the config seed")
    common.add_argument("--out", help="output directory (default: config paths.out or .)")
    common.add_argument("--threads", type=int, help="worker threads for ensembles and trials")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="phasecut", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="synthesize a double-Gaussian scan")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("decode", parents=[common], help="three-step phase-shift decode")
    p.add_argument("fringes", nargs=3, help="I0 I1 I2 (PFM or PGM)")
    p.add_argument("--prefix", default="", help="output file prefix")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("unwrap", parents=[common], help="unwrap a wrapped-phase PFM")
    p.add_argument("input")
    p.add_argument("--method", choices=METHODS, default="idhier")
    p.add_argument("--k-max", type=int)
    p.add_argument("--levels", type=int)
    p.add_argument("--prefix", help="output stem (default: input stem)")
    p.set_defaults(func=cmd_unwrap)

    p = sub.add_parser("warp", parents=[common], help="resample a field through a diffeomorphism")
    p.add_argument("input")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--mobius", type=float, nargs=3, metavar=("THETA", "RE", "IM"),
                   help="Mobius transform of the disk inscribed in a square image")
    g.add_argument("--conformal", type=float, nargs=3, metavar=("THETA", "RE", "IM"),
                   help="rectangle -> disk Riemann map followed by this Mobius transform")
    g.add_argument("--roi", action="append", metavar="X,Y,SIGMA[,W]",
                   help="optimal-transport map magnifying these regions (repeatable)")
    g.add_argument("--map", dest="map_in", metavar="PREFIX", help="saved map prefix")
    p.add_argument("--kind", choices=("linear", "phase", "label"), default="linear")
    p.add_argument("--inverse", action="store_true", help="apply the inverse map")
    p.add_argument("--save-map", action="store_true")
    p.add_argument("--prefix")
    p.set_defaults(func=cmd_warp)

    p = sub.add_parser("bench", parents=[common], help="run a benchmark suite")
    p.add_argument("suite", choices=("table1", "table2"))
    p.add_argument("--size", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--periods", type=int, nargs="+")
    p.add_argument("--noise", type=float, help="table2 noise sigma (radians)")
    p.add_argument("--methods", nargs="+", choices=METHODS)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("reconstruct", parents=[common], help="absolute phase to PLY point cloud")
    p.add_argument("input")
    p.add_argument("--texture", help="intensity image for the gray attribute")
    p.add_argument("--prefix")
    p.set_defaults(func=cmd_reconstruct)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load_config(args)
        args.func(args, cfg)
    except (ConfigError, UsageError) as exc:
        print(f"phasecut {args.command}: {exc}", file=sys.stderr)
        return 2
    except (RasterFormatError, OSError, ValueError, RuntimeError) as exc:
        print(f"phasecut {args.command}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
