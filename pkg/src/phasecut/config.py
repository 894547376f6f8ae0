"""JSON run configuration shared by the command-line tools.

One document holds every tunable of the pipeline. Sections map onto the
dataclasses of the library; unknown keys anywhere are rejected so that a
typo cannot silently fall back to a default. All randomness derives from the
top-level ``seed``.
"""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema

from .diffeo import MobiusParams, RoiSpec
from .ensemble import EnsembleConfig, default_ensemble
from .phaseshift import MODULATION_THRESHOLD, FringeParams
from .reconstruct import PhaseDepthModel
from .raster import load_field
from .simbench import METHODS, BenchConfig, DoubleGaussianSpec, NoiseSpec
from .unwrap import UnwrapConfig


class ConfigError(ValueError):
    pass


def _obj(props, required=()):
    return {"type": "object", "properties": props, "required": list(required),
            "additionalProperties": False}


_NUM = {"type": "number"}
_INT = {"type": "integer"}
_POINT = {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}

CONFIG_SCHEMA = _obj({
    "seed": _INT,
    "threads": {"type": "integer", "minimum": 1},
    "fringe": _obj({
        "wavelength": _NUM, "ambient": _NUM, "modulation": _NUM,
        "bits": {"type": ["integer", "null"], "minimum": 1, "maximum": 16},
        "threshold": _NUM,
    }),
    "surface": _obj({
        "width": _INT, "height": _INT,
        "components": {"type": "array", "items": _obj(
            {"cx": _NUM, "cy": _NUM, "sigma": _NUM, "amplitude": _NUM},
            ["cx", "cy", "sigma", "amplitude"])},
    }),
    "noise": _obj({"sigma": _NUM, "distribution": {"enum": ["normal"]}}),
    "unwrap": _obj({
        "k_max": _INT, "max_sweeps": _INT, "epsilon": {"type": ["number", "null"]},
        "levels": _INT,
    }),
    "ensemble": _obj({
        "members": _INT, "kind": {"enum": ["conformal", "ot", "mixed"]},
        "include_identity": {"type": "boolean"},
        "mobius": {"type": "array", "items": _obj({"theta": _NUM, "z0": _POINT})},
        "roi_groups": {"type": "array", "items": {"type": "array", "items": _obj(
            {"center": _POINT, "sigma": _NUM, "weight": _NUM}, ["center", "sigma"])}},
    }),
    "bench": _obj({
        "size": _INT, "periods": {"type": "array", "items": _INT},
        "period_margin": _INT, "trials": _INT, "noise_sigma": _NUM,
        "methods": {"type": "array", "items": {"enum": list(METHODS)}},
        "k_max": {"type": ["integer", "null"]}, "levels": _INT, "repeats": _INT,
        "bump_periods": _NUM,
    }),
    "depth": _obj({
        "gain": _NUM, "focal": _NUM, "cx": {"type": ["number", "null"]},
        "cy": {"type": ["number", "null"]}, "ref_slope": _NUM, "ref_offset": _NUM,
        "reference": {"type": ["string", "null"]},
    }),
    "paths": _obj({"out": {"type": "string"}}),
})


@dataclass
class RunConfig:
    seed: int = 0
    threads: int = 1
    fringe: dict = field(default_factory=dict)
    surface: dict = field(default_factory=dict)
    noise: dict = field(default_factory=dict)
    unwrap: dict = field(default_factory=dict)
    ensemble: dict = field(default_factory=dict)
    bench: dict = field(default_factory=dict)
    depth: dict = field(default_factory=dict)
    paths: dict = field(default_factory=dict)
    base_dir: Path = Path(".")     # relative paths in the document resolve here

    @classmethod
    def from_dict(cls, doc: dict, base_dir=".") -> "RunConfig":
        try:
            jsonschema.validate(doc, CONFIG_SCHEMA)
        except jsonschema.ValidationError as exc:
            where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise ConfigError(f"config error at {where}: {exc.message}") from None
        cfg = cls(**copy.deepcopy(doc), base_dir=Path(base_dir))
        cfg.check()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from None
        return cls.from_dict(doc, path.parent)

    def check(self) -> None:
        """Build every section once so bad values surface as :class:`ConfigError`."""
        for build in (self.fringe_params, self.surface_spec, self.noise_spec,
                      self.unwrap_config, self.bench_config):
            try:
                build()
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"config error in {build.__name__}: {exc}") from None
        try:
            self.ensemble_config(self.surface_spec().shape)
            PhaseDepthModel(**{k: v for k, v in self.depth.items() if k != "reference"})
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"config error: {exc}") from None

    def fringe_params(self) -> FringeParams:
        return FringeParams(**{k: v for k, v in self.fringe.items()
                               if k in ("wavelength", "ambient", "modulation")})

    @property
    def fringe_bits(self):
        return self.fringe.get("bits")

    @property
    def threshold(self) -> float:
        return float(self.fringe.get("threshold", MODULATION_THRESHOLD))

    def surface_spec(self) -> DoubleGaussianSpec:
        return DoubleGaussianSpec(**self.surface)

    def noise_spec(self) -> NoiseSpec:
        return NoiseSpec(**{"sigma": 0.0, **self.noise}, seed=self.seed)

    def unwrap_config(self) -> UnwrapConfig:
        return UnwrapConfig(**self.unwrap)

    def ensemble_config(self, shape) -> EnsembleConfig:
        """Explicit members when given; otherwise the default mixed ensemble."""
        e = self.ensemble
        if not e.get("mobius") and not e.get("roi_groups"):
            base = default_ensemble(shape, e.get("members", 3), self.threads)
            return EnsembleConfig(members=base.members, kind=e.get("kind", base.kind),
                                  mobius=base.mobius, roi_groups=base.roi_groups,
                                  include_identity=e.get("include_identity", True),
                                  threads=self.threads)
        mob = tuple(MobiusParams(m.get("theta", 0.0), complex(*m.get("z0", (0.0, 0.0))))
                    for m in e.get("mobius", ()))
        rois = tuple(tuple(RoiSpec(tuple(r["center"]), r["sigma"], r.get("weight", 1.0))
                           for r in g) for g in e.get("roi_groups", ()))
        return EnsembleConfig(members=e.get("members", 3), kind=e.get("kind", "mixed"),
                              mobius=mob, roi_groups=rois,
                              include_identity=e.get("include_identity", True),
                              threads=self.threads)

    def bench_config(self) -> BenchConfig:
        return BenchConfig(**{k: tuple(v) if isinstance(v, list) else v
                              for k, v in self.bench.items()},
                           seed=self.seed, threads=self.threads)

    def depth_model(self) -> PhaseDepthModel:
        d = dict(self.depth)
        ref = d.pop("reference", None)
        if ref is not None:
            d["reference"] = load_field(self.base_dir / ref, "radians")
        return PhaseDepthModel(**d)

    def out_dir(self, override=None) -> Path:
        if override is not None:
            return Path(override)
        out = self.paths.get("out")
        return self.base_dir / out if out else Path(".")
