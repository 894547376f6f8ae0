"""Discrete coordinate maps between grids and field warping through them.

A :class:`DiffeoMap` stores both directions as dense coordinate arrays in
pixel units, last axis ``(x, y)``:

* ``forward`` lives on the deformed (target) grid; ``forward[q]`` is the
  source-image position shown at target pixel ``q``. Warping is therefore a
  plain lookup, ``deformed(q) = field(forward(q))``.
* ``inverse`` lives on the source grid; ``inverse[p]`` is where source
  pixel ``p`` lands on the target grid. Pulling results back is a warp
  through :meth:`DiffeoMap.inverted`.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..raster import (LabelField, ScalarField, bilinear, read_mask, read_pfm,
                      write_mask, write_pfm, mask_path)


class OrientationError(ValueError):
    pass


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class DiffeoMap:
    forward: np.ndarray        # (Ht, Wt, 2) source coordinates per target pixel
    target_mask: np.ndarray    # (Ht, Wt)
    inverse: np.ndarray        # (Hs, Ws, 2) target coordinates per source pixel
    source_mask: np.ndarray    # (Hs, Ws)
    name: str = ""

    def __post_init__(self):
        for attr, dtype in (("forward", np.float64), ("inverse", np.float64),
                            ("target_mask", bool), ("source_mask", bool)):
            object.__setattr__(self, attr, _frozen(getattr(self, attr), dtype))
        if self.forward.shape[:2] != self.target_mask.shape or self.forward.shape[2:] != (2,):
            raise ValueError("forward must be (H, W, 2) matching target_mask")
        if self.inverse.shape[:2] != self.source_mask.shape or self.inverse.shape[2:] != (2,):
            raise ValueError("inverse must be (H, W, 2) matching source_mask")

    @property
    def source_shape(self):
        return self.source_mask.shape

    @property
    def target_shape(self):
        return self.target_mask.shape

    def inverted(self) -> "DiffeoMap":
        """The same diffeomorphism viewed from the other side."""
        return DiffeoMap(self.inverse, self.source_mask, self.forward, self.target_mask,
                         self.name + "^-1" if self.name else "")

    @classmethod
    def identity(cls, shape) -> "DiffeoMap":
        h, w = shape
        yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
        coords = np.stack([xx, yy], axis=-1)
        mask = np.ones((h, w), bool)
        return cls(coords, mask, coords, mask, "identity")

    def roundtrip_error(self) -> np.ndarray:
        """|inverse(forward(q)) - q| in target pixels; NaN where undefined."""
        return _roundtrip(self.forward, self.target_mask, self.inverse, self.source_mask)

    def save(self, prefix) -> tuple[Path, Path]:
        """Write ``<prefix>.fwd.pfm`` and ``<prefix>.inv.pfm`` plus mask sidecars.

        Coordinates go into the first two channels of a colour PFM; the third
        channel is zero padding.
        """
        paths = []
        for tag, coords, mask in (("fwd", self.forward, self.target_mask),
                                  ("inv", self.inverse, self.source_mask)):
            p = Path(f"{prefix}.{tag}.pfm")
            data = np.zeros(coords.shape[:2] + (3,), np.float32)
            data[..., :2] = np.where(mask[..., None], coords, 0)
            write_pfm(p, data)
            write_mask(mask_path(p), mask)
            paths.append(p)
        return tuple(paths)

    @classmethod
    def load(cls, prefix, name: str = "") -> "DiffeoMap":
        parts = []
        for tag in ("fwd", "inv"):
            p = Path(f"{prefix}.{tag}.pfm")
            data = read_pfm(p)
            if data.ndim != 3 or data.shape[2] < 2:
                raise ValueError(f"{p}: expected a multi-channel coordinate raster")
            mp = mask_path(p)
            mask = read_mask(mp, data.shape[:2]) if mp.exists() else np.ones(data.shape[:2], bool)
            parts += [data[..., :2].astype(np.float64), mask]
        return cls(*parts, name=name)


def _roundtrip(fwd, fmask, inv, imask):
    h, w = imask.shape
    back, ok = bilinear(inv, imask, fwd[..., 0], fwd[..., 1])
    th, tw = fmask.shape
    yy, xx = np.mgrid[0:th, 0:tw]
    err = np.hypot(back[..., 0] - xx, back[..., 1] - yy)
    return np.where(fmask & ok, err, np.nan)


def trim_unresolved(dmap: DiffeoMap, tol: float = 0.5) -> DiffeoMap:
    """Drop source pixels whose round trip source -> target -> source misses
    by more than ``tol`` pixels (regions the target grid cannot resolve)."""
    err = dmap.inverted().roundtrip_error()
    keep = dmap.source_mask & (err <= tol)
    return DiffeoMap(dmap.forward, dmap.target_mask, dmap.inverse, keep, dmap.name)


def _masked_diff(a, mask, axis):
    """Derivative along ``axis`` using central differences where both
    neighbours are valid and one-sided differences otherwise (NaN if isolated)."""
    a = np.moveaxis(a, axis, 0)
    m = np.moveaxis(mask, axis, 0)
    out = np.full(a.shape, np.nan)
    fw = np.zeros(m.shape, bool)
    bw = np.zeros(m.shape, bool)
    fw[:-1] = m[:-1] & m[1:]
    bw[1:] = m[1:] & m[:-1]
    d_f = np.zeros(a.shape)
    d_b = np.zeros(a.shape)
    d_f[:-1] = a[1:] - a[:-1]
    d_b[1:] = a[1:] - a[:-1]
    both = fw & bw
    out[both] = 0.5 * (d_f[both] + d_b[both])
    out[fw & ~bw] = d_f[fw & ~bw]
    out[bw & ~fw] = d_b[bw & ~fw]
    return np.moveaxis(out, 0, axis)


def jacobian_det(coords: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Finite-difference Jacobian determinant of a coordinate map (NaN off-mask)."""
    xs, ys = coords[..., 0], coords[..., 1]
    xx, xy = _masked_diff(xs, mask, 1), _masked_diff(xs, mask, 0)
    yx, yy = _masked_diff(ys, mask, 1), _masked_diff(ys, mask, 0)
    det = xx * yy - xy * yx
    return np.where(mask, det, np.nan)


def check_orientation(dmap: DiffeoMap) -> None:
    """Raise :class:`OrientationError` naming the first pixel with det <= 0."""
    det = jacobian_det(dmap.forward, dmap.target_mask)
    bad = dmap.target_mask & ~(det > 0) & np.isfinite(det)
    if bad.any():
        y, x = np.argwhere(bad)[0]
        raise OrientationError(f"non-positive Jacobian determinant {det[y, x]:.3g} "
                               f"at pixel (x={x}, y={y})")


def warp_field(field, dmap: DiffeoMap, kind: str = "linear"):
    """Resample ``field`` (on the source grid) onto the target grid of ``dmap``.

    ``kind`` selects the interpolation: ``linear`` (bilinear), ``phase``
    (bilinear on the unit phasor, then the angle) or ``label`` (nearest
    neighbour on a :class:`LabelField`). Target pixels whose preimage leaves
    the source rectangle or touches only invalid source pixels are masked.
    """
    is_label = isinstance(field, LabelField)
    if kind == "label" and not is_label:
        raise ValueError("label warps need a LabelField")
    if kind != "label" and is_label:
        raise ValueError(f"{kind} warp cannot take a LabelField; use kind='label'")
    if kind == "phase" and field.units != "radians":
        raise ValueError(f"phase warp needs a radians field, got {field.units!r}")
    if kind not in ("linear", "phase", "label"):
        raise ValueError(f"unknown warp kind {kind!r}")
    src = field.labels if is_label else field.values
    if src.shape != dmap.source_shape:
        raise ValueError(f"field shape {src.shape} does not match map source {dmap.source_shape}")

    xs, ys = dmap.forward[..., 0], dmap.forward[..., 1]
    tmask = dmap.target_mask
    h, w = src.shape
    if kind == "label":
        inside = tmask & (xs > -0.5) & (xs < w - 0.5) & (ys > -0.5) & (ys < h - 0.5)
        xi = np.clip(np.rint(np.where(inside, xs, 0)).astype(np.int64), 0, w - 1)
        yi = np.clip(np.rint(np.where(inside, ys, 0)).astype(np.int64), 0, h - 1)
        ok = inside & field.mask[yi, xi]
        out = np.where(ok, src[yi, xi], 0)
        return LabelField(out, ok, field.k_max)
    if kind == "phase":
        z = np.stack([np.cos(src), np.sin(src)], axis=-1)
        zs, ok = bilinear(z, field.mask, xs, ys)
        norm = np.hypot(zs[..., 0], zs[..., 1])
        ok &= tmask & (norm > 1e-9)
        vals = np.where(ok, np.arctan2(zs[..., 1], zs[..., 0]), 0.0)
        # arctan2 returns -pi for the negative real axis; keep (-pi, pi]
        vals = np.where(vals <= -np.pi, np.pi, vals)
        return ScalarField(vals, ok, "radians")
    vals, ok = bilinear(src, field.mask, xs, ys)
    ok &= tmask
    return ScalarField(np.where(ok, vals, 0.0), ok, field.units)
