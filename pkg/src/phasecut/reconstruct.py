"""Absolute phase to depth, and ASCII PLY point-cloud export.

Depth uses a linear model ``z = gain * (Phi - Phi_ref)`` against a reference
phase (a measured plane or an analytic ``a x + b``). This stands in for a full
camera/projector triangulation, for which no calibration is available.
Points are back-projected through a pinhole camera.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .raster import ScalarField


@dataclass(frozen=True)
class PhaseDepthModel:
    gain: float = 1.0                  # length per radian
    focal: float = 1000.0              # pixels
    cx: float | None = None            # principal point; image centre if None
    cy: float | None = None
    ref_slope: float = 0.0             # analytic reference plane a*x + b
    ref_offset: float = 0.0
    reference: ScalarField | None = None   # measured reference phase, overrides the plane

    def __post_init__(self):
        if not np.isfinite(self.gain) or self.gain == 0:
            raise ValueError("depth gain must be finite and non-zero")
        if not self.focal > 0:
            raise ValueError("focal length must be positive")

    def reference_phase(self, shape) -> np.ndarray:
        h, w = shape
        if self.reference is not None:
            if self.reference.values.shape != (h, w):
                raise ValueError(f"reference phase {self.reference.values.shape} does not "
                                 f"match the phase map {(h, w)}")
            return np.asarray(self.reference.values)
        x = np.arange(w, dtype=np.float64)
        return np.broadcast_to(self.ref_slope * x + self.ref_offset, (h, w))

    def principal_point(self, shape):
        h, w = shape
        cx = (w - 1) / 2 if self.cx is None else self.cx
        cy = (h - 1) / 2 if self.cy is None else self.cy
        return cx, cy


def phase_to_depth(phi_abs: ScalarField, model: PhaseDepthModel) -> ScalarField:
    """Depth ``gain * (Phi - Phi_ref)``; pixels invalid in either phase are masked."""
    ref = model.reference_phase(phi_abs.values.shape)
    mask = np.array(phi_abs.mask)
    if model.reference is not None:
        mask &= model.reference.mask
    z = np.where(mask, model.gain * (phi_abs.values - ref), 0.0)
    return ScalarField(z, mask, "length")


def back_project(depth: ScalarField, model: PhaseDepthModel) -> np.ndarray:
    """(N, 3) points ``((u - cx) z / f, (v - cy) z / f, z)`` of the valid pixels, raster order."""
    cx, cy = model.principal_point(depth.values.shape)
    v, u = np.nonzero(depth.mask)
    z = depth.values[v, u]
    return np.column_stack([(u - cx) * z / model.focal, (v - cy) * z / model.focal, z])


def export_ply(depth: ScalarField, texture: ScalarField | None, model: PhaseDepthModel,
               path) -> int:
    """Write the valid pixels of ``depth`` as an ASCII PLY; returns the vertex count.

    ``texture`` (intensities in [0, 1], e.g. the decoded ambient term) adds a
    ``gray`` uchar property.
    """
    if texture is not None and texture.values.shape != depth.values.shape:
        raise ValueError("texture and depth differ in shape")
    pts = back_project(depth, model)
    header = ["ply", "format ascii 1.0", f"element vertex {len(pts)}",
              "property float x", "property float y", "property float z"]
    if texture is not None:
        header.append("property uchar gray")
    header.append("end_header")
    lines = [f"{x:.9g} {y:.9g} {z:.9g}" for x, y, z in pts]
    if texture is not None:
        gray = np.clip(np.rint(texture.values[depth.mask] * 255), 0, 255).astype(int)
        lines = [f"{s} {g}" for s, g in zip(lines, gray)]
    with open(Path(path), "w") as fh:
        fh.write("\n".join(header + lines) + "\n")
    return len(pts)


def read_ply(path):
    """Parse an ASCII PLY written by :func:`export_ply`: ``(points, gray or None)``."""
    with open(path) as fh:
        text = fh.read().split("\n")
    if not text or text[0] != "ply":
        raise ValueError(f"{path}: not a PLY file")
    props, count, i = [], 0, 1
    while text[i] != "end_header":
        parts = text[i].split()
        if parts[:2] == ["element", "vertex"]:
            count = int(parts[2])
        elif parts and parts[0] == "property":
            props.append(parts[-1])
        elif parts[:2] == ["format", "ascii"] or parts[:1] == ["comment"]:
            pass
        elif parts and parts[0] == "format":
            raise ValueError(f"{path}: only ASCII PLY is supported")
        i += 1
    rows = text[i + 1:i + 1 + count]
    data = np.array([r.split() for r in rows], dtype=np.float64).reshape(count, len(props))
    gray = data[:, props.index("gray")].astype(np.uint8) if "gray" in props else None
    return data[:, [props.index(c) for c in ("x", "y", "z")]], gray
