"""Masked raster types, bilinear sampling and PFM/PGM file I/O.

Conventions: arrays are indexed ``[row, col]`` = ``[y, x]``, origin top-left,
``y`` increasing downward. A pixel's coordinate is its center, so a ``W x H``
grid spans ``[0, W-1] x [0, H-1]``.
"""
from __future__ import annotations

import os
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

UNITS = ("radians", "intensity", "density", "length", "dimensionless")


class RasterFormatError(ValueError):
    """Malformed or unsupported raster file."""


class SampleDomainError(ValueError):
    """Sampling coordinate outside the grid rectangle."""


@dataclass(frozen=True)
class GridShape:
    width: int
    height: int

    def __post_init__(self):
        if self.width < 2 or self.height < 2:
            raise ValueError(f"grid must be at least 2x2, got {self.width}x{self.height}")

    @property
    def array_shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    @classmethod
    def of(cls, arr: np.ndarray) -> "GridShape":
        h, w = arr.shape[:2]
        return cls(int(w), int(h))


def _frozen(a: np.ndarray) -> np.ndarray:
    # callers pass a fresh copy, so freezing never touches user arrays
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class ScalarField:
    """Real-valued raster with a validity mask. Immutable after construction."""

    values: np.ndarray
    mask: np.ndarray = None
    units: str = "dimensionless"

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ValueError("field values must be 2-D")
        GridShape.of(v)
        m = np.ones(v.shape, bool) if self.mask is None else np.array(self.mask, dtype=bool)
        if m.shape != v.shape:
            raise ValueError(f"mask shape {m.shape} does not match values {v.shape}")
        if self.units not in UNITS:
            raise ValueError(f"unknown units {self.units!r}")
        if not m.any():
            raise ValueError("field has no valid pixel")
        bad = m & ~np.isfinite(v)
        if bad.any():
            y, x = np.argwhere(bad)[0]
            raise ValueError(f"non-finite value at valid pixel (x={x}, y={y})")
        object.__setattr__(self, "values", _frozen(v))
        object.__setattr__(self, "mask", _frozen(m))

    @property
    def shape(self) -> GridShape:
        return GridShape.of(self.values)

    def with_values(self, values, mask=None, units=None) -> "ScalarField":
        return ScalarField(values, self.mask if mask is None else mask, units or self.units)

    def masked(self, fill: float = np.nan) -> np.ndarray:
        out = np.array(self.values)
        out[~self.mask] = fill
        return out


@dataclass(frozen=True)
class LabelField:
    """Integer raster (phase counts) with a validity mask."""

    labels: np.ndarray
    mask: np.ndarray = None
    k_max: int | None = None

    def __post_init__(self):
        lab = np.array(self.labels, dtype=np.int64)
        if lab.ndim != 2:
            raise ValueError("labels must be 2-D")
        GridShape.of(lab)
        m = np.ones(lab.shape, bool) if self.mask is None else np.array(self.mask, dtype=bool)
        if m.shape != lab.shape:
            raise ValueError("mask shape does not match labels")
        if self.k_max is not None and np.any(np.abs(lab[m]) > self.k_max):
            raise ValueError(f"labels exceed bound k_max={self.k_max}")
        object.__setattr__(self, "labels", _frozen(lab))
        object.__setattr__(self, "mask", _frozen(m))

    @property
    def shape(self) -> GridShape:
        return GridShape.of(self.labels)


# ---------------------------------------------------------------- sampling

def bilinear(values: np.ndarray, mask: np.ndarray, xs, ys):
    """Vectorized masked bilinear interpolation.

    Weights of invalid corner pixels are dropped and the remaining weights
    renormalized. Returns ``(sampled, valid)``; ``valid`` is False where all
    contributing corners are invalid or the point lies outside the grid.
    """
    values = np.asarray(values)
    h, w = mask.shape
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    inside = (xs >= 0) & (xs <= w - 1) & (ys >= 0) & (ys <= h - 1)
    xc = np.where(inside, xs, 0.0)
    yc = np.where(inside, ys, 0.0)
    x0 = np.minimum(np.floor(xc).astype(np.int64), w - 2)
    y0 = np.minimum(np.floor(yc).astype(np.int64), h - 2)
    fx = xc - x0
    fy = yc - y0
    acc = None
    wsum = np.zeros(xs.shape)
    for dy, dx, wt in ((0, 0, (1 - fx) * (1 - fy)), (0, 1, fx * (1 - fy)),
                       (1, 0, (1 - fx) * fy), (1, 1, fx * fy)):
        yy, xx = y0 + dy, x0 + dx
        ok = mask[yy, xx]
        wt = np.where(ok, wt, 0.0)
        v = values[yy, xx]
        if v.ndim > wt.ndim:
            term = wt[..., None] * np.where(ok[..., None], v, 0)
        else:
            term = wt * np.where(ok, v, 0)
        acc = term if acc is None else acc + term
        wsum += wt
    valid = inside & (wsum > 1e-12)
    denom = np.where(valid, wsum, 1.0)
    out = acc / (denom[..., None] if acc.ndim > denom.ndim else denom)
    return out, valid


def sample_bilinear(field: ScalarField, x: float, y: float) -> float | None:
    """Sample ``field`` at real pixel coordinate ``(x, y)``.

    Returns None when every neighbor is invalid.
    """
    h, w = field.values.shape
    if not (0 <= x <= w - 1 and 0 <= y <= h - 1):
        raise SampleDomainError(f"({x}, {y}) outside [0, {w - 1}] x [0, {h - 1}]")
    v, ok = bilinear(field.values, field.mask, np.array([x]), np.array([y]))
    return float(v[0]) if ok[0] else None


# ---------------------------------------------------------------- file I/O

_HEADER_TOKEN = re.compile(rb"\s*(\S+)")


def _read_tokens(buf: bytes, count: int, pos: int = 0):
    """Read ``count`` whitespace separated header tokens, skipping # comments."""
    tokens = []
    while len(tokens) < count:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if buf[pos:pos + 1] == b"#":
            nl = buf.find(b"\n", pos)
            if nl < 0:
                raise RasterFormatError("truncated header")
            pos = nl + 1
            continue
        m = _HEADER_TOKEN.match(buf, pos)
        if not m:
            raise RasterFormatError("truncated header")
        tokens.append(m.group(1))
        pos = m.end()
    # exactly one whitespace byte separates the header from the payload
    return tokens, pos + 1


def mask_path(path) -> Path:
    return Path(str(path) + ".mask")


def read_pfm(path) -> np.ndarray:
    """Read a PFM file as ``(H, W)`` or ``(H, W, C)`` float32, top row first.

    Besides the standard ``Pf`` (gray) and ``PF`` (RGB) magics, ``PX`` with an
    extra channel-count token is accepted for arbitrary channel counts.
    """
    buf = Path(path).read_bytes()
    magic = buf[:2]
    if magic == b"Pf":
        ch = 1
        toks, pos = _read_tokens(buf, 3, 2)
        w, h, scale = toks
    elif magic == b"PF":
        ch = 3
        toks, pos = _read_tokens(buf, 3, 2)
        w, h, scale = toks
    elif magic == b"PX":
        toks, pos = _read_tokens(buf, 4, 2)
        ch, w, h, scale = toks
        try:
            ch = int(ch)
        except ValueError:
            raise RasterFormatError(f"{path}: bad channel count {ch!r}") from None
    else:
        raise RasterFormatError(f"{path}: not a PFM file (magic {magic!r})")
    try:
        w, h, scale = int(w), int(h), float(scale)
    except ValueError:
        raise RasterFormatError(f"{path}: malformed PFM header") from None
    if w <= 0 or h <= 0 or scale == 0 or ch <= 0:
        raise RasterFormatError(f"{path}: malformed PFM header")
    dtype = "<f4" if scale < 0 else ">f4"
    n = w * h * ch
    payload = buf[pos:]
    if len(payload) < 4 * n:
        raise RasterFormatError(f"{path}: payload has {len(payload)} bytes, expected {4 * n}")
    data = np.frombuffer(payload, dtype=dtype, count=n).astype(np.float32)
    data = data.reshape((h, w, ch) if ch > 1 else (h, w))[::-1]
    return np.ascontiguousarray(data)


def write_pfm(path, data: np.ndarray) -> None:
    data = np.asarray(data, dtype="<f4")
    if data.ndim == 2:
        head = b"Pf\n%d %d\n-1.0\n" % (data.shape[1], data.shape[0])
    elif data.ndim == 3 and data.shape[2] == 3:
        head = b"PF\n%d %d\n-1.0\n" % (data.shape[1], data.shape[0])
    elif data.ndim == 3:
        head = b"PX\n%d\n%d %d\n-1.0\n" % (data.shape[2], data.shape[1], data.shape[0])
    else:
        raise ValueError("PFM data must be 2-D or 3-D")
    with open(path, "wb") as fh:
        fh.write(head)
        fh.write(np.ascontiguousarray(data[::-1]).tobytes())


def read_pgm(path) -> np.ndarray:
    """Read a binary (P5) PGM as integer array plus its maxval."""
    buf = Path(path).read_bytes()
    if buf[:2] != b"P5":
        raise RasterFormatError(f"{path}: not a binary PGM (magic {buf[:2]!r})")
    toks, pos = _read_tokens(buf, 3, 2)
    try:
        w, h, maxval = (int(t) for t in toks)
    except ValueError:
        raise RasterFormatError(f"{path}: malformed PGM header") from None
    if w <= 0 or h <= 0 or not 0 < maxval < 65536:
        raise RasterFormatError(f"{path}: malformed PGM header")
    dtype = np.uint8 if maxval < 256 else ">u2"
    n = w * h
    itemsize = np.dtype(dtype).itemsize
    if len(buf) - pos < n * itemsize:
        raise RasterFormatError(f"{path}: truncated PGM payload")
    data = np.frombuffer(buf[pos:], dtype=dtype, count=n).reshape(h, w)
    return data.astype(np.int64), maxval


def write_pgm(path, data: np.ndarray, maxval: int = 255) -> None:
    data = np.asarray(data)
    if data.min() < 0 or data.max() > maxval:
        raise ValueError("PGM data outside [0, maxval]")
    dtype = np.uint8 if maxval < 256 else ">u2"
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n%d\n" % (data.shape[1], data.shape[0], maxval))
        fh.write(data.astype(dtype).tobytes())


def write_mask(path, mask: np.ndarray) -> None:
    Path(path).write_bytes(np.packbits(np.asarray(mask, bool).ravel()).tobytes())


def read_mask(path, shape: tuple[int, int]) -> np.ndarray:
    bits = np.unpackbits(np.frombuffer(Path(path).read_bytes(), np.uint8))
    n = shape[0] * shape[1]
    if bits.size < n:
        raise RasterFormatError(f"{path}: mask has {bits.size} bits, expected {n}")
    return bits[:n].reshape(shape).astype(bool)


def load_field(path, units: str = "dimensionless") -> ScalarField:
    """Load a PFM (values passed through) or PGM (normalized to [0, 1]).

    A ``<path>.mask`` sidecar, when present, restores the validity mask.
    """
    path = Path(path)
    head = path.read_bytes()[:2]
    if head in (b"Pf", b"PF", b"PX"):
        data = read_pfm(path)
        if data.ndim != 2:
            raise RasterFormatError(f"{path}: expected a single-channel PFM")
        bad = ~np.isfinite(data)
        if bad.any():
            y, x = np.argwhere(bad)[0]
            raise RasterFormatError(f"{path}: non-finite value at (x={x}, y={y})")
        values = data.astype(np.float64)
    elif head == b"P5":
        raw, maxval = read_pgm(path)
        values = raw / float(maxval)
        if units == "dimensionless":
            units = "intensity"
    else:
        raise RasterFormatError(f"{path}: unrecognised raster magic {head!r}")
    mp = mask_path(path)
    mask = read_mask(mp, values.shape) if mp.exists() else None
    return ScalarField(values, mask, units)


def save_field(field: ScalarField, path, sentinel: float = 0.0) -> None:
    """Write ``field`` as little-endian float32 PFM.

    Invalid pixels are written as ``sentinel``; a packed-bit ``.mask`` sidecar
    is written when any pixel is invalid (and a stale one removed otherwise).
    """
    path = Path(path)
    write_pfm(path, np.where(field.mask, field.values, sentinel))
    mp = mask_path(path)
    if not field.mask.all():
        write_mask(mp, field.mask)
    elif mp.exists():
        os.remove(mp)
