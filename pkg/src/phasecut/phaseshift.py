"""Three-step phase shifting: fringe synthesis and decoding."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .raster import ScalarField

SQRT3 = np.sqrt(3.0)
MODULATION_THRESHOLD = 0.02


class FringeParamError(ValueError):
    pass


@dataclass(frozen=True)
class FringeParams:
    wavelength: float = 32.0   # pixels per fringe period
    ambient: float = 0.5
    modulation: float = 0.4

    def __post_init__(self):
        if not self.wavelength > 0:
            raise FringeParamError("wavelength must be positive")
        if self.ambient - self.modulation < 0 or self.ambient + self.modulation > 1:
            raise FringeParamError(
                f"ambient±modulation must stay within [0, 1] "
                f"(A={self.ambient}, R={self.modulation})")


@dataclass(frozen=True)
class FringeTriple:
    i0: ScalarField
    i1: ScalarField
    i2: ScalarField

    def __post_init__(self):
        shapes = {f.values.shape for f in (self.i0, self.i1, self.i2)}
        if len(shapes) != 1:
            raise ValueError(f"fringe images differ in shape: {shapes}")

    def stack(self) -> np.ndarray:
        return np.stack([self.i0.values, self.i1.values, self.i2.values])


def wrap(phi):
    """Wrap to the half-open interval (-pi, pi]."""
    if isinstance(phi, ScalarField):
        return phi.with_values(wrap(phi.values), units="radians")
    phi = np.asarray(phi, dtype=np.float64)
    return np.pi - np.mod(np.pi - phi, 2 * np.pi)


def carrier_phase(width: int, height: int, wavelength: float) -> np.ndarray:
    """Absolute phase of the projected pattern on a flat scene: 2*pi*x/wavelength."""
    x = np.arange(width, dtype=np.float64)
    return np.broadcast_to(2 * np.pi * x / wavelength, (height, width)).copy()


def synthesize_fringes(phi_abs: ScalarField, params: FringeParams) -> FringeTriple:
    """I_k = A + R cos(phi + 2 k pi / 3), k = 0, 1, 2."""
    ims = []
    for k in range(3):
        v = params.ambient + params.modulation * np.cos(phi_abs.values + 2 * k * np.pi / 3)
        ims.append(ScalarField(v, phi_abs.mask, "intensity"))
    return FringeTriple(*ims)


def quantize(fringes: FringeTriple, bits: int = 8) -> FringeTriple:
    """Round intensities to ``bits``-bit camera levels."""
    top = 2 ** bits - 1
    return FringeTriple(*(f.with_values(np.round(np.clip(f.values, 0, 1) * top) / top)
                          for f in (fringes.i0, fringes.i1, fringes.i2)))


def decode(fringes: FringeTriple, threshold: float = MODULATION_THRESHOLD):
    """Recover (wrapped phase, ambient, modulation) from a fringe triple.

    The quadrature pair is ``s = sqrt(3)(I1 - I2) = -3R sin(phi)`` and
    ``c = 2 I0 - I1 - I2 = 3R cos(phi)``, so the phase is ``atan2(-s, c)``.
    Pixels whose modulation falls below ``threshold`` are masked out of the
    phase.
    """
    i0, i1, i2 = fringes.i0.values, fringes.i1.values, fringes.i2.values
    mask = fringes.i0.mask & fringes.i1.mask & fringes.i2.mask
    s = SQRT3 * (i1 - i2)
    c = 2 * i0 - i1 - i2
    modulation = np.hypot(s, c) / 3
    ambient = (i0 + i1 + i2) / 3
    phi = wrap(np.arctan2(-s, c))
    phi_mask = mask & (modulation >= threshold) & ((s != 0) | (c != 0))
    return (ScalarField(phi, phi_mask, "radians"),
            ScalarField(ambient, mask, "intensity"),
            ScalarField(modulation, mask, "intensity"))
