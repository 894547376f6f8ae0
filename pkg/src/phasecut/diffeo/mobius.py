"""Conformal automorphisms of the unit disk."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DiskDomainError(ValueError):
    pass


@dataclass(frozen=True)
class MobiusParams:
    theta: float = 0.0
    z0: complex = 0j

    def __post_init__(self):
        if not abs(self.z0) < 1:
            raise ValueError(f"|z0| must be < 1, got {abs(self.z0):.6g}")
        object.__setattr__(self, "theta", float(np.mod(self.theta, 2 * np.pi)))
        object.__setattr__(self, "z0", complex(self.z0))


def _check_disk(z, name):
    z = np.asarray(z, dtype=np.complex128)
    if np.any(~(np.abs(z) < 1)):
        raise DiskDomainError(f"{name} must lie strictly inside the unit disk")
    return z


def _forward(params, z):
    return np.exp(1j * params.theta) * (z - params.z0) / (1 - np.conj(params.z0) * z)


def _backward(params, w):
    b = np.exp(1j * params.theta) * params.z0
    return np.exp(-1j * params.theta) * (w + b) / (1 + np.conj(b) * w)


def mobius_apply(params: MobiusParams, z):
    """w = e^{i theta} (z - z0) / (1 - conj(z0) z)."""
    w = _forward(params, _check_disk(z, "z"))
    return w[()] if w.ndim == 0 else w


def mobius_inverse(params: MobiusParams, w):
    """z = e^{-i theta} (w + e^{i theta} z0) / (1 + conj(e^{i theta} z0) w)."""
    z = _backward(params, _check_disk(w, "w"))
    return z[()] if z.ndim == 0 else z
