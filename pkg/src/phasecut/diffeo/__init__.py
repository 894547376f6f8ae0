"""Diffeomorphisms for the invariance ensemble: Mobius maps, the rectangle to
disk Riemann map, optimal-transport maps, and warping through them."""
from .conformal import (cauchy_riemann_residual, conformal_map, dirichlet_energy,
                        disk_dirichlet_energy, disk_mobius_map, rect_disk, rect_to_disk)
from .maps import DiffeoMap, OrientationError, check_orientation, jacobian_det, warp_field
from .mobius import DiskDomainError, MobiusParams, mobius_apply, mobius_inverse
from .ot import (BrenierPotential, OTConvergenceError, RoiSpec, build_target_density,
                 monge_ampere_residual, ot_to_diffeo, solve_fft_ot)

__all__ = [
    "BrenierPotential", "DiffeoMap", "DiskDomainError", "MobiusParams", "OTConvergenceError",
    "OrientationError", "RoiSpec", "build_target_density", "cauchy_riemann_residual",
    "check_orientation", "conformal_map", "dirichlet_energy", "disk_dirichlet_energy",
    "jacobian_det", "mobius_apply", "mobius_inverse", "monge_ampere_residual", "ot_to_diffeo",
    "rect_disk", "rect_to_disk", "solve_fft_ot", "warp_field",
]
