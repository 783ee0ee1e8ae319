"""Finite element solvers for stationary MHD with pressure boundary conditions."""
from .exceptions import MHDPressError
from .mesh import Mesh, builtin, load_mesh
from .linearized import (
    LinearizedProblem,
    MHDData,
    MHDOperators,
    solve_dual,
    solve_elliptic_EN,
    solve_linearized,
    solve_stokes_SN,
)
from .nonlinear import PicardOptions, estimate_constants, picard_solve, uniqueness_check
from .harmonic import compute_harmonic_basis

__version__ = "0.1.0"

__all__ = [
    "MHDPressError", "Mesh", "builtin", "load_mesh",
    "LinearizedProblem", "MHDData", "MHDOperators",
    "solve_dual", "solve_elliptic_EN", "solve_linearized", "solve_stokes_SN",
    "PicardOptions", "estimate_constants", "picard_solve", "uniqueness_check",
    "compute_harmonic_basis",
]
