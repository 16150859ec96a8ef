"""Matrix-free stochastic Galerkin solvers for Stokes flow with random viscosity."""

from sgstokes.mesh import Mesh, build_structured_mesh
from sgstokes.fem import FeMatrices, assemble_fe_matrices
from sgstokes.random_field import KleExpansion, build_kle_2d, check_positivity
from sgstokes.chaos import ChaosBasis, build_basis, build_G
from sgstokes.kron import KronOperator, SaddleOperator, build_sgfe_system

__all__ = [
    "Mesh",
    "build_structured_mesh",
    "FeMatrices",
    "assemble_fe_matrices",
    "KleExpansion",
    "build_kle_2d",
    "check_positivity",
    "ChaosBasis",
    "build_basis",
    "build_G",
    "KronOperator",
    "SaddleOperator",
    "build_sgfe_system",
]

__version__ = "0.1.0"
