"""Finite element simulation of biological transport network formation.

A symmetric conductivity tensor (piecewise constant) and a pressure
(continuous, piecewise linear) evolve under an energy-decreasing flow
constrained by a Darcy-type Poisson problem.  Implicit time stepping is
solved by Newton-Krylov with an exact Schur-complement preconditioner.
"""
from .exceptions import (
    ConfigError,
    EllipticityError,
    GeometryError,
    InvalidArgumentError,
    KrylovConvergenceError,
    MeshFormatError,
    NetformError,
    NotSPDError,
    StepSizeCollapseError,
)
from .fespace import FESpace, StateVector
from .mesh import (
    MeshTopology,
    diagonal_symmetry_map,
    generate_structured_hex,
    generate_structured_quad,
    generate_triangles,
    import_mesh,
)
from .model import ModelParams, SourceSpec, energy
from .newton import NewtonConfig
from .timeloop import IntegratorConfig, LinearSolverConfig, Scheme, init_consistent, run

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "EllipticityError",
    "FESpace",
    "GeometryError",
    "IntegratorConfig",
    "InvalidArgumentError",
    "KrylovConvergenceError",
    "LinearSolverConfig",
    "MeshFormatError",
    "MeshTopology",
    "ModelParams",
    "NetformError",
    "NewtonConfig",
    "NotSPDError",
    "Scheme",
    "SourceSpec",
    "StateVector",
    "StepSizeCollapseError",
    "diagonal_symmetry_map",
    "energy",
    "generate_structured_hex",
    "generate_structured_quad",
    "generate_triangles",
    "import_mesh",
    "init_consistent",
    "run",
]
