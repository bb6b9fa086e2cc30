"""Input validation helpers shared by the estimator facade and drivers."""
from __future__ import annotations

import math

import numpy as np

from .exceptions import InvalidArgumentError
from .fespace import DofLayout, FESpace, StateVector
from .mesh import MeshTopology
from .model import min_eigenvalues


def check_positive(name: str, value, allow_zero: bool = False) -> float:
    try:
        value = float(value)
    except (TypeError, ValueError):
        raise InvalidArgumentError(f"{name} must be a real number, got {value!r}") from None
    ok = value >= 0 if allow_zero else value > 0
    if not (ok and math.isfinite(value)):
        bound = "non-negative" if allow_zero else "positive"
        raise InvalidArgumentError(f"{name} must be {bound} and finite, got {value!r}")
    return value


def check_mesh(X) -> MeshTopology:
    """Accept a mesh or a space built on one; return the mesh."""
    if isinstance(X, FESpace):
        return X.mesh
    if isinstance(X, MeshTopology):
        return X
    raise InvalidArgumentError(f"expected a MeshTopology, got {type(X).__name__}")


def check_state(state, layout: DofLayout) -> StateVector:
    if not isinstance(state, StateVector):
        state = StateVector(np.asarray(state, dtype=float), layout)
    if state.layout != layout:
        raise InvalidArgumentError("state layout does not match the discretization")
    if not np.all(np.isfinite(state.data)):
        raise InvalidArgumentError("state contains non-finite values")
    return state


def check_spsd(comps, dim: int, tol: float = 0.0) -> np.ndarray:
    """Raise unless every cell tensor has ``lambda_min >= -tol``; return the eigenvalues."""
    lam = min_eigenvalues(np.asarray(comps, dtype=float), dim)
    bad = np.nonzero(lam < -tol)[0]
    if len(bad):
        raise InvalidArgumentError(
            f"{len(bad)} cell tensor(s) are not positive semi-definite "
            f"(first cell {bad[0]}, lambda_min={lam[bad[0]]:.3e})"
        )
    return lam
