"""Physical model: parameters, source term, metabolic nonlinearity, energy."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from .exceptions import InvalidArgumentError
from .fespace import COMPONENTS, FESpace, StateVector, component_weights, tensor_components


@dataclass(frozen=True)
class ModelParams:
    """Model constants.

    ``nu`` is the metabolic constant already divided by the squared alignment
    constant, so that constant never appears anywhere else.
    """

    r: float = 1e-4
    nu: float = 0.03
    gamma: float = 0.75
    eps: float = 1e-5
    dim: int = 2

    def __post_init__(self):
        for name in ("r", "nu", "eps"):
            val = getattr(self, name)
            if not (val > 0 and math.isfinite(val)):
                raise InvalidArgumentError(f"{name} must be positive and finite, got {val}")
        if not (0 < self.gamma <= 2):
            raise InvalidArgumentError(f"gamma must lie in (0, 2], got {self.gamma}")
        if self.dim not in (2, 3):
            raise InvalidArgumentError(f"dim must be 2 or 3, got {self.dim}")
        if not (0.5 <= self.gamma <= 1.0):
            warnings.warn(
                f"gamma={self.gamma} is outside the usual biological range [0.5, 1]",
                stacklevel=3,
            )


@dataclass(frozen=True)
class SourceSpec:
    """Source/sink distribution ``S(x) = S0(x) - mean(S0)``.

    ``kind="gaussian"`` uses ``S0(x) = exp(-sharpness * |x - center|^2)``;
    ``kind="custom"`` calls ``function(x)`` with ``x`` of shape ``(n, dim)``.
    ``mean_offset`` is filled in by :meth:`realize`.
    """

    kind: str = "gaussian"
    center: tuple = (0.25, 0.25)
    sharpness: float = 500.0
    function: Optional[Callable] = None
    mean_offset: Optional[float] = None

    def raw(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == "gaussian":
            d2 = np.sum((x - np.asarray(self.center, dtype=float)) ** 2, axis=-1)
            return np.exp(-self.sharpness * d2)
        if self.kind == "custom":
            if self.function is None:
                raise InvalidArgumentError("custom source needs a function")
            return np.asarray(self.function(x), dtype=float)
        raise InvalidArgumentError(f"unknown source kind {self.kind!r}")

    def realize(self, space: FESpace) -> "SourceSpec":
        """Return a copy whose mean offset makes the discrete integral vanish.

        The mean is taken with the same quadrature used for assembly, which is
        what the singular Neumann problem needs to be solvable.
        """
        if self.kind == "gaussian" and len(self.center) != space.dim:
            raise InvalidArgumentError("source center dimension does not match the mesh")
        vals = self.raw(space.qpoints.reshape(-1, space.dim)).reshape(space.jxw.shape)
        mean = space.integrate_qp(vals) / float(space.jxw.sum())
        return replace(self, mean_offset=mean)


def eval_source(spec: SourceSpec, x) -> np.ndarray:
    if spec.mean_offset is None:
        raise InvalidArgumentError("source has not been realized on a mesh")
    return spec.raw(x) - spec.mean_offset


def source_at_quadrature(spec: SourceSpec, space: FESpace) -> np.ndarray:
    return eval_source(spec, space.qpoints.reshape(-1, space.dim)).reshape(space.jxw.shape)


def source_load(spec: SourceSpec, space: FESpace) -> np.ndarray:
    """Nodal load vector ``b_i = int S psi_i``."""
    s = source_at_quadrature(spec, space)
    return space.scatter_vector((s * space.jxw) @ space.phi)


def frobenius_sq(comps: np.ndarray, dim: int) -> np.ndarray:
    """``||C||_F^2`` from stored components ``(n_components, ...)``."""
    w = component_weights(dim).reshape((-1,) + (1,) * (np.ndim(comps) - 1))
    return np.sum(w * np.asarray(comps) ** 2, axis=0)


def _as_matrix(C):
    C = np.asarray(C, dtype=float)
    return np.sum(C * C, axis=(-2, -1))


def metabolic_factor(C, params: ModelParams):
    """``m(C) = nu (||C||_F^2 + eps)^((gamma-2)/2)`` for one or many matrices."""
    return params.nu * (_as_matrix(C) + params.eps) ** ((params.gamma - 2.0) / 2.0)


def jacobian_coeffs(C, params: ModelParams):
    """Coefficients ``(alpha, beta)`` of the metabolic linearization."""
    s = _as_matrix(C) + params.eps
    g = params.gamma
    return s ** ((g - 2.0) / 2.0), 0.5 * (g - 2.0) * s ** ((g - 4.0) / 2.0)


def metabolic_from_components(comps, params: ModelParams):
    s = frobenius_sq(comps, params.dim) + params.eps
    return params.nu * s ** ((params.gamma - 2.0) / 2.0)


def energy(state: StateVector, space: FESpace, params: ModelParams) -> float:
    """``E = int grad p . (C + r I) grad p + (nu/gamma) (||C||^2 + eps)^(gamma/2)``.

    Evaluated at the pressure stored in ``state``; the Dirichlet part uses the
    assembly quadrature.
    """
    comps = state.components
    g = space.pressure_gradients(state.pressure)
    flux = params.r * g
    for m, (a, b) in enumerate(COMPONENTS[space.dim]):
        ca = comps[m][:, None]
        flux[..., a] += ca * g[..., b]
        if a != b:
            flux[..., b] += ca * g[..., a]
    dirichlet = float(np.sum(np.sum(flux * g, axis=-1) * space.jxw))
    dens = (frobenius_sq(comps, space.dim) + params.eps) ** (params.gamma / 2.0)
    metabolic = params.nu / params.gamma * float(dens @ space.cell_volumes)
    return dirichlet + metabolic


def min_eigenvalue(C) -> float:
    """Smallest eigenvalue of a symmetric 2x2 or 3x3 matrix, in closed form."""
    C = np.asarray(C, dtype=float)
    dim = C.shape[-1]
    if C.shape != (dim, dim) or dim not in (2, 3):
        raise InvalidArgumentError("min_eigenvalue expects a 2x2 or 3x3 matrix")
    return float(min_eigenvalues(tensor_components(C)[:, None], dim)[0])


def min_eigenvalues(comps: np.ndarray, dim: int) -> np.ndarray:
    """Vectorized smallest eigenvalue from stored components ``(n_components, n)``."""
    comps = np.asarray(comps, dtype=float)
    if dim == 2:
        c0, c1, c2 = comps
        half = 0.5 * (c0 - c2)
        return 0.5 * (c0 + c2) - np.hypot(half, c1)
    a, d, e, b, f, c = comps  # xx, xy, xz, yy, yz, zz
    q = (a + b + c) / 3.0
    p1 = d * d + e * e + f * f
    p2 = (a - q) ** 2 + (b - q) ** 2 + (c - q) ** 2 + 2.0 * p1
    p = np.sqrt(p2 / 6.0)
    safe = np.where(p > 0, p, 1.0)
    ba, bb, bc = (a - q) / safe, (b - q) / safe, (c - q) / safe
    bd, be, bf = d / safe, e / safe, f / safe
    det = ba * (bb * bc - bf * bf) - bd * (bd * bc - bf * be) + be * (bd * bf - bb * be)
    phi = np.arccos(np.clip(det / 2.0, -1.0, 1.0)) / 3.0
    lam = q + 2.0 * p * np.cos(phi + 2.0 * np.pi / 3.0)
    return np.where(p > 0, lam, q)


def min_eig_fraction(state: StateVector, space: FESpace, tol_eig: float = 0.0) -> float:
    """Volume fraction of cells whose conductivity has ``lambda_min < -tol_eig``."""
    lam = min_eigenvalues(state.components, space.dim)
    vol = space.cell_volumes
    return float(vol[lam < -tol_eig].sum() / vol.sum())
