"""Discrete spaces: P0 symmetric-tensor conductivity and continuous P1/Q1 pressure.

Unknowns are field-ordered: all cells' first tensor component, then the
second, ..., then the nodal pressure.  Tensor components are stored in the
order ``(xx, xy, yy)`` in 2D and ``(xx, xy, xz, yy, yz, zz)`` in 3D.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .exceptions import InvalidArgumentError
from .mesh import MeshTopology
from .reference import (
    map_geometry,
    quadrature_for,
    shape_gradients,
    shape_values,
)

__all__ = [
    "COMPONENTS",
    "DofLayout",
    "FESpace",
    "StateVector",
    "cell_tensor",
    "component_weights",
    "eval_pressure_gradient",
    "quadrature_for",
    "tensor_components",
]

COMPONENTS = {
    2: ((0, 0), (0, 1), (1, 1)),
    3: ((0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)),
}


def n_components(dim: int) -> int:
    return dim * (dim + 1) // 2


def component_weights(dim: int) -> np.ndarray:
    """Multiplicity of each stored component in the full matrix (1 diagonal, 2 off)."""
    return np.array([1.0 if a == b else 2.0 for a, b in COMPONENTS[dim]])


def cell_tensor_batch(comps: np.ndarray, dim: int) -> np.ndarray:
    """Expand ``(n_components, ...)`` stored components to ``(..., dim, dim)`` matrices."""
    comps = np.asarray(comps, dtype=float)
    out = np.empty(comps.shape[1:] + (dim, dim))
    for m, (a, b) in enumerate(COMPONENTS[dim]):
        out[..., a, b] = comps[m]
        out[..., b, a] = comps[m]
    return out


def tensor_components(C: np.ndarray) -> np.ndarray:
    """Inverse of :func:`cell_tensor_batch` for ``(..., dim, dim)`` input."""
    C = np.asarray(C, dtype=float)
    dim = C.shape[-1]
    return np.stack([C[..., a, b] for a, b in COMPONENTS[dim]])


@dataclass(frozen=True)
class DofLayout:
    dim: int
    n_cells: int
    n_vertices: int

    @property
    def n_tensor_components(self) -> int:
        return n_components(self.dim)

    @property
    def n_cond_dofs(self) -> int:
        return self.n_tensor_components * self.n_cells

    @property
    def n_pressure_dofs(self) -> int:
        return self.n_vertices

    @property
    def size(self) -> int:
        return self.n_cond_dofs + self.n_pressure_dofs

    @property
    def field_offsets(self) -> tuple[int, ...]:
        k, nc = self.n_tensor_components, self.n_cells
        return tuple(m * nc for m in range(k)) + (k * nc,)

    @property
    def cond(self) -> slice:
        return slice(0, self.n_cond_dofs)

    @property
    def pressure(self) -> slice:
        return slice(self.n_cond_dofs, self.size)


class StateVector:
    """Flat unknown vector plus the time it belongs to.

    ``components`` and ``pressure`` are views into ``data``.
    """

    __slots__ = ("data", "layout", "time")

    def __init__(self, data, layout: DofLayout, time: float = 0.0):
        data = np.asarray(data, dtype=float)
        if data.shape != (layout.size,):
            raise InvalidArgumentError(
                f"state has length {data.shape}, layout expects {layout.size}"
            )
        self.data = data
        self.layout = layout
        self.time = float(time)

    @classmethod
    def zeros(cls, layout: DofLayout, time: float = 0.0) -> "StateVector":
        return cls(np.zeros(layout.size), layout, time)

    @classmethod
    def from_fields(cls, components, pressure, layout: DofLayout, time: float = 0.0):
        data = np.concatenate([np.asarray(components, float).ravel(),
                               np.asarray(pressure, float).ravel()])
        return cls(data, layout, time)

    @property
    def components(self) -> np.ndarray:
        lay = self.layout
        return self.data[lay.cond].reshape(lay.n_tensor_components, lay.n_cells)

    @property
    def pressure(self) -> np.ndarray:
        return self.data[self.layout.pressure]

    def tensors(self) -> np.ndarray:
        return cell_tensor_batch(self.components, self.layout.dim)

    def copy(self) -> "StateVector":
        return StateVector(self.data.copy(), self.layout, self.time)

    def __repr__(self):
        return f"StateVector(size={self.layout.size}, time={self.time!r})"


def cell_tensor(state: StateVector, cell: int) -> np.ndarray:
    """Symmetric ``dim x dim`` conductivity of one cell."""
    return cell_tensor_batch(state.components[:, cell], state.layout.dim)


def eval_pressure_gradient(mesh: MeshTopology, p_dofs, cell: int, qpoint) -> np.ndarray:
    """Gradient of the nodal interpolant of ``p_dofs`` in ``cell`` at a reference point."""
    p_dofs = np.asarray(p_dofs, dtype=float)
    if p_dofs.shape != (mesh.n_vertices,):
        raise InvalidArgumentError("p_dofs must have one value per vertex")
    ref = shape_gradients(mesh.cell_kind, np.atleast_2d(qpoint))
    verts = mesh.cells[cell]
    _, grads = map_geometry(mesh.vertices[verts][None], ref)
    return grads[0, 0].T @ p_dofs[verts]


class FESpace:
    """Precomputed geometry and quadrature for a mesh.

    Everything here is immutable after construction and shared by residual,
    Jacobian and diagnostic evaluations.

    Attributes
    ----------
    phi : (n_q, n_loc) basis values at quadrature points
    grads : (n_cells, n_q, n_loc, dim) physical basis gradients
    jxw : (n_cells, n_q) quadrature weight times Jacobian determinant
    qpoints : (n_cells, n_q, dim) physical quadrature points
    lumped_mass : (n_vertices,) integrals of the pressure basis functions
    """

    def __init__(self, mesh: MeshTopology, quad_degree: int = 2):
        self.mesh = mesh
        self.dim = mesh.dim
        self.quad_degree = int(quad_degree)
        kind = mesh.cell_kind
        self.rule = quadrature_for(kind, self.quad_degree)
        self.phi = shape_values(kind, self.rule.points)
        ref_grads = shape_gradients(kind, self.rule.points)
        coords = mesh.vertices[mesh.cells]
        det, self.grads = map_geometry(coords, ref_grads)
        self.jxw = det * self.rule.weights
        self.qpoints = np.einsum("qa,cai->cqi", self.phi, coords)
        self.cell_volumes = self.jxw.sum(axis=1)
        self.layout = DofLayout(self.dim, mesh.n_cells, mesh.n_vertices)
        self.ncomp = self.layout.n_tensor_components
        self.comp_weights = component_weights(self.dim)
        self.lumped_mass = self.scatter_vector(self.jxw @ self.phi)
        cells = mesh.cells
        nloc = cells.shape[1]
        self._coo_rows = np.repeat(cells, nloc, axis=1).ravel()
        self._coo_cols = np.tile(cells, (1, nloc)).ravel()

    @property
    def n_cells(self) -> int:
        return self.mesh.n_cells

    @property
    def n_vertices(self) -> int:
        return self.mesh.n_vertices

    def scatter_vector(self, local: np.ndarray) -> np.ndarray:
        """Sum ``(n_cells, n_loc)`` element contributions into a nodal vector."""
        return np.bincount(self.mesh.cells.ravel(), weights=local.ravel(),
                           minlength=self.n_vertices)

    def scatter_matrix(self, local: np.ndarray) -> sp.csr_matrix:
        """Assemble ``(n_cells, n_loc, n_loc)`` element matrices into CSR."""
        n = self.n_vertices
        A = sp.coo_matrix((local.ravel(), (self._coo_rows, self._coo_cols)), shape=(n, n))
        A = A.tocsr()
        A.sum_duplicates()
        A.sort_indices()
        return A

    def pressure_gradients(self, p: np.ndarray) -> np.ndarray:
        """``(n_cells, n_q, dim)`` gradient of the pressure at quadrature points."""
        return np.einsum("cqad,ca->cqd", self.grads, p[self.mesh.cells])

    def interpolate(self, fn) -> np.ndarray:
        """Nodal interpolation of ``fn(x)`` with ``x`` of shape ``(n, dim)``."""
        return np.asarray(fn(self.mesh.vertices), dtype=float)

    def integrate_qp(self, values: np.ndarray) -> float:
        """Integral of a function sampled at quadrature points ``(n_cells, n_q)``."""
        return float(np.sum(values * self.jxw))
