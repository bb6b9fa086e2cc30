"""Reference cells: shape functions and quadrature rules.

Reference cells are the unit square ``[0, 1]^2``, the unit cube ``[0, 1]^3``
and the triangle with vertices (0, 0), (1, 0), (0, 1).  Vertex ordering is
counter-clockwise for quads and triangles; hexahedra list the bottom face
counter-clockwise and then the top face (the VTK convention).
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .exceptions import InvalidArgumentError

MAX_TENSOR_DEGREE = 9
MAX_TRIANGLE_DEGREE = 9


class CellKind(enum.Enum):
    QUAD = "quad"
    TRIANGLE = "triangle"
    HEX = "hex"

    @property
    def dim(self) -> int:
        return 3 if self is CellKind.HEX else 2

    @property
    def n_vertices(self) -> int:
        return {CellKind.QUAD: 4, CellKind.TRIANGLE: 3, CellKind.HEX: 8}[self]

    @property
    def reference_measure(self) -> float:
        return 0.5 if self is CellKind.TRIANGLE else 1.0

    @property
    def vtk_type(self) -> int:
        return {CellKind.QUAD: 9, CellKind.TRIANGLE: 5, CellKind.HEX: 12}[self]

    @property
    def local_faces(self) -> tuple[tuple[int, ...], ...]:
        if self is CellKind.TRIANGLE:
            return ((0, 1), (1, 2), (2, 0))
        if self is CellKind.QUAD:
            return ((0, 1), (1, 2), (2, 3), (3, 0))
        return (
            (0, 3, 2, 1),
            (4, 5, 6, 7),
            (0, 1, 5, 4),
            (1, 2, 6, 5),
            (2, 3, 7, 6),
            (3, 0, 4, 7),
        )

    @classmethod
    def parse(cls, name: str) -> "CellKind":
        aliases = {
            "quad": cls.QUAD,
            "quadrilateral": cls.QUAD,
            "tri": cls.TRIANGLE,
            "triangle": cls.TRIANGLE,
            "hex": cls.HEX,
            "hexahedron": cls.HEX,
        }
        try:
            return aliases[name.strip().lower()]
        except KeyError:
            raise InvalidArgumentError(f"unknown cell kind {name!r}") from None


# tensor-product vertex positions in reference coordinates
_QUAD_NODES = np.array([(0, 0), (1, 0), (1, 1), (0, 1)], dtype=float)
_HEX_NODES = np.array(
    [(0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0),
     (0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1)],
    dtype=float,
)
_TRI_NODES = np.array([(0, 0), (1, 0), (0, 1)], dtype=float)


def reference_vertices(kind: CellKind) -> np.ndarray:
    return {CellKind.QUAD: _QUAD_NODES, CellKind.HEX: _HEX_NODES,
            CellKind.TRIANGLE: _TRI_NODES}[kind].copy()


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray
    weights: np.ndarray
    degree: int

    def __len__(self):
        return len(self.weights)


def _gauss01(n):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


@lru_cache(maxsize=None)
def _cached_rule(kind: CellKind, degree: int) -> QuadratureRule:
    if kind is CellKind.TRIANGLE:
        if degree <= 1:
            pts = np.array([[1.0 / 3.0, 1.0 / 3.0]])
            wts = np.array([0.5])
        elif degree == 2:
            pts = np.array([[1 / 6, 1 / 6], [2 / 3, 1 / 6], [1 / 6, 2 / 3]])
            wts = np.full(3, 1.0 / 6.0)
        else:
            # collapsed (Duffy) Gauss rule: positive weights, any degree
            xu, wu = _gauss01((degree + 2 + 1) // 2)
            xv, wv = _gauss01((degree + 1 + 1) // 2)
            u, v = np.meshgrid(xu, xv, indexing="ij")
            wuu, wvv = np.meshgrid(wu, wv, indexing="ij")
            pts = np.column_stack([u.ravel(), (v * (1.0 - u)).ravel()])
            wts = (wuu * wvv * (1.0 - u)).ravel()
    else:
        n = max(1, (degree + 2) // 2)
        x, w = _gauss01(n)
        grids = np.meshgrid(*([x] * kind.dim), indexing="ij")
        wgrids = np.meshgrid(*([w] * kind.dim), indexing="ij")
        # x fastest, matching lexicographic cell ordering
        pts = np.column_stack([g.ravel(order="F") for g in grids])
        wts = np.prod([g.ravel(order="F") for g in wgrids], axis=0)
    pts.setflags(write=False)
    wts.setflags(write=False)
    return QuadratureRule(points=pts, weights=wts, degree=degree)


def quadrature_for(kind: CellKind, degree: int) -> QuadratureRule:
    """Quadrature rule on the reference cell, exact for polynomials of ``degree``.

    Quads and hexes use tensor Gauss-Legendre rules (exact per coordinate
    direction, so also for total degree).  Triangles use the centroid rule,
    the classic 3-point rule, and collapsed Gauss rules above degree 2.
    """
    degree = int(degree)
    limit = MAX_TRIANGLE_DEGREE if kind is CellKind.TRIANGLE else MAX_TENSOR_DEGREE
    if degree < 0 or degree > limit:
        raise InvalidArgumentError(
            f"quadrature degree {degree} unsupported for {kind.value} (0..{limit})"
        )
    return _cached_rule(kind, degree)


def shape_values(kind: CellKind, points) -> np.ndarray:
    """Values of the (bi/tri)linear basis, shape ``(n_points, n_vertices)``."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if kind is CellKind.TRIANGLE:
        x, y = pts[:, 0], pts[:, 1]
        return np.column_stack([1.0 - x - y, x, y])
    nodes = _QUAD_NODES if kind is CellKind.QUAD else _HEX_NODES
    out = np.ones((len(pts), len(nodes)))
    for a, node in enumerate(nodes):
        for i, ni in enumerate(node):
            out[:, a] *= pts[:, i] if ni else 1.0 - pts[:, i]
    return out


def shape_gradients(kind: CellKind, points) -> np.ndarray:
    """Reference gradients, shape ``(n_points, n_vertices, dim)``."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    npts = len(pts)
    if kind is CellKind.TRIANGLE:
        g = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
        return np.broadcast_to(g, (npts, 3, 2)).copy()
    nodes = _QUAD_NODES if kind is CellKind.QUAD else _HEX_NODES
    dim = nodes.shape[1]
    out = np.ones((npts, len(nodes), dim))
    for a, node in enumerate(nodes):
        for j in range(dim):
            for i, ni in enumerate(node):
                if i == j:
                    out[:, a, j] *= 1.0 if ni else -1.0
                else:
                    out[:, a, j] *= pts[:, i] if ni else 1.0 - pts[:, i]
    return out


def map_geometry(coords: np.ndarray, ref_grads: np.ndarray):
    """Jacobians of the isoparametric map for a batch of cells.

    Parameters
    ----------
    coords : array, shape (n_cells, n_vertices, dim)
    ref_grads : array, shape (n_points, n_vertices, dim)

    Returns
    -------
    det : array (n_cells, n_points)
    phys_grads : array (n_cells, n_points, n_vertices, dim)
    """
    jac = np.einsum("cai,qaj->cqij", coords, ref_grads)
    det = np.linalg.det(jac)
    inv = np.linalg.inv(jac)
    # grad_x N = J^{-T} grad_xi N
    phys = np.einsum("cqji,qaj->cqai", inv, ref_grads)
    return det, phys
