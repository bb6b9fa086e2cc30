"""Mesh generation, import/export and reflection symmetry maps.

Generated meshes use lexicographic cell ordering (x fastest, then y, then z).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .exceptions import GeometryError, InvalidArgumentError, MeshFormatError
from .reference import (
    CellKind,
    map_geometry,
    quadrature_for,
    shape_gradients,
)

UNIT_SQUARE = ((0.0, 1.0), (0.0, 1.0))
UNIT_CUBE = ((0.0, 1.0), (0.0, 1.0), (0.0, 1.0))


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class MeshTopology:
    """Immutable unstructured mesh made of a single cell kind.

    Attributes
    ----------
    vertices : (n_vertices, dim) float array
    cells : (n_cells, n_vertices_per_cell) int array
    cell_kind : CellKind
    cell_volumes : (n_cells,) float array, all positive
    boundary_faces : (n_boundary_faces, 2) int array of (cell, local face)
    """

    vertices: np.ndarray
    cells: np.ndarray
    cell_kind: CellKind
    cell_volumes: np.ndarray = field(repr=False)
    boundary_faces: np.ndarray = field(repr=False)
    descriptor: str = ""

    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    @property
    def n_cells(self) -> int:
        return self.cells.shape[0]

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def volume(self) -> float:
        return float(self.cell_volumes.sum())

    @property
    def centroids(self) -> np.ndarray:
        return self.vertices[self.cells].mean(axis=1)

    def face_adjacency(self):
        """Pairs of cells sharing a face, as an (n_pairs, 2) int array."""
        keys, owners = _face_table(self.cells, self.cell_kind)
        order = np.lexsort(keys.T[::-1])
        keys, owners = keys[order], owners[order]
        same = np.all(keys[1:] == keys[:-1], axis=1)
        idx = np.nonzero(same)[0]
        return np.column_stack([owners[idx, 0], owners[idx + 1, 0]])

    def __eq__(self, other):
        if not isinstance(other, MeshTopology):
            return NotImplemented
        return (
            self.cell_kind is other.cell_kind
            and np.array_equal(self.vertices, other.vertices)
            and np.array_equal(self.cells, other.cells)
        )

    __hash__ = None


def _face_table(cells, kind):
    """Sorted vertex keys of every local face and its (cell, local face) owner."""
    faces = kind.local_faces
    nc = len(cells)
    keys = np.concatenate([np.sort(cells[:, list(f)], axis=1) for f in faces])
    owners = np.column_stack([
        np.tile(np.arange(nc), len(faces)),
        np.repeat(np.arange(len(faces)), nc),
    ])
    return keys, owners


def _boundary_faces(cells, kind):
    keys, owners = _face_table(cells, kind)
    _, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.ravel()
    if np.any(counts > 2):
        raise GeometryError("non-manifold mesh: a face is shared by more than two cells")
    bnd = owners[counts[inverse] == 1]
    order = np.lexsort((bnd[:, 1], bnd[:, 0]))
    return bnd[order]


def _cell_volumes(vertices, cells, kind):
    rule = quadrature_for(kind, 2)
    det, _ = map_geometry(vertices[cells], shape_gradients(kind, rule.points))
    return det, det @ rule.weights


def build_mesh(vertices, cells, kind: CellKind, descriptor: str = "") -> MeshTopology:
    """Validate raw arrays and wrap them in a MeshTopology.

    Raises GeometryError on inverted cells (non-positive Jacobian at any
    quadrature point) and InvalidArgumentError on bad connectivity.
    """
    vertices = np.asarray(vertices, dtype=float)
    cells = np.asarray(cells, dtype=np.int64)
    if vertices.ndim != 2 or vertices.shape[1] != kind.dim:
        raise InvalidArgumentError(f"{kind.value} mesh needs {kind.dim}D vertices")
    if cells.ndim != 2 or cells.shape[1] != kind.n_vertices:
        raise InvalidArgumentError(
            f"{kind.value} cells need {kind.n_vertices} vertex indices each"
        )
    if cells.size and (cells.min() < 0 or cells.max() >= len(vertices)):
        raise InvalidArgumentError("cell references a vertex index out of range")
    srt = np.sort(cells, axis=1)
    if np.any(srt[:, 1:] == srt[:, :-1]):
        bad = int(np.nonzero(np.any(srt[:, 1:] == srt[:, :-1], axis=1))[0][0])
        raise InvalidArgumentError(f"cell {bad} repeats a vertex index")
    det, vol = _cell_volumes(vertices, cells, kind)
    bad = np.nonzero(np.any(det <= 0.0, axis=1))[0]
    if len(bad):
        raise GeometryError(
            f"cell {int(bad[0])} is inverted or degenerate "
            f"(Jacobian determinant {det[bad[0]].min():.3e})"
        )
    return MeshTopology(
        vertices=_frozen(vertices, float),
        cells=_frozen(cells, np.int64),
        cell_kind=kind,
        cell_volumes=_frozen(vol, float),
        boundary_faces=_frozen(_boundary_faces(cells, kind), np.int64),
        descriptor=descriptor,
    )


def _check_counts(*counts):
    for n in counts:
        if int(n) != n or n < 1:
            raise InvalidArgumentError(f"cell counts must be positive integers, got {n}")


def _check_extent(extent, dim):
    ext = np.asarray(extent, dtype=float)
    if ext.shape != (dim, 2):
        raise InvalidArgumentError(f"extent must be {dim} (lo, hi) pairs")
    if np.any(ext[:, 1] <= ext[:, 0]):
        raise InvalidArgumentError("extent must have positive side lengths")
    return ext


def _grid_vertices(counts, ext):
    axes = [np.linspace(lo, hi, n + 1) for n, (lo, hi) in zip(counts, ext)]
    grids = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([g.ravel(order="F") for g in grids])


def _quad_cells(nx, ny):
    i, j = np.meshgrid(np.arange(nx), np.arange(ny), indexing="xy")
    i, j = i.ravel(), j.ravel()
    v = lambda a, b: b * (nx + 1) + a  # noqa: E731
    return np.column_stack([v(i, j), v(i + 1, j), v(i + 1, j + 1), v(i, j + 1)])


def generate_structured_quad(nx: int, ny: int, extent=UNIT_SQUARE) -> MeshTopology:
    _check_counts(nx, ny)
    ext = _check_extent(extent, 2)
    verts = _grid_vertices((nx, ny), ext)
    return build_mesh(verts, _quad_cells(nx, ny), CellKind.QUAD,
                      descriptor=f"quad {nx}x{ny}")


def generate_triangles(nx: int, ny: int, extent=UNIT_SQUARE, style: str = "crisscross",
                       diagonal: str = "main") -> MeshTopology:
    """Triangulate an ``nx x ny`` quad grid.

    ``style="crisscross"`` splits every quad into four triangles around an
    added center vertex; ``style="regular"`` splits along one diagonal,
    ``diagonal="main"`` (lower-left to upper-right) or ``"anti"``.
    """
    _check_counts(nx, ny)
    ext = _check_extent(extent, 2)
    verts = _grid_vertices((nx, ny), ext)
    quads = _quad_cells(nx, ny)
    v00, v10, v11, v01 = quads.T
    style = style.lower().replace("-", "").replace("_", "")
    if style == "crisscross":
        centers = verts[quads].mean(axis=1)
        m = len(verts) + np.arange(len(quads))
        verts = np.vstack([verts, centers])
        tris = np.stack([
            np.column_stack([v00, v10, m]),
            np.column_stack([v10, v11, m]),
            np.column_stack([v11, v01, m]),
            np.column_stack([v01, v00, m]),
        ], axis=1).reshape(-1, 3)
    elif style == "regular":
        if diagonal == "main":
            tris = np.stack([np.column_stack([v00, v10, v11]),
                             np.column_stack([v00, v11, v01])], axis=1).reshape(-1, 3)
        elif diagonal == "anti":
            tris = np.stack([np.column_stack([v00, v10, v01]),
                             np.column_stack([v10, v11, v01])], axis=1).reshape(-1, 3)
        else:
            raise InvalidArgumentError(f"unknown diagonal {diagonal!r}")
    else:
        raise InvalidArgumentError(f"unknown triangle style {style!r}")
    return build_mesh(verts, tris, CellKind.TRIANGLE, descriptor=f"{style} {nx}x{ny}")


def generate_structured_hex(nx: int, ny: int, nz: int, extent=UNIT_CUBE) -> MeshTopology:
    _check_counts(nx, ny, nz)
    ext = _check_extent(extent, 3)
    verts = _grid_vertices((nx, ny, nz), ext)
    k, j, i = np.meshgrid(np.arange(nz), np.arange(ny), np.arange(nx), indexing="ij")
    i, j, k = i.ravel(), j.ravel(), k.ravel()

    def v(a, b, c):
        return (c * (ny + 1) + b) * (nx + 1) + a

    cells = np.column_stack([
        v(i, j, k), v(i + 1, j, k), v(i + 1, j + 1, k), v(i, j + 1, k),
        v(i, j, k + 1), v(i + 1, j, k + 1), v(i + 1, j + 1, k + 1), v(i, j + 1, k + 1),
    ])
    return build_mesh(verts, cells, CellKind.HEX, descriptor=f"hex {nx}x{ny}x{nz}")


def _data_lines(text):
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield lineno, line.split()


def import_mesh(path) -> MeshTopology:
    """Read the plain-text mesh format.

    Header ``dim nv nc kind``, then ``nv`` coordinate lines, then ``nc`` lines
    of 0-based vertex indices.  ``#`` starts a comment.
    """
    path = Path(path)
    lines = _data_lines(path.read_text())
    try:
        lineno, head = next(lines)
    except StopIteration:
        raise MeshFormatError("empty mesh file", 1) from None
    if len(head) != 4:
        raise MeshFormatError("header must be 'dim nv nc kind'", lineno)
    try:
        dim, nv, nc = int(head[0]), int(head[1]), int(head[2])
        kind = CellKind.parse(head[3])
    except ValueError as exc:
        raise MeshFormatError(f"bad header: {exc}", lineno) from None
    if dim != kind.dim:
        raise MeshFormatError(f"dim {dim} does not match kind {kind.value}", lineno)
    verts = np.empty((nv, dim))
    cells = np.empty((nc, kind.n_vertices), dtype=np.int64)
    for target, width, conv, what in (
        (verts, dim, float, "vertex"),
        (cells, kind.n_vertices, int, "cell"),
    ):
        for row in range(len(target)):
            try:
                lineno, toks = next(lines)
            except StopIteration:
                raise MeshFormatError(f"file ends before {what} {row}", None) from None
            if len(toks) != width:
                raise MeshFormatError(f"{what} line needs {width} entries", lineno)
            try:
                target[row] = [conv(t) for t in toks]
            except ValueError:
                raise MeshFormatError(f"cannot parse {what} entries {toks}", lineno) from None
    extra = next(lines, None)
    if extra is not None:
        raise MeshFormatError("unexpected trailing data", extra[0])
    try:
        return build_mesh(verts, cells, kind, descriptor=f"file {path.name}")
    except InvalidArgumentError as exc:
        raise MeshFormatError(str(exc)) from None


def export_mesh(mesh: MeshTopology, path) -> None:
    """Write ``mesh`` in the plain-text format read by :func:`import_mesh`."""
    out = [f"{mesh.dim} {mesh.n_vertices} {mesh.n_cells} {mesh.cell_kind.value}"]
    out += [" ".join(repr(float(x)) for x in v) for v in mesh.vertices]
    out += [" ".join(str(int(i)) for i in c) for c in mesh.cells]
    Path(path).write_text("\n".join(out) + "\n")


@dataclass(frozen=True, eq=False)
class SymmetryMap:
    """Cell permutation induced by the reflection swapping x and y.

    ``mirror[i]`` is the cell whose centroid is the reflection of cell
    ``i``'s centroid, or -1 if there is none; ``valid`` is False as soon as
    one cell lacks a partner.
    """

    mirror: np.ndarray
    valid: bool

    @property
    def cell_pairs(self) -> np.ndarray:
        idx = np.arange(len(self.mirror))
        return np.column_stack([idx, self.mirror])


def diagonal_symmetry_map(mesh: MeshTopology, tol: float = 1e-10) -> SymmetryMap:
    """Match cells under the reflection (x, y, [z]) -> (y, x, [z])."""
    cent = mesh.centroids
    refl = cent.copy()
    refl[:, [0, 1]] = cent[:, [1, 0]]
    dist, idx = cKDTree(cent).query(refl, k=1)
    ok = dist <= tol
    mirror = np.where(ok, idx, -1).astype(np.int64)
    if ok.all():
        vol = mesh.cell_volumes
        ok_vol = np.abs(vol[mirror] - vol) <= 1e-12 * np.abs(vol)
        valid = bool(ok_vol.all() and np.array_equal(mirror[mirror], np.arange(len(mirror))))
    else:
        valid = False
    mirror.setflags(write=False)
    return SymmetryMap(mirror=mirror, valid=valid)
