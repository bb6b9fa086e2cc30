"""Legacy ASCII VTK output of conductivity and pressure fields."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .exceptions import NetformError
from .fespace import COMPONENTS, StateVector
from .mesh import MeshTopology
from .model import frobenius_sq, min_eigenvalues

_AXES = "xyz"


def _block(values) -> str:
    return "\n".join("%.17g" % v for v in values)


def write_vtk(state: StateVector, mesh: MeshTopology, path, title: str = "netform") -> Path:
    """Write an unstructured-grid file with cell and point data.

    Cell data holds every stored conductivity component (``C_xx``, ``C_xy``,
    ...), the Frobenius norm ``normC`` and ``lambda_min``; point data holds
    the pressure ``p``.  Values are printed with 17 significant digits so
    they read back exactly.
    """
    path = Path(path)
    dim = mesh.dim
    verts = mesh.vertices
    if dim == 2:
        verts = np.column_stack([verts, np.zeros(len(verts))])
    comps = state.components
    out = [
        "# vtk DataFile Version 3.0",
        f"{title} t={state.time!r}",
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {mesh.n_vertices} double",
        "\n".join(" ".join("%.17g" % x for x in row) for row in verts),
    ]
    nloc = mesh.cells.shape[1]
    out.append(f"CELLS {mesh.n_cells} {mesh.n_cells * (nloc + 1)}")
    out.append("\n".join(f"{nloc} " + " ".join(map(str, c)) for c in mesh.cells))
    out.append(f"CELL_TYPES {mesh.n_cells}")
    out.append("\n".join([str(mesh.cell_kind.vtk_type)] * mesh.n_cells))
    out.append(f"CELL_DATA {mesh.n_cells}")
    arrays = [(f"C_{_AXES[a]}{_AXES[b]}", comps[m]) for m, (a, b) in enumerate(COMPONENTS[dim])]
    arrays.append(("normC", np.sqrt(frobenius_sq(comps, dim))))
    arrays.append(("lambda_min", min_eigenvalues(comps, dim)))
    for name, values in arrays:
        out += [f"SCALARS {name} double 1", "LOOKUP_TABLE default", _block(values)]
    out.append(f"POINT_DATA {mesh.n_vertices}")
    out += ["SCALARS p double 1", "LOOKUP_TABLE default", _block(state.pressure)]
    try:
        path.write_text("\n".join(out) + "\n")
    except OSError as exc:
        raise NetformError(f"cannot write VTK file {path}: {exc.strerror}") from exc
    return path


def write_threshold(state: StateVector, mesh: MeshTopology, path, threshold: float) -> Path:
    """List the cells with ``||C||_F > threshold``: index, centroid and norm."""
    path = Path(path)
    norm = np.sqrt(frobenius_sq(state.components, mesh.dim))
    idx = np.nonzero(norm > threshold)[0]
    cent = mesh.centroids
    head = "cell " + " ".join(_AXES[:mesh.dim]) + " normC"
    lines = [f"# t = {state.time!r}", f"# threshold = {threshold!r}", f"# count = {len(idx)}", head]
    for c in idx:
        lines.append(f"{c} " + " ".join("%.17g" % x for x in cent[c]) + " %.17g" % norm[c])
    try:
        path.write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise NetformError(f"cannot write threshold file {path}: {exc.strerror}") from exc
    return path
