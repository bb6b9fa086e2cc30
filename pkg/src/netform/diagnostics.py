"""Per-step observables and the run log."""
from __future__ import annotations

import csv
import hashlib
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .exceptions import InvalidArgumentError
from .fespace import COMPONENTS, FESpace, StateVector
from .mesh import SymmetryMap
from .model import ModelParams, energy, min_eig_fraction

COLUMNS = ("t", "dt", "E", "dE_dt_neg", "spsd_fraction", "newton_iters", "krylov_avg",
           "wall_time")


def build_id() -> str:
    """Short content hash of the package sources, stable across runs."""
    h = hashlib.sha1()
    for path in sorted(Path(__file__).parent.glob("*.py")):
        h.update(path.name.encode())
        h.update(path.read_bytes())
    return h.hexdigest()[:12]


@dataclass
class RunLog:
    """Rows of per-step observables plus run metadata.

    ``dE_dt_neg`` is the backward difference ``(E_{n-1} - E_n) / dt_n`` of
    logged energies, the first row being measured against ``E0``.
    """

    metadata: dict = field(default_factory=dict)
    rows: list = field(default_factory=list)
    E0: float = math.nan
    t0: float = 0.0
    failure: Optional[str] = None
    final_state: Optional[StateVector] = None
    rejections: dict = field(default_factory=dict)

    @property
    def n_rejected(self) -> int:
        return sum(self.rejections.values())

    @property
    def completed(self) -> bool:
        return self.failure is None

    def column(self, name: str) -> np.ndarray:
        i = COLUMNS.index(name)
        return np.array([row[i] for row in self.rows], dtype=float)

    def __len__(self):
        return len(self.rows)

    def append(self, t, dt, E, spsd_fraction, newton_iters, krylov_avg, wall_time=0.0):
        if self.rows and not t > self.rows[-1][0]:
            raise InvalidArgumentError(f"log times must increase ({t} after {self.rows[-1][0]})")
        E_prev = self.rows[-1][2] if self.rows else self.E0
        row = (float(t), float(dt), float(E), (E_prev - E) / dt, float(spsd_fraction),
               int(newton_iters), float(krylov_avg), float(wall_time))
        self.rows.append(row)
        return row

    def to_csv(self, path=None, include_wall_time: bool = False) -> str:
        """Write (or return) the CSV text with a ``#`` metadata preamble.

        Wall-clock time is left out unless requested so that repeated runs
        produce identical files.
        """
        cols = COLUMNS if include_wall_time else COLUMNS[:-1]
        buf = io.StringIO()
        for key in sorted(self.metadata):
            buf.write(f"# {key} = {self.metadata[key]}\n")
        buf.write(f"# E0 = {self.E0!r}\n")
        buf.write("# dE_dt_neg = backward difference of logged energies\n")
        if self.failure is not None:
            buf.write(f"# failure = {self.failure}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(cols)
        for row in self.rows:
            writer.writerow([_fmt(v) for v in row[:len(cols)]])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


def _fmt(v):
    return str(v) if isinstance(v, int) else repr(float(v))


def read_csv(path):
    """Parse a log written by :meth:`RunLog.to_csv` into ``(metadata, columns)``."""
    meta, lines = {}, []
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            key, _, val = line[1:].partition("=")
            meta[key.strip()] = val.strip()
        elif line.strip():
            lines.append(line)
    reader = csv.reader(lines)
    header = next(reader)
    data = {name: [] for name in header}
    for row in reader:
        for name, val in zip(header, row):
            data[name].append(float(val))
    return meta, {k: np.array(v) for k, v in data.items()}


def log_step(log: RunLog, state: StateVector, step_result, space: FESpace,
             params: ModelParams, spsd_tol: float = 0.0, wall_time: float = 0.0):
    """Append one row for an accepted step and return it."""
    if not step_result.accepted:
        raise InvalidArgumentError("only accepted steps are logged")
    E = energy(state, space, params)
    frac = min_eig_fraction(state, space, spsd_tol)
    n = max(step_result.newton_iters, 1)
    return log.append(state.time, step_result.dt_used, E, frac, step_result.newton_iters,
                      step_result.krylov_iters_total / n, wall_time)


@dataclass(frozen=True)
class SymmetryError:
    linf: float
    l2: float
    l2_relative: float
    map_valid: bool


def mirror_components(comps: np.ndarray, smap: SymmetryMap) -> np.ndarray:
    """Conductivity field reflected across the diagonal, as stored components.

    The reflection swaps the x and y axes, so the cell value is taken from the
    mirror cell and its tensor indices are permuted accordingly.
    """
    dim = 2 if comps.shape[0] == 3 else 3
    perm = (1, 0, 2)
    index = {pair: m for m, pair in enumerate(COMPONENTS[dim])}
    src = []
    for a, b in COMPONENTS[dim]:
        pa, pb = sorted((perm[a], perm[b]))
        src.append(index[(pa, pb)])
    return comps[src][:, smap.mirror]


def symmetry_error(state: StateVector, smap: SymmetryMap) -> SymmetryError:
    """Difference between the conductivity field and its diagonal reflection."""
    if not smap.valid:
        raise InvalidArgumentError("symmetry map is not valid for this mesh")
    comps = state.components
    diff = comps - mirror_components(comps, smap)
    l2 = float(np.sqrt(np.sum(diff ** 2)))
    scale = float(np.sqrt(np.sum(comps ** 2)))
    return SymmetryError(
        linf=float(np.max(np.abs(diff))) if diff.size else 0.0,
        l2=l2,
        l2_relative=l2 / scale if scale > 0 else l2,
        map_valid=True,
    )
