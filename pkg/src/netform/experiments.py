"""Experiment drivers: each turns a :class:`RunConfig` into logs and field files."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .assembly import assemble_jacobian
from .config import RunConfig
from .diagnostics import RunLog
from .fespace import FESpace
from .linalg import dump_matrix
from .mesh import MeshTopology
from .timeloop import Scheme, init_consistent, run
from .vtk import write_threshold, write_vtk

log = logging.getLogger(__name__)


@dataclass
class ExperimentResult:
    name: str
    logs: dict = field(default_factory=dict)
    files: list = field(default_factory=list)
    meshes: dict = field(default_factory=dict, repr=False)

    @property
    def ok(self) -> bool:
        return all(lg.completed for lg in self.logs.values())

    @property
    def exit_status(self) -> int:
        return 0 if self.ok else 3


class _Writer:
    """Per-run callback writing VTK snapshots (and threshold lists) at a cadence."""

    def __init__(self, cfg: RunConfig, mesh: MeshTopology, stem: str, every: int,
                 threshold: bool, files: list):
        self.cfg, self.mesh, self.stem = cfg, mesh, stem
        self.every, self.threshold, self.files = every, threshold, files
        self.count = 0
        self.outdir = Path(cfg["output.dir"])

    def write(self, state, tag: str):
        vtk = write_vtk(state, self.mesh, self.outdir / f"{self.stem}_{tag}.vtk")
        self.files.append(vtk)
        if self.threshold:
            thr = write_threshold(state, self.mesh, self.outdir / f"{self.stem}_{tag}_threshold.txt",
                                  self.cfg["output.threshold"])
            self.files.append(thr)

    def __call__(self, state, result, row):
        self.count += 1
        if self.every and self.count % self.every == 0:
            self.write(state, f"{self.count:06d}")


def _single(cfg: RunConfig, result: ExperimentResult, label: str, mesh: MeshTopology,
            *, params=None, integrator=None, threshold: bool = False,
            extra_meta: Optional[dict] = None) -> RunLog:
    outdir = Path(cfg["output.dir"])
    outdir.mkdir(parents=True, exist_ok=True)
    stem = f"{cfg['output.prefix']}{label}"
    params = params or cfg.model_params()
    integrator = integrator or cfg.integrator_config()
    space = FESpace(mesh, cfg["mesh.quad_degree"])
    if cfg["output.dump_jacobian"]:
        u0 = init_consistent(None, space, params, cfg.source_spec())
        J = assemble_jacobian(u0, 1.0 / integrator.dt0, space, params)
        path = outdir / f"{stem}_jacobian.mtx"
        dump_matrix(J.matrix(), path)
        result.files.append(path)
    writer = _Writer(cfg, mesh, stem, cfg["output.vtk_every"], threshold, result.files)
    spsd_tol = cfg["output.spsd_tol"]
    meta = {"experiment": result.name, "run": label}
    meta.update(extra_meta or {})
    log.info("running %s (%s, %s)", label, mesh.descriptor, integrator.scheme.value)
    runlog = run(integrator, space, params, cfg.source_spec(), [writer],
                 newton=cfg.newton_config(), linear=cfg.linear_config(),
                 spsd_tol=None if spsd_tol < 0 else spsd_tol, metadata=meta)
    csv_path = outdir / f"{stem}.csv"
    runlog.to_csv(csv_path, include_wall_time=cfg["output.wall_time"])
    result.files.append(csv_path)
    writer.write(runlog.final_state, "final")
    result.logs[label] = runlog
    result.meshes[label] = mesh
    if runlog.failure:
        log.error("%s failed: %s", label, runlog.failure)
    return runlog


def _box2d(cfg, result):
    _single(cfg, result, "box2d", cfg.build_mesh())


def _mesh_study(cfg, result):
    sizes = cfg["experiment.sizes"] or (cfg["mesh.nx"],)
    for gen in cfg["experiment.meshes"]:
        for n in sizes:
            _single(cfg, result, f"mesh_{gen}_{n}", cfg.build_mesh(gen, n))


def _sweep(cfg, result, name, default):
    values = cfg["experiment.values"] or default
    mesh = cfg.build_mesh()
    for val in values:
        params = cfg.model_params(**{name: val})
        _single(cfg, result, f"{name}_{val!r}", mesh, params=params,
                extra_meta={name: repr(val)})


def _gamma_sweep(cfg, result):
    _sweep(cfg, result, "gamma", (0.75, 0.5))


def _r_sweep(cfg, result):
    _sweep(cfg, result, "r", (1e-3, 1e-4, 1e-5))


def _slab3d(cfg, result):
    _single(cfg, result, "slab3d", cfg.build_mesh(), threshold=True)


def _integrator_compare(cfg, result):
    mesh = cfg.build_mesh()
    for scheme in cfg["experiment.schemes"]:
        integ = cfg.integrator_config(scheme=Scheme.parse(scheme))
        _single(cfg, result, f"integrator_{scheme}", mesh, integrator=integ)


DRIVERS = {
    "Box2D": _box2d,
    "MeshStudy": _mesh_study,
    "GammaSweep": _gamma_sweep,
    "RSweep": _r_sweep,
    "Slab3D": _slab3d,
    "IntegratorCompare": _integrator_compare,
}


def run_experiment(cfg: RunConfig, name: Optional[str] = None) -> ExperimentResult:
    """Run the experiment named in ``cfg`` (or ``name``) and write its artifacts."""
    name = name or cfg["experiment.name"]
    if name not in DRIVERS:
        raise KeyError(f"unknown experiment {name!r}")
    result = ExperimentResult(name)
    DRIVERS[name](cfg, result)
    return result
