"""Run configuration files.

The format is flat text, one ``section.key = value`` per line; ``#`` starts
a comment.  Every key has a type and a default, unknown keys are rejected,
and errors name the offending key and line.  Lists are whitespace
separated.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional

from .exceptions import ConfigError, InvalidArgumentError
from .mesh import (
    MeshTopology,
    generate_structured_hex,
    generate_structured_quad,
    generate_triangles,
    import_mesh,
)
from .model import ModelParams, SourceSpec
from .newton import NewtonConfig
from .timeloop import IntegratorConfig, LinearSolverConfig, Scheme

EXPERIMENTS = ("Box2D", "MeshStudy", "GammaSweep", "RSweep", "Slab3D", "IntegratorCompare")
GENERATORS = ("quad", "crisscross", "regular", "hex", "file")


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _floats(text: str) -> tuple:
    return tuple(float(v) for v in text.split())


def _ints(text: str) -> tuple:
    return tuple(int(v) for v in text.split())


def _words(text: str) -> tuple:
    return tuple(text.split())


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return " ".join(_fmt(v) for v in value)
    return str(value)


def _positive(v):
    return (v > 0 and math.isfinite(v)) or "must be positive"


def _nonneg(v):
    return v >= 0 or "must be non-negative"


def _choice(options):
    return lambda v: v in options or f"must be one of {', '.join(options)}"


def _gamma(v):
    return 0 < v <= 2 or "must lie in (0, 2]"


def _unit(v):
    return 0 < v <= 1 or "must lie in (0, 1]"


def _eta(v):
    return 0 < v < 1 or "must lie in (0, 1)"


def _count(v):
    return v >= 1 or "must be >= 1"


def _all(check):
    def inner(values):
        for v in values:
            res = check(v)
            if res is not True:
                return res
        return True
    return inner


@dataclass(frozen=True)
class Key:
    parse: Callable
    default: object
    check: Optional[Callable] = None
    doc: str = ""


SCHEMA = {
    "experiment.name": Key(str, "Box2D", _choice(EXPERIMENTS)),
    "experiment.values": Key(_floats, (), _all(_positive), "swept r or gamma values"),
    "experiment.sizes": Key(_ints, (), _all(_count), "MeshStudy cells per side"),
    "experiment.meshes": Key(_words, ("quad",), _all(_choice(GENERATORS[:3]))),
    "experiment.schemes": Key(_words, ("BE", "BDF2", "CN"), _all(_choice(("BE", "BDF2", "CN")))),
    "mesh.generator": Key(str, "quad", _choice(GENERATORS)),
    "mesh.nx": Key(int, 64, _count),
    "mesh.ny": Key(int, 64, _count),
    "mesh.nz": Key(int, 1, _count),
    "mesh.extent": Key(_floats, (0.0, 1.0, 0.0, 1.0)),
    "mesh.diagonal": Key(str, "main", _choice(("main", "anti"))),
    "mesh.path": Key(str, ""),
    "mesh.quad_degree": Key(int, 2, lambda v: 0 <= v <= 9 or "must lie in 0..9"),
    "model.r": Key(float, 1e-4, _positive),
    "model.nu": Key(float, 0.03, _positive),
    "model.gamma": Key(float, 0.75, _gamma),
    "model.eps": Key(float, 1e-5, _positive),
    "model.init": Key(str, "identity", _choice(("identity",))),
    "source.kind": Key(str, "gaussian", _choice(("gaussian",))),
    "source.center": Key(_floats, (0.25, 0.25)),
    "source.sharpness": Key(float, 500.0, _positive),
    "integrator.scheme": Key(str, "BE", _choice(("BE", "BDF2", "CN"))),
    "integrator.dt0": Key(float, 1e-3, _positive),
    "integrator.dt_min": Key(float, 1e-10, _positive),
    "integrator.dt_max": Key(float, 5.0, _positive),
    "integrator.t_end": Key(float, 200.0, _positive),
    "integrator.lte_tol": Key(float, 1e-3, _positive),
    "integrator.safety": Key(float, 0.9, _unit),
    "integrator.growth_max": Key(float, 2.0, lambda v: v >= 1 or "must be >= 1"),
    "integrator.adaptive": Key(_bool, True),
    "integrator.max_steps": Key(int, 1_000_000, _count),
    "newton.atol": Key(float, 1e-14, _nonneg),
    "newton.rtol": Key(float, 1e-12, _nonneg),
    "newton.max_iters": Key(int, 50, _count),
    "newton.ew_eta0": Key(float, 0.1, _eta),
    "newton.ew_eta_max": Key(float, 0.9, _eta),
    "newton.ew_gamma": Key(float, 1.0, _unit),
    "newton.ew_alpha": Key(float, 2.0, lambda v: 1 < v <= 2 or "must lie in (1, 2]"),
    "newton.ew_threshold": Key(float, 0.0, _nonneg, "safeguard applies when above this"),
    "newton.ls_max_backtracks": Key(int, 8, _nonneg),
    "newton.ls_alpha": Key(float, 1e-4, _eta),
    "newton.stol": Key(float, 1e-12, _nonneg, "relative update length counted as converged"),
    "linear.restart": Key(int, 30, _count),
    "linear.maxiter": Key(int, 300, _count),
    "linear.inner": Key(str, "direct", _choice(("direct", "pcg", "amg"))),
    "linear.inner_rtol": Key(float, 1e-10, _positive),
    "output.dir": Key(str, "."),
    "output.prefix": Key(str, ""),
    "output.vtk_every": Key(int, 0, _nonneg, "VTK snapshot cadence in accepted steps, 0 = final only"),
    "output.threshold": Key(float, 1e-2, _positive),
    "output.spsd_tol": Key(float, -1.0, doc="negative means 10 * newton.atol"),
    "output.wall_time": Key(_bool, False),
    "output.dump_jacobian": Key(_bool, False),
}


def defaults() -> dict:
    return {k: spec.default for k, spec in SCHEMA.items()}


def _convert(key: str, text: str, lineno: Optional[int]):
    if key not in SCHEMA:
        raise ConfigError(f"unknown key '{key}'", key=key, lineno=lineno)
    spec = SCHEMA[key]
    try:
        value = spec.parse(text.strip())
    except ValueError as exc:
        raise ConfigError(f"invalid value for '{key}': {exc}", key=key, lineno=lineno) from None
    if spec.check is not None:
        res = spec.check(value)
        if res is not True:
            raise ConfigError(f"'{key}' {res} (got {text.strip()!r})", key=key, lineno=lineno)
    return value


@dataclass
class RunConfig:
    """Validated configuration: a flat mapping from every schema key to its value."""

    values: dict = field(default_factory=defaults)
    base_dir: Path = field(default_factory=Path.cwd, compare=False)

    def __getitem__(self, key):
        return self.values[key]

    def with_overrides(self, overrides: Iterable[str]) -> "RunConfig":
        values = dict(self.values)
        for item in overrides:
            key, sep, text = item.partition("=")
            key = key.strip()
            if not sep:
                raise ConfigError(f"override {item!r} is not of the form key=value", key=key)
            values[key] = _convert(key, text, None)
        cfg = RunConfig(values, self.base_dir)
        cfg.validate()
        return cfg

    def replace(self, **updates) -> "RunConfig":
        """Copy with ``section__key=value`` updates (already typed)."""
        values = dict(self.values)
        for k, v in updates.items():
            key = k.replace("__", ".")
            if key not in SCHEMA:
                raise ConfigError(f"unknown key '{key}'", key=key)
            values[key] = v
        cfg = RunConfig(values, self.base_dir)
        cfg.validate()
        return cfg

    # -- cross-key validation -------------------------------------------------
    def validate(self) -> None:
        v = self.values
        for build, keys in ((self.model_params, ("model.gamma",)),
                            (self.integrator_config, ("integrator.dt0",)),
                            (self.newton_config, ("newton.rtol",)),
                            (self.linear_config, ("linear.inner",))):
            try:
                build()
            except InvalidArgumentError as exc:
                raise ConfigError(str(exc), key=keys[0]) from None
        dim = self.dim
        if len(v["mesh.extent"]) != 2 * dim:
            raise ConfigError(f"'mesh.extent' needs {2 * dim} numbers", key="mesh.extent")
        if len(v["source.center"]) != dim:
            raise ConfigError(f"'source.center' needs {dim} numbers", key="source.center")
        if v["mesh.generator"] == "file":
            path = self.mesh_path
            if not path.is_file():
                raise ConfigError(f"mesh file {path} does not exist", key="mesh.path")

    @property
    def mesh_path(self) -> Path:
        path = Path(self.values["mesh.path"])
        return path if path.is_absolute() else self.base_dir / path

    @property
    def dim(self) -> int:
        v = self.values
        if v["mesh.generator"] == "hex":
            return 3
        if v["mesh.generator"] == "file":
            return len(v["source.center"])
        return 2

    # -- builders -------------------------------------------------------------
    def model_params(self, **changes) -> ModelParams:
        v = self.values
        kw = dict(r=v["model.r"], nu=v["model.nu"], gamma=v["model.gamma"], eps=v["model.eps"],
                  dim=self.dim)
        kw.update(changes)
        return ModelParams(**kw)

    def source_spec(self) -> SourceSpec:
        v = self.values
        return SourceSpec(kind=v["source.kind"], center=tuple(v["source.center"]),
                          sharpness=v["source.sharpness"])

    def integrator_config(self, **changes) -> IntegratorConfig:
        v = self.values
        kw = {k.split(".", 1)[1]: v[k] for k in SCHEMA if k.startswith("integrator.")}
        kw["scheme"] = Scheme.parse(kw["scheme"])
        kw.update(changes)
        return IntegratorConfig(**kw)

    def newton_config(self) -> NewtonConfig:
        v = self.values
        return NewtonConfig(**{k.split(".", 1)[1]: v[k] for k in SCHEMA if k.startswith("newton.")})

    def linear_config(self) -> LinearSolverConfig:
        v = self.values
        return LinearSolverConfig(**{k.split(".", 1)[1]: v[k] for k in SCHEMA
                                     if k.startswith("linear.")})

    def build_mesh(self, generator: Optional[str] = None, n: Optional[int] = None) -> MeshTopology:
        v = self.values
        gen = generator or v["mesh.generator"]
        nx = n or v["mesh.nx"]
        ny = n or v["mesh.ny"]
        ext = v["mesh.extent"]
        pairs = tuple((ext[2 * i], ext[2 * i + 1]) for i in range(len(ext) // 2))
        if gen == "quad":
            return generate_structured_quad(nx, ny, pairs)
        if gen in ("crisscross", "regular"):
            return generate_triangles(nx, ny, pairs, style=gen, diagonal=v["mesh.diagonal"])
        if gen == "hex":
            return generate_structured_hex(nx, ny, v["mesh.nz"], pairs)
        return import_mesh(self.mesh_path)

    # -- serialization --------------------------------------------------------
    def to_text(self) -> str:
        lines = []
        section = None
        for key in SCHEMA:
            sec = key.split(".", 1)[0]
            if sec != section:
                if section is not None:
                    lines.append("")
                section = sec
            lines.append(f"{key} = {_fmt(self.values[key])}")
        return "\n".join(lines) + "\n"


def parse_config_text(text: str, base_dir=None) -> RunConfig:
    values = defaults()
    seen = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, rest = line.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigError(f"expected 'key = value', got {line!r}", key=key or None,
                              lineno=lineno)
        if key in seen:
            raise ConfigError(f"duplicate key '{key}' (first set on line {seen[key]})",
                              key=key, lineno=lineno)
        seen[key] = lineno
        values[key] = _convert(key, rest, lineno)
    cfg = RunConfig(values, Path(base_dir) if base_dir is not None else Path.cwd())
    try:
        cfg.validate()
    except ConfigError as exc:
        if exc.key in seen and exc.lineno is None:
            raise ConfigError(exc.detail, key=exc.key, lineno=seen[exc.key]) from None
        raise
    return cfg


def parse_config(path) -> RunConfig:
    """Read and validate a configuration file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config_text(text, base_dir=path.parent)


def bundled_config(name: str) -> Path:
    """Path of a configuration shipped with the package, e.g. ``"box2d"``."""
    path = Path(__file__).parent / "configs" / f"{name.removesuffix('.cfg')}.cfg"
    if not path.is_file():
        raise ConfigError(f"no bundled config named {name!r}")
    return path
