"""Implicit time integration of the conductivity/pressure DAE.

Every scheme is written as ``F(a u_{n+1} + b, u_{n+1}) = 0`` for the
conductivity rows, so the Jacobian shift is ``sigma = a`` and the pressure
equation is always imposed at the new time:

===========  ======================  ==========================================
scheme       a                       b
===========  ======================  ==========================================
BE           1/dt                    -u_n/dt
BDF2         (1+2w)/((1+w) dt)       (-(1+w) u_n + w^2/(1+w) u_{n-1}) / dt
CN           2/dt                    -2 u_n/dt - f(u_n)
===========  ======================  ==========================================

with ``w = dt_n / dt_{n-1}`` and ``f`` the conductivity right-hand side.
"""
from __future__ import annotations

import enum
import logging
import math
import time as _time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse.linalg as spla

from .assembly import (
    assemble_jacobian,
    assemble_residual,
    check_ellipticity,
    conductivity_rate,
    conductivity_stiffness,
)
from .diagnostics import RunLog, build_id, log_step
from .exceptions import (
    EllipticityError,
    InvalidArgumentError,
    KrylovConvergenceError,
    NetformError,
    NotSPDError,
    StepSizeCollapseError,
)
from .fespace import FESpace, StateVector, tensor_components
from .linalg import INNER_SOLVERS, SchurPreconditioner, gmres, project_mean_zero
from .model import ModelParams, SourceSpec, energy, min_eigenvalues, source_load
from .newton import NewtonConfig, NewtonReport, newton_solve

log = logging.getLogger(__name__)


class Scheme(enum.Enum):
    BE = "BE"
    BDF2 = "BDF2"
    CN = "CN"

    @property
    def order(self) -> int:
        return 1 if self is Scheme.BE else 2

    @classmethod
    def parse(cls, value) -> "Scheme":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).upper())
        except ValueError:
            raise InvalidArgumentError(f"unknown scheme {value!r}") from None


class RejectReason(enum.Enum):
    NONE = "None"
    NEWTON_FAIL = "NewtonFail"
    LTE = "LTE"
    ELLIPTICITY = "EllipticityGuard"


@dataclass(frozen=True)
class IntegratorConfig:
    """Time-stepping controls.

    With ``adaptive=False`` the step size only changes after a failed solve
    and no truncation-error rejection takes place.
    """

    scheme: Scheme = Scheme.BE
    dt0: float = 1e-3
    dt_min: float = 1e-10
    dt_max: float = 5.0
    t_end: float = 200.0
    lte_tol: float = 1e-3
    safety: float = 0.9
    growth_max: float = 2.0
    adaptive: bool = True
    max_steps: int = 1_000_000

    def __post_init__(self):
        object.__setattr__(self, "scheme", Scheme.parse(self.scheme))
        if not 0 < self.dt_min <= self.dt0 <= self.dt_max:
            raise InvalidArgumentError("need 0 < dt_min <= dt0 <= dt_max")
        if not self.t_end > 0:
            raise InvalidArgumentError("t_end must be positive")
        if not self.lte_tol > 0:
            raise InvalidArgumentError("lte_tol must be positive")
        if not 0 < self.safety <= 1:
            raise InvalidArgumentError("safety must lie in (0, 1]")
        if not self.growth_max >= 1:
            raise InvalidArgumentError("growth_max must be >= 1")


@dataclass(frozen=True)
class LinearSolverConfig:
    restart: int = 30
    maxiter: int = 300
    inner: str = "direct"
    inner_rtol: float = 1e-10

    def __post_init__(self):
        if self.inner not in INNER_SOLVERS:
            raise InvalidArgumentError(
                f"inner solver must be one of {sorted(INNER_SOLVERS)}, got {self.inner!r}")
        if self.restart < 1 or self.maxiter < 1:
            raise InvalidArgumentError("restart and maxiter must be >= 1")


@dataclass
class StepResult:
    accepted: bool
    u_new: Optional[StateVector]
    dt_used: float
    dt_next: float
    newton_iters: int = 0
    krylov_iters_total: int = 0
    reject_reason: RejectReason = RejectReason.NONE
    lte: float = math.nan
    report: Optional[NewtonReport] = field(default=None, repr=False)


class Problem:
    """Discretized problem bundled with its solver settings.

    Parameters
    ----------
    space : FESpace
    params : ModelParams
    source : SourceSpec, realized on ``space`` if it is not already
    newton, linear : solver configurations
    symmetrize : use the symmetric scaling of the residual rows
    """

    def __init__(self, space: FESpace, params: ModelParams, source: SourceSpec,
                 newton: NewtonConfig = NewtonConfig(),
                 linear: LinearSolverConfig = LinearSolverConfig(),
                 symmetrize: bool = True):
        if params.dim != space.dim:
            raise InvalidArgumentError("model dimension does not match the mesh")
        self.space = space
        self.params = params
        self.source = source if source.mean_offset is not None else source.realize(space)
        self.newton = newton
        self.linear = linear
        self.symmetrize = symmetrize
        self.layout = space.layout
        self.load = source_load(self.source, space)
        self.weights = space.lumped_mass
        self._ncond = self.layout.n_cond_dofs

    def state(self, data, t=0.0) -> StateVector:
        return StateVector(data, self.layout, t)

    def residual(self, x: np.ndarray, udot: np.ndarray) -> np.ndarray:
        return assemble_residual(self.state(x), self.state(udot), 0.0, self.space,
                                 self.params, self.source, symmetrize=self.symmetrize,
                                 load=self.load)

    def jacobian(self, x: np.ndarray, sigma: float):
        return assemble_jacobian(self.state(x), sigma, self.space, self.params,
                                 symmetrize=self.symmetrize)

    def rate(self, x: np.ndarray) -> np.ndarray:
        """Conductivity right-hand side ``f(u)`` as a flat field-ordered vector."""
        return conductivity_rate(self.state(x), self.space, self.params).ravel()

    def project(self, v: np.ndarray) -> np.ndarray:
        out = v.copy()
        out[self._ncond:] = project_mean_zero(v[self._ncond:], self.weights)
        return out

    def solve_linear(self, J, rhs, rtol):
        lin = self.linear
        P = SchurPreconditioner(J, self.weights, inner=lin.inner, inner_rtol=lin.inner_rtol)
        # J is symmetric with the constant pressure in its kernel, so a
        # consistent right-hand side has zero plain sum in the pressure rows
        rhs = rhs.copy()
        rhs[self._ncond:] -= rhs[self._ncond:].mean()
        return gmres(J, rhs, M=P, rtol=rtol, restart=lin.restart,
                     maxiter=lin.maxiter, project=self.project)

    def solve_shifted(self, a: float, b: np.ndarray, guess: np.ndarray):
        """Newton solve of ``F(a u + b, u) = 0``; ``b`` covers the conductivity block."""
        shift = np.zeros(self.layout.size)
        shift[:self._ncond] = b

        def G(x):
            return self.residual(x, a * x + shift)

        def J(x):
            return self.jacobian(x, a)

        u, report = newton_solve(G, J, guess, self.newton, self.solve_linear)
        u[self._ncond:] = project_mean_zero(u[self._ncond:], self.weights)
        return u, report


def _initial_components(C0, space: FESpace) -> np.ndarray:
    dim, nc = space.dim, space.n_cells
    if C0 is None:
        return tensor_components(np.broadcast_to(np.eye(dim), (nc, dim, dim)))
    if callable(C0):
        C0 = C0(space.mesh.centroids)
    C0 = np.asarray(C0, dtype=float)
    if C0.shape == (dim, dim):
        C0 = np.broadcast_to(C0, (nc, dim, dim))
    if C0.shape == (nc, dim, dim):
        if not np.allclose(C0, np.swapaxes(C0, 1, 2)):
            raise InvalidArgumentError("initial conductivity must be symmetric")
        return tensor_components(C0)
    if C0.shape == (space.ncomp, nc):
        return C0.copy()
    raise InvalidArgumentError(f"cannot interpret initial conductivity of shape {C0.shape}")


def init_consistent(C0, space: FESpace, params: ModelParams, source: SourceSpec,
                    spsd_tol: float = 1e-14) -> StateVector:
    """Initial state whose pressure solves the constraint for the given conductivity.

    ``C0`` may be None (identity), a single matrix, per-cell matrices
    ``(n_cells, d, d)``, stored components ``(n_comp, n_cells)`` or a
    callable of cell centroids returning matrices.
    """
    comps = _initial_components(C0, space)
    lam = min_eigenvalues(comps, space.dim)
    scale = max(1.0, float(np.abs(comps).max(initial=0.0)))
    if np.any(lam < -spsd_tol * scale):
        bad = int(np.argmin(lam))
        raise InvalidArgumentError(
            f"initial conductivity is not positive semi-definite (cell {bad}, "
            f"lambda_min={lam[bad]:.3e})"
        )
    if source.mean_offset is None:
        source = source.realize(space)
    D = conductivity_stiffness(comps, space, params)
    rhs = source_load(source, space)
    rhs = rhs - rhs.mean()
    p = np.zeros(space.n_vertices)
    try:
        lu = spla.splu(D[:-1, :-1].tocsc(), permc_spec="MMD_AT_PLUS_A",
                       diag_pivot_thresh=0.0, options=dict(SymmetricMode=True))
        p[:-1] = lu.solve(rhs[:-1])
    except RuntimeError as exc:
        raise NetformError(f"initial pressure solve failed: {exc}") from exc
    if not np.all(np.isfinite(p)):
        raise NetformError("initial pressure solve produced non-finite values")
    p = project_mean_zero(p, space.lumped_mass)
    return StateVector.from_fields(comps, p, space.layout, 0.0)


# -- single steps ------------------------------------------------------------

_LTE_FACTOR = {Scheme.BE: 0.5, Scheme.BDF2: 8.0 / 23.0, Scheme.CN: 1.0 / 6.0}


def _lte(problem: Problem, u_new, u_n, dt, f_n, f_nm1, dt_prev, scheme) -> tuple:
    """Weighted max-norm distance between the implicit step and an explicit predictor.

    Returns ``(estimate, order)``; the order drops to one when the history
    needed for the second-order predictor is missing.
    """
    nc = problem._ncond
    pred = u_n[:nc] + dt * f_n
    order = 1
    factor = _LTE_FACTOR[Scheme.BE]
    if scheme.order == 2 and f_nm1 is not None and dt_prev:
        pred = pred + 0.5 * dt * dt * (f_n - f_nm1) / dt_prev
        order = 2
        factor = _LTE_FACTOR[scheme]
    c = u_new[:nc]
    err = factor * np.max(np.abs(c - pred) / (1.0 + np.abs(c)), initial=0.0)
    return float(err), order


def _failed(dt, reason, report=None, iters=0, kits=0) -> StepResult:
    return StepResult(False, None, dt, 0.5 * dt, iters, kits, reason, report=report)


def _shifted_step(problem: Problem, u_n: StateVector, t: float, dt: float, a: float,
                  b: np.ndarray) -> StepResult:
    try:
        u, report = problem.solve_shifted(a, b, u_n.data)
    except (NotSPDError, EllipticityError) as exc:
        log.debug("step at t=%g dt=%g failed: %s", t, dt, exc)
        reason = (RejectReason.ELLIPTICITY if isinstance(exc, EllipticityError)
                  else RejectReason.NEWTON_FAIL)
        return _failed(dt, reason)
    kits = report.total_krylov
    if not report.converged:
        log.debug("Newton failed at t=%g dt=%g: %s", t, dt, report.failure)
        return _failed(dt, RejectReason.NEWTON_FAIL, report, report.iters, kits)
    try:
        check_ellipticity(problem.state(u).components, problem.params)
    except EllipticityError:
        return _failed(dt, RejectReason.ELLIPTICITY, report, report.iters, kits)
    return StepResult(True, problem.state(u, t + dt), dt, dt, report.iters, kits,
                      report=report)


def _check_dt(dt):
    if not dt > 0:
        raise InvalidArgumentError(f"dt must be positive, got {dt!r}")


def be_step(u_n: StateVector, t: float, dt: float, problem: Problem) -> StepResult:
    """One backward Euler step from ``u_n`` at time ``t``."""
    _check_dt(dt)
    nc = problem._ncond
    return _shifted_step(problem, u_n, t, dt, 1.0 / dt, -u_n.data[:nc] / dt)


def bdf2_step(u_n: StateVector, u_nm1: Optional[StateVector], t: float, dt: float,
              problem: Problem, dt_prev: Optional[float] = None) -> StepResult:
    """Variable-step BDF2; without history it is a backward Euler step.

    ``dt_prev`` defaults to ``u_n.time - u_nm1.time``.
    """
    _check_dt(dt)
    if u_nm1 is None:
        return be_step(u_n, t, dt, problem)
    nc = problem._ncond
    if dt_prev is None:
        dt_prev = u_n.time - u_nm1.time
    if not dt_prev > 0:
        raise InvalidArgumentError("BDF2 history must be strictly earlier than u_n")
    w = dt / dt_prev
    a = (1.0 + 2.0 * w) / ((1.0 + w) * dt)
    b = (-(1.0 + w) * u_n.data[:nc] + w * w / (1.0 + w) * u_nm1.data[:nc]) / dt
    return _shifted_step(problem, u_n, t, dt, a, b)


def cn_step(u_n: StateVector, t: float, dt: float, problem: Problem,
            f_n: Optional[np.ndarray] = None) -> StepResult:
    """Trapezoidal step for the conductivity; the constraint holds at ``t + dt``."""
    _check_dt(dt)
    nc = problem._ncond
    if f_n is None:
        f_n = problem.rate(u_n.data)
    return _shifted_step(problem, u_n, t, dt, 2.0 / dt, -2.0 * u_n.data[:nc] / dt - f_n)


def adapt_dt(prev: StepResult, lte_estimate: float, cfg: IntegratorConfig,
             order: Optional[int] = None) -> float:
    """Next step size from the elementary error controller.

    Failed solves (Newton or ellipticity) halve the step.  Otherwise the
    proposal ``dt safety (tol/lte)^(1/(order+1))`` is limited to
    ``[dt/4, dt growth_max]`` and then to ``dt_max``.

    Raises
    ------
    StepSizeCollapseError
        If the new step would fall below ``dt_min``.
    """
    dt = prev.dt_used
    if prev.reject_reason in (RejectReason.NEWTON_FAIL, RejectReason.ELLIPTICITY):
        new = 0.5 * dt
    else:
        if not lte_estimate >= 0:
            raise InvalidArgumentError("lte estimate must be non-negative")
        order = cfg.scheme.order if order is None else order
        if lte_estimate == 0:
            factor = cfg.growth_max
        else:
            factor = cfg.safety * (cfg.lte_tol / lte_estimate) ** (1.0 / (order + 1))
        new = dt * min(max(factor, 0.25), cfg.growth_max)
    if new < cfg.dt_min:
        raise StepSizeCollapseError(
            f"time step {new:.3e} fell below dt_min={cfg.dt_min:.3e}"
        )
    return min(new, cfg.dt_max)


# -- driver ------------------------------------------------------------------

class Integrator:
    """Stateful driver that advances a :class:`Problem` with history handling."""

    def __init__(self, problem: Problem, cfg: IntegratorConfig):
        self.problem = problem
        self.cfg = cfg
        self.u_prev: Optional[StateVector] = None
        self.f_prev: Optional[np.ndarray] = None
        self.dt_prev: Optional[float] = None

    def attempt(self, u: StateVector, dt: float, f_n: np.ndarray) -> StepResult:
        scheme, problem = self.cfg.scheme, self.problem
        t = u.time
        if scheme is Scheme.BE:
            res = be_step(u, t, dt, problem)
        elif scheme is Scheme.BDF2:
            res = bdf2_step(u, self.u_prev, t, dt, problem, self.dt_prev)
        else:
            res = cn_step(u, t, dt, problem, f_n)
        if not res.accepted:
            return res
        lte, order = _lte(problem, res.u_new.data, u.data, dt, f_n, self.f_prev,
                          self.dt_prev, scheme)
        if scheme is Scheme.BDF2 and self.u_prev is None:
            order = 1
        res.lte = lte
        if not self.cfg.adaptive:
            res.dt_next = dt
            return res
        res.dt_next = adapt_dt(res, lte, self.cfg, order)
        if lte > self.cfg.lte_tol:
            res.accepted = False
            res.reject_reason = RejectReason.LTE
            res.u_new = None
        return res

    def advance(self, u: StateVector, f_n: np.ndarray, res: StepResult):
        self.u_prev, self.f_prev, self.dt_prev = u, f_n, res.dt_used


def run(cfg: IntegratorConfig, mesh, params: ModelParams, source: SourceSpec,
        callbacks: Sequence[Callable] = (), *, C0=None,
        newton: NewtonConfig = NewtonConfig(),
        linear: LinearSolverConfig = LinearSolverConfig(),
        spsd_tol: Optional[float] = None, metadata: Optional[dict] = None,
        quad_degree: int = 2) -> RunLog:
    """Integrate from the consistent initial state to ``cfg.t_end``.

    ``mesh`` may be a :class:`MeshTopology` or a ready :class:`FESpace`.
    Each callback is called as ``cb(state, step_result, row)`` after every
    accepted step.  Step-size collapse or an unexpected solver breakdown ends
    the run early; the returned log then has ``failure`` set.
    ``spsd_tol`` (default ``10 * newton.atol``) is the eigenvalue tolerance
    used for the logged SPSD-violation fraction.
    """
    space = mesh if isinstance(mesh, FESpace) else FESpace(mesh, quad_degree)
    problem = Problem(space, params, source, newton, linear)
    spsd_tol = 10.0 * newton.atol if spsd_tol is None else spsd_tol
    meta = {
        "build": build_id(),
        "mesh": space.mesh.descriptor,
        "scheme": cfg.scheme.value,
        "params": f"r={params.r!r} nu={params.nu!r} gamma={params.gamma!r} eps={params.eps!r}",
        "integrator": (f"dt0={cfg.dt0!r} dt_min={cfg.dt_min!r} dt_max={cfg.dt_max!r} "
                       f"t_end={cfg.t_end!r} lte_tol={cfg.lte_tol!r} adaptive={cfg.adaptive}"),
        "newton": f"atol={newton.atol!r} rtol={newton.rtol!r} max_iters={newton.max_iters}",
        "linear": f"inner={linear.inner} restart={linear.restart} inner_rtol={linear.inner_rtol!r}",
    }
    meta.update(metadata or {})
    runlog = RunLog(metadata=meta)
    u = init_consistent(C0, space, params, problem.source)
    runlog.E0 = energy(u, space, params)
    runlog.final_state = u
    integ = Integrator(problem, cfg)
    dt = cfg.dt0
    steps = 0
    f_n = problem.rate(u.data)
    span = cfg.t_end
    while u.time < cfg.t_end and span - u.time > 1e-12 * span:
        if steps >= cfg.max_steps:
            runlog.failure = f"maximum number of steps ({cfg.max_steps}) reached"
            break
        remaining = cfg.t_end - u.time
        dt_try = remaining if dt >= remaining * (1 - 1e-10) else dt
        start = _time.perf_counter()
        try:
            res = integ.attempt(u, dt_try, f_n)
            if not res.accepted and res.reject_reason is not RejectReason.LTE:
                res.dt_next = adapt_dt(res, 0.0, cfg)
        except StepSizeCollapseError as exc:
            runlog.failure = f"StepSizeCollapse at t={u.time!r}: {exc}"
            break
        except (KrylovConvergenceError, NetformError, FloatingPointError) as exc:
            runlog.failure = f"solver breakdown at t={u.time!r}: {exc}"
            break
        steps += 1
        if not res.accepted:
            key = res.reject_reason.value
            runlog.rejections[key] = runlog.rejections.get(key, 0) + 1
            log.info("t=%.6g rejected dt=%.3e (%s)", u.time, dt_try, res.reject_reason.value)
            dt = res.dt_next
            continue
        new = res.u_new
        if dt_try == remaining:
            new.time = cfg.t_end
        integ.advance(u, f_n, res)
        u = new
        f_n = problem.rate(u.data)
        row = log_step(runlog, u, res, space, params, spsd_tol,
                       wall_time=_time.perf_counter() - start)
        log.info("t=%.6g dt=%.3e E=%.10g newton=%d krylov=%d", u.time, res.dt_used, row[2],
                 res.newton_iters, res.krylov_iters_total)
        for cb in callbacks:
            cb(u, res, row)
        runlog.final_state = u
        dt = res.dt_next
    return runlog
