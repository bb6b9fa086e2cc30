"""Inexact Newton with Eisenstat-Walker forcing and cubic backtracking.

The merit function is ``f(u) = 0.5 ||G(u)||^2``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .exceptions import EllipticityError, InvalidArgumentError, KrylovConvergenceError

GOLDEN = 0.5 * (1.0 + math.sqrt(5.0))


@dataclass(frozen=True)
class NewtonConfig:
    atol: float = 1e-14
    rtol: float = 1e-12
    max_iters: int = 50
    ew_eta0: float = 0.1
    ew_eta_max: float = 0.9
    ew_gamma: float = 1.0
    ew_alpha: float = 2.0
    ew_threshold: float = 0.0
    ls_max_backtracks: int = 8
    ls_alpha: float = 1e-4
    stol: float = 1e-12

    def __post_init__(self):
        if self.atol < 0 or self.rtol < 0 or (self.atol == 0 and self.rtol == 0):
            raise InvalidArgumentError("atol and rtol must be >= 0 and not both zero")
        if self.max_iters < 1:
            raise InvalidArgumentError("max_iters must be >= 1")
        if not 0 < self.ew_eta0 <= self.ew_eta_max < 1:
            raise InvalidArgumentError("need 0 < ew_eta0 <= ew_eta_max < 1")
        if self.stol < 0:
            raise InvalidArgumentError("stol must be >= 0")


@dataclass
class NewtonReport:
    converged: bool = False
    iters: int = 0
    residual_history: list = field(default_factory=list)
    krylov_iters: list = field(default_factory=list)
    line_search_steps: list = field(default_factory=list)
    failure: str = ""
    reason: str = ""

    @property
    def total_krylov(self) -> int:
        return int(sum(self.krylov_iters))


class LineSearchError(RuntimeError):
    def __init__(self, message, lam, merit):
        super().__init__(message)
        self.lam = lam
        self.merit = merit


def ew_forcing(prev_residual: Optional[float], curr_residual: float,
               prev_eta: Optional[float], cfg: NewtonConfig) -> float:
    """Eisenstat-Walker choice-2 forcing term.

    ``eta = gamma (|G_k| / |G_{k-1}|)^alpha``, raised to the safeguard
    ``gamma eta_{k-1}^golden`` when that exceeds ``ew_threshold``, and capped
    at ``ew_eta_max``.  The first iteration (no history) returns ``ew_eta0``.
    """
    if prev_residual is None or prev_eta is None:
        return cfg.ew_eta0
    eta = cfg.ew_gamma * (curr_residual / prev_residual) ** cfg.ew_alpha
    guard = cfg.ew_gamma * prev_eta ** GOLDEN
    if guard > cfg.ew_threshold:
        eta = max(eta, guard)
    return min(eta, cfg.ew_eta_max)


def _merit(G, u):
    try:
        r = G(u)
    except EllipticityError:
        return None, math.inf
    if not np.all(np.isfinite(r)):
        return None, math.inf
    return r, 0.5 * float(r @ r)


def cubic_backtrack(G: Callable, u: np.ndarray, direction: np.ndarray, g0: float,
                    slope0: float, cfg: NewtonConfig):
    """Backtracking line search on ``f = 0.5 |G|^2``.

    The full step is tried first, the first reduction uses the quadratic
    model and later ones the cubic through the last two trial points, each
    clamped to ``[0.1, 0.5]`` of the previous step.  Trial points where the
    residual is undefined (non-finite or not elliptic) are halved.

    Returns ``(lam, u_new, G_new)``.
    """
    if not slope0 < 0:
        raise InvalidArgumentError(f"direction is not a descent direction (slope {slope0:.3e})")
    lam = 1.0
    lam_prev = f_prev = None
    for _ in range(cfg.ls_max_backtracks + 1):
        u_new = u + lam * direction
        r_new, f = _merit(G, u_new)
        if f <= g0 + cfg.ls_alpha * lam * slope0:
            return lam, u_new, r_new
        if not math.isfinite(f):
            lam_next = 0.5 * lam
        elif lam_prev is None:
            lam_next = -slope0 / (2.0 * (f - g0 - slope0))
        else:
            r1 = f - g0 - lam * slope0
            r2 = f_prev - g0 - lam_prev * slope0
            a = (r1 / lam**2 - r2 / lam_prev**2) / (lam - lam_prev)
            b = (-lam_prev * r1 / lam**2 + lam * r2 / lam_prev**2) / (lam - lam_prev)
            if a == 0.0:
                lam_next = -slope0 / (2.0 * b)
            else:
                disc = b * b - 3.0 * a * slope0
                if disc < 0:
                    lam_next = 0.5 * lam
                elif b <= 0:
                    lam_next = (-b + math.sqrt(disc)) / (3.0 * a)
                else:
                    lam_next = -slope0 / (b + math.sqrt(disc))
        lam_prev, f_prev = lam, f
        if not math.isfinite(lam_next):
            lam_next = 0.5 * lam
        lam = min(max(lam_next, 0.1 * lam), 0.5 * lam)
    raise LineSearchError(
        f"line search failed after {cfg.ls_max_backtracks} backtracks (lambda={lam_prev:.3e})",
        lam_prev, f_prev,
    )


def newton_solve(G: Callable, J: Callable, u0: np.ndarray, cfg: NewtonConfig,
                 linsolver: Callable):
    """Solve ``G(u) = 0`` by inexact Newton.

    Parameters
    ----------
    G : callable returning the residual vector
    J : callable returning an object that supports ``J @ v``
    u0 : initial iterate (not modified)
    linsolver : ``linsolver(Jk, rhs, rtol) -> (x, iterations)``; may raise
        KrylovConvergenceError, whose best iterate is used if it still gives
        descent.

    Returns ``(u, report)``.  ``report.converged`` is set when the residual
    norm drops to ``max(atol, rtol * |G(u0)|)`` (``reason`` "residual") or
    when an accepted update satisfies ``|lam d| <= stol |u|`` (``reason``
    "step").  The step test covers tiny time steps, where cancellation in
    the shifted time derivative puts a floor under the attainable residual.
    EllipticityError from the initial residual propagates.
    """
    u = np.array(u0, dtype=float)
    report = NewtonReport()
    r = G(u)
    norm = float(np.linalg.norm(r))
    report.residual_history.append(norm)
    if not math.isfinite(norm):
        report.failure = "non-finite residual"
        return u, report
    tol = max(cfg.atol, cfg.rtol * norm)
    prev_norm = prev_eta = None
    while True:
        if norm <= tol:
            report.converged = True
            report.reason = "residual"
            return u, report
        if report.iters >= cfg.max_iters:
            report.failure = "maximum iterations reached"
            return u, report
        eta = ew_forcing(prev_norm, norm, prev_eta, cfg)
        Jk = J(u)
        try:
            step, kits = linsolver(Jk, -r, eta)
        except KrylovConvergenceError as exc:
            step, kits = exc.x, exc.iterations
        report.krylov_iters.append(int(kits))
        slope = float(r @ (Jk @ step))
        try:
            lam, u, r = cubic_backtrack(G, u, step, 0.5 * norm * norm, slope, cfg)
        except (LineSearchError, InvalidArgumentError) as exc:
            report.iters += 1
            report.failure = str(exc)
            return u, report
        report.iters += 1
        report.line_search_steps.append(lam)
        prev_norm, prev_eta = norm, eta
        norm = float(np.linalg.norm(r))
        report.residual_history.append(norm)
        if norm > tol and lam * np.linalg.norm(step) <= cfg.stol * np.linalg.norm(u):
            report.converged = True
            report.reason = "step"
            return u, report
