import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from conftest import random_spd_state
from netform.assembly import assemble_residual
from netform.exceptions import InvalidArgumentError, StepSizeCollapseError
from netform.fespace import FESpace, StateVector
from netform.mesh import generate_structured_quad
from netform.model import ModelParams, SourceSpec, min_eigenvalues
from netform.newton import NewtonConfig
from netform.timeloop import (
    IntegratorConfig,
    LinearSolverConfig,
    Problem,
    RejectReason,
    Scheme,
    StepResult,
    adapt_dt,
    bdf2_step,
    be_step,
    cn_step,
    init_consistent,
    run,
)

ZERO = SourceSpec(kind="custom", function=lambda x: np.zeros(len(x)))
GAUSS = SourceSpec(center=(0.25, 0.25))


def _rhs(c, params):
    """Scalar ODE of each diagonal entry of a homogeneous ``C = c I`` in 2D."""
    return -params.nu * (2 * c * c + params.eps) ** ((params.gamma - 2) / 2) * c


def _homogeneous(n=2):
    space = FESpace(generate_structured_quad(n, n))
    return space, Problem(space, ModelParams(), ZERO)


def _diag_state(space, c, t=0.0):
    comps = np.tile([[c], [0.0], [c]], (1, space.n_cells))
    return StateVector.from_fields(comps, np.zeros(space.n_vertices), space.layout, t)


# -- configuration -------------------------------------------------------------

def test_integrator_config_validation():
    for bad in (dict(dt_min=0.0), dict(dt0=10.0), dict(dt0=1e-12), dict(t_end=0.0),
                dict(lte_tol=0.0), dict(safety=1.5), dict(growth_max=0.5), dict(scheme="RK4")):
        with pytest.raises(InvalidArgumentError):
            IntegratorConfig(**bad)
    assert IntegratorConfig(scheme="cn").scheme is Scheme.CN
    assert Scheme.BE.order == 1 and Scheme.BDF2.order == 2 and Scheme.CN.order == 2


def test_linear_config_validation():
    with pytest.raises(InvalidArgumentError):
        LinearSolverConfig(inner="ilu")
    with pytest.raises(InvalidArgumentError):
        LinearSolverConfig(restart=0)


# -- initialization ------------------------------------------------------------

def test_init_identity_zero_source_gives_zero_pressure():
    space = FESpace(generate_structured_quad(4, 4))
    u = init_consistent(None, space, ModelParams(), ZERO)
    assert np.all(u.pressure == 0.0)
    np.testing.assert_array_equal(u.components, np.tile([[1.0], [0.0], [1.0]], (1, 16)))


def test_init_pressure_residual_64():
    space = FESpace(generate_structured_quad(64, 64))
    params = ModelParams()
    src = GAUSS.realize(space)
    u = init_consistent(np.eye(2), space, params, src)
    F = assemble_residual(u, StateVector.zeros(space.layout), 0.0, space, params, src)
    assert np.abs(F[space.layout.pressure]).max() < 1e-12
    assert abs(space.lumped_mass @ u.pressure) < 1e-12


def test_init_rejects_indefinite_cell():
    space = FESpace(generate_structured_quad(2, 2))
    C0 = np.tile(np.eye(2), (4, 1, 1))
    C0[2] = -np.eye(2)
    with pytest.raises(InvalidArgumentError):
        init_consistent(C0, space, ModelParams(), ZERO)


def test_init_accepts_several_forms():
    space = FESpace(generate_structured_quad(2, 2))
    params = ModelParams()
    comps = np.tile([[2.0], [0.5], [1.0]], (1, 4))
    a = init_consistent(comps, space, params, GAUSS)
    b = init_consistent(np.array([[2.0, 0.5], [0.5, 1.0]]), space, params, GAUSS)
    c = init_consistent(lambda x: np.tile([[2.0, 0.5], [0.5, 1.0]], (len(x), 1, 1)), space,
                        params, GAUSS)
    np.testing.assert_array_equal(a.data, b.data)
    np.testing.assert_array_equal(a.data, c.data)
    with pytest.raises(InvalidArgumentError):
        init_consistent(np.zeros((5, 5)), space, params, GAUSS)
    with pytest.raises(InvalidArgumentError):
        init_consistent(np.tile([[1.0, 0.5], [0.0, 1.0]], (4, 1, 1)), space, params, GAUSS)


# -- single steps against scalar oracles ---------------------------------------

@pytest.mark.parametrize("dt", [1e-2, 0.7, 20.0])
def test_be_step_scalar_oracle(dt):
    space, prob = _homogeneous()
    c0 = 1.3
    res = be_step(_diag_state(space, c0), 0.0, dt, prob)
    assert res.accepted and res.reject_reason is RejectReason.NONE
    ref = brentq(lambda c: c - dt * _rhs(c, prob.params) - c0, 0.0, c0, xtol=1e-16, rtol=1e-15)
    np.testing.assert_allclose(res.u_new.components[[0, 2]], ref, rtol=1e-12)
    np.testing.assert_allclose(res.u_new.components[1], 0.0, atol=1e-15)
    assert res.u_new.time == dt


def test_cn_step_scalar_oracle():
    space, prob = _homogeneous()
    c0, dt = 1.3, 0.5
    res = cn_step(_diag_state(space, c0), 0.0, dt, prob)
    p = prob.params
    ref = brentq(lambda c: c - 0.5 * dt * (_rhs(c, p) + _rhs(c0, p)) - c0, 0.0, c0,
                 xtol=1e-16, rtol=1e-15)
    np.testing.assert_allclose(res.u_new.components[[0, 2]], ref, rtol=1e-12)


def test_bdf2_step_scalar_oracle():
    space, prob = _homogeneous()
    c1, c0, dt = 1.25, 1.3, 0.4
    res = bdf2_step(_diag_state(space, c1, dt), _diag_state(space, c0, 0.0), dt, dt, prob)
    p = prob.params
    ref = brentq(lambda c: 1.5 * c - 2 * c1 + 0.5 * c0 - dt * _rhs(c, p), 0.0, 2.0,
                 xtol=1e-16, rtol=1e-15)
    np.testing.assert_allclose(res.u_new.components[[0, 2]], ref, rtol=1e-12)


def test_bdf2_variable_step_oracle():
    space, prob = _homogeneous()
    c1, c0, dt, dt_prev = 1.25, 1.3, 0.6, 0.2
    res = bdf2_step(_diag_state(space, c1, dt_prev), _diag_state(space, c0, 0.0), dt_prev,
                    dt, prob)
    w = dt / dt_prev
    p = prob.params

    def g(c):
        return ((1 + 2 * w) / (1 + w) * c - (1 + w) * c1 + w * w / (1 + w) * c0
                - dt * _rhs(c, p))

    ref = brentq(g, 0.0, 2.0, xtol=1e-16, rtol=1e-15)
    np.testing.assert_allclose(res.u_new.components[[0, 2]], ref, rtol=1e-12)


def test_bdf2_without_history_is_be():
    space, prob = _homogeneous()
    u = _diag_state(space, 1.1)
    a = bdf2_step(u, None, 0.0, 0.3, prob)
    b = be_step(u, 0.0, 0.3, prob)
    np.testing.assert_array_equal(a.u_new.data, b.u_new.data)
    with pytest.raises(InvalidArgumentError):
        bdf2_step(u, _diag_state(space, 1.0, 5.0), 0.0, 0.3, prob)


def test_tiny_step_continuity():
    space = FESpace(generate_structured_quad(8, 8))
    prob = Problem(space, ModelParams(), GAUSS)
    u = init_consistent(None, space, prob.params, prob.source)
    res = be_step(u, 0.0, 1e-12, prob)
    assert res.accepted
    dc = np.linalg.norm(res.u_new.components - u.components)
    assert dc < 1e-9 * np.linalg.norm(u.components)


def test_step_rejects_nonpositive_dt():
    space, prob = _homogeneous()
    with pytest.raises(InvalidArgumentError):
        be_step(_diag_state(space, 1.0), 0.0, 0.0, prob)


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 10 ** 6), dt=st.floats(0.01, 10.0))
def test_be_preserves_spsd(seed, dt):
    rng = np.random.default_rng(seed)
    space = FESpace(generate_structured_quad(4, 4))
    prob = Problem(space, ModelParams(), GAUSS)
    comps = random_spd_state(space, rng, scale=0.2).components
    # make some cells exactly singular to start on the boundary of the cone
    comps[:, ::3] = [[1.0], [1.0], [1.0]]
    u = init_consistent(comps, space, prob.params, prob.source)
    res = be_step(u, 0.0, dt, prob)
    if res.accepted:
        lam = min_eigenvalues(res.u_new.components, 2)
        assert lam.min() >= -10 * prob.newton.atol
    else:
        assert res.dt_next < res.dt_used


# -- step-size control -----------------------------------------------------------

def _prev(dt=0.1, reason=RejectReason.NONE):
    return StepResult(reason is RejectReason.NONE, None, dt, dt, reject_reason=reason)


def test_adapt_dt_cases():
    cfg = IntegratorConfig(lte_tol=1e-3)
    assert adapt_dt(_prev(), 1e-3, cfg) == pytest.approx(0.9 * 0.1, rel=1e-15)
    assert adapt_dt(_prev(), 0.0, cfg) == pytest.approx(0.2)
    assert adapt_dt(_prev(reason=RejectReason.NEWTON_FAIL), 0.0, cfg) == 0.05
    assert adapt_dt(_prev(reason=RejectReason.ELLIPTICITY), 0.0, cfg) == 0.05
    assert adapt_dt(_prev(), 1e6, cfg) == pytest.approx(0.025)
    assert adapt_dt(_prev(4.0), 0.0, cfg) == 5.0
    with pytest.raises(InvalidArgumentError):
        adapt_dt(_prev(), -1.0, cfg)


def test_adapt_dt_order_exponent():
    cfg = IntegratorConfig(lte_tol=1e-3, scheme="BDF2")
    got = adapt_dt(_prev(), 1e-3 / 8, cfg)
    assert got == pytest.approx(0.1 * 0.9 * 2.0, rel=1e-14)
    assert adapt_dt(_prev(), 1e-3 / 8, cfg, order=1) == pytest.approx(0.2)


def test_adapt_dt_collapse():
    cfg = IntegratorConfig(dt_min=1e-6, dt0=1e-6)
    with pytest.raises(StepSizeCollapseError):
        adapt_dt(_prev(1.5e-6, RejectReason.NEWTON_FAIL), 0.0, cfg)


@given(dt=st.floats(1e-6, 5.0), lte=st.floats(0.0, 1e3))
def test_adapt_dt_bounds(dt, lte):
    cfg = IntegratorConfig(dt_min=1e-9)
    new = adapt_dt(_prev(dt), lte, cfg)
    assert 0.25 * dt * (1 - 1e-15) <= new <= min(2 * dt, cfg.dt_max) * (1 + 1e-15)
    if lte > cfg.lte_tol:
        assert new < dt


# -- whole runs ------------------------------------------------------------------

def test_single_step_run():
    cfg = IntegratorConfig(dt0=0.01, t_end=0.01, lte_tol=1e6)
    log = run(cfg, generate_structured_quad(4, 4), ModelParams(), GAUSS)
    assert log.completed and len(log) == 1
    assert log.rows[0][0] == 0.01 and log.n_rejected == 0


def test_homogeneous_run_matches_scalar_be():
    cfg = IntegratorConfig(dt0=0.01, t_end=30.0, lte_tol=1e-3)
    params = ModelParams()
    log = run(cfg, generate_structured_quad(2, 2), params, ZERO)
    assert log.completed and len(log) > 10
    t, dt = log.column("t"), log.column("dt")
    c = 1.0
    E = []
    for h in dt:
        c = brentq(lambda x: x - h * _rhs(x, params) - c, 0.0, c, xtol=1e-16, rtol=1e-15)
        E.append(params.nu / params.gamma * (2 * c * c + params.eps) ** (params.gamma / 2))
    np.testing.assert_allclose(np.cumsum(dt), t, rtol=1e-12)
    np.testing.assert_allclose(log.final_state.components[0], c, rtol=1e-10)
    np.testing.assert_allclose(log.column("E"), E, rtol=1e-10)


def test_run_records_collapse():
    cfg = IntegratorConfig(dt0=1e-2, dt_min=1e-4, t_end=1.0)
    log = run(cfg, generate_structured_quad(4, 4), ModelParams(), GAUSS,
              newton=NewtonConfig(max_iters=1, atol=1e-30, rtol=1e-30))
    assert not log.completed
    assert "StepSizeCollapse" in log.failure
    assert log.rejections.get("NewtonFail", 0) >= 6


def test_run_callbacks_and_final_time():
    seen = []
    cfg = IntegratorConfig(dt0=0.3, dt_max=0.3, t_end=1.0, adaptive=False)
    log = run(cfg, generate_structured_quad(2, 2), ModelParams(), GAUSS,
              callbacks=[lambda u, res, row: seen.append((u.time, res.dt_used, row[0]))])
    assert [s[0] for s in seen] == list(log.column("t"))
    assert log.rows[-1][0] == 1.0
    np.testing.assert_allclose([s[1] for s in seen], [0.3, 0.3, 0.3, 0.1], rtol=1e-12)


def test_run_max_steps():
    cfg = IntegratorConfig(dt0=0.01, dt_max=0.01, t_end=1.0, adaptive=False, max_steps=3)
    log = run(cfg, generate_structured_quad(2, 2), ModelParams(), GAUSS)
    assert len(log) == 3 and "maximum number of steps" in log.failure


def _fixed_step_error(scheme, dt, T=1.0):
    params = ModelParams(nu=1.0)
    cfg = IntegratorConfig(scheme=scheme, dt0=dt, dt_max=dt, t_end=T, adaptive=False)
    log = run(cfg, generate_structured_quad(2, 2), params, ZERO,
              newton=NewtonConfig(atol=1e-13, rtol=1e-14))
    assert log.completed
    ref = solve_ivp(lambda t, c: _rhs(c, params), (0, T), [1.0], method="DOP853",
                    rtol=1e-13, atol=1e-16).y[0, -1]
    return abs(log.final_state.components[0, 0] - ref)


@pytest.mark.parametrize("scheme,order", [("BE", 1), ("BDF2", 2), ("CN", 2)])
def test_convergence_order(scheme, order):
    dts = [1e-2, 5e-3, 2.5e-3]
    errs = [_fixed_step_error(scheme, dt) for dt in dts]
    slope = np.polyfit(np.log(dts), np.log(errs), 1)[0]
    assert abs(slope - order) < 0.1, (errs, slope)
    assert math.isfinite(slope)
