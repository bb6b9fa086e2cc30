"""Estimator-style facade over the time loop.

``fit(mesh)`` runs the conductivity flow from the identity to ``t_end``;
``transform`` returns per-cell features of the final state and ``score``
is the negated final energy, so larger is better as usual.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import InvalidArgumentError, NetformError
from .fespace import FESpace
from .model import ModelParams, SourceSpec, energy, frobenius_sq, min_eigenvalues
from .newton import NewtonConfig
from .timeloop import IntegratorConfig, LinearSolverConfig, run
from .validation import check_mesh, check_positive


class NetworkFormation(TransformerMixin, BaseEstimator, auto_wrap_output_keys=None):
    """Simulate network formation on a mesh.

    Parameters
    ----------
    r, nu, gamma, eps : float
        Model constants.
    source_center : tuple or None
        Centre of the Gaussian source; defaults to (0.25, ...) in the mesh
        dimension.
    sharpness : float
    scheme : {"BE", "BDF2", "CN"}
    t_end, dt0, dt_max, lte_tol : float
        Time-stepping controls.
    inner : {"direct", "pcg", "amg"}
        Solver for the pressure Schur complement.

    Notes
    -----
    Features are per-cell arrays, so pandas output wrapping is disabled and
    ``transform``/``score`` may be called without arguments after ``fit``.
    """

    def __init__(self, r=1e-4, nu=0.03, gamma=0.75, eps=1e-5, source_center=None,
                 sharpness=500.0, scheme="BE", t_end=200.0, dt0=1e-3, dt_max=5.0,
                 lte_tol=1e-3, inner="direct"):
        self.r = r
        self.nu = nu
        self.gamma = gamma
        self.eps = eps
        self.source_center = source_center
        self.sharpness = sharpness
        self.scheme = scheme
        self.t_end = t_end
        self.dt0 = dt0
        self.dt_max = dt_max
        self.lte_tol = lte_tol
        self.inner = inner

    def _configs(self, dim):
        for name in ("r", "nu", "eps", "sharpness", "t_end", "dt0", "dt_max", "lte_tol"):
            check_positive(name, getattr(self, name))
        params = ModelParams(r=self.r, nu=self.nu, gamma=self.gamma, eps=self.eps, dim=dim)
        center = self.source_center if self.source_center is not None else (0.25,) * dim
        source = SourceSpec(center=tuple(center), sharpness=self.sharpness)
        integ = IntegratorConfig(scheme=self.scheme, dt0=min(self.dt0, self.dt_max),
                                 dt_max=self.dt_max, t_end=self.t_end, lte_tol=self.lte_tol)
        return params, source, integ

    def fit(self, X, y=None):
        """Run the flow on mesh ``X``; ``y`` is ignored."""
        mesh = check_mesh(X)
        params, source, integ = self._configs(mesh.dim)
        space = X if isinstance(X, FESpace) else FESpace(mesh)
        runlog = run(integ, space, params, source, newton=NewtonConfig(),
                     linear=LinearSolverConfig(inner=self.inner))
        if not runlog.completed:
            raise NetformError(f"simulation failed: {runlog.failure}")
        self.space_ = space
        self.params_ = params
        self.log_ = runlog
        self.state_ = runlog.final_state
        self.energy_ = energy(self.state_, space, params)
        self.n_features_in_ = space.ncomp
        return self

    def _check_mesh(self, X):
        check_is_fitted(self, "state_")
        if X is not None and check_mesh(X) != self.space_.mesh:
            raise InvalidArgumentError("transform expects the mesh the estimator was fitted on")

    def transform(self, X=None):
        """Per-cell features: stored tensor components, ``||C||_F`` and ``lambda_min``."""
        self._check_mesh(X)
        comps = self.state_.components
        dim = self.space_.dim
        extra = [np.sqrt(frobenius_sq(comps, dim)), min_eigenvalues(comps, dim)]
        return np.column_stack([comps.T] + extra)

    def score(self, X=None, y=None):
        self._check_mesh(X)
        return -self.energy_
