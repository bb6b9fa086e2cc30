"""Residual and generalized Jacobian of the semi-discrete DAE.

The residual ``F(udot, u, t)`` holds the conductivity equations, diagonal
tensor components scaled by 1/2 and off-diagonal ones by 1, followed by the
negated pressure equation.  With that scaling the conductivity rows are half
the gradient of the discrete energy plus a weighted mass term, so the
Jacobian ``J = sigma dF/dudot + dF/du`` is symmetric.

Because the conductivity is cellwise constant, the metabolic factor and its
derivatives are evaluated once per cell.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .exceptions import EllipticityError
from .fespace import COMPONENTS, FESpace, StateVector
from .model import (
    ModelParams,
    SourceSpec,
    frobenius_sq,
    metabolic_from_components,
    min_eigenvalues,
    source_load,
)


def row_scaling(dim: int, symmetrize: bool = True) -> np.ndarray:
    if not symmetrize:
        return np.ones(len(COMPONENTS[dim]))
    return np.array([0.5 if a == b else 1.0 for a, b in COMPONENTS[dim]])


def check_ellipticity(comps: np.ndarray, params: ModelParams) -> None:
    lam = min_eigenvalues(comps, params.dim) + params.r
    bad = np.nonzero(~(lam > 0.0))[0]
    if len(bad):
        raise EllipticityError(bad, lam[bad].min())


def _apply_conductivity(comps, params, vecs):
    """``(C + r I) v`` for per-cell C and vectors ``vecs`` of shape ``(n_cells, ..., dim)``."""
    out = params.r * vecs
    extra = (None,) * (vecs.ndim - 2)
    for m, (a, b) in enumerate(COMPONENTS[params.dim]):
        cm = comps[m][(slice(None),) + extra]
        out[..., a] += cm * vecs[..., b]
        if a != b:
            out[..., b] += cm * vecs[..., a]
    return out


def gradient_products(space: FESpace, p: np.ndarray) -> np.ndarray:
    """Cell integrals of ``grad p (x) grad p`` per stored component, ``(n_comp, n_cells)``."""
    g = space.pressure_gradients(p)
    out = np.empty((space.ncomp, space.n_cells))
    for m, (a, b) in enumerate(COMPONENTS[space.dim]):
        out[m] = np.sum(g[..., a] * g[..., b] * space.jxw, axis=1)
    return out


def conductivity_rate(u: StateVector, space: FESpace, params: ModelParams) -> np.ndarray:
    """Right-hand side ``f(u) = avg(grad p (x) grad p) - m(C) C`` of the conductivity ODE."""
    comps = u.components
    gp = gradient_products(space, u.pressure) / space.cell_volumes
    return gp - metabolic_from_components(comps, params) * comps


def assemble_residual(
    u: StateVector,
    udot: StateVector,
    t: float,
    space: FESpace,
    params: ModelParams,
    source: SourceSpec,
    *,
    symmetrize: bool = True,
    check: bool = True,
    load: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Evaluate ``F(udot, u, t)``.

    The problem is autonomous, so ``t`` only documents the call.  ``load``
    may pass a precomputed :func:`source_load` vector.  With ``check`` set,
    an :class:`EllipticityError` is raised when some cell has
    ``lambda_min(C) + r <= 0``.
    """
    del t
    comps = u.components
    if check:
        check_ellipticity(comps, params)
    vol = space.cell_volumes
    s = row_scaling(space.dim, symmetrize)[:, None]
    mfac = metabolic_from_components(comps, params)
    rc = s * (vol * (udot.components + mfac * comps) - gradient_products(space, u.pressure))
    g = space.pressure_gradients(u.pressure)
    flux = _apply_conductivity(comps, params, g)
    local = np.einsum("cqd,cqad,cq->ca", flux, space.grads, space.jxw)
    if load is None:
        load = source_load(source, space)
    rp = load - space.scatter_vector(local)
    if not symmetrize:
        rp = -rp
    return np.concatenate([rc.ravel(), rp])


def conductivity_stiffness(comps, space: FESpace, params: ModelParams) -> sp.csr_matrix:
    """``D_ij = int (C + r I) grad phi_i . grad phi_j``."""
    kg = _apply_conductivity(comps, params, space.grads) * space.jxw[:, :, None, None]
    nc, nq, nloc, dim = kg.shape
    lhs = kg.transpose(0, 2, 1, 3).reshape(nc, nloc, nq * dim)
    rhs = space.grads.transpose(0, 1, 3, 2).reshape(nc, nq * dim, nloc)
    return space.scatter_matrix(lhs @ rhs)


@dataclass
class BlockJacobian:
    """Generalized Jacobian in 2x2 block form.

    Attributes
    ----------
    J00_blocks : (n_cells, k, k) dense per-cell conductivity blocks
    J01_local : (n_cells, k, n_loc) conductivity rows x cell pressure dofs
    J10_local : (n_cells, n_loc, k) pressure rows x conductivity dofs
    D : pressure stiffness; the pressure-pressure block is ``pp_sign * D``
    """

    J00_blocks: np.ndarray
    J01_local: np.ndarray
    J10_local: np.ndarray
    D: sp.csr_matrix
    sigma: float
    cells: np.ndarray
    pp_sign: float = -1.0
    _matrix: Optional[sp.csr_matrix] = field(default=None, repr=False)

    @property
    def n_cells(self) -> int:
        return self.J00_blocks.shape[0]

    @property
    def ncomp(self) -> int:
        return self.J00_blocks.shape[1]

    @property
    def n_cond(self) -> int:
        return self.n_cells * self.ncomp

    @property
    def n_pressure(self) -> int:
        return self.D.shape[0]

    @property
    def shape(self):
        n = self.n_cond + self.n_pressure
        return (n, n)

    def _cond_index(self, m):
        return m * self.n_cells + np.arange(self.n_cells)

    @property
    def J00(self) -> sp.csr_matrix:
        k, nc = self.ncomp, self.n_cells
        rows = (np.arange(k)[None, :, None] * nc + np.arange(nc)[:, None, None])
        cols = (np.arange(k)[None, None, :] * nc + np.arange(nc)[:, None, None])
        rows, cols = np.broadcast_arrays(rows, cols)
        return sp.csr_matrix((self.J00_blocks.ravel(), (rows.ravel(), cols.ravel())),
                             shape=(self.n_cond, self.n_cond))

    def _coupling(self, local, transpose):
        k, nc = self.ncomp, self.n_cells
        nloc = self.cells.shape[1]
        if transpose:
            local = local.transpose(0, 2, 1)
        crow = np.arange(k)[None, :, None] * nc + np.arange(nc)[:, None, None]
        pcol = self.cells[:, None, :]
        crow, pcol = np.broadcast_arrays(crow, pcol)
        assert crow.shape == (nc, k, nloc)
        A = sp.coo_matrix((local.ravel(), (crow.ravel(), pcol.ravel())),
                          shape=(self.n_cond, self.n_pressure)).tocsr()
        A.sum_duplicates()
        return A

    @property
    def J01(self) -> sp.csr_matrix:
        return self._coupling(self.J01_local, transpose=False)

    @property
    def J10(self) -> sp.csr_matrix:
        return self._coupling(self.J10_local, transpose=True).T.tocsr()

    def matrix(self) -> sp.csr_matrix:
        if self._matrix is None:
            A = sp.bmat([[self.J00, self.J01], [self.J10, self.pp_sign * self.D]],
                        format="csr")
            A.sum_duplicates()
            A.sort_indices()
            self._matrix = A
        return self._matrix

    def __matmul__(self, v):
        return self.matrix() @ v

    def dot(self, v):
        return self.matrix() @ v


def assemble_jacobian(
    u: StateVector,
    sigma: float,
    space: FESpace,
    params: ModelParams,
    *,
    symmetrize: bool = True,
) -> BlockJacobian:
    """Assemble ``J = sigma dF/dudot + dF/du`` at ``u``.

    Per cell, with stored components ``c``, multiplicities ``w`` (1 diagonal,
    2 off-diagonal) and row scales ``s`` (1/2 diagonal, 1 off-diagonal)::

        J00[m, n] = s_m vol (sigma d_mn + nu (alpha d_mn + 2 beta c_m c_n w_n))

    which is symmetric because ``2 s_m w_n = w_m w_n``.
    """
    comps = u.components
    dim = space.dim
    vol = space.cell_volumes
    s = row_scaling(dim, symmetrize)
    w = space.comp_weights
    norm2 = frobenius_sq(comps, dim) + params.eps
    alpha = norm2 ** ((params.gamma - 2.0) / 2.0)
    beta = 0.5 * (params.gamma - 2.0) * norm2 ** ((params.gamma - 4.0) / 2.0)
    k = space.ncomp
    eye = np.eye(k)
    cc = np.einsum("mc,nc->cmn", comps, comps * w[:, None])
    J00 = (sigma + params.nu * alpha)[:, None, None] * eye + 2.0 * params.nu * beta[:, None, None] * cc
    J00 *= (s[None, :, None] * vol[:, None, None])

    g = space.pressure_gradients(u.pressure)
    grads = space.grads
    # sym[c, m, a] = sum_q jxw (g_a' d_b' phi + g_b' d_a' phi) for component m = (a', b')
    sym = np.empty((space.n_cells, k, grads.shape[2]))
    for m, (a, b) in enumerate(COMPONENTS[dim]):
        t = g[..., a, None] * grads[..., b] + g[..., b, None] * grads[..., a]
        sym[:, m, :] = np.einsum("cqa,cq->ca", t, space.jxw)
    J01 = -s[None, :, None] * sym
    if symmetrize:
        J10 = J01.transpose(0, 2, 1).copy()
        pp_sign = -1.0
    else:
        half = np.array([0.5 if a == b else 1.0 for a, b in COMPONENTS[dim]])
        J10 = (half[None, :, None] * sym).transpose(0, 2, 1).copy()
        pp_sign = 1.0
    D = conductivity_stiffness(comps, space, params)
    return BlockJacobian(J00_blocks=J00, J01_local=J01, J10_local=J10, D=D,
                         sigma=float(sigma), cells=space.mesh.cells, pp_sign=pp_sign)


def assemble_poisson_only(comps, space: FESpace, params: ModelParams, source: SourceSpec):
    """Singular Neumann system ``D p = rhs`` for a fixed conductivity field."""
    comps = np.asarray(comps, dtype=float).reshape(space.ncomp, space.n_cells)
    D = conductivity_stiffness(comps, space, params)
    rhs = source_load(source, space)
    l1 = np.abs(rhs).sum()
    if abs(rhs.sum()) > 1e-12 * max(l1, np.finfo(float).tiny):
        raise RuntimeError(
            f"source load is not compatible with Neumann conditions (sum {rhs.sum():.3e})"
        )
    return D, rhs
