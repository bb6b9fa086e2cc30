"""Krylov solvers and the Schur-complement block preconditioner.

The Jacobian has the saddle-point form ``[[J00, J01], [J01^T, -D]]`` with a
cell-block-diagonal ``J00``.  Its exact factorization

    J = [[J00, 0], [J01^T, I]] [[J00^-1, 0], [0, -S]] [[J00, J01], [0, I]]

with ``S = D + J01^T J00^-1 J01`` is applied as a right preconditioner for
GMRES; only the ``S`` solve is approximate (sparse direct, or PCG preconditioned
by symmetric Gauss-Seidel or smoothed-aggregation AMG).  The
constant pressure is in the kernel of ``D``, ``J01^T`` and ``S``; it is
removed by projection rather than by pinning a vertex in the outer system.
"""
from __future__ import annotations

import math
from typing import Callable, Optional

import numpy as np
import pyamg
import scipy.io
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import BlockJacobian
from .exceptions import IndefiniteError, KrylovConvergenceError, NotSPDError


def _as_matvec(A) -> Callable:
    if callable(A) and not hasattr(A, "shape"):
        return A
    if hasattr(A, "matvec"):
        return A.matvec
    return lambda v: A @ v


def project_mean_zero(v: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Subtract the ``weights``-weighted mean, i.e. ``int v_h`` for lumped-mass weights."""
    return v - (weights @ v) / weights.sum()


def gmres(A, b, M=None, rtol: float = 1e-8, atol: float = 0.0, restart: int = 30,
          maxiter: int = 1000, x0=None, project: Optional[Callable] = None):
    """Restarted right-preconditioned GMRES.

    Solves ``A x = b`` with ``x = x0 + M y``; the monitored residual is the
    true (unpreconditioned) one.  ``project`` is applied to every
    preconditioned direction, which keeps iterates in a subspace when ``A``
    is singular.

    Returns
    -------
    x : ndarray
    iterations : int
        Total inner iterations over all restart cycles.

    Raises
    ------
    KrylovConvergenceError
        On ``maxiter`` exhaustion, carrying the best iterate.
    """
    matvec = _as_matvec(A)
    precond = (lambda v: v) if M is None else _as_matvec(M)
    if project is not None:
        base = precond
        precond = lambda v: project(base(v))  # noqa: E731
    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    target = max(rtol * np.linalg.norm(b), atol)
    r = b - matvec(x) if x0 is not None else b.copy()
    beta = np.linalg.norm(r)
    if beta <= target:
        return x, 0
    m = max(1, min(restart, n))
    total = 0
    while True:
        V = np.empty((m + 1, n))
        Z = np.empty((m, n))
        H = np.zeros((m + 1, m))
        cs, sn = np.zeros(m), np.zeros(m)
        g = np.zeros(m + 1)
        V[0] = r / beta
        g[0] = beta
        k = 0
        breakdown = False
        for j in range(m):
            Z[j] = precond(V[j])
            w = matvec(Z[j])
            for i in range(j + 1):  # modified Gram-Schmidt
                H[i, j] = V[i] @ w
                w -= H[i, j] * V[i]
            hnext = np.linalg.norm(w)
            H[j + 1, j] = hnext
            for i in range(j):
                H[i, j], H[i + 1, j] = (cs[i] * H[i, j] + sn[i] * H[i + 1, j],
                                        -sn[i] * H[i, j] + cs[i] * H[i + 1, j])
            denom = math.hypot(H[j, j], H[j + 1, j])
            cs[j], sn[j] = (H[j, j] / denom, H[j + 1, j] / denom) if denom else (1.0, 0.0)
            H[j, j], H[j + 1, j] = denom, 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] *= cs[j]
            total += 1
            k = j + 1
            if abs(g[j + 1]) <= target or total >= maxiter:
                break
            if hnext <= 1e-14 * abs(H[j, j]):
                breakdown = True
                break
            V[j + 1] = w / hnext
        y = np.linalg.lstsq(np.triu(H[:k, :k]), g[:k], rcond=None)[0]
        x = x + Z[:k].T @ y
        r = b - matvec(x)
        beta = np.linalg.norm(r)
        if beta <= target:
            return x, total
        if total >= maxiter or breakdown:
            raise KrylovConvergenceError(
                f"GMRES stopped at residual {beta:.3e} > {target:.3e} after {total} iterations",
                x, beta, total,
            )


def pcg(A, b, M=None, rtol: float = 1e-10, atol: float = 0.0, maxiter: Optional[int] = None,
        x0=None, project: Optional[Callable] = None):
    """Preconditioned conjugate gradients for symmetric positive (semi-)definite ``A``.

    For singular ``A`` the right-hand side must be consistent; ``project``
    (e.g. mean-zero projection) is applied to preconditioned residuals and to
    the returned solution.

    Raises
    ------
    IndefiniteError
        If a search direction has non-positive curvature.
    KrylovConvergenceError
        If ``maxiter`` is exhausted.
    """
    matvec = _as_matvec(A)
    precond = (lambda v: v) if M is None else _as_matvec(M)
    proj = (lambda v: v) if project is None else project
    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    maxiter = 10 * n if maxiter is None else maxiter
    x = np.zeros(n) if x0 is None else proj(np.array(x0, dtype=float))
    r = b - matvec(x) if x0 is not None else b.copy()
    target = max(rtol * np.linalg.norm(b), atol)
    if np.linalg.norm(r) <= target:
        return x, 0
    z = proj(precond(r))
    p = z.copy()
    rz = r @ z
    for it in range(1, maxiter + 1):
        Ap = matvec(p)
        curv = p @ Ap
        if not curv > 0.0:
            raise IndefiniteError(f"non-positive curvature {curv:.3e} at iteration {it}")
        alpha = rz / curv
        x += alpha * p
        r -= alpha * Ap
        if np.linalg.norm(r) <= target:
            return proj(x), it
        z = proj(precond(r))
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise KrylovConvergenceError(
        f"PCG did not converge in {maxiter} iterations", proj(x), np.linalg.norm(r), maxiter
    )


class BlockDiagonalInverse:
    """Inverse of a cell-block-diagonal matrix stored as ``(n_cells, k, k)`` blocks.

    Vectors are field-ordered: component ``m`` of cell ``c`` sits at
    ``m * n_cells + c``.  Each block is Cholesky-factored and applied through
    its explicit triangular inverse.
    """

    def __init__(self, blocks: np.ndarray):
        blocks = np.asarray(blocks, dtype=float)
        try:
            L = np.linalg.cholesky(blocks)
        except np.linalg.LinAlgError:
            L = None
        if L is None or not np.all(np.isfinite(L)):
            for c, blk in enumerate(blocks):
                try:
                    np.linalg.cholesky(blk)
                except np.linalg.LinAlgError:
                    raise NotSPDError(c) from None
            raise NotSPDError(int(np.nonzero(~np.isfinite(L).all(axis=(1, 2)))[0][0]))
        self.blocks = blocks
        self.L = L
        self.Linv = np.linalg.inv(L)
        self.n_cells, self.k = blocks.shape[:2]

    def apply(self, rhs: np.ndarray) -> np.ndarray:
        """``J00^{-1} rhs`` for a flat field-ordered vector or a ``(k*n_cells, m)`` array."""
        rhs = np.asarray(rhs, dtype=float)
        shaped = rhs.reshape(self.k, self.n_cells, *rhs.shape[1:])
        y = np.einsum("cij,jc...->ic...", self.Linv, shaped)
        x = np.einsum("cji,jc...->ic...", self.Linv, y)
        return x.reshape(rhs.shape)

    def apply_local(self, local: np.ndarray) -> np.ndarray:
        """``J00_c^{-1} local[c]`` for per-cell arrays of shape ``(n_cells, k, ...)``."""
        y = np.einsum("cij,cj...->ci...", self.Linv, local)
        return np.einsum("cji,cj...->ci...", self.Linv, y)

    def matvec(self, v: np.ndarray) -> np.ndarray:
        shaped = np.asarray(v, dtype=float).reshape(self.k, self.n_cells)
        return np.einsum("cij,jc->ic", self.blocks, shaped).reshape(-1)


def invert_J00_blocks(blocks: np.ndarray) -> BlockDiagonalInverse:
    return BlockDiagonalInverse(blocks)


class DirectSchurSolver:
    """Sparse LU of the singular Schur complement with one vertex eliminated.

    For a consistent right-hand side the reduced solve gives an exact
    solution; the constant is then fixed by mean-zero projection.
    """

    def __init__(self, S: sp.csr_matrix, weights: np.ndarray):
        self.S = S
        self.weights = weights
        n = S.shape[0]
        self._keep = np.arange(n - 1)
        self._lu = spla.splu(S[:-1, :-1].tocsc(), permc_spec="MMD_AT_PLUS_A",
                             diag_pivot_thresh=0.0, options=dict(SymmetricMode=True))

    def solve(self, b: np.ndarray, rtol: Optional[float] = None):
        b = b - b.mean()
        x = np.zeros_like(b)
        x[:-1] = self._lu.solve(b[:-1])
        return project_mean_zero(x, self.weights), 1


class SymmetricGaussSeidel:
    """SGS preconditioner ``M = (D + L) D^{-1} (D + U)`` applied with triangular solves."""

    def __init__(self, A: sp.csr_matrix):
        A = sp.csr_matrix(A)
        self.diag = A.diagonal()
        lower = sp.tril(A, format="csc")
        upper = sp.triu(A, format="csc")
        opts = dict(permc_spec="NATURAL", diag_pivot_thresh=0.0,
                    options=dict(SymmetricMode=True))
        self._lo = spla.splu(lower, **opts)
        self._up = spla.splu(upper, **opts)

    def matvec(self, r: np.ndarray) -> np.ndarray:
        y = self._lo.solve(r)
        return self._up.solve(self.diag * y)


class PCGSchurSolver:
    def __init__(self, S: sp.csr_matrix, weights: np.ndarray, rtol: float = 1e-10,
                 maxiter: Optional[int] = None):
        self.S = S
        self.weights = weights
        self.rtol = rtol
        self.maxiter = maxiter
        self.precond = SymmetricGaussSeidel(S)
        self.iterations = 0

    def solve(self, b: np.ndarray, rtol: Optional[float] = None):
        b = b - b.mean()
        proj = lambda v: project_mean_zero(v, self.weights)  # noqa: E731
        x, its = pcg(self.S, b, M=self.precond, rtol=self.rtol if rtol is None else rtol,
                     maxiter=self.maxiter, project=proj)
        self.iterations += its
        return x, its


class AMGSchurSolver(PCGSchurSolver):
    """PCG on ``S`` preconditioned by one smoothed-aggregation V-cycle."""

    def __init__(self, S: sp.csr_matrix, weights: np.ndarray, rtol: float = 1e-10,
                 maxiter: Optional[int] = None):
        self.S = S
        self.weights = weights
        self.rtol = rtol
        self.maxiter = maxiter
        ml = pyamg.smoothed_aggregation_solver(S, B=np.ones((S.shape[0], 1)),
                                               symmetry="symmetric")
        self.precond = ml.aspreconditioner(cycle="V")
        self.iterations = 0


INNER_SOLVERS = {"direct": DirectSchurSolver, "pcg": PCGSchurSolver, "amg": AMGSchurSolver}


class SchurPreconditioner:
    """Exact block factorization of the Jacobian with a pluggable ``S`` solver.

    ``n_J00_applies`` and ``n_S_solves`` count the work done by :meth:`apply`.
    """

    def __init__(self, J: BlockJacobian, weights: np.ndarray, inner: str = "direct",
                 inner_rtol: float = 1e-10):
        self.J = J
        self.weights = np.asarray(weights, dtype=float)
        self.J00_inv = invert_J00_blocks(J.J00_blocks)
        self.J01 = J.J01
        self.S_hat = schur_complement(J, self.J00_inv)
        if inner == "direct":
            self.inner = DirectSchurSolver(self.S_hat, self.weights)
        elif inner in INNER_SOLVERS:
            self.inner = INNER_SOLVERS[inner](self.S_hat, self.weights, rtol=inner_rtol)
        else:
            raise ValueError(f"unknown inner solver {inner!r}")
        self.n_J00_applies = 0
        self.n_S_solves = 0
        self.inner_iterations = 0
        self._J01T = self.J01.T.tocsr()

    @property
    def shape(self):
        return self.J.shape

    def apply(self, rhs: np.ndarray) -> np.ndarray:
        nc = self.J.n_cond
        rc, rp = rhs[:nc], rhs[nc:]
        y = self.J00_inv.apply(rc)
        self.n_J00_applies += 1
        xp, its = self.inner.solve(self._J01T @ y - rp)
        self.n_S_solves += 1
        self.inner_iterations += its
        xc = self.J00_inv.apply(rc - self.J01 @ xp)
        self.n_J00_applies += 1
        return np.concatenate([xc, xp])

    matvec = apply

    def factors(self):
        """Dense lower, middle and upper factors (for small verification problems)."""
        J00 = self.J.J00.toarray()
        J01 = self.J01.toarray()
        nc, npr = J01.shape
        Z, I = np.zeros((nc, npr)), np.eye(npr)
        lower = np.block([[J00, Z], [J01.T, I]])
        middle = np.block([[np.linalg.inv(J00), Z], [Z.T, -self.S_hat.toarray()]])
        upper = np.block([[J00, J01], [Z.T, I]])
        return lower, middle, upper


def schur_complement(J: BlockJacobian, J00_inv: Optional[BlockDiagonalInverse] = None):
    """``S = D + J01^T J00^-1 J01`` assembled cell by cell on the stiffness pattern."""
    if J00_inv is None:
        J00_inv = invert_J00_blocks(J.J00_blocks)
    B = J.J01_local
    local = np.einsum("cka,ckb->cab", B, J00_inv.apply_local(B))
    n = J.n_pressure
    cells = J.cells
    nloc = cells.shape[1]
    rows = np.repeat(cells, nloc, axis=1).ravel()
    cols = np.tile(cells, (1, nloc)).ravel()
    S = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr() + J.D
    S = S.tocsr()
    S.sum_duplicates()
    S.sort_indices()
    return S


def build_schur(J: BlockJacobian, weights, inner: str = "direct", inner_rtol: float = 1e-10):
    return SchurPreconditioner(J, weights, inner=inner, inner_rtol=inner_rtol)


def apply_schur_preconditioner(P: SchurPreconditioner, rhs: np.ndarray) -> np.ndarray:
    return P.apply(rhs)


def dump_matrix(A, path) -> None:
    """Write ``A`` in Matrix Market coordinate format."""
    scipy.io.mmwrite(str(path), sp.coo_matrix(A))
