"""Sparse solvers and eigenvalue estimates built on scipy.

Every solver can return a :class:`SolveInfo` whose ``residual`` is the
relative residual measured after the solve; :func:`recheck_residual`
recomputes it independently.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.io
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .exceptions import (
    IndefiniteMatrix,
    NotConverged,
    RankDeficientConstraints,
    SingularMatrix,
)

logger = logging.getLogger(__name__)

DIRECT_LIMIT = 50_000


@dataclass
class SolveInfo:
    method: str
    residual: float
    iterations: int = 0
    history: list = field(default_factory=list)


def as_csr(A):
    """Canonical CSR: summed duplicates, sorted column indices, explicit zeros pruned."""
    A = sp.csr_matrix(A, dtype=float)
    A.sum_duplicates()
    A.eliminate_zeros()
    A.sort_indices()
    return A


def relative_residual(A, x, b):
    nb = np.linalg.norm(b)
    r = np.linalg.norm(A @ x - b)
    return r / nb if nb > 0 else r


recheck_residual = relative_residual


def dump_matrix(A, path, comment=""):
    """Write a matrix in Matrix Market coordinate format."""
    scipy.io.mmwrite(str(path), sp.coo_matrix(A), comment=comment)


def _splu(A, symmetric=False):
    opts = dict(permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                options=dict(SymmetricMode=True)) if symmetric else {}
    with warnings.catch_warnings():
        warnings.simplefilter("error", sp.SparseEfficiencyWarning)
        try:
            return spla.splu(sp.csc_matrix(A), **opts)
        except RuntimeError as exc:
            raise SingularMatrix(str(exc)) from exc


def _direct(lu, A, b, tol, refine=2):
    x = lu.solve(b)
    res = relative_residual(A, x, b)
    k = 0
    while res > tol and k < refine and np.isfinite(res):
        x = x + lu.solve(b - A @ x)
        res = relative_residual(A, x, b)
        k += 1
    return x, res


def _finish(x, info, return_info):
    return (x, info) if return_info else x


def solve_spd(A, rhs, method="auto", tol=1e-10, maxiter=5000, return_info=False):
    """Solve a symmetric positive definite system.

    ``method`` is ``direct``, ``cg`` or ``auto`` (direct below ``DIRECT_LIMIT``
    unknowns).  The direct path factors without pivoting in symmetric mode, so
    the diagonal of U holds the LDL^T pivots and a nonpositive pivot raises
    :class:`IndefiniteMatrix`.
    """
    A = sp.csr_matrix(A)
    b = np.asarray(rhs, dtype=float)
    n = A.shape[0]
    if n == 0:
        return _finish(np.zeros(0), SolveInfo("direct", 0.0), return_info)
    if not np.any(b):
        return _finish(np.zeros_like(b), SolveInfo("direct", 0.0), return_info)
    if method == "auto":
        method = "direct" if n < DIRECT_LIMIT else "cg"
    if method == "direct":
        try:
            lu = _splu(A, symmetric=True)
        except SingularMatrix as exc:
            raise IndefiniteMatrix(f"zero pivot in symmetric factorization: {exc}") from exc
        piv = lu.U.diagonal()
        if np.any(piv <= 0) or not np.all(np.isfinite(piv)):
            raise IndefiniteMatrix(f"nonpositive pivot {piv.min():.3e} in symmetric factorization")
        x, res = _direct(lu, A, b, tol)
        if res > tol:
            raise NotConverged(f"direct SPD solve residual {res:.3e}", residual=res)
        return _finish(x, SolveInfo("direct", res), return_info)
    if method != "cg":
        raise ValueError(f"unknown SPD method {method!r}")
    d = A.diagonal()
    if np.any(d <= 0):
        raise IndefiniteMatrix("nonpositive diagonal entry")
    P = spla.LinearOperator(A.shape, matvec=lambda v: v / d)
    hist = []
    x, flag = spla.cg(A, b, rtol=tol, maxiter=maxiter, M=P, callback=lambda xk: hist.append(1))
    res = relative_residual(A, x, b)
    if flag != 0 or res > 10 * tol:
        raise NotConverged(f"CG stopped after {len(hist)} iterations, residual {res:.3e}", residual=res)
    return _finish(x, SolveInfo("cg", res, len(hist)), return_info)


def kkt_matrix(A, B, C=None):
    """Assemble [[A, B^T], [B, C]] with C defaulting to zero."""
    m = B.shape[0]
    C = sp.csr_matrix((m, m)) if C is None else C
    return sp.bmat([[A, B.T], [B, C]], format="csc")


def solve_saddle(A, B, f, g=None, tol=1e-8, return_info=False):
    """Solve A x + B^T lam = f, B x = g monolithically by sparse LU.

    Returns ``(x, lam)`` (plus :class:`SolveInfo` when requested).
    """
    A = sp.csr_matrix(A)
    B = sp.csr_matrix(B)
    n, m = A.shape[0], B.shape[0]
    f = np.asarray(f, dtype=float)
    g = np.zeros(m) if g is None else np.asarray(g, dtype=float)
    if m == 0:
        x, info = solve_general(A, f, tol=tol, return_info=True)
        return ((x, np.zeros(0), info) if return_info else (x, np.zeros(0)))
    if m <= 64 and m > np.linalg.matrix_rank(B.toarray()):
        raise RankDeficientConstraints(f"constraint block of {m} rows is rank deficient")
    K = kkt_matrix(A, B)
    rhs = np.concatenate([f, g])
    try:
        sol, info = solve_general(K, rhs, tol=tol, return_info=True)
    except SingularMatrix as exc:
        raise RankDeficientConstraints(f"KKT matrix is singular: {exc}") from exc
    out = (sol[:n], sol[n:])
    return (*out, info) if return_info else out


def solve_general(A, rhs, tol=1e-8, method="auto", maxiter=2000, restart=50, return_info=False):
    """Solve a general nonsingular system by sparse LU or ILU-preconditioned GMRES."""
    A = sp.csr_matrix(A)
    b = np.asarray(rhs, dtype=float)
    n = A.shape[0]
    if n == 0:
        return _finish(np.zeros(0), SolveInfo("direct", 0.0), return_info)
    if not np.any(b):
        return _finish(np.zeros_like(b), SolveInfo("direct", 0.0), return_info)
    if method == "auto":
        method = "direct" if n < DIRECT_LIMIT else "gmres"
    if method == "direct":
        lu = _splu(A)
        x, res = _direct(lu, A, b, tol)
        if not np.isfinite(res):
            raise SingularMatrix("LU solve produced non-finite values")
        if res > tol:
            raise NotConverged(f"LU solve residual {res:.3e}", residual=res)
        return _finish(x, SolveInfo("direct", res), return_info)
    ilu = spla.spilu(sp.csc_matrix(A), drop_tol=1e-5, fill_factor=20)
    P = spla.LinearOperator(A.shape, matvec=ilu.solve)
    hist = []
    x, flag = spla.gmres(A, b, rtol=tol, restart=restart, maxiter=maxiter, M=P,
                         callback=hist.append, callback_type="pr_norm")
    res = relative_residual(A, x, b)
    if flag != 0 or res > 10 * tol:
        raise NotConverged(f"GMRES stopped after {len(hist)} iterations, residual {res:.3e}", residual=res)
    return _finish(x, SolveInfo("gmres", res, len(hist), hist), return_info)


def _dense_eigh(A, M, smallest):
    vals, vecs = scipy.linalg.eigh(A.toarray(), M.toarray())
    k = 0 if smallest else -1
    return float(vals[k]), vecs[:, k]


def smallest_generalized_eig(A, M, tol=1e-6, maxiter=None, dense_limit=200):
    """Smallest eigenpair of A x = lam M x (both SPD) by shift-invert Lanczos about zero.

    Shift-invert about zero is inverse iteration accelerated by a Krylov space; the
    eigenvalue is accurate to ``tol`` relative.
    """
    A = sp.csc_matrix(A)
    M = sp.csc_matrix(M)
    if A.shape[0] <= dense_limit:
        return _dense_eigh(A, M, True)
    lu = _splu(A)
    op = spla.LinearOperator(A.shape, matvec=lu.solve, dtype=float)
    try:
        vals, vecs = spla.eigsh(A, k=1, M=M, sigma=0.0, which="LM", OPinv=op, tol=tol * 1e-2,
                                maxiter=maxiter)
    except spla.ArpackNoConvergence as exc:
        raise NotConverged(f"shift-invert Lanczos did not converge: {exc}") from exc
    logger.debug("smallest generalized eigenvalue %.10g", vals[0])
    return float(vals[0]), vecs[:, 0]


def largest_generalized_eig(A, M, tol=1e-6, maxiter=None, dense_limit=200):
    """Largest eigenpair of A x = lam M x (A symmetric semidefinite, M SPD) by Lanczos."""
    A = sp.csc_matrix(A)
    M = sp.csc_matrix(M)
    if A.shape[0] <= dense_limit:
        return _dense_eigh(A, M, False)
    lu = _splu(M)
    Minv = spla.LinearOperator(M.shape, matvec=lu.solve, dtype=float)
    try:
        vals, vecs = spla.eigsh(A, k=1, M=M, Minv=Minv, which="LA", tol=tol * 1e-2, maxiter=maxiter)
    except spla.ArpackNoConvergence as exc:
        raise NotConverged(f"Lanczos did not converge: {exc}") from exc
    logger.debug("largest generalized eigenvalue %.10g", vals[0])
    return float(vals[0]), vecs[:, 0]
