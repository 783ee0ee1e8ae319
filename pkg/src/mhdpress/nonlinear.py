"""Picard iteration for the nonlinear problem, constant estimates and the small-data check."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .assembly import evaluate_source_boundary
from .exceptions import MaxIterations, NotConverged
from .fem import Field, boundary_quadrature
from .linalg import _splu, largest_generalized_eig, smallest_generalized_eig
from .linearized import (
    LinearizedProblem,
    MHDData,
    MHDOperators,
    SolveReport,
    constants_from_potentials,
    solve_linearized,
)
from .norms import compute_norm, source_norm
from .scalar import PressureBC, recover_pressure

logger = logging.getLogger(__name__)


@dataclass
class PicardOptions:
    """Controls of the fixed-point loop.

    ``initial`` is None (zero fields) or a pair of Fields / free coefficient
    vectors on the velocity space.
    """

    max_iterations: int = 50
    tolerance: float = 1e-8
    damping: float = 1.0
    initial: tuple | None = None

    def __post_init__(self):
        if not 0.0 < self.damping <= 1.0:
            raise ValueError(f"damping must lie in (0, 1], got {self.damping}")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")


@dataclass
class ConstantsEstimate:
    """Discrete constants of the small-data condition.

    ``C2`` is a sampled lower estimate of the embedding constant, never an
    upper bound; ``eig_tol`` is the relative tolerance of the eigen solves.
    """

    C_P: float
    C1: float
    C2: float
    M: float
    eig_tol: float = 1e-6
    C2_samples: int = 0
    C2_lower_bound: bool = True
    details: dict = field(default_factory=dict)


def uniqueness_check(est):
    """Return ``(ok, margin)`` for C1 C2^2 M <= 2 / (3 C_P^2); margin is left / right."""
    left = est.C1 * est.C2 ** 2 * est.M
    right = 2.0 / (3.0 * est.C_P ** 2)
    margin = left / right
    return bool(left <= right), float(margin)


def _as_free(ops, v):
    if v is None:
        return np.zeros(ops.nV)
    if isinstance(v, Field):
        return v.free
    return np.asarray(v, dtype=float)


def picard_solve(mesh, basis=None, f=None, g=None, P0=None, h=None, opts=None, degree=2,
                 ops=None, f_curl=None, g_curl=None, h_grad=None):
    """Fixed point of the linearized map (w, d) -> (u, b).

    Each step solves the coupled linearized system with the (damped)
    previous iterate as coefficients.  The loop stops once the product H1
    increment drops below ``tolerance`` times the iterate norm, or below
    the round-off level of the assembled right-hand side.

    Returns
    -------
    u, b : Field
    P : Field
        Pressure recovered with w = u, d = b.
    alpha : ndarray
        Pressure constants (flux multipliers of the final solve).
    report : SolveReport

    Raises
    ------
    MaxIterations
        With the increment and ratio history in ``exc.report``.
    """
    t0 = time.perf_counter()
    opts = opts or PicardOptions()
    ops = ops or MHDOperators(mesh, degree, basis)
    data = MHDData(f=f, f_curl=f_curl, g=g, g_curl=g_curl, h=h, h_grad=h_grad, P0=P0)
    report = SolveReport("nonlinear")
    xu = _as_free(ops, opts.initial[0] if opts.initial else None)
    xb = _as_free(ops, opts.initial[1] if opts.initial else None)
    increments, ratios, residuals = [], [], []
    omega = opts.damping
    sol = None
    converged = False
    for k in range(1, opts.max_iterations + 1):
        w = Field.from_free(ops.V, xu)
        d = Field.from_free(ops.V, xb)
        sol = solve_linearized(LinearizedProblem(ops, data, w, d), recover=False)
        nu = (1 - omega) * xu + omega * sol.u.free
        nb = (1 - omega) * xb + omega * sol.b.free
        inc = ops.z_norm(nu - xu, nb - xb)
        size = ops.z_norm(nu, nb)
        increments.append(inc)
        residuals.append(sol.report.residual)
        if len(increments) > 1:
            ratios.append(inc / increments[-2] if increments[-2] > 0 else 0.0)
        logger.info("picard %d: increment %.3e (|x| %.3e)", k, inc, size)
        xu, xb = nu, nb
        # absolute floor at round-off level of the discrete data
        floor = 1e-12 * max(1.0, float(np.abs(sol.rhs).max()))
        if inc <= opts.tolerance * size or inc <= floor:
            converged = True
            break
        if not np.isfinite(inc):
            break
    report.iterations = len(increments)
    report.residual_history = residuals
    report.extra["increments"] = increments
    report.extra["ratios"] = ratios
    tail = ratios[len(ratios) // 2:] if ratios else []
    report.extra["contraction_factor"] = float(min(tail)) if tail else None
    report.extra["max_tail_ratio"] = float(max(tail)) if tail else None
    report.extra["monotone_tail"] = bool(all(r <= 1.0 for r in tail))
    if not converged:
        report.seconds = time.perf_counter() - t0
        raise MaxIterations(
            f"picard_solve: no convergence in {len(increments)} iterations "
            f"(last increment {increments[-1]:.3e}, last ratio {ratios[-1] if ratios else float('nan'):.3e})",
            report)
    u = Field.from_free(ops.V, xu)
    b = Field.from_free(ops.V, xb)
    alpha = sol.c
    report.dofs = sol.report.dofs
    report.residual = sol.report.residual
    report.constants = {"alpha": alpha, "alpha_discrete_formula": sol.report.constants.get("c_formula"),
                        "c_rel_mismatch": sol.report.constants.get("c_rel_mismatch", 0.0)}
    if ops.I:
        report.constants["alpha_quadrature"] = constants_from_potentials(ops, data, u, b, u, b)
    report.extra["g_pairings_before"] = sol.report.extra.get("g_pairings_before")
    report.extra["g_pairings_after"] = sol.report.extra.get("g_pairings_after")
    report.extra["chi"] = sol.chi
    report.extra["pi"] = sol.pi
    P = recover_pressure(ops.mesh, f, u=u, b=b, w=u, d=b, bc=PressureBC(P0, alpha), h=h,
                         h_grad=h_grad, degree=ops.degree)
    report.seconds = time.perf_counter() - t0
    return u, b, P, alpha, report


# ---------------------------------------------------------------- constants
def flux_free_basis(ops):
    """Sparse basis N of {x : Phi x = 0} by elimination of one pivot column per flux row."""
    n, I = ops.nV, ops.I
    if I == 0:
        return sp.identity(n, format="csr")
    Phi = ops.Phi.toarray()
    R = Phi.copy()
    pivots = []
    for r in range(I):
        row = R[r].copy()
        row[pivots] = 0.0
        p = int(np.argmax(np.abs(row)))
        pivots.append(p)
        R[r] /= R[r, p]
        for s in range(I):
            if s != r:
                R[s] -= R[s, p] * R[r]
    rest = np.setdiff1d(np.arange(n), pivots)
    # x[pivots] = -R[:, rest] x[rest]
    rows = np.concatenate([rest, np.repeat(pivots, len(rest))])
    cols = np.concatenate([np.arange(len(rest)), np.tile(np.arange(len(rest)), I)])
    vals = np.concatenate([np.ones(len(rest)), -R[:, rest].ravel()])
    N = sp.csr_matrix((vals, (rows, cols)), shape=(n, len(rest)))
    N.eliminate_zeros()
    return N


def discrete_poincare(ops, tol=1e-6):
    """C_P = lambda_min^(-1/2) of the principal form against the H1 mass on the flux-free space.

    Returns ``(C_P, lambda_min, eigenvector in flux-free coordinates, N)``.
    """
    N = flux_free_basis(ops)
    A = (N.T @ ops.A @ N).tocsc()
    H = (N.T @ ops.h1_mass @ N).tocsc()
    lam, vec = smallest_generalized_eig(A, H, tol=tol)
    if not lam > 0:
        raise NotConverged(f"principal form is not positive on the constrained space (lambda {lam:.3e})")
    return float(1.0 / np.sqrt(lam)), float(lam), vec, N


def data_norm_surrogate(ops, data):
    """Sum over f and g of ||F||_{L^{6/5}} + ||psi||_{L^2}, plus ||P0||_{L^2(boundary)}."""
    mesh = ops.mesh
    total = 0.0
    for vol, curl in ((data.f, data.f_curl), (data.g, data.g_curl)):
        if vol is not None:
            total += source_norm(vol, mesh, 3, 6.0 / 5.0)
        if curl is not None:
            total += source_norm(curl, mesh, 3, 2.0)
    if data.P0 is not None:
        bq = boundary_quadrature(mesh, degree=2 * ops.degree + 2)
        vals = evaluate_source_boundary(data.P0, bq, 1)[..., 0]
        total += float(np.sqrt(np.einsum("tq,tq->", bq.weights, vals ** 2)))
    return total


def _smooth_samples(ops, N, K, M, n_samples, smoothing, rng):
    lu = _splu(K)
    for _ in range(n_samples):
        y = rng.standard_normal(K.shape[0])
        for _ in range(smoothing):
            y = lu.solve(M @ y)
        yield N @ y


def estimate_constants(ops, data=None, n_samples=200, smoothing=2, seed=0, tol=1e-6, data_norms=None):
    """Discrete Poincare constant C_P, curl bound C1, sampled L4 constant C2 and data surrogate M.

    Parameters
    ----------
    ops : MHDOperators
    data : MHDData, optional
        Source of the M surrogate unless ``data_norms`` (a number or a
        sequence of norms that are summed) is given.
    n_samples : int
        Random smoothed fields used for C2 (at least 200 is customary).
    smoothing : int
        Applications of (A^-1 M) to white noise before sampling.
    """
    if isinstance(ops, tuple):
        ops = MHDOperators(*ops)
    C_P, lam_min, vmin, N = discrete_poincare(ops, tol)
    A = (N.T @ ops.A @ N).tocsc()
    H = (N.T @ ops.h1_mass @ N).tocsc()
    CC = (N.T @ ops.curlcurl @ N).tocsc()
    lam_curl, _ = largest_generalized_eig(CC, H, tol=tol)
    C1 = float(np.sqrt(max(lam_curl, 0.0)))
    rng = np.random.default_rng(seed)
    best = 0.0

    def ratio(x):
        fld = Field.from_free(ops.V, x)
        return compute_norm(fld, "L4") / compute_norm(fld, "H1")

    best = ratio(N @ vmin)
    for x in _smooth_samples(ops, N, A, H, n_samples, smoothing, rng):
        best = max(best, ratio(x))
    if data_norms is not None:
        M = float(np.sum(np.atleast_1d(data_norms)))
    elif data is not None:
        M = data_norm_surrogate(ops, data)
    else:
        M = 0.0
    est = ConstantsEstimate(C_P, C1, float(best), M, eig_tol=tol, C2_samples=n_samples + 1,
                            details={"lambda_min": lam_min, "lambda_curl_max": lam_curl,
                                     "dofs": int(A.shape[0])})
    logger.info("constants: C_P=%.4g C1=%.4g C2>=%.4g M=%.4g", C_P, C1, best, M)
    return est
