"""Linearized MHD: Stokes-type, elliptic and coupled saddle solves, and the dual system.

Unknown ordering of the coupled system is ``[u, b, pi, chi, c, gamma]``:

=====  =====================================================
u, b   velocity and magnetic field (free dofs, tangential trace zero)
pi     divergence multiplier for u (full P1, approximates the pressure)
chi    divergence multiplier for b (P1, zero on the boundary)
c      flux multipliers of u (the pressure constants)
gamma  flux multipliers of b (vanish for compatible data)
=====  =====================================================

The principal operator is curl-curl plus div-div on the constrained space.
Degree 2 uses Taylor-Hood pairs; degree 1 enriches the vector space with
the cubic bubble so that the P1 multipliers are stable.
"""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .assembly import (
    _weights,
    assemble_awd,
    assemble_boundary_normal_load,
    assemble_curl_load,
    assemble_curlcurl,
    assemble_divdiv,
    assemble_grad,
    assemble_h1_mass,
    assemble_load,
    evaluate_source,
    evaluate_source_boundary,
    SourceSum,
)
from .exceptions import ConstantsMismatch, IncompatibleData, SolveFailure
from .fem import ConstrainedSpace, Field, boundary_quadrature
from .harmonic import compute_harmonic_basis, kernel_pairings
from .linalg import _splu, relative_residual, solve_general
from .quadrature import quadrature_rule
from .scalar import PressureBC, recover_pressure, solve_chi

logger = logging.getLogger(__name__)

CONSTANTS_RTOL = 1e-6
COMPAT_RTOL = 1e-6


@dataclass
class SolveReport:
    """Diagnostics of a solve; ``to_dict`` gives a JSON-ready mapping."""

    solver: str
    dofs: int = 0
    iterations: int = 0
    residual: float = 0.0
    residual_history: list = field(default_factory=list)
    constants: dict = field(default_factory=dict)
    norms: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)
    seconds: float = 0.0

    def to_dict(self):
        def clean(v):
            if isinstance(v, np.ndarray):
                return v.tolist()
            if isinstance(v, (np.floating, np.integer)):
                return v.item()
            if isinstance(v, dict):
                return {k: clean(x) for k, x in v.items()}
            if isinstance(v, (list, tuple)):
                return [clean(x) for x in v]
            return v
        return clean(asdict(self))


@dataclass
class MHDData:
    """Data of the linearized problem.

    Volume sources are callables on (N, 3) points, Fields, constants or None.
    ``f_curl`` / ``g_curl`` are the curl parts psi in f = F + curl psi.
    """

    f: object = None
    f_curl: object = None
    g: object = None
    g_curl: object = None
    h: object = None
    h_grad: object = None
    P0: object = None


class MHDOperators:
    """Spaces and the data-independent reduced matrices for one mesh and degree."""

    def __init__(self, mesh, degree=2, basis=None):
        if degree not in (1, 2):
            from .exceptions import UnsupportedDegree
            raise UnsupportedDegree(f"degree must be 1 or 2, got {degree}")
        self.mesh = mesh
        self.degree = degree
        self.V = ConstrainedSpace(mesh, "vector", degree, "tangential_zero_with_flux", bubble=degree == 1)
        self.Q = ConstrainedSpace(mesh, "scalar", 1, "none")
        self.X = ConstrainedSpace(mesh, "scalar", 1, "dirichlet")
        self._basis = basis

    @property
    def basis(self):
        if self._basis is None:
            self._basis = compute_harmonic_basis(self.mesh, self.degree)
        return self._basis

    @property
    def I(self):
        return self.mesh.n_internal

    @cached_property
    def T(self):
        return self.V.T.tocsr()

    def restrict(self, M):
        return (self.T.T @ M @ self.T).tocsr()

    @cached_property
    def curlcurl(self):
        return self.restrict(assemble_curlcurl(self.V))

    @cached_property
    def divdiv(self):
        return self.restrict(assemble_divdiv(self.V))

    @cached_property
    def A(self):
        return (self.curlcurl + self.divdiv).tocsr()

    @cached_property
    def h1_mass(self):
        return self.restrict(assemble_h1_mass(self.V))

    @cached_property
    def Bu(self):
        return (assemble_grad(self.Q, self.V) @ self.T).tocsr()

    @cached_property
    def Bb(self):
        return (self.X.T.T @ assemble_grad(self.X, self.V) @ self.T).tocsr()

    @cached_property
    def Phi(self):
        return self.V.flux_rows_free

    @property
    def nV(self):
        return self.V.n_free

    @property
    def nQ(self):
        return self.Q.n_free

    @property
    def nX(self):
        return self.X.n_free

    def coupling_blocks(self, w=None, d=None):
        """Reduced (C, E) blocks of the trilinear form; zero when w or d is None."""
        n = self.nV
        C = sp.csr_matrix((n, n))
        E = sp.csr_matrix((n, n))
        if w is not None or d is not None:
            zero = Field(self.V)
            Cf, Ef, _ = assemble_awd(self.V, w if w is not None else zero, d if d is not None else zero)
            if w is not None:
                C = self.restrict(Cf)
            if d is not None:
                E = self.restrict(Ef)
        return C, E

    # ---------------------------------------------------------- kernel fields
    @cached_property
    def kernel_fields(self):
        """Discrete analogues z_i of grad q_i.

        z_i is discretely divergence free, has flux delta_ik through
        component k, and is the Stokes-type minimizer of the principal form;
        the pressure-like multiplier pi_i of that problem is returned with it.
        """
        I = self.I
        if I == 0:
            return [], []
        K = sp.bmat([[self.A, -self.Bu.T, self.Phi.T],
                     [-self.Bu, None, None],
                     [self.Phi, None, None]], format="csc")
        lu = _splu(K)
        zs, pis = [], []
        n, m = self.nV, self.nQ
        for i in range(I):
            rhs = np.zeros(K.shape[0])
            rhs[n + m + i] = 1.0
            x = lu.solve(rhs)
            res = relative_residual(K, x, rhs)
            if res > 1e-8:
                raise SolveFailure(f"kernel field {i + 1}: residual {res:.3e}")
            zs.append(x[:n])
            pis.append(x[n:n + m])
        return zs, pis

    # ---------------------------------------------------------- right-hand sides
    def rhs_u(self, data):
        V = self.V
        r = np.zeros(V.n_full)
        if data.f is not None:
            r += assemble_load(V, data.f)
        if data.f_curl is not None:
            r += assemble_curl_load(V, data.f_curl)
        if data.P0 is not None:
            r -= assemble_boundary_normal_load(V, data.P0)
        if data.h is not None:
            r += assemble_boundary_normal_load(V, data.h)
        return self.T.T @ r

    def rhs_b(self, g, g_curl):
        V = self.V
        r = np.zeros(V.n_full)
        if g is not None:
            r += assemble_load(V, g)
        if g_curl is not None:
            r += assemble_curl_load(V, g_curl)
        return self.T.T @ r

    def h_load(self, h):
        return assemble_load(self.Q, h) if h is not None else np.zeros(self.nQ)

    def z_norm(self, u, b):
        """Product H1 norm of a pair of free coefficient vectors."""
        M = self.h1_mass
        return float(np.sqrt(max(u @ (M @ u) + b @ (M @ b), 0.0)))


@dataclass
class LinearizedProblem:
    """Linearized MHD problem on fixed operators; ``w`` and ``d`` are Fields on ``ops.V`` or None."""

    ops: MHDOperators
    data: MHDData = field(default_factory=MHDData)
    w: Field | None = None
    d: Field | None = None
    project_g: bool = True
    project_d: bool = False


@dataclass
class LinearizedSolution:
    u: Field
    b: Field
    P: Field
    chi: Field
    c: np.ndarray
    pi: Field
    gamma: np.ndarray
    report: SolveReport
    x: np.ndarray = field(repr=False, default=None)
    rhs: np.ndarray = field(repr=False, default=None)


def _check_constants(c, c_formula, label):
    c = np.atleast_1d(c)
    cf = np.atleast_1d(c_formula)
    if not len(c):
        return 0.0
    scale = np.maximum(np.maximum(np.abs(c), np.abs(cf)), 1e-300)
    err = np.abs(c - cf)
    rel = float(np.max(np.where(err == 0, 0.0, err / scale)))
    tiny = np.max(err) <= 1e-13
    if rel > 10 * CONSTANTS_RTOL and not tiny:
        raise ConstantsMismatch(f"{label}: multipliers {c} vs formula {cf} (rel {rel:.3e})")
    return 0.0 if tiny else rel


def constants_from_kernel_fields(ops, Fu, hQ, u_free, b_free, C, E):
    """c_i = Fu(z_i) - int pi_i h - (C u).z_i + (E b).z_i from the discrete kernel fields."""
    zs, pis = ops.kernel_fields
    out = np.empty(len(zs))
    for i, (z, pi) in enumerate(zip(zs, pis)):
        out[i] = z @ Fu - pi @ hQ - z @ (C @ u_free) + z @ (E @ b_free)
    return out


def constants_from_potentials(ops, data, u=None, b=None, w=None, d=None, degree=None):
    """Quadrature of <f, grad q_i> + int_Gamma (h - P0) grad q_i . n - int (curl w) x u . grad q_i
    + int (curl b) x d . grad q_i with the exact elementwise gradients of the discrete q_i."""
    basis = ops.basis
    I = basis.size
    if I == 0:
        return np.zeros(0)
    mesh = ops.mesh
    rule = quadrature_rule(degree or 2 * ops.degree + 4)
    G = evaluate_source(data.f, mesh, rule, 3)
    if w is not None and u is not None:
        G = G - np.cross(w.curl(rule), u.values(rule))
    if b is not None and d is not None:
        G = G + np.cross(b.curl(rule), d.values(rule))
    bq = boundary_quadrature(mesh, degree=2 * ops.degree + 4)
    s = evaluate_source_boundary(data.h, bq, 1)[..., 0] - evaluate_source_boundary(data.P0, bq, 1)[..., 0]
    out = kernel_pairings(basis, G, data.f_curl)
    for i, gq in enumerate(basis.grad_q):
        gn = np.einsum("tqc,tc->tq", gq.boundary_values(bq), bq.normals)
        out[i] += np.einsum("tq,tq,tq->", bq.weights, s, gn)
    return out


def _g_with_projection(ops, data, project, report):
    """Volume part of g after removing its kernel component (when requested)."""
    basis = ops.basis
    if basis.size == 0:
        return data.g
    pair = kernel_pairings(basis, data.g, data.g_curl)
    gram = np.array([[kernel_pairings(basis, Gj)[i] for Gj in basis.grad_q] for i in range(basis.size)])
    scale = np.sqrt(np.diag(gram)) * _source_l2(ops, data.g)
    report.extra["g_pairings_before"] = pair
    rel = np.abs(pair) / np.maximum(scale, 1e-300)
    if not project:
        if np.any(rel > COMPAT_RTOL) and np.any(np.abs(pair) > 1e-14):
            raise IncompatibleData(f"data g pairs with the harmonic kernel: {pair}")
        report.extra["g_pairings_after"] = pair
        return data.g
    beta = np.linalg.solve(gram, pair)
    terms = [data.g] if data.g is not None else []
    terms += [(-bi, Gi) for bi, Gi in zip(beta, basis.grad_q)]
    g_proj = SourceSum(terms)
    report.extra["g_pairings_after"] = kernel_pairings(basis, g_proj, data.g_curl)
    report.extra["g_projection_beta"] = beta
    return g_proj


def _source_l2(ops, src):
    rule = quadrature_rule(2 * ops.degree + 2)
    v = evaluate_source(src, ops.mesh, rule, 3)
    return float(np.sqrt(np.einsum("tq,tqc,tqc->", _weights(ops.mesh, rule), v, v)))


def _solve_block(K, rhs, label):
    t0 = time.perf_counter()
    x, info = solve_general(K, rhs, tol=1e-10, return_info=True)
    logger.debug("%s: %d unknowns, residual %.2e, %.2fs", label, K.shape[0], info.residual,
                 time.perf_counter() - t0)
    return x, info


def solve_stokes_SN(mesh, basis=None, f=None, h=None, P0=None, degree=2, f_curl=None, h_grad=None,
                    ops=None):
    """Stokes-type problem with pressure boundary data and flux constraints.

    Returns ``(u, P, c, report)``; P is recovered by the scalar splitting and
    the mixed multiplier is kept in ``report.extra['pi']``.
    """
    t0 = time.perf_counter()
    ops = ops or MHDOperators(mesh, degree, basis)
    data = MHDData(f=f, f_curl=f_curl, h=h, h_grad=h_grad, P0=P0)
    nV, nQ, I = ops.nV, ops.nQ, ops.I
    K = sp.bmat([[ops.A, -ops.Bu.T, ops.Phi.T if I else None],
                 [-ops.Bu, None, None],
                 [ops.Phi if I else None, None, None]], format="csc") if I else \
        sp.bmat([[ops.A, -ops.Bu.T], [-ops.Bu, None]], format="csc")
    Fu = ops.rhs_u(data)
    hQ = ops.h_load(h)
    rhs = np.concatenate([Fu, -hQ, np.zeros(I)])
    x, info = _solve_block(K, rhs, "stokes")
    u = Field.from_free(ops.V, x[:nV])
    pi = Field(ops.Q, x[nV:nV + nQ])
    c = x[nV + nQ:]
    report = SolveReport("stokes", dofs=K.shape[0], residual=info.residual)
    zero = sp.csr_matrix((nV, nV))
    c_formula = constants_from_kernel_fields(ops, Fu, hQ, x[:nV], np.zeros(nV), zero, zero)
    rel = _check_constants(c, c_formula, "stokes constants")
    report.constants = {"c": c, "c_formula": c_formula, "c_potential_formula":
                        constants_from_potentials(ops, data), "c_rel_mismatch": rel}
    P = recover_pressure(mesh, f, bc=PressureBC(P0, c), h=h, h_grad=h_grad, degree=ops.degree)
    report.extra["pi"] = pi
    report.extra["div_residual"] = float(np.linalg.norm(ops.Bu @ x[:nV] - hQ))
    report.seconds = time.perf_counter() - t0
    return u, P, c, report


def solve_elliptic_EN(mesh, basis=None, g=None, g_curl=None, degree=2, project=True, ops=None):
    """Curl-curl problem for b with zero divergence, tangential trace and fluxes.

    Returns ``(b, report)``.  Incompatible data are projected onto the
    orthogonal complement of the harmonic kernel unless ``project`` is False,
    in which case :class:`IncompatibleData` is raised.
    """
    t0 = time.perf_counter()
    ops = ops or MHDOperators(mesh, degree, basis)
    report = SolveReport("elliptic")
    g_eff = _g_with_projection(ops, MHDData(g=g, g_curl=g_curl), project, report)
    nV, nX, I = ops.nV, ops.nX, ops.I
    blocks = [[ops.A, -ops.Bb.T] + ([ops.Phi.T] if I else []),
              [-ops.Bb, None] + ([None] if I else [])]
    if I:
        blocks.append([ops.Phi, None, None])
    K = sp.bmat(blocks, format="csc")
    Gb = ops.rhs_b(g_eff, g_curl)
    rhs = np.concatenate([Gb, np.zeros(nX + I)])
    x, info = _solve_block(K, rhs, "elliptic")
    b = Field.from_free(ops.V, x[:nV])
    report.dofs = K.shape[0]
    report.residual = info.residual
    report.extra["chi_multiplier"] = Field.from_free(ops.X, x[nV:nV + nX])
    report.extra["chi"] = solve_chi(ops.mesh, g, degree=1)
    report.extra["gamma"] = x[nV + nX:]
    report.extra["div_residual"] = float(np.linalg.norm(ops.Bb @ x[:nV]))
    report.seconds = time.perf_counter() - t0
    return b, report


def assemble_coupled_matrix(ops, w=None, d=None):
    """Monolithic matrix of the linearized system in ``[u, b, pi, chi, c, gamma]`` ordering."""
    C, E = ops.coupling_blocks(w, d)
    I = ops.I
    Phi = ops.Phi if I else None
    rows = [
        [ops.A + C, -E, -ops.Bu.T, None, Phi.T if I else None, None],
        [E.T, ops.A, None, -ops.Bb.T, None, Phi.T if I else None],
        [-ops.Bu, None, None, None, None, None],
        [None, -ops.Bb, None, None, None, None],
    ]
    if I:
        rows.append([Phi, None, None, None, None, None])
        rows.append([None, Phi, None, None, None, None])
    else:
        rows = [r[:4] for r in rows]
    return _bmat(rows, ops), C, E


def assemble_dual_matrix(ops, w=None, d=None):
    """Galerkin matrix of the dual system in ``[v, a, theta, tau, beta, delta]`` ordering.

    The convective block changes sign on the v-equation and the coupling
    block changes sign on the a-equation; the result coincides with the
    transpose of :func:`assemble_coupled_matrix` with identity block permutation.
    """
    C, E = ops.coupling_blocks(w, d)
    I = ops.I
    Phi = ops.Phi if I else None
    rows = [
        [ops.A - C, E, -ops.Bu.T, None, Phi.T if I else None, None],
        [-E.T, ops.A, None, -ops.Bb.T, None, Phi.T if I else None],
        [-ops.Bu, None, None, None, None, None],
        [None, -ops.Bb, None, None, None, None],
    ]
    if I:
        rows.append([Phi, None, None, None, None, None])
        rows.append([None, Phi, None, None, None, None])
    else:
        rows = [r[:4] for r in rows]
    return _bmat(rows, ops)


def _bmat(rows, ops):
    sizes = [ops.nV, ops.nV, ops.nQ, ops.nX] + ([ops.I, ops.I] if ops.I else [])
    full = []
    for i, row in enumerate(rows):
        full.append([blk if blk is not None else sp.csr_matrix((sizes[i], sizes[j]))
                     for j, blk in enumerate(row)])
    return sp.bmat(full, format="csc")


def _split(ops, x):
    nV, nQ, nX, I = ops.nV, ops.nQ, ops.nX, ops.I
    cuts = np.cumsum([nV, nV, nQ, nX, I])
    return np.split(x, cuts)


def solve_linearized(problem, recover=True):
    """Solve the coupled linearized system; returns a :class:`LinearizedSolution`."""
    t0 = time.perf_counter()
    ops, data = problem.ops, problem.data
    w, d = problem.w, problem.d
    if problem.project_d and d is not None:
        d = project_divergence_free(ops, d)
    report = SolveReport("linearized")
    g_eff = _g_with_projection(ops, data, problem.project_g, report)
    K, C, E = assemble_coupled_matrix(ops, w, d)
    Fu = ops.rhs_u(data)
    Gb = ops.rhs_b(g_eff, data.g_curl)
    hQ = ops.h_load(data.h)
    I = ops.I
    rhs = np.concatenate([Fu, Gb, -hQ, np.zeros(ops.nX + 2 * I)])
    x, info = _solve_block(K, rhs, "linearized")
    xu, xb, xpi, xchi, c, gamma = _split(ops, x)
    u = Field.from_free(ops.V, xu)
    b = Field.from_free(ops.V, xb)
    pi = Field(ops.Q, xpi)
    chi = solve_chi(ops.mesh, data.g, degree=1)
    report.dofs = K.shape[0]
    report.residual = info.residual
    c_formula = constants_from_kernel_fields(ops, Fu, hQ, xu, xb, C, E)
    rel = _check_constants(c, c_formula, "linearized constants")
    report.constants = {"c": c, "c_formula": c_formula, "c_rel_mismatch": rel, "gamma": gamma}
    if I:
        report.constants["c_potential_formula"] = constants_from_potentials(ops, data, u, b, w, d)
    report.extra["chi_multiplier"] = Field.from_free(ops.X, xchi)
    report.extra["div_u_residual"] = float(np.linalg.norm(ops.Bu @ xu - hQ))
    report.extra["div_b_residual"] = float(np.linalg.norm(ops.Bb @ xb))
    report.extra["flux_u"] = ops.Phi @ xu if I else np.zeros(0)
    report.extra["flux_b"] = ops.Phi @ xb if I else np.zeros(0)
    P = None
    if recover:
        P = recover_pressure(ops.mesh, data.f, u=u, b=b, w=w, d=d, bc=PressureBC(data.P0, c),
                             h=data.h, h_grad=data.h_grad, degree=ops.degree)
    report.seconds = time.perf_counter() - t0
    return LinearizedSolution(u, b, P, chi, c, pi, gamma, report, x, rhs)


def project_divergence_free(ops, d):
    """Closest field (in the principal norm) to d that is discretely divergence and flux free."""
    nV, nX, I = ops.nV, ops.nX, ops.I
    M = ops.A
    blocks = [[M, -ops.Bb.T] + ([ops.Phi.T] if I else []), [-ops.Bb, None] + ([None] if I else [])]
    if I:
        blocks.append([ops.Phi, None, None])
    K = sp.bmat(blocks, format="csc")
    rhs = np.concatenate([M @ d.free, np.zeros(nX + I)])
    x, _ = _solve_block(K, rhs, "d projection")
    return Field.from_free(ops.V, x[:nV])


@dataclass
class DualSolution:
    v: Field
    a: Field
    theta: Field
    tau: Field
    beta: np.ndarray
    delta: np.ndarray
    report: SolveReport
    x: np.ndarray = field(repr=False, default=None)


def dual_rhs(ops, F=None, G=None, phi=None, F_curl=None, G_curl=None):
    S_u = ops.rhs_b(F, F_curl)
    S_b = ops.rhs_b(G, G_curl)
    return np.concatenate([S_u, S_b, -ops.h_load(phi), np.zeros(ops.nX + 2 * ops.I)])


def solve_dual(ops, w=None, d=None, F=None, G=None, phi=None, F_curl=None, G_curl=None):
    """Solve the dual system with data (F, G, phi) for the coefficient fields (w, d)."""
    t0 = time.perf_counter()
    K = assemble_dual_matrix(ops, w, d)
    rhs = dual_rhs(ops, F, G, phi, F_curl, G_curl)
    x, info = _solve_block(K, rhs, "dual")
    xv, xa, xth, xtau, beta, delta = _split(ops, x)
    report = SolveReport("dual", dofs=K.shape[0], residual=info.residual,
                         seconds=time.perf_counter() - t0)
    return DualSolution(Field.from_free(ops.V, xv), Field.from_free(ops.V, xa), Field(ops.Q, xth),
                        Field.from_free(ops.X, xtau), beta, delta, report, x)


def duality_gap(ops, primal, dual, F=None, G=None, phi=None):
    """Both sides of <u,F> + <b,G> - <P,phi> = <f,v> + <g,a> - int P0 v.n (h = 0).

    P is the mixed multiplier ``pi`` of the primal solve.  Returns
    ``(lhs, rhs, relative_gap)``.
    """
    lhs = float(primal.x @ dual_rhs(ops, F, G, phi))
    rhs = float(dual.x @ primal.rhs)
    gap = abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300)
    return lhs, rhs, gap
