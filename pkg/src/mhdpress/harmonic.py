"""Gradients of the harmonic potentials q_i spanning the normal harmonic kernel.

Each q_i vanishes on the outer boundary, is an unknown constant on every
interior component, and has unit flux through component i and zero flux
through the other interior components.  The unknown constants are single
grouped dofs, so one factorization serves all i.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .assembly import _weights, assemble_mass, assemble_stiffness, evaluate_source
from .exceptions import SingularGram, SolveFailure
from .fem import ConstrainedSpace, Field, elementwise_gradient
from .linalg import solve_spd
from .linalg import _splu
from .quadrature import quadrature_rule

logger = logging.getLogger(__name__)


@dataclass
class HarmonicBasis:
    """Kernel basis data.

    Attributes
    ----------
    q : list of Field
        Scalar potentials in the grouped-dof space.
    grad_q : list of Field
        Exact elementwise gradients (broken vector fields of degree - 1).
    flux_matrix : ndarray (I, I)
        Variational fluxes F[i, k] = int grad q_i . grad lambda_k.
    outer_flux : ndarray (I,)
        Variational flux of grad q_i through the outer component.
    surface_flux : ndarray (I, I + 1)
        Surface-quadrature fluxes of grad q_i through every component (diagnostic).
    boundary_constants : ndarray (I, I + 1)
        Value of q_i on every component (column 0 is the outer one).
    """

    mesh: object
    degree: int
    space: ConstrainedSpace | None
    q: list = field(default_factory=list)
    grad_q: list = field(default_factory=list)
    flux_matrix: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    outer_flux: np.ndarray = field(default_factory=lambda: np.zeros(0))
    surface_flux: np.ndarray = field(default_factory=lambda: np.zeros((0, 1)))
    boundary_constants: np.ndarray = field(default_factory=lambda: np.zeros((0, 1)))
    _projections: dict = field(default_factory=dict, repr=False)

    @property
    def size(self):
        return len(self.q)

    def indicator(self, k):
        """Full coefficient vector of the nodal indicator lift of component k."""
        lam = np.zeros(self.space.n_full)
        if k == 0:
            nodes = [n for n, tr in self.space.boundary_node_tris.items()
                     if self.mesh.component_of_tri[tr[0]] == 0]
            lam[nodes] = 1.0
        else:
            lam[self.space.grouped_nodes[k - 1]] = 1.0
        return lam

    def projected(self, space):
        """L2 projections of grad q_i onto a continuous vector space (cached per space)."""
        key = id(space)
        if key not in self._projections:
            M = space.T.T @ assemble_mass(space) @ space.T
            rhs = [space.T.T @ _load_field(space, g) for g in self.grad_q]
            fields = [Field.from_free(space, solve_spd(M, r)) for r in rhs]
            self._projections[key] = (space, fields)
        return self._projections[key][1]


def _load_field(space, g):
    from .assembly import assemble_load
    return assemble_load(space, g, degree=space.quad_degree + g.space.quad_degree)


def compute_harmonic_basis(mesh, degree=1):
    """Solve for the potentials q_i, i = 1..I, with grouped boundary dofs.

    Raises
    ------
    SolveFailure
        When the grouped Laplace system cannot be solved.
    """
    I = mesh.n_internal
    if I == 0:
        return HarmonicBasis(mesh, degree, None)
    S = ConstrainedSpace(mesh, "scalar", degree, "floating")
    A = assemble_stiffness(S)
    K = (S.T.T @ A @ S.T).tocsc()
    n = K.shape[0]
    group_cols = np.arange(n - I, n)
    try:
        lu = _splu(K, symmetric=False)
    except SolveFailure as exc:
        raise SolveFailure(f"harmonic potentials: {exc}") from exc
    q, grads = [], []
    flux = np.zeros((I, I))
    outer = np.zeros(I)
    consts = np.zeros((I, I + 1))
    lam0 = None
    for i in range(I):
        rhs = np.zeros(n)
        rhs[group_cols[i]] = 1.0
        x = lu.solve(rhs)
        res = np.linalg.norm(K @ x - rhs)
        if not np.isfinite(res) or res > 1e-8:
            raise SolveFailure(f"harmonic potential {i + 1}: residual {res:.3e}")
        qi = Field.from_free(S, x)
        Aq = A @ qi.coeffs
        flux[i] = (K @ x)[group_cols]
        basis_tmp = HarmonicBasis(mesh, degree, S)
        if lam0 is None:
            lam0 = basis_tmp.indicator(0)
        outer[i] = Aq @ lam0
        consts[i, 1:] = x[group_cols]
        q.append(qi)
        grads.append(elementwise_gradient(qi))
    surface = np.array([[g.flux(k, degree=2 * degree + 2) for k in range(I + 1)] for g in grads])
    logger.info("harmonic basis: I=%d, flux matrix diag %s", I, np.diag(flux))
    return HarmonicBasis(mesh, degree, S, q, grads, flux, outer, surface, consts)


def kernel_pairings(basis, g_volume=None, g_curlpart=None, degree=None):
    """Pairings <g, grad q_i> for g = g_volume + curl(g_curlpart).

    The curl part contributes int psi . curl(grad q_i), computed from the
    elementwise curl of the gradient fields; it is checked to vanish.
    """
    I = basis.size
    if I == 0:
        return np.zeros(0)
    mesh = basis.mesh
    rule = quadrature_rule(degree or 2 * basis.degree + 4)
    wq = _weights(mesh, rule)
    G = evaluate_source(g_volume, mesh, rule, 3)
    out = np.empty(I)
    for i, gq in enumerate(basis.grad_q):
        vals = gq.values(rule)
        out[i] = np.einsum("tq,tqc,tqc->", wq, G, vals)
        if g_curlpart is not None:
            psi = evaluate_source(g_curlpart, mesh, rule, 3)
            curl_part = np.einsum("tq,tqc,tqc->", wq, psi, gq.curl(rule))
            scale = np.sqrt(np.einsum("tq,tqc,tqc->", wq, psi, psi) * np.einsum("tq,tqc,tqc->", wq, vals, vals))
            if abs(curl_part) > 1e-10 * max(scale, 1e-300):
                raise SolveFailure(f"curl of kernel gradient {i + 1} does not vanish ({curl_part:.3e})")
            out[i] += curl_part
    return out


def kernel_project(basis, g):
    """Remove the kernel component of a vector field: g - sum_i beta_i G_i.

    For a continuous vector space G_i is the L2 projection of grad q_i onto
    it; for broken spaces of matching degree the gradients themselves are
    used.  The Gram matrix <G_j, grad q_i> makes every pairing of the
    result vanish.
    """
    I = basis.size
    if I == 0:
        return Field(g.space, g.coeffs.copy())
    if g.space.continuous:
        G = basis.projected(g.space)
    else:
        if g.space.degree != basis.degree - 1:
            raise ValueError("broken field degree must match the kernel gradient degree")
        G = basis.grad_q
    gram = np.array([[kernel_pairings(basis, Gj)[i] for Gj in G] for i in range(I)])
    pair = kernel_pairings(basis, g)
    cond = np.linalg.cond(gram)
    if not np.isfinite(cond) or cond > 1e12:
        raise SingularGram(f"kernel Gram matrix is singular (cond {cond:.3e})")
    beta = np.linalg.solve(gram, pair)
    out = g.coeffs - sum(b * Gj.coeffs for b, Gj in zip(beta, G))
    return Field(g.space, out)
