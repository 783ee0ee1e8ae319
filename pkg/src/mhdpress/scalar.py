"""Scalar Poisson solves: divergence lifting, the chi multiplier and pressure recovery."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .assembly import (
    _weights,
    assemble_grad_load,
    assemble_load,
    assemble_mass,
    assemble_stiffness,
    evaluate_source,
)
from .exceptions import SolveFailure
from .fem import ConstrainedSpace, Field, elementwise_gradient
from .linalg import relative_residual, solve_spd
from .quadrature import quadrature_rule

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PressureBC:
    """Boundary pressure P0 (callable, number or None) plus one constant per interior component."""

    P0: object = None
    constants: np.ndarray = field(default_factory=lambda: np.zeros(0))


def _node_component(space):
    comp = np.full(space.n_nodes, -1)
    ct = space.mesh.component_of_tri
    for node, tr in space.boundary_node_tris.items():
        comp[node] = ct[tr[0]]
    return comp


def boundary_values(space, bc=None, offsets=None):
    """Nodal Dirichlet values: ``bc`` at boundary nodes plus ``offsets[k-1]`` on component k >= 1."""
    vals = np.zeros(space.n_nodes)
    nodes = np.array(sorted(space.boundary_node_tris))
    if bc is not None:
        if callable(bc):
            vals[nodes] = np.asarray(bc(space.node_coords[nodes]), dtype=float).reshape(-1)
        else:
            vals[nodes] = float(bc)
    if offsets is not None and len(offsets):
        comp = _node_component(space)
        for k, ck in enumerate(offsets, start=1):
            vals[comp == k] += ck
    return vals


def _solve_dirichlet(space, load, lifted, tol=1e-10):
    """Solve the Dirichlet-reduced Laplace system with nodal lift ``lifted``."""
    A = assemble_stiffness(space)
    T = space.T
    K = (T.T @ A @ T).tocsr()
    rhs = T.T @ (load - A @ lifted)
    x = solve_spd(K, rhs, tol=tol)
    res = relative_residual(K, x, rhs) if np.any(rhs) else 0.0
    if res > tol:
        raise SolveFailure(f"Dirichlet Poisson residual {res:.3e}")
    return Field(space, T @ x + lifted * space.fixed_nodes)


def solve_dirichlet_poisson(mesh, rhs=None, bc=None, degree=2, offsets=None):
    """Galerkin solution of Lap(theta) = rhs with theta = bc on the boundary.

    ``offsets`` adds a constant on each interior component, which realizes
    boundary data of the form P0 + c_i.
    """
    S = ConstrainedSpace(mesh, "scalar", degree, "dirichlet")
    lifted = boundary_values(S, bc, offsets)
    load = -assemble_load(S, rhs) if rhs is not None else np.zeros(S.n_full)
    return _solve_dirichlet(S, load, lifted)


@dataclass
class LiftingResult:
    """Divergence lifting w~ = grad(theta - sum beta_i q_i).

    ``field`` is the exact elementwise gradient (broken vector field);
    ``conforming`` its L2 projection onto the continuous vector space when
    requested (flagged by ``projected``).  Fluxes are variational:
    int grad s . grad lambda_k + int h lambda_k.
    """

    theta: Field
    potential: Field
    beta: np.ndarray
    field: Field
    fluxes: np.ndarray
    surface_fluxes: np.ndarray
    total_flux: float
    integral_h: float
    conforming: Field | None = None
    projected: bool = False


def divergence_lifting(mesh, basis, h=None, degree=None, conforming=False):
    """Curl-free field with divergence h and zero flux through every interior component."""
    degree = degree or max(basis.degree, 1)
    if basis.size and basis.degree != degree:
        raise ValueError("lifting degree must match the harmonic basis degree")
    theta = solve_dirichlet_poisson(mesh, h, 0.0, degree)
    S = ConstrainedSpace(mesh, "scalar", degree, "none")
    A = assemble_stiffness(S)
    hload = assemble_load(S, h) if h is not None else np.zeros(S.n_full)

    def var_flux(coeffs, lam, with_h):
        return float((A @ coeffs) @ lam + (hload @ lam if with_h else 0.0))

    I = mesh.n_internal
    lam = [basis.indicator(k) for k in range(I + 1)] if I else [_outer_indicator(S)]
    beta = np.array([var_flux(theta.coeffs, lam[i], True) for i in range(1, I + 1)])
    s = theta.coeffs.copy()
    for b, qi in zip(beta, basis.q):
        s -= b * qi.coeffs
    pot = Field(S, s)
    fluxes = np.array([var_flux(s, lam[k], True) for k in range(I + 1)])
    w = elementwise_gradient(pot)
    surf = np.array([w.flux(k, degree=2 * degree + 2) for k in range(I + 1)])
    rule = quadrature_rule(2 * degree + 2)
    ih = float(np.einsum("tq,tq->", _weights(mesh, rule), evaluate_source(h, mesh, rule, 1)[..., 0]))
    conf = None
    if conforming:
        V = ConstrainedSpace(mesh, "vector", degree, "none")
        M = assemble_mass(V)
        conf = Field(V, solve_spd(M, assemble_load(V, w, degree=2 * degree + 2)))
    return LiftingResult(theta, pot, beta, w, fluxes, surf, float(fluxes.sum()), ih, conf, conforming)


def _outer_indicator(S):
    lam = np.zeros(S.n_full)
    lam[list(S.boundary_node_tris)] = 1.0
    return lam


def solve_chi(mesh, g_volume=None, degree=1):
    """chi with Lap(chi) = div g, chi = 0 on the boundary, from int grad chi . grad mu = int g . grad mu."""
    S = ConstrainedSpace(mesh, "scalar", degree, "dirichlet")
    load = assemble_grad_load(S, g_volume, degree=2 * degree + 8) if g_volume is not None else np.zeros(S.n_full)
    return _solve_dirichlet(S, load, np.zeros(S.n_full))


def _cross_field_source(w, u, b, d):
    """Callable-free source values: -(curl w) x u + (curl b) x d at a rule."""
    def values(rule):
        out = 0.0
        if w is not None and u is not None:
            out = out - np.cross(w.curl(rule), u.values(rule))
        if b is not None and d is not None:
            out = out + np.cross(b.curl(rule), d.values(rule))
        return out
    return values


def recover_pressure(mesh, f_volume=None, u=None, b=None, w=None, d=None, bc=None,
                     h=None, h_grad=None, degree=2, return_parts=False):
    """Pressure P = P1 + P2 independent of the mixed solve.

    P1 vanishes on the boundary and solves
    int grad P1 . grad mu = int (F - (curl w) x u + (curl b) x d + grad h) . grad mu;
    P2 is the harmonic extension of P0 (outer) and P0 + c_i (interior).
    The curl part of f is orthogonal to gradients and does not enter.
    """
    bc = bc or PressureBC()
    S = ConstrainedSpace(mesh, "scalar", degree, "dirichlet")
    qdeg = 2 * degree + 4
    rule = quadrature_rule(qdeg)
    _, dphi = S.tabulate(rule)
    wq = _weights(mesh, rule)
    G = evaluate_source(f_volume, mesh, rule, 3)
    extra = _cross_field_source(w, u, b, d)(rule)
    G = G + extra
    if h is not None:
        if h_grad is not None:
            G = G + evaluate_source(h_grad, mesh, rule, 3)
        else:
            # conforming approximation of h, differentiated elementwise
            Sh = ConstrainedSpace(mesh, "scalar", degree, "none")
            hh = Field(Sh, solve_spd(assemble_mass(Sh), assemble_load(Sh, h, degree=qdeg)))
            G = G + elementwise_gradient(hh).values(rule)
    local = np.einsum("tq,tqj,tqaj->ta", wq, G, dphi, optimize=True)
    load = np.zeros(S.n_full)
    np.add.at(load, S.cell_dofs().ravel(), local.ravel())
    P1 = _solve_dirichlet(S, load, np.zeros(S.n_full))
    P2 = _solve_dirichlet(S, np.zeros(S.n_full), boundary_values(S, bc.P0, bc.constants))
    Sn = ConstrainedSpace(mesh, "scalar", degree, "none")
    P = Field(Sn, P1.coeffs + P2.coeffs)
    return (P, P1, P2) if return_parts else P
