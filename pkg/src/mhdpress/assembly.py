"""Element assembly of bilinear and linear forms.

Matrices are assembled on *full* dof indexing; callers restrict them with
``space.T``.  Vector basis functions are ``phi_a e_c`` with local index
``3 * a + c``.
"""
from __future__ import annotations

import logging

import numpy as np
import scipy.sparse as sp

from .exceptions import MeshMismatch
from .fem import Field, boundary_quadrature, geometry, physical_points
from .quadrature import quadrature_rule

logger = logging.getLogger(__name__)

LEVI = np.zeros((3, 3, 3))
LEVI[0, 1, 2] = LEVI[1, 2, 0] = LEVI[2, 0, 1] = 1.0
LEVI[0, 2, 1] = LEVI[2, 1, 0] = LEVI[1, 0, 2] = -1.0
# (X x D)_c with X = curl(phi e_d) = eps_{mjd} d_j phi:  sum_m eps_{cmn} eps_{mjd}
_CROSS_CURL = np.einsum("cmn,mjd->cnjd", LEVI, LEVI)


def _same_mesh(*spaces):
    m = spaces[0].mesh
    for s in spaces[1:]:
        if s.mesh is not m:
            raise MeshMismatch("spaces live on different meshes")


def _rule(spaces, degree):
    if degree is None:
        degree = max(s.quad_degree for s in spaces)
    return quadrature_rule(degree)


def _weights(mesh, rule):
    _, det = geometry(mesh)
    return det[:, None] * rule.weights[None, :]


def _scatter(row_dofs, col_dofs, local, shape):
    nt, nr = row_dofs.shape
    nc = col_dofs.shape[1]
    rows = np.broadcast_to(row_dofs[:, :, None], (nt, nr, nc)).ravel()
    cols = np.broadcast_to(col_dofs[:, None, :], (nt, nr, nc)).ravel()
    return sp.csr_matrix((local.ravel(), (rows, cols)), shape=shape)


def _vector_block(local5):
    nt, na, _, nb, _ = local5.shape
    return local5.reshape(nt, na * 3, nb * 3)


class SourceSum:
    """Linear combination ``sum c_k s_k`` of data sources."""

    def __init__(self, terms):
        self.terms = [t if isinstance(t, tuple) else (1.0, t) for t in terms if t is not None]

    def __repr__(self):
        return f"SourceSum({len(self.terms)} terms)"


def evaluate_source(src, mesh, rule, ncomp):
    """Values (nt, nq, ncomp) of a data source at the quadrature points.

    ``src`` may be None (zero), a number or array broadcastable to ``ncomp``,
    a :class:`Field`, or a callable mapping (N, 3) points to (N, ncomp) or (N,).
    """
    nt, nq = mesh.n_tets, len(rule)
    if src is None:
        return np.zeros((nt, nq, ncomp))
    if isinstance(src, SourceSum):
        out = np.zeros((nt, nq, ncomp))
        for c, s in src.terms:
            out += c * evaluate_source(s, mesh, rule, ncomp)
        return out
    if isinstance(src, Field):
        if src.space.mesh is not mesh:
            raise MeshMismatch("field lives on another mesh")
        return src.values(rule)
    if callable(src):
        pts = physical_points(mesh, rule.points).reshape(-1, 3)
        return np.asarray(src(pts), dtype=float).reshape(nt, nq, ncomp)
    return np.broadcast_to(np.asarray(src, dtype=float), (nt, nq, ncomp)).copy()


def evaluate_source_boundary(src, bq, ncomp):
    """Values (ntri, nq, ncomp) of a data source on boundary quadrature points."""
    shape = bq.points.shape[:2] + (ncomp,)
    if src is None:
        return np.zeros(shape)
    if isinstance(src, SourceSum):
        return sum((c * evaluate_source_boundary(s, bq, ncomp) for c, s in src.terms), np.zeros(shape))
    if isinstance(src, Field):
        return src.boundary_values(bq)
    if callable(src):
        return np.asarray(src(bq.points.reshape(-1, 3)), dtype=float).reshape(shape)
    return np.broadcast_to(np.asarray(src, dtype=float), shape).copy()


# ---------------------------------------------------------------- bilinear forms

def assemble_mass(space, degree=None):
    rule = _rule([space], degree)
    phi, _ = space.element.evaluate(rule.points)
    wq = _weights(space.mesh, rule)
    loc = np.einsum("tq,qa,qb->tab", wq, phi, phi, optimize=True)
    if space.ncomp == 3:
        loc = _vector_block(np.einsum("tab,cd->tacbd", loc, np.eye(3)))
    dofs = space.cell_dofs()
    return _scatter(dofs, dofs, loc, (space.n_full, space.n_full))


def assemble_stiffness(space, degree=None):
    """Gradient inner product; componentwise for vector spaces."""
    rule = _rule([space], degree)
    _, dphi = space.tabulate(rule)
    wq = _weights(space.mesh, rule)
    loc = np.einsum("tq,tqaj,tqbj->tab", wq, dphi, dphi, optimize=True)
    if space.ncomp == 3:
        loc = _vector_block(np.einsum("tab,cd->tacbd", loc, np.eye(3)))
    dofs = space.cell_dofs()
    return _scatter(dofs, dofs, loc, (space.n_full, space.n_full))


def assemble_h1_mass(space, degree=None):
    return (assemble_mass(space, degree) + assemble_stiffness(space, degree)).tocsr()


def assemble_curlcurl(space, degree=None):
    """Matrix of the form (u, v) -> int curl u . curl v."""
    rule = _rule([space], degree)
    _, dphi = space.tabulate(rule)
    wq = _weights(space.mesh, rule)
    s = np.einsum("tq,tqaj,tqbj->tab", wq, dphi, dphi, optimize=True)
    loc = np.einsum("tab,cd->tacbd", s, np.eye(3))
    loc -= np.einsum("tq,tqad,tqbc->tacbd", wq, dphi, dphi, optimize=True)
    dofs = space.cell_dofs()
    return _scatter(dofs, dofs, _vector_block(loc), (space.n_full, space.n_full))


def assemble_divdiv(space, degree=None):
    """Matrix of the form (u, v) -> int div u div v."""
    rule = _rule([space], degree)
    _, dphi = space.tabulate(rule)
    wq = _weights(space.mesh, rule)
    loc = np.einsum("tq,tqac,tqbd->tacbd", wq, dphi, dphi, optimize=True)
    dofs = space.cell_dofs()
    return _scatter(dofs, dofs, _vector_block(loc), (space.n_full, space.n_full))


def assemble_grad(space_s, space_v, degree=None):
    """Matrix B with (B v)_q = int psi_q div v, shape (n_full scalar, n_full vector)."""
    _same_mesh(space_s, space_v)
    rule = _rule([space_s, space_v], degree)
    psi, _ = space_s.element.evaluate(rule.points)
    _, dphi = space_v.tabulate(rule)
    wq = _weights(space_s.mesh, rule)
    loc = np.einsum("tq,qp,tqac->tpac", wq, psi, dphi, optimize=True)
    loc = loc.reshape(len(loc), psi.shape[1], -1)
    return _scatter(space_s.cell_dofs(), space_v.cell_dofs(), loc, (space_s.n_full, space_v.n_full))


def assemble_convection(space_v, w, degree=None):
    """Matrix C with v^T C u = int (curl w) x u . v."""
    if w.space.mesh is not space_v.mesh:
        raise MeshMismatch("coefficient field lives on another mesh")
    rule = _rule([space_v, w.space], degree)
    phi, _ = space_v.element.evaluate(rule.points)
    W = w.curl(rule)
    wq = _weights(space_v.mesh, rule)
    loc = np.einsum("tq,qa,qb,tqj,cjd->tacbd", wq, phi, phi, W, LEVI, optimize=True)
    dofs = space_v.cell_dofs()
    return _scatter(dofs, dofs, _vector_block(loc), (space_v.n_full, space_v.n_full))


def assemble_coupling(space_v, space_b, d, degree=None):
    """Matrix E with v^T E b = int (curl b) x d . v (rows: space_v, columns: space_b)."""
    _same_mesh(space_v, space_b)
    if d.space.mesh is not space_v.mesh:
        raise MeshMismatch("coefficient field lives on another mesh")
    rule = _rule([space_v, space_b, d.space], degree)
    phi, _ = space_v.element.evaluate(rule.points)
    _, dphi = space_b.tabulate(rule)
    D = d.values(rule)
    wq = _weights(space_v.mesh, rule)
    loc = np.einsum("tq,qa,cnjd,tqbj,tqn->tacbd", wq, phi, _CROSS_CURL, dphi, D, optimize=True)
    return _scatter(space_v.cell_dofs(), space_b.cell_dofs(), _vector_block(loc),
                    (space_v.n_full, space_b.n_full))


def assemble_awd(space_v, w, d, space_b=None, degree=None):
    """Blocks of the trilinear coupling form a_{w,d}.

    Returns ``(C, E, Et)`` such that, for full coefficient vectors,
    ``a_{w,d}((u,b),(v,Psi)) = v.C u - v.E b + Psi.Et u`` with
    ``Et = E.T``.
    """
    space_b = space_v if space_b is None else space_b
    C = assemble_convection(space_v, w, degree)
    E = assemble_coupling(space_v, space_b, d, degree)
    return C, E, E.T.tocsr()


def awd_value(space_v, w, d, u, b, v, psi, degree=None):
    """Direct quadrature of a_{w,d}((u,b),(v,psi)) for full coefficient vectors."""
    fs = lambda c: Field(space_v, c)
    rule = _rule([space_v, w.space, d.space], degree)
    wq = _weights(space_v.mesh, rule)
    W, D = w.curl(rule), d.values(rule)
    U, V = fs(u).values(rule), fs(v).values(rule)
    cb, cpsi = fs(b).curl(rule), fs(psi).curl(rule)
    val = np.einsum("tq,tqc,tqc->", wq, np.cross(W, U), V)
    val += np.einsum("tq,tqc,tqc->", wq, np.cross(cpsi, D), U)
    val -= np.einsum("tq,tqc,tqc->", wq, np.cross(cb, D), V)
    return float(val)


# ---------------------------------------------------------------- linear forms

def _scatter_vec(space, local):
    out = np.zeros(space.n_full)
    np.add.at(out, space.cell_dofs().ravel(), local.reshape(-1))
    return out


def assemble_load(space, source, degree=None):
    """Vector with entries int F . phi_k (or int s phi_k for scalar spaces)."""
    rule = _rule([space], degree)
    if isinstance(source, Field):
        rule = _rule([space, source.space], degree)
    phi, _ = space.element.evaluate(rule.points)
    vals = evaluate_source(source, space.mesh, rule, space.ncomp)
    wq = _weights(space.mesh, rule)
    return _scatter_vec(space, np.einsum("tq,qa,tqc->tac", wq, phi, vals, optimize=True))


def assemble_curl_load(space_v, psi, degree=None):
    """Vector with entries int psi . curl phi_k."""
    rule = _rule([space_v], degree)
    _, dphi = space_v.tabulate(rule)
    vals = evaluate_source(psi, space_v.mesh, rule, 3)
    wq = _weights(space_v.mesh, rule)
    return _scatter_vec(space_v, np.einsum("tq,tqi,ijc,tqaj->tac", wq, vals, LEVI, dphi, optimize=True))


def assemble_grad_load(space_s, G, degree=None):
    """Vector with entries int G . grad mu_k for a scalar space."""
    rule = _rule([space_s], degree)
    if isinstance(G, Field):
        rule = _rule([space_s, G.space], degree)
    _, dphi = space_s.tabulate(rule)
    vals = evaluate_source(G, space_s.mesh, rule, 3)
    wq = _weights(space_s.mesh, rule)
    return _scatter_vec(space_s, np.einsum("tq,tqj,tqaj->ta", wq, vals, dphi, optimize=True))


def assemble_boundary_normal_load(space_v, s, tris=None, degree=None):
    """Vector with entries int_Gamma s phi_k . n over the given boundary triangles.

    ``s`` is a scalar source or an array (ntri, nq) of values at the boundary points.
    """
    mesh = space_v.mesh
    bq = boundary_quadrature(mesh, tris, degree or space_v.quad_degree)
    if isinstance(s, np.ndarray) and s.shape == bq.weights.shape:
        vals = s
    else:
        vals = evaluate_source_boundary(s, bq, 1)[..., 0]
    out = np.zeros(space_v.n_full)
    for f in range(4):
        sel = np.flatnonzero(bq.local_faces == f)
        if not len(sel):
            continue
        phi, _ = space_v.element.evaluate(bq.bary[sel[0]])
        loc = np.einsum("tq,tq,qa,tc->tac", bq.weights[sel], vals[sel], phi, bq.normals[sel])
        np.add.at(out, space_v.cell_dofs()[bq.owners[sel]].ravel(), loc.ravel())
    return out


def assemble_rhs_functional(space_v, f_volume=None, f_curl=None, P0=None, c=None, degree=None):
    """Entries int F.phi + int psi.curl phi - int_Gamma (P0 + c) phi.n.

    ``c`` holds one constant per interior component (c = 0 on the outer one).
    """
    out = np.zeros(space_v.n_full)
    if f_volume is not None:
        out += assemble_load(space_v, f_volume, degree)
    if f_curl is not None:
        out += assemble_curl_load(space_v, f_curl, degree)
    if P0 is not None:
        out -= assemble_boundary_normal_load(space_v, P0, degree=degree)
    if c is not None:
        mesh = space_v.mesh
        for i, ci in enumerate(np.atleast_1d(c), start=1):
            if ci:
                out -= ci * assemble_boundary_normal_load(space_v, 1.0, mesh.tris_of_component(i), degree)
    return out
