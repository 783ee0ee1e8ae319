"""Lagrange elements, constrained spaces and fields on tetrahedral meshes.

A :class:`ConstrainedSpace` stores coefficients in *full* indexing (every
node, every component) and carries a sparse reduction map ``T`` from the
free unknowns to the full vector.  Essential conditions (Dirichlet data,
vanishing tangential trace, grouped boundary potentials) live in ``T``;
flux conditions on interior boundary components are kept as separate rows
so that their multipliers can be recovered.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np
import scipy.sparse as sp

from .exceptions import MeshMismatch, UnsupportedDegree
from .mesh import LOCAL_EDGES, LOCAL_FACES, boundary_entity_normals
from .quadrature import triangle_rule

logger = logging.getLogger(__name__)

BC_KINDS = ("none", "dirichlet", "tangential_zero", "tangential_zero_with_flux", "floating")

_GRAD_BARY = np.array([[-1.0, -1.0, -1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])


class LagrangeElement:
    """Scalar Lagrange shape functions of degree 0, 1 or 2, optionally with the cubic bubble."""

    def __init__(self, degree, bubble=False):
        if degree not in (0, 1, 2):
            raise UnsupportedDegree(f"Lagrange degree {degree} is not implemented")
        self.degree = degree
        self.bubble = bubble

    def __repr__(self):
        return f"LagrangeElement(P{self.degree}{'+bubble' if self.bubble else ''})"

    @property
    def n_local(self):
        return {0: 1, 1: 4, 2: 10}[self.degree] + int(self.bubble)

    @property
    def nodes(self):
        """Barycentric coordinates of the local nodes (bubble node at the centroid)."""
        if self.degree == 0:
            pts = [np.full(4, 0.25)]
        else:
            pts = list(np.eye(4))
            if self.degree == 2:
                for i, j in LOCAL_EDGES:
                    m = np.zeros(4)
                    m[i] = m[j] = 0.5
                    pts.append(m)
        if self.bubble:
            pts.append(np.full(4, 0.25))
        return np.array(pts)

    def evaluate(self, bary):
        """Values (nq, nloc) and reference gradients (nq, nloc, 3) at barycentric points."""
        lam = np.atleast_2d(np.asarray(bary, dtype=float))
        nq = len(lam)
        vals, grads = [], []
        if self.degree == 0:
            vals.append(np.ones(nq))
            grads.append(np.zeros((nq, 3)))
        elif self.degree == 1:
            for i in range(4):
                vals.append(lam[:, i])
                grads.append(np.broadcast_to(_GRAD_BARY[i], (nq, 3)))
        else:
            for i in range(4):
                vals.append(lam[:, i] * (2.0 * lam[:, i] - 1.0))
                grads.append((4.0 * lam[:, i] - 1.0)[:, None] * _GRAD_BARY[i])
            for i, j in LOCAL_EDGES:
                vals.append(4.0 * lam[:, i] * lam[:, j])
                grads.append(4.0 * (lam[:, j, None] * _GRAD_BARY[i] + lam[:, i, None] * _GRAD_BARY[j]))
        if self.bubble:
            prod = 256.0 * lam.prod(axis=1)
            g = np.zeros((nq, 3))
            for i in range(4):
                others = np.prod(np.delete(lam, i, axis=1), axis=1)
                g += 256.0 * others[:, None] * _GRAD_BARY[i]
            vals.append(prod)
            grads.append(g)
        return np.stack(vals, axis=1), np.stack([np.asarray(g) for g in grads], axis=1)


@lru_cache(maxsize=None)
def _geometry(mesh):
    J = mesh.jacobians
    return np.linalg.inv(J), np.abs(np.linalg.det(J))


def geometry(mesh):
    """Inverse Jacobians (nt, 3, 3) and |det J| (nt,) of the affine maps."""
    return _geometry(mesh)


def physical_points(mesh, bary):
    """Physical coordinates (nt, nq, 3) of barycentric points in every tet."""
    return np.einsum("qi,tid->tqd", bary, mesh.vertices[mesh.tets])


@dataclass(frozen=True)
class BoundaryQuadrature:
    """Quadrature on a set of boundary triangles, expressed in their owning tets."""

    tris: np.ndarray          # boundary triangle indices
    owners: np.ndarray        # owning tet per triangle
    local_faces: np.ndarray   # local face index per triangle
    bary: np.ndarray          # (ntri, nq, 4) barycentric coords in the owner
    points: np.ndarray        # (ntri, nq, 3)
    weights: np.ndarray       # (ntri, nq) physical surface weights
    normals: np.ndarray       # (ntri, 3) outward unit normals


def boundary_quadrature(mesh, tris=None, degree=6):
    if tris is None:
        tris = np.arange(len(mesh.boundary_tris))
    tris = np.asarray(tris, dtype=np.int64)
    rule = triangle_rule(degree)
    owners = mesh.tri_owner[tris]
    faces = mesh.tri_local_face[tris]
    nq = len(rule)
    bary = np.zeros((len(tris), nq, 4))
    for f in range(4):
        sel = faces == f
        b = np.zeros((nq, 4))
        b[:, LOCAL_FACES[f]] = rule.points
        bary[sel] = b
    pts = np.einsum("tqi,tid->tqd", bary, mesh.vertices[mesh.tets[owners]])
    weights = rule.weights[None, :] * 2.0 * mesh.tri_areas[tris][:, None]
    return BoundaryQuadrature(tris, owners, faces, bary, pts, weights, mesh.tri_normals[tris])


class ConstrainedSpace:
    """Lagrange finite-element space with essential constraints.

    Parameters
    ----------
    mesh : Mesh
    kind : {"scalar", "vector"}
    degree : int
        Polynomial degree (1 or 2 for continuous spaces, 0..2 for discontinuous).
    bc : str
        One of ``BC_KINDS``.  ``dirichlet`` fixes every node on the components
        listed in ``components`` (default: all); ``floating`` fixes component 0
        and ties each interior component to a single grouped unknown.
    bubble : bool
        Enrich with the interior cubic bubble (MINI element).
    continuous : bool
        False gives a broken (elementwise) space without constraints.
    """

    def __init__(self, mesh, kind="scalar", degree=1, bc="none", components=None,
                 bubble=False, continuous=True):
        if kind not in ("scalar", "vector"):
            raise ValueError(f"unknown value kind {kind!r}")
        if bc not in BC_KINDS:
            raise ValueError(f"unknown boundary condition {bc!r}")
        if continuous and degree not in (1, 2):
            raise UnsupportedDegree(f"continuous Lagrange degree must be 1 or 2, got {degree}")
        if not continuous and bc != "none":
            raise ValueError("broken spaces carry no boundary conditions")
        if kind == "scalar" and bc.startswith("tangential"):
            raise ValueError("tangential conditions need a vector space")
        if kind == "vector" and bc == "floating":
            raise ValueError("grouped potentials need a scalar space")
        self.mesh = mesh
        self.kind = kind
        self.degree = degree
        self.bc = bc
        self.bubble = bubble
        self.continuous = continuous
        self.element = LagrangeElement(degree, bubble)
        self.ncomp = 3 if kind == "vector" else 1
        if components is None:
            components = range(mesh.n_components)
        self.components = tuple(sorted(components))
        self._build_nodes()
        self._build_constraints()

    def __repr__(self):
        fam = f"P{self.degree}{'+b' if self.bubble else ''}{'' if self.continuous else '-DG'}"
        return (f"ConstrainedSpace({self.kind}, {fam}, bc={self.bc}, "
                f"full={self.n_full}, free={self.n_free}, flux_rows={self.n_flux})")

    # ------------------------------------------------------------ numbering
    def _build_nodes(self):
        mesh = self.mesh
        nt = mesh.n_tets
        nloc = self.element.n_local
        bary = self.element.nodes
        if not self.continuous:
            self.cell_nodes = np.arange(nt * nloc).reshape(nt, nloc)
            self.n_nodes = nt * nloc
            self.node_coords = physical_points(mesh, bary).reshape(-1, 3)
            return
        nv = mesh.n_vertices
        cols = [mesh.tets]
        n = nv
        if self.degree == 2:
            cols.append(nv + mesh.tet_edges)
            n += len(mesh.edges)
        if self.bubble:
            cols.append((n + np.arange(nt))[:, None])
            n += nt
        self.cell_nodes = np.concatenate(cols, axis=1)
        self.n_nodes = n
        coords = np.empty((n, 3))
        coords[:nv] = mesh.vertices
        if self.degree == 2:
            e = mesh.edges
            coords[nv:nv + len(e)] = 0.5 * (mesh.vertices[e[:, 0]] + mesh.vertices[e[:, 1]])
        if self.bubble:
            coords[n - nt:] = mesh.vertices[mesh.tets].mean(axis=1)
        self.node_coords = coords

    @cached_property
    def boundary_node_tris(self):
        """Dict node -> array of boundary triangles whose closure contains the node."""
        mesh = self.mesh
        out = {}
        tris = mesh.boundary_tris
        for k, t in enumerate(tris):
            for v in t:
                out.setdefault(int(v), []).append(k)
        if self.degree == 2 and self.continuous:
            nv = mesh.n_vertices
            e = mesh.edges
            key = e[:, 0] * nv + e[:, 1]
            for k, t in enumerate(tris):
                for a, b in ((t[0], t[1]), (t[1], t[2]), (t[0], t[2])):
                    i, j = min(a, b), max(a, b)
                    eid = int(np.searchsorted(key, i * nv + j))
                    out.setdefault(nv + eid, []).append(k)
        return {n: np.array(v) for n, v in out.items()}

    @property
    def n_full(self):
        return self.n_nodes * self.ncomp

    @property
    def n_free(self):
        return self.T.shape[1]

    @property
    def n_flux(self):
        return self.flux_rows.shape[0]

    @property
    def quad_degree(self):
        return 2 * self.degree + 2 + (2 if self.bubble else 0)

    # ------------------------------------------------------------ constraints
    def _build_constraints(self):
        n_full = self.n_full
        nc = self.ncomp
        fixed = np.zeros(self.n_nodes, dtype=bool)
        normal_nodes = {}
        grouped = []
        mesh = self.mesh
        if self.continuous and self.bc != "none":
            bnt = self.boundary_node_tris
            comp = mesh.component_of_tri
            if self.bc == "dirichlet":
                for node, tr in bnt.items():
                    if np.any(np.isin(comp[tr], self.components)):
                        fixed[node] = True
            elif self.bc == "floating":
                groups = {k: [] for k in range(1, mesh.n_components)}
                for node, tr in bnt.items():
                    c = int(comp[tr[0]])
                    fixed[node] = True
                    if c > 0:
                        groups[c].append(node)
                grouped = [np.array(sorted(groups[k])) for k in sorted(groups)]
            else:
                nodes = list(bnt)
                clusters = boundary_entity_normals(mesh, [bnt[n] for n in nodes])
                for node, cl in zip(nodes, clusters):
                    fixed[node] = True
                    if len(cl) == 1:
                        normal_nodes[node] = cl[0]
        self.fixed_nodes = fixed
        self.normal_nodes = normal_nodes
        self.grouped_nodes = grouped

        rows, cols, vals = [], [], []
        free_nodes = np.flatnonzero(~fixed)
        # identity block for unconstrained nodes, all components
        idx = (free_nodes[:, None] * nc + np.arange(nc)[None, :]).ravel()
        rows.append(idx)
        cols.append(np.arange(len(idx)))
        vals.append(np.ones(len(idx)))
        col = len(idx)
        if normal_nodes:
            nn = np.array(sorted(normal_nodes))
            nv = np.array([normal_nodes[n] for n in nn])
            rows.append((nn[:, None] * 3 + np.arange(3)[None, :]).ravel())
            cols.append(np.repeat(col + np.arange(len(nn)), 3))
            vals.append(nv.ravel())
            col += len(nn)
        for g in grouped:
            rows.append(g)
            cols.append(np.full(len(g), col))
            vals.append(np.ones(len(g)))
            col += 1
        self.T = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                               shape=(n_full, col))
        if self.bc == "tangential_zero_with_flux":
            self.flux_rows = self._assemble_flux_rows()
        else:
            self.flux_rows = sp.csr_matrix((0, n_full))

    def _assemble_flux_rows(self):
        """Rows of the functionals v -> <v.n, 1>_{Gamma_i}, i >= 1, on full dofs."""
        mesh = self.mesh
        I = mesh.n_internal
        rows, cols, vals = [], [], []
        for i in range(1, I + 1):
            bq = boundary_quadrature(mesh, mesh.tris_of_component(i), self.quad_degree)
            phi = np.stack([self.element.evaluate(b)[0] for b in bq.bary])  # (ntri, nq, nloc)
            loc = np.einsum("tq,tql->tl", bq.weights, phi)
            nodes = self.cell_nodes[bq.owners]
            for c in range(3):
                rows.append(np.full(nodes.size, i - 1))
                cols.append((nodes * 3 + c).ravel())
                vals.append((loc * bq.normals[:, c:c + 1]).ravel())
        if not rows:
            return sp.csr_matrix((0, self.n_full))
        return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(I, self.n_full))

    @property
    def flux_rows_free(self):
        return (self.flux_rows @ self.T).tocsr()

    # ------------------------------------------------------------ dof helpers
    def cell_dofs(self):
        """(nt, nloc*ncomp) full-dof indices ordered node-major, component-minor."""
        nc = self.ncomp
        return (self.cell_nodes[:, :, None] * nc + np.arange(nc)[None, None, :]).reshape(len(self.cell_nodes), -1)

    def reduce(self, full):
        """Least-squares free coefficients of a full vector (exact for admissible vectors)."""
        TT = (self.T.T @ self.T).tocsc()
        return sp.linalg.spsolve(TT, self.T.T @ full) if self.n_free else np.zeros(0)

    def expand(self, free):
        return self.T @ free

    def check_mesh(self, other):
        if other.mesh is not self.mesh:
            raise MeshMismatch("spaces live on different meshes")

    def tabulate(self, rule):
        """Values (nq, nloc) and physical gradients (nt, nq, nloc, 3) at a tet rule."""
        phi, gref = self.element.evaluate(rule.points)
        invJ, _ = geometry(self.mesh)
        return phi, np.einsum("qlk,tkj->tqlj", gref, invJ)


def build_space(mesh, kind, degree, bc_spec="none", **kwargs):
    """Construct a :class:`ConstrainedSpace`; ``bc_spec`` may be a string or a
    ``("dirichlet", components)`` pair."""
    if isinstance(bc_spec, tuple):
        bc, comps = bc_spec
        return ConstrainedSpace(mesh, kind, degree, bc, components=comps, **kwargs)
    return ConstrainedSpace(mesh, kind, degree, bc_spec, **kwargs)


class Field:
    """Coefficient array over a :class:`ConstrainedSpace`, in full-dof indexing."""

    def __init__(self, space, coeffs=None):
        self.space = space
        if coeffs is None:
            coeffs = np.zeros(space.n_full)
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape != (space.n_full,):
            raise ValueError(f"expected {space.n_full} coefficients, got {coeffs.shape}")
        self.coeffs = coeffs

    def __repr__(self):
        return f"Field({self.space!r})"

    @classmethod
    def from_free(cls, space, free):
        return cls(space, space.T @ np.asarray(free, dtype=float))

    @property
    def free(self):
        return self.space.reduce(self.coeffs)

    @property
    def mesh(self):
        return self.space.mesh

    def nodal(self):
        """Coefficients reshaped to (n_nodes, ncomp)."""
        return self.coeffs.reshape(-1, self.space.ncomp)

    def __add__(self, other):
        self.space.check_mesh(other.space)
        return Field(self.space, self.coeffs + other.coeffs)

    def __sub__(self, other):
        return Field(self.space, self.coeffs - other.coeffs)

    def __mul__(self, s):
        return Field(self.space, self.coeffs * s)

    __rmul__ = __mul__

    def _local(self):
        return self.coeffs[self.space.cell_dofs()].reshape(self.mesh.n_tets, -1, self.space.ncomp)

    def eval_bary(self, bary):
        """Values (nt, nq, ncomp) at the same barycentric points in every tet."""
        phi, _ = self.space.element.evaluate(bary)
        return np.einsum("ql,tlc->tqc", phi, self._local())

    def values(self, rule):
        return self.eval_bary(rule.points)

    def gradients(self, rule):
        """Gradients (nt, nq, ncomp, 3)."""
        _, dphi = self.space.tabulate(rule)
        return np.einsum("tqlj,tlc->tqcj", dphi, self._local())

    def curl(self, rule):
        g = self.gradients(rule)
        return np.stack([g[..., 2, 1] - g[..., 1, 2], g[..., 0, 2] - g[..., 2, 0],
                         g[..., 1, 0] - g[..., 0, 1]], axis=-1)

    def div(self, rule):
        g = self.gradients(rule)
        return g[..., 0, 0] + g[..., 1, 1] + g[..., 2, 2]

    def boundary_values(self, bq):
        """Values (ntri, nq, ncomp) on a :class:`BoundaryQuadrature`, taken from the owning tets."""
        loc = self._local()[bq.owners]
        out = np.empty(bq.bary.shape[:2] + (self.space.ncomp,))
        for f in range(4):
            sel = np.flatnonzero(bq.local_faces == f)
            if len(sel):
                phi, _ = self.space.element.evaluate(bq.bary[sel[0]])
                out[sel] = np.einsum("ql,tlc->tqc", phi, loc[sel])
        return out

    def boundary_gradients(self, bq):
        loc = self._local()[bq.owners]
        invJ, _ = geometry(self.mesh)
        out = np.empty(bq.bary.shape[:2] + (self.space.ncomp, 3))
        for f in range(4):
            sel = np.flatnonzero(bq.local_faces == f)
            if len(sel):
                _, gref = self.space.element.evaluate(bq.bary[sel[0]])
                dphi = np.einsum("qlk,tkj->tqlj", gref, invJ[bq.owners[sel]])
                out[sel] = np.einsum("tqlj,tlc->tqcj", dphi, loc[sel])
        return out

    def flux(self, k, degree=None):
        """Surface integral of v.n over boundary component k (vector fields)."""
        bq = boundary_quadrature(self.mesh, self.mesh.tris_of_component(k),
                                 degree or self.space.quad_degree)
        v = self.boundary_values(bq)
        return float(np.einsum("tq,tqc,tc->", bq.weights, v, bq.normals))


def interpolate(space, fn):
    """Nodal interpolant of ``fn`` (callable on (N, 3) points) made admissible for ``space``.

    Normal-only nodes keep the normal component; fixed nodes get the value
    of ``fn`` for Dirichlet/none spaces and zero for tangential spaces.
    """
    vals = np.asarray(fn(space.node_coords), dtype=float).reshape(space.n_nodes, space.ncomp)
    if space.bc.startswith("tangential"):
        out = np.zeros_like(vals)
        free = ~space.fixed_nodes
        out[free] = vals[free]
        for node, n in space.normal_nodes.items():
            out[node] = np.dot(vals[node], n) * n
        vals = out
    if space.bubble and space.continuous:
        # the bubble carries only the remainder over the Lagrange part at the centroid
        centroid = np.full((1, 4), 0.25)
        phi, _ = LagrangeElement(space.degree).evaluate(centroid)
        cells = space.cell_nodes
        lagrange_at_c = np.einsum("l,tlc->tc", phi[0], vals[cells[:, :-1]])
        vals[cells[:, -1]] -= lagrange_at_c
    return Field(space, vals.ravel())


def elementwise_gradient(field):
    """Exact elementwise gradient of a continuous scalar field as a broken vector field."""
    sp_ = field.space
    if sp_.kind != "scalar":
        raise ValueError("elementwise_gradient expects a scalar field")
    if sp_.bubble:
        raise UnsupportedDegree("gradient of bubble-enriched fields is not representable")
    target = ConstrainedSpace(sp_.mesh, "vector", sp_.degree - 1, continuous=False)
    _, dphi_ref = sp_.element.evaluate(target.element.nodes)
    invJ, _ = geometry(sp_.mesh)
    dphi = np.einsum("qlk,tkj->tqlj", dphi_ref, invJ)
    grad = np.einsum("tqlj,tl->tqj", dphi, field._local()[..., 0])
    return Field(target, grad.reshape(-1))


def broken_space_like(space, degree=None):
    return ConstrainedSpace(space.mesh, space.kind, space.degree if degree is None else degree,
                            continuous=False)
