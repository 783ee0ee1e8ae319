"""Tetrahedral meshes: construction, boundary extraction and classification.

A :class:`Mesh` is immutable once built.  Boundary triangles are stored
with outward orientation and labelled by connected component, component
0 being the exterior boundary.
"""
from __future__ import annotations

import itertools
import logging
import os
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .exceptions import (
    AmbiguousOuterComponent,
    DegenerateElement,
    NonManifoldBoundary,
    ParseError,
)

logger = logging.getLogger(__name__)

# local face k of a tet is opposite local vertex k
LOCAL_FACES = np.array([[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]])
# local edge ordering shared with the P2 element
LOCAL_EDGES = np.array([[0, 1], [0, 2], [0, 3], [1, 2], [1, 3], [2, 3]])

NORMAL_CLUSTER_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class Mesh:
    vertices: np.ndarray
    tets: np.ndarray
    boundary_tris: np.ndarray
    tri_owner: np.ndarray
    tri_local_face: np.ndarray
    component_of_tri: np.ndarray | None = None
    tri_tags: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        for name in ("vertices", "tets", "boundary_tris", "tri_owner", "tri_local_face"):
            getattr(self, name).setflags(write=False)

    def __repr__(self):
        return (f"Mesh(vertices={self.n_vertices}, tets={self.n_tets}, "
                f"boundary_tris={len(self.boundary_tris)}, components={self.n_components})")

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_tets(self):
        return len(self.tets)

    @property
    def n_components(self):
        if self.component_of_tri is None:
            return 0
        return int(self.component_of_tri.max()) + 1

    @property
    def n_internal(self):
        """Number I of interior boundary components."""
        return self.n_components - 1

    @cached_property
    def jacobians(self):
        v = self.vertices[self.tets]
        return np.stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 0], v[:, 3] - v[:, 0]], axis=2)

    @cached_property
    def volumes(self):
        return np.linalg.det(self.jacobians) / 6.0

    @property
    def volume(self):
        return float(self.volumes.sum())

    @cached_property
    def h(self):
        """Largest edge length."""
        e = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        return float(np.sqrt((e ** 2).sum(axis=1)).max())

    @cached_property
    def _edge_data(self):
        all_edges = np.sort(self.tets[:, LOCAL_EDGES].reshape(-1, 2), axis=1)
        edges, inverse = np.unique(all_edges, axis=0, return_inverse=True)
        return edges, inverse.reshape(-1, 6)

    @property
    def edges(self):
        return self._edge_data[0]

    @property
    def tet_edges(self):
        """(n_tets, 6) global edge index of every local edge."""
        return self._edge_data[1]

    @cached_property
    def tri_normals(self):
        p = self.vertices[self.boundary_tris]
        n = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
        return n / np.linalg.norm(n, axis=1)[:, None]

    @cached_property
    def tri_areas(self):
        p = self.vertices[self.boundary_tris]
        return 0.5 * np.linalg.norm(np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), axis=1)

    @cached_property
    def boundary_vertices(self):
        return np.unique(self.boundary_tris)

    def tris_of_component(self, k):
        return np.flatnonzero(self.component_of_tri == k)

    def vertices_of_component(self, k):
        return np.unique(self.boundary_tris[self.tris_of_component(k)])

    def component_area(self, k):
        return float(self.tri_areas[self.tris_of_component(k)].sum())


def build_mesh(vertices, tets, tri_tags=None, classify=True):
    """Build a mesh from raw arrays: orient tets, extract and label the boundary.

    ``tri_tags`` optionally maps sorted vertex triples of boundary faces to a
    physical tag (as read from Gmsh files); it only orders interior components.
    """
    vertices = np.array(vertices, dtype=float)
    tets = np.array(tets, dtype=np.int64)
    if vertices.ndim != 2 or vertices.shape[1] != 3 or len(vertices) < 4:
        raise ParseError("need at least 4 vertices with 3 coordinates")
    if tets.ndim != 2 or tets.shape[1] != 4 or len(tets) == 0:
        raise ParseError("need at least one tetrahedron with 4 vertex indices")
    if tets.min() < 0 or tets.max() >= len(vertices):
        raise ParseError("tetrahedron references a missing vertex")

    v = vertices[tets]
    vol = np.einsum("ij,ij->i", np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]), v[:, 3] - v[:, 0])
    scale = np.abs(vertices).max() or 1.0
    if np.any(np.abs(vol) <= 1e-14 * scale ** 3):
        bad = int(np.argmin(np.abs(vol)))
        raise DegenerateElement(f"tetrahedron {bad} has zero volume")
    neg = vol < 0
    tets = tets.copy()
    tets[neg, 2], tets[neg, 3] = tets[neg, 3].copy(), tets[neg, 2].copy()

    faces = tets[:, LOCAL_FACES]  # (nt, 4, 3)
    keys = np.sort(faces.reshape(-1, 3), axis=1)
    _, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.ravel()
    if counts.max() > 2:
        raise NonManifoldBoundary("a face is shared by more than two tetrahedra")
    bmask = counts[inverse] == 1
    idx = np.flatnonzero(bmask)
    owner = idx // 4
    local = idx % 4
    tris = faces.reshape(-1, 3)[idx].copy()
    # orient outward: normal must point away from the opposite vertex
    p = vertices[tris]
    n = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    opp = vertices[tets[owner, local]]
    inward = np.einsum("ij,ij->i", n, opp - p[:, 0]) > 0
    tris[inward, 1], tris[inward, 2] = tris[inward, 2].copy(), tris[inward, 1].copy()

    tags = None
    if tri_tags:
        tags = np.array([tri_tags.get(tuple(sorted(t)), -1) for t in tris.tolist()])
    mesh = Mesh(vertices, tets, tris, owner, local, None, tags)
    return classify_boundary(mesh) if classify else mesh


def _flood_fill(mesh):
    tris = mesh.boundary_tris
    nb = len(tris)
    edges = np.sort(np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [0, 2]]]), axis=1)
    owner = np.tile(np.arange(nb), 3)
    _, inv = np.unique(edges, axis=0, return_inverse=True)
    inv = inv.ravel()
    # triangles sharing an edge are adjacent: connect each triangle to its edge node
    ne = inv.max() + 1
    adj = coo_matrix((np.ones(len(inv)), (owner, nb + inv)), shape=(nb + ne, nb + ne))
    _, labels = connected_components(adj, directed=False)
    _, labels = np.unique(labels[:nb], return_inverse=True)
    return labels.ravel()


def classify_boundary(mesh):
    """Label boundary components by edge-adjacency flood fill.

    Component 0 is the unique component whose bounding box strictly contains
    the bounding boxes of all others.
    """
    labels = _flood_fill(mesh)
    ncomp = labels.max() + 1
    lo = np.empty((ncomp, 3))
    hi = np.empty((ncomp, 3))
    for k in range(ncomp):
        pts = mesh.vertices[np.unique(mesh.boundary_tris[labels == k])]
        lo[k], hi[k] = pts.min(axis=0), pts.max(axis=0)
    outer = [k for k in range(ncomp)
             if all(np.all(lo[k] < lo[j]) and np.all(hi[k] > hi[j]) for j in range(ncomp) if j != k)]
    if len(outer) != 1:
        raise AmbiguousOuterComponent(
            f"{len(outer)} of {ncomp} boundary components could be the exterior boundary")
    inner = [k for k in range(ncomp) if k != outer[0]]

    def order_key(k):
        tag = None
        if mesh.tri_tags is not None:
            t = mesh.tri_tags[labels == k]
            tag = int(t.min()) if t.min() >= 0 else None
        return (tag if tag is not None else np.inf, *np.round(lo[k], 12))

    inner.sort(key=order_key)
    relabel = np.empty(ncomp, dtype=np.int64)
    relabel[outer[0]] = 0
    for i, k in enumerate(inner, start=1):
        relabel[k] = i
    comp = relabel[labels]
    comp.setflags(write=False)
    return Mesh(mesh.vertices, mesh.tets, mesh.boundary_tris, mesh.tri_owner,
                mesh.tri_local_face, comp, mesh.tri_tags)


def cluster_normals(normals, tol=NORMAL_CLUSTER_TOL):
    """Group unit vectors whose mutual angle is below ``tol`` radians."""
    clusters = []
    for n in normals:
        for c in clusters:
            if np.arccos(np.clip(np.dot(c, n), -1.0, 1.0)) < tol:
                break
        else:
            clusters.append(np.asarray(n, dtype=float))
    return clusters


def boundary_entity_normals(mesh, entity_tris, tol=NORMAL_CLUSTER_TOL):
    """Normal clusters for entities given as a list of adjacent boundary-triangle index arrays."""
    normals = mesh.tri_normals
    return [cluster_normals(normals[t], tol) for t in entity_tris]


def nodal_normals(mesh, tol=NORMAL_CLUSTER_TOL):
    """Map every vertex to the clustered unit normals of its boundary faces.

    One cluster marks a face node, two an edge node, three or more a corner.
    Interior vertices map to an empty list.
    """
    tris = mesh.boundary_tris
    order = np.argsort(tris.ravel(), kind="stable")
    verts = tris.ravel()[order]
    owners = order // 3
    starts = np.searchsorted(verts, np.arange(mesh.n_vertices))
    ends = np.searchsorted(verts, np.arange(mesh.n_vertices), side="right")
    return {v: cluster_normals(mesh.tri_normals[owners[starts[v]:ends[v]]], tol)
            for v in range(mesh.n_vertices)}


# ---------------------------------------------------------------- generators

_KUHN = [np.array(p) for p in itertools.permutations(range(3))]


def _grid_mesh(shape, spacing, keep=None, origin=(0.0, 0.0, 0.0)):
    """Structured mesh of hexahedral cells, six Kuhn tetrahedra per cell."""
    nx, ny, nz = shape
    if keep is None:
        keep = np.ones(shape, dtype=bool)
    gi, gj, gk = np.meshgrid(np.arange(nx + 1), np.arange(ny + 1), np.arange(nz + 1), indexing="ij")
    coords = np.stack([gi.ravel(), gj.ravel(), gk.ravel()], axis=1)
    vertices = np.asarray(origin) + coords * np.asarray(spacing, dtype=float)

    def vid(i, j, k):
        return (i * (ny + 1) + j) * (nz + 1) + k

    ci, cj, ck = np.nonzero(keep)
    base = np.stack([ci, cj, ck], axis=1)
    tets = []
    for perm in _KUHN:
        path = [np.zeros(3, dtype=int)]
        for ax in perm:
            step = path[-1].copy()
            step[ax] += 1
            path.append(step)
        corners = [base + p for p in path]
        tets.append(np.stack([vid(*c.T) for c in corners], axis=1))
    tets = np.concatenate(tets)
    used, tets = np.unique(tets, return_inverse=True)
    return vertices[used], tets.reshape(-1, 4)


def reference_tet():
    return build_mesh(np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], float), [[0, 1, 2, 3]])


def unit_cube(n):
    """Unit cube split into n^3 cells of six tetrahedra."""
    v, t = _grid_mesh((n, n, n), (1.0 / n,) * 3)
    return build_mesh(v, t)


def hollow_box(n, cavities=1):
    """Box with ``cavities`` cubic holes, each block of side 1/3 split into n^3 cells.

    The box is [0, (2m+1)/3] x [0, 1] x [0, 1]; cavity k occupies the block
    [(2k+1)/3, (2k+2)/3] x [1/3, 2/3] x [1/3, 2/3].
    """
    if cavities < 0:
        raise ValueError("number of cavities must be nonnegative")
    m = cavities
    nbx = 2 * m + 1 if m else 1
    nby = 3 if m else 1
    shape = (nbx * n, nby * n, nby * n)
    keep = np.ones(shape, dtype=bool)
    for k in range(m):
        x0 = (2 * k + 1) * n
        keep[x0:x0 + n, n:2 * n, n:2 * n] = False
    side = 1.0 / (3 * n) if m else 1.0 / n
    v, t = _grid_mesh(shape, (side,) * 3, keep)
    return build_mesh(v, t)


def spherical_shell(n, r_in=0.25, r_out=0.5):
    """Polyhedral shell between two spheres, obtained by radially mapping a cube shell.

    The cube [-1, 1]^3 minus [-1/2, 1/2]^3 is meshed with 4n cells per side and
    every vertex p is sent to p/|p| * (r_in + (2|p|_inf - 1)(r_out - r_in)).
    """
    k = 4 * n
    keep = np.ones((k, k, k), dtype=bool)
    keep[n:3 * n, n:3 * n, n:3 * n] = False
    v, t = _grid_mesh((k, k, k), (2.0 / k,) * 3, keep, origin=(-1.0, -1.0, -1.0))
    s = np.abs(v).max(axis=1)
    r = r_in + (2.0 * s - 1.0) * (r_out - r_in)
    v = v / np.linalg.norm(v, axis=1)[:, None] * r[:, None]
    return build_mesh(v, t)


def builtin(descriptor):
    """Parse descriptors such as ``cube:4``, ``hollow-box:3:1``, ``shell:2``, ``tet``."""
    parts = descriptor.strip().split(":")
    kind, args = parts[0], parts[1:]
    try:
        if kind == "cube":
            return unit_cube(int(args[0]) if args else 2)
        if kind == "hollow-box":
            n = int(args[0]) if args else 2
            m = int(args[1]) if len(args) > 1 else 1
            return hollow_box(n, m)
        if kind == "shell":
            return spherical_shell(int(args[0]) if args else 1)
        if kind == "tet":
            return reference_tet()
    except (ValueError, IndexError) as exc:
        raise ParseError(f"bad builtin mesh descriptor {descriptor!r}") from exc
    raise ParseError(f"unknown builtin mesh {descriptor!r}")


# ---------------------------------------------------------------- file formats

NATIVE_HEADER = "MHDPRESS-MESH 1"


def load_mesh(path):
    """Read a Gmsh 2.2 ASCII (``.msh``) or native mesh file."""
    if not os.path.exists(path):
        raise FileNotFoundError(f"mesh file not found: {path}")
    with open(path) as fh:
        text = fh.read()
    if text.lstrip().startswith("$MeshFormat") or str(path).endswith(".msh"):
        return _parse_gmsh(text)
    return _parse_native(text)


def _parse_native(text):
    lines = [ln.split("#", 1)[0].strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln]
    if not lines or lines[0] != NATIVE_HEADER:
        raise ParseError(f"native mesh must start with {NATIVE_HEADER!r}")
    try:
        pos = 1
        key, count = lines[pos].split()
        if key != "vertices":
            raise ParseError("expected 'vertices <count>'")
        nv = int(count)
        verts = np.array([[float(x) for x in lines[pos + 1 + i].split()] for i in range(nv)])
        pos += 1 + nv
        key, count = lines[pos].split()
        if key != "tets":
            raise ParseError("expected 'tets <count>'")
        nt = int(count)
        tets = np.array([[int(x) for x in lines[pos + 1 + i].split()] for i in range(nt)])
    except ParseError:
        raise
    except (ValueError, IndexError) as exc:
        raise ParseError(f"malformed native mesh: {exc}") from exc
    if verts.ndim != 2 or verts.shape[1] != 3 or tets.ndim != 2 or tets.shape[1] != 4:
        raise ParseError("malformed native mesh: wrong column counts")
    return build_mesh(verts, tets)


def _gmsh_section(text, name):
    start = text.find(f"${name}")
    end = text.find(f"$End{name}")
    if start < 0 or end < 0:
        raise ParseError(f"missing ${name} section")
    return text[start + len(name) + 1:end].split("\n")


def _parse_gmsh(text):
    fmt = [ln for ln in _gmsh_section(text, "MeshFormat") if ln.strip()]
    if not fmt or not fmt[0].split()[0].startswith("2"):
        raise ParseError("only Gmsh MSH 2.x ASCII is supported")
    if len(fmt[0].split()) > 1 and fmt[0].split()[1] != "0":
        raise ParseError("binary Gmsh files are not supported")
    try:
        node_lines = [ln for ln in _gmsh_section(text, "Nodes") if ln.strip()]
        nn = int(node_lines[0])
        ids, coords = [], []
        for ln in node_lines[1:nn + 1]:
            tok = ln.split()
            ids.append(int(tok[0]))
            coords.append([float(x) for x in tok[1:4]])
        index = {nid: i for i, nid in enumerate(ids)}
        elem_lines = [ln for ln in _gmsh_section(text, "Elements") if ln.strip()]
        ne = int(elem_lines[0])
        tets, tri_tags = [], {}
        for ln in elem_lines[1:ne + 1]:
            tok = [int(x) for x in ln.split()]
            etype, ntags = tok[1], tok[2]
            nodes = tok[3 + ntags:]
            if etype == 4:
                tets.append([index[n] for n in nodes[:4]])
            elif etype == 2 and ntags > 0:
                tri_tags[tuple(sorted(index[n] for n in nodes[:3]))] = tok[3]
    except KeyError as exc:
        raise ParseError(f"element references missing node {exc}") from exc
    except (ValueError, IndexError) as exc:
        raise ParseError(f"malformed Gmsh file: {exc}") from exc
    return build_mesh(np.array(coords), np.array(tets), tri_tags or None)


def write_native(mesh, path):
    with open(path, "w") as fh:
        fh.write(NATIVE_HEADER + "\n")
        fh.write(f"vertices {mesh.n_vertices}\n")
        np.savetxt(fh, mesh.vertices, fmt="%.17g")
        fh.write(f"tets {mesh.n_tets}\n")
        np.savetxt(fh, mesh.tets, fmt="%d")


def write_gmsh(mesh, path):
    """Write Gmsh 2.2 ASCII with boundary triangles tagged by component + 1."""
    with open(path, "w") as fh:
        fh.write("$MeshFormat\n2.2 0 8\n$EndMeshFormat\n$Nodes\n")
        fh.write(f"{mesh.n_vertices}\n")
        for i, p in enumerate(mesh.vertices):
            fh.write(f"{i + 1} {p[0]:.17g} {p[1]:.17g} {p[2]:.17g}\n")
        fh.write("$EndNodes\n$Elements\n")
        nb = len(mesh.boundary_tris)
        fh.write(f"{nb + mesh.n_tets}\n")
        eid = 1
        comp = mesh.component_of_tri if mesh.component_of_tri is not None else np.zeros(nb, int)
        for t, c in zip(mesh.boundary_tris, comp):
            fh.write(f"{eid} 2 2 {c + 1} {c + 1} {t[0] + 1} {t[1] + 1} {t[2] + 1}\n")
            eid += 1
        for t in mesh.tets:
            fh.write(f"{eid} 4 2 100 1 {t[0] + 1} {t[1] + 1} {t[2] + 1} {t[3] + 1}\n")
            eid += 1
        fh.write("$EndElements\n")
