import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mhdpress.exceptions import (
    AmbiguousOuterComponent,
    DegenerateElement,
    NonManifoldBoundary,
    ParseError,
)
from mhdpress.mesh import (
    build_mesh,
    builtin,
    classify_boundary,
    load_mesh,
    nodal_normals,
    reference_tet,
    unit_cube,
    write_gmsh,
    write_native,
)


def structured_counts(n):
    """Independent count: (n+1)^3 vertices, 6 tets per subcube, 2 triangles per boundary square."""
    return (n + 1) ** 3, 6 * n ** 3, 6 * 2 * n ** 2


def test_reference_tet():
    m = reference_tet()
    assert (m.n_vertices, m.n_tets, len(m.boundary_tris), m.n_components) == (4, 1, 4, 1)
    assert m.volume == pytest.approx(1 / 6)


@pytest.mark.parametrize("n", [1, 2, 3])
def test_cube_counts(n):
    m = unit_cube(n)
    assert (m.n_vertices, m.n_tets, len(m.boundary_tris)) == structured_counts(n)
    assert m.n_components == 1 and m.n_internal == 0
    assert m.volume == pytest.approx(1.0, rel=1e-13)


def test_hollow_and_two_cavity_components(hollow2, two_cavity):
    assert hollow2.n_components == 2 and hollow2.n_internal == 1
    assert two_cavity.n_components == 3 and two_cavity.n_internal == 2
    for m in (hollow2, two_cavity):
        outer = m.vertices[m.boundary_tris[m.tris_of_component(0)].ravel()]
        assert np.allclose(outer.min(axis=0), m.vertices.min(axis=0))
        assert np.allclose(outer.max(axis=0), m.vertices.max(axis=0))


def test_flood_fill_idempotent(two_cavity):
    again = classify_boundary(classify_boundary(two_cavity))
    assert np.array_equal(again.component_of_tri, two_cavity.component_of_tri)


def test_outward_normals_close_each_component(hollow2):
    for k in range(hollow2.n_components):
        t = hollow2.tris_of_component(k)
        s = (hollow2.tri_areas[t, None] * hollow2.tri_normals[t]).sum(axis=0)
        assert np.abs(s).max() <= 1e-12 * hollow2.component_area(k)
    # outward normals of the full boundary: sum of x n_x dA equals the volume
    c = hollow2.vertices[hollow2.boundary_tris].mean(axis=1)
    flux = np.sum(hollow2.tri_areas * c[:, 0] * hollow2.tri_normals[:, 0])
    assert flux == pytest.approx(hollow2.volume, rel=1e-12)


def test_nodal_normal_clusters(cube2):
    nn = nodal_normals(cube2)
    v = cube2.vertices
    on = np.isclose(v, 0) | np.isclose(v, 1)
    for i, cl in nn.items():
        assert len(cl) == on[i].sum()
    face = int(np.flatnonzero((on.sum(axis=1) == 1) & np.isclose(v[:, 2], 0))[0])
    assert np.allclose(nn[face][0], [0, 0, -1])
    edge = int(np.flatnonzero(on.sum(axis=1) == 2)[0])
    a, b = nn[edge]
    assert abs(a @ b) < 1e-12


def test_missing_vertex_is_parse_error():
    with pytest.raises(ParseError):
        build_mesh(np.eye(4, 3), [[0, 1, 2, 7]])


def test_degenerate_and_nonmanifold():
    flat = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0.0]])
    with pytest.raises(DegenerateElement):
        build_mesh(flat, [[0, 1, 2, 3]])
    v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1], [0, 0, -1], [1, 1, 1.0]])
    with pytest.raises(NonManifoldBoundary):
        build_mesh(v, [[0, 1, 2, 3], [0, 1, 2, 4], [0, 1, 2, 5]])


def test_ambiguous_outer_component():
    a = reference_tet()
    v = np.vstack([a.vertices, a.vertices + [3.0, 0, 0]])
    with pytest.raises(AmbiguousOuterComponent):
        build_mesh(v, [[0, 1, 2, 3], [4, 5, 6, 7]])


def test_negative_orientation_is_fixed():
    m = build_mesh(np.vstack([np.zeros(3), np.eye(3)]), [[0, 2, 1, 3]])
    assert np.all(m.volumes > 0)


@pytest.mark.parametrize("writer,suffix", [(write_native, ".mesh"), (write_gmsh, ".msh")])
def test_file_roundtrip(tmp_path, hollow2, writer, suffix):
    path = tmp_path / f"m{suffix}"
    writer(hollow2, path)
    m = load_mesh(str(path))
    assert np.array_equal(m.tets, hollow2.tets)
    assert np.allclose(m.vertices, hollow2.vertices, atol=0, rtol=1e-15)
    assert m.n_internal == 1


def test_bad_files(tmp_path):
    p = tmp_path / "bad.msh"
    p.write_text("$MeshFormat\n2.2 0 8\n$EndMeshFormat\n$Nodes\n1\n1 0 0 0\n$EndNodes\n"
                 "$Elements\n1\n1 4 0 1 2 3 9\n$EndElements\n")
    with pytest.raises(ParseError):
        load_mesh(str(p))
    q = tmp_path / "bad.mesh"
    q.write_text("not a mesh\n")
    with pytest.raises(ParseError):
        load_mesh(str(q))
    with pytest.raises(FileNotFoundError):
        load_mesh(str(tmp_path / "none.mesh"))


def test_builtin_errors():
    with pytest.raises(ParseError):
        builtin("donut:3")
    with pytest.raises(ParseError):
        builtin("cube:x")


@settings(max_examples=20, deadline=None)
@given(scale=st.floats(0.2, 5.0), shift=st.lists(st.floats(-3, 3), min_size=3, max_size=3),
       angle=st.floats(0, 2 * np.pi))
def test_rigid_motion_invariance(scale, shift, angle):
    base = unit_cube(1)
    c, s = np.cos(angle), np.sin(angle)
    R = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]])
    m = build_mesh(scale * base.vertices @ R.T + shift, base.tets)
    assert len(m.boundary_tris) == len(base.boundary_tris)
    assert m.volume == pytest.approx(scale ** 3, rel=1e-10)
    s_n = (m.tri_areas[:, None] * m.tri_normals).sum(axis=0)
    assert np.abs(s_n).max() <= 1e-12 * m.tri_areas.sum()
    assert {len(v) for v in nodal_normals(m).values()} <= {2, 3}
