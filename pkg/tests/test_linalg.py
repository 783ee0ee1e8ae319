import numpy as np
import pytest
import scipy.linalg
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from mhdpress.assembly import assemble_load, assemble_stiffness
from mhdpress.exceptions import IndefiniteMatrix, NotConverged, RankDeficientConstraints, SingularMatrix
from mhdpress.fem import ConstrainedSpace
from mhdpress.linalg import (
    as_csr,
    dump_matrix,
    largest_generalized_eig,
    relative_residual,
    smallest_generalized_eig,
    solve_general,
    solve_saddle,
    solve_spd,
)
from mhdpress.nonlinear import flux_free_basis


def random_spd(rng, n):
    Q = rng.standard_normal((n, n))
    return Q @ Q.T + n * np.eye(n)


def test_spd_small_examples():
    r = np.array([1.0, -2.0, 3.0])
    assert np.allclose(solve_spd(sp.identity(3), r), r)
    assert np.allclose(solve_spd(sp.csr_matrix([[2.0, 1.0], [1.0, 2.0]]), [1, 1]), [1 / 3, 1 / 3])


def test_spd_laplacian_vs_dense(cube2):
    S = ConstrainedSpace(cube2, "scalar", 1, "dirichlet")
    T = S.T.tocsr()
    K = T.T @ assemble_stiffness(S) @ T
    rhs = T.T @ assemble_load(S, lambda p: 3 * np.pi ** 2 * np.prod(np.sin(np.pi * p), axis=1))
    x = solve_spd(K, rhs)
    ref = scipy.linalg.lu_solve(scipy.linalg.lu_factor(K.toarray()), rhs)
    assert np.allclose(x, ref, rtol=1e-9, atol=1e-12)


def test_spd_cg_path(rng):
    A = sp.csr_matrix(random_spd(rng, 40))
    b = rng.standard_normal(40)
    x, info = solve_spd(A, b, method="cg", return_info=True)
    assert info.method == "cg" and relative_residual(A, x, b) <= 1e-9


def test_spd_indefinite():
    with pytest.raises(IndefiniteMatrix):
        solve_spd(sp.csr_matrix([[1.0, 0.0], [0.0, -1.0]]), [1.0, 1.0])
    with pytest.raises(IndefiniteMatrix):
        solve_spd(sp.csr_matrix([[1.0, 0.0], [0.0, -1.0]]), [1.0, 1.0], method="cg")


def test_cg_budget():
    n = 200
    A = sp.diags([-1.0, 2.0001, -1.0], [-1, 0, 1], shape=(n, n), format="csr")
    with pytest.raises(NotConverged):
        solve_spd(A, np.ones(n), method="cg", maxiter=3)


def test_saddle_hand_example():
    x, lam = solve_saddle(sp.identity(2), sp.csr_matrix([[1.0, 1.0]]), [1.0, 1.0], [0.0])
    assert np.allclose(x, [0, 0], atol=1e-14) and np.allclose(lam, [1])


def test_saddle_no_constraints(rng):
    A = random_spd(rng, 5)
    f = rng.standard_normal(5)
    x, lam = solve_saddle(A, sp.csr_matrix((0, 5)), f)
    assert lam.size == 0 and np.allclose(A @ x, f)


def test_saddle_vs_dense_kkt(rng):
    n, m = 30, 3
    A = random_spd(rng, n)
    B = rng.standard_normal((m, n))
    f, g = rng.standard_normal(n), rng.standard_normal(m)
    x, lam = solve_saddle(A, B, f, g)
    K = np.block([[A, B.T], [B, np.zeros((m, m))]])
    ref = np.linalg.solve(K, np.concatenate([f, g]))
    assert np.allclose(np.concatenate([x, lam]), ref, rtol=1e-9, atol=1e-11)


def test_saddle_rank_deficient(rng):
    B = np.array([[1.0, 1.0, 0.0], [2.0, 2.0, 0.0]])
    with pytest.raises(RankDeficientConstraints):
        solve_saddle(sp.identity(3), B, np.ones(3))


def test_general_examples(rng):
    assert np.allclose(solve_general(sp.identity(4), np.arange(4.0)), np.arange(4.0))
    assert np.allclose(solve_general(sp.csr_matrix([[1.0, 2.0], [0.0, 1.0]]), [3, 1]), [1, 1])
    A = rng.standard_normal((25, 25)) + 10 * np.eye(25)
    b = rng.standard_normal(25)
    assert np.allclose(solve_general(A, b), np.linalg.solve(A, b), rtol=1e-9)
    x, info = solve_general(sp.csr_matrix(A), b, method="gmres", return_info=True)
    assert info.method == "gmres" and relative_residual(A, x, b) <= 1e-7
    with pytest.raises(SingularMatrix):
        solve_general(sp.csr_matrix([[1.0, 1.0], [1.0, 1.0]]), [1.0, 2.0])


def test_coupled_block_vs_dense(cube_ops1):
    from mhdpress.linearized import assemble_coupled_matrix
    from mhdpress.fem import Field
    w = Field.from_free(cube_ops1.V, np.linspace(0, 1, cube_ops1.nV))
    K, _, _ = assemble_coupled_matrix(cube_ops1, w, w)
    rhs = np.random.default_rng(0).standard_normal(K.shape[0])
    assert np.allclose(solve_general(K, rhs), np.linalg.solve(K.toarray(), rhs), rtol=1e-8, atol=1e-10)


def test_eig_examples():
    M = sp.csr_matrix(random_spd(np.random.default_rng(3), 6))
    assert smallest_generalized_eig(M, M)[0] == pytest.approx(1.0, rel=1e-10)
    assert smallest_generalized_eig(sp.diags([1.0, 4.0]), sp.identity(2))[0] == pytest.approx(1.0)
    assert largest_generalized_eig(sp.diags([1.0, 4.0]), sp.identity(2))[0] == pytest.approx(4.0)


def test_eig_sparse_path_vs_dense(cube_ops2):
    ops = cube_ops2
    N = flux_free_basis(ops)
    A = (N.T @ ops.A @ N).tocsc()
    H = (N.T @ ops.h1_mass @ N).tocsc()
    assert A.shape[0] > 50
    lam, _ = smallest_generalized_eig(A, H, dense_limit=0)
    lam_max, _ = largest_generalized_eig(A, H, dense_limit=0)
    ref = scipy.linalg.eigh(A.toarray(), H.toarray(), eigvals_only=True)
    assert lam == pytest.approx(ref[0], rel=1e-4)
    assert lam_max == pytest.approx(ref[-1], rel=1e-4)


def test_as_csr_canonical():
    A = sp.coo_matrix(([1.0, 2.0, 0.0], ([0, 0, 1], [1, 1, 0])), shape=(2, 2))
    C = as_csr(A)
    assert C.nnz == 1 and C[0, 1] == 3.0 and C.has_sorted_indices


def test_dump_matrix(tmp_path):
    import scipy.io
    A = sp.random(5, 5, density=0.5, random_state=1)
    dump_matrix(A, tmp_path / "a.mtx")
    assert abs(scipy.io.mmread(str(tmp_path / "a.mtx")) - A).max() == 0


@settings(max_examples=25, deadline=None)
@given(n=st.integers(2, 12), m=st.integers(0, 2), seed=st.integers(0, 10_000))
def test_saddle_satisfies_both_blocks(n, m, seed):
    rng = np.random.default_rng(seed)
    m = min(m, n - 1)
    A = random_spd(rng, n)
    B = rng.standard_normal((m, n))
    f, g = rng.standard_normal(n), rng.standard_normal(m)
    x, lam = solve_saddle(A, B, f, g)
    assert np.linalg.norm(A @ x + B.T @ lam - f) <= 1e-8 * max(np.linalg.norm(f), 1)
    assert np.linalg.norm(B @ x - g) <= 1e-8 * max(np.linalg.norm(g), 1)
