import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mhdpress.exceptions import UnsupportedNorm
from mhdpress.fem import ConstrainedSpace, Field, interpolate
from mhdpress.mesh import unit_cube
from mhdpress.norms import compute_error, compute_norm, field_difference_norm, parse_norm, source_norm

ALL = ("L2", "L4", "H1", "Hcurl", "Hdiv", "W0_3/2", "W0_2", "W0_3", "W1_3/2", "W1_2", "W1_3")


@pytest.mark.parametrize("norm", ALL)
def test_zero_field(cube2, norm):
    assert compute_norm(Field(ConstrainedSpace(cube2, "vector", 2)), norm) == 0.0


def test_constant_one(cube2):
    one = interpolate(ConstrainedSpace(cube2, "scalar", 1), lambda p: np.ones(len(p)))
    for norm in ("L2", "L4", "W0_3/2", "W0_3", "H1"):
        assert compute_norm(one, norm) == pytest.approx(1.0, rel=1e-13)


def test_sine_converges():
    errs = []
    for n in (2, 4, 8):
        S = ConstrainedSpace(unit_cube(n), "scalar", 2)
        errs.append(abs(compute_norm(interpolate(S, lambda p: np.sin(np.pi * p[:, 0])), "L2") - 2 ** -0.5))
    assert errs[-1] < 1e-4 and errs[0] > errs[1] > errs[2]


def test_linear_field_norms(cube2):
    V = ConstrainedSpace(cube2, "vector", 1)
    v = interpolate(V, lambda p: np.stack([p[:, 1], -p[:, 0], p[:, 2]], axis=1))
    # |v|^2 integrates to 1/3+1/3+1/3, grad has three unit entries, curl = (0,0,-2), div = 1
    assert compute_norm(v, "L2") == pytest.approx(1.0, rel=1e-13)
    assert compute_norm(v, "H1") == pytest.approx(2.0, rel=1e-13)
    assert compute_norm(v, "Hcurl") == pytest.approx(np.sqrt(5.0), rel=1e-13)
    assert compute_norm(v, "Hdiv") == pytest.approx(np.sqrt(2.0), rel=1e-13)


def test_errors_against_exact(cube2):
    S = ConstrainedSpace(cube2, "scalar", 2)
    fn = lambda p: p[:, 0] ** 2 - p[:, 1] * p[:, 2]
    grad = lambda p: np.stack([2 * p[:, 0], -p[:, 2], -p[:, 1]], axis=1)
    f = interpolate(S, fn)
    for norm in ("L2", "H1", "W0_3/2", "W0_3", "W1_3"):
        assert compute_error(f, fn, grad, norm) <= 1e-13
    with pytest.raises(UnsupportedNorm):
        compute_error(f, fn, None, "H1")
    with pytest.raises(UnsupportedNorm):
        compute_error(f, fn, None, "Hcurl")


def test_parse_and_unsupported(cube2):
    assert parse_norm("W1_3/2") == ("W", 1, 1.5)
    assert parse_norm("H1") == ("W", 1, 2.0)
    for bad in ("L7", "W2_2", "W1_5", "Hfoo"):
        with pytest.raises(UnsupportedNorm):
            parse_norm(bad)
    with pytest.raises(UnsupportedNorm):
        compute_norm(Field(ConstrainedSpace(cube2, "scalar", 1)), "Hcurl")


def test_source_norm(cube2):
    assert source_norm(None, cube2, 3) == 0.0
    assert source_norm(2.0, cube2, 1, p=1.5) == pytest.approx(2.0)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), alpha=st.floats(-5, 5), norm=st.sampled_from(ALL))
def test_norm_axioms(cube2, seed, alpha, norm):
    V = ConstrainedSpace(cube2, "vector", 1)
    rng = np.random.default_rng(seed)
    a, b = Field(V, rng.standard_normal(V.n_full)), Field(V, rng.standard_normal(V.n_full))
    na, nb = compute_norm(a, norm), compute_norm(b, norm)
    assert compute_norm(alpha * a, norm) == pytest.approx(abs(alpha) * na, rel=1e-12, abs=1e-14)
    assert compute_norm(a + b, norm) <= na + nb + 1e-12
    if norm in ("L2", "H1", "W0_3"):
        assert field_difference_norm(a + b, b, norm) == pytest.approx(na, rel=1e-12)
