import numpy as np
import pytest

from mhdpress.exceptions import MaxIterations
from mhdpress.linearized import MHDOperators
from mhdpress.mesh import unit_cube
from mhdpress.nonlinear import (
    ConstantsEstimate,
    PicardOptions,
    discrete_poincare,
    estimate_constants,
    flux_free_basis,
    picard_solve,
    uniqueness_check,
)
from mhdpress.norms import compute_norm
from mhdpress.verify.mms import builtin_case


@pytest.mark.parametrize("M, ok, margin", [(0.0, True, 0.0), (0.5, True, 0.75), (1.0, False, 1.5)])
def test_uniqueness_examples(M, ok, margin):
    got_ok, got_margin = uniqueness_check(ConstantsEstimate(C_P=1.0, C1=1.0, C2=1.0, M=M))
    assert got_ok is ok
    assert got_margin == pytest.approx(margin)


@pytest.mark.parametrize("kw", [{"damping": 0.0}, {"damping": 1.5}, {"tolerance": 0.0}, {"max_iterations": 0}])
def test_options_validation(kw):
    with pytest.raises(ValueError):
        PicardOptions(**kw)


def test_flux_free_basis(hollow_ops2, rng):
    N = flux_free_basis(hollow_ops2)
    x = N @ rng.standard_normal(N.shape[1])
    assert np.abs(hollow_ops2.Phi @ x).max() <= 1e-12 * np.abs(x).max()
    assert N.shape[1] == hollow_ops2.nV - hollow_ops2.I


def test_poincare_constant_levels():
    values = [discrete_poincare(MHDOperators(unit_cube(n), 2))[0] for n in (2, 3)]
    assert all(v > 0 for v in values)
    assert values[1] <= 1.05 * values[0]


def test_constants_estimate(cube_ops2):
    est = estimate_constants(cube_ops2, n_samples=20)
    assert est.C1 <= np.sqrt(2) + 1e-6
    assert est.C2 > 0 and est.C2_lower_bound
    assert est.M == 0.0
    assert uniqueness_check(est) == (True, 0.0)
    est2 = estimate_constants(cube_ops2, n_samples=5, data_norms=[1.0, 2.0])
    assert est2.M == 3.0


def test_zero_data_one_iteration(hollow_ops2):
    u, b, P, alpha, rep = picard_solve(None, ops=hollow_ops2)
    assert rep.iterations == 1
    assert np.abs(alpha).max() == 0.0
    assert compute_norm(u, "L2") == 0.0 and compute_norm(b, "L2") == 0.0


def test_constant_boundary_pressure(hollow_ops2):
    kappa = 2.5
    u, b, P, alpha, rep = picard_solve(None, P0=kappa, ops=hollow_ops2)
    assert compute_norm(u, "L2") <= 1e-12
    assert compute_norm(b, "L2") <= 1e-12
    assert np.abs(alpha).max() <= 1e-12
    assert np.allclose(P.coeffs, kappa, atol=1e-10)


def test_small_data_converges_monotonically(cube_ops2):
    case = builtin_case("stream-cube", 0.1)
    f, g, h, hg, P0 = case.data_for("nonlinear")
    u, b, P, alpha, rep = picard_solve(None, f=f, g=g, P0=P0, ops=cube_ops2,
                                       opts=PicardOptions(tolerance=1e-10))
    assert rep.extra["monotone_tail"]
    assert rep.extra["contraction_factor"] < 1
    assert rep.extra["increments"][-1] <= 1e-10 * cube_ops2.z_norm(u.free, b.free)


def test_damping_still_converges(cube_ops2):
    case = builtin_case("stream-cube", 0.1)
    f, g, h, hg, P0 = case.data_for("nonlinear")
    opts = PicardOptions(tolerance=1e-8)
    u1, b1, *_ = picard_solve(None, f=f, g=g, P0=P0, ops=cube_ops2, opts=opts)
    u2, b2, *_, rep = picard_solve(None, f=f, g=g, P0=P0, ops=cube_ops2,
                                   opts=PicardOptions(tolerance=1e-8, damping=0.7))
    assert cube_ops2.z_norm(u1.free - u2.free, b1.free - b2.free) <= 1e-6 * cube_ops2.z_norm(u1.free, b1.free)


def test_max_iterations_carries_report(cube_ops2):
    case = builtin_case("stream-cube", 0.1)
    f, g, h, hg, P0 = case.data_for("nonlinear")
    with pytest.raises(MaxIterations) as info:
        picard_solve(None, f=f, g=g, P0=P0, ops=cube_ops2, opts=PicardOptions(max_iterations=2, tolerance=1e-14))
    rep = info.value.report
    assert rep.iterations == 2
    assert len(rep.extra["increments"]) == 2


def test_hollow_alpha_consistency(hollow_ops2):
    f = lambda p: 0.1 * np.stack([np.sin(np.pi * p[:, 1]), np.cos(np.pi * p[:, 2]), p[:, 0] * p[:, 1]], axis=1)
    g = lambda p: 0.1 * np.stack([p[:, 1] * p[:, 2], np.sin(p[:, 0]), p[:, 0] ** 2], axis=1)
    u, b, P, alpha, rep = picard_solve(None, f=f, g=g, P0=lambda p: 1.0 + p[:, 0], ops=hollow_ops2)
    assert rep.constants["c_rel_mismatch"] <= 1e-6
    assert alpha.shape == (hollow_ops2.I,)
    assert np.abs(rep.extra["g_pairings_after"]).max() <= 1e-10
