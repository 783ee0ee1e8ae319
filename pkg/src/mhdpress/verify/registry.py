"""Named invariant checks, run as a suite with a JSON summary.

Each check receives a lazily populated :class:`Context` and returns
``(passed, value, detail)``.  ``REQUIRED`` lists the invariants that must
be registered; :func:`missing_checks` reports omissions and the suite
fails on any.
"""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from functools import cached_property

import numpy as np

from ..assembly import (
    assemble_curlcurl,
    assemble_divdiv,
    assemble_h1_mass,
    assemble_mass,
    awd_value,
)
from ..exceptions import MHDPressError
from ..fem import ConstrainedSpace, Field, boundary_quadrature, interpolate
from ..harmonic import kernel_project
from ..io import to_jsonable
from ..linalg import relative_residual, solve_general
from ..linearized import (
    LinearizedProblem,
    MHDData,
    MHDOperators,
    solve_elliptic_EN,
    solve_linearized,
    solve_stokes_SN,
)
from ..mesh import builtin, classify_boundary
from ..nonlinear import PicardOptions, discrete_poincare, estimate_constants, picard_solve, uniqueness_check
from ..norms import compute_norm, source_norm
from ..quadrature import quadrature_rule
from ..scalar import divergence_lifting, solve_chi, solve_dirichlet_poisson
from .fdcheck import fd_crosscheck
from .mms import builtin_cases, cube_boundary_samples

logger = logging.getLogger(__name__)


@dataclass
class CheckResult:
    name: str
    module: str
    passed: bool
    value: object = None
    detail: dict = field(default_factory=dict)
    seconds: float = 0.0


@dataclass
class Check:
    name: str
    module: str
    func: object
    description: str = ""


REGISTRY: dict = {}

REQUIRED = {
    "fe_assembly": ("constraint_exactness", "discrete_poincare", "matrix_symmetry"),
    "harmonic_kernel": ("kernel_dimension", "kernel_flux_identity", "projection_idempotence",
                        "gradient_consistency"),
    "mhd_linearized": ("coercivity_witness", "coupling_neutrality", "constants_consistency",
                       "chi_vanishing"),
    "mhd_nonlinear": ("uniqueness_two_guesses", "increment_ratios", "alpha_consistency"),
}


def register(name, module, description=""):
    def deco(fn):
        REGISTRY[name] = Check(name, module, fn, description or (fn.__doc__ or "").strip())
        return fn
    return deco


def missing_checks():
    """Required invariants without a registered check, as ``module.name`` strings."""
    out = []
    for module, names in REQUIRED.items():
        for n in names:
            if n not in REGISTRY or REGISTRY[n].module != module:
                out.append(f"{module}.{n}")
    return out


def _rel(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-300)


class Context:
    """Meshes, operators and shared results built on first use."""

    def __init__(self, cube="cube:2", hollow="hollow-box:2:1", degree=2, seed=0, samples=20):
        self._cube, self._hollow = cube, hollow
        self.cube_desc = cube if isinstance(cube, str) else "mesh-a"
        self.hollow_desc = hollow if isinstance(hollow, str) else "mesh-b"
        self.degree = degree
        self.samples = samples
        self.rng = np.random.default_rng(seed)

    @cached_property
    def cube(self):
        return builtin(self._cube) if isinstance(self._cube, str) else self._cube

    @cached_property
    def hollow(self):
        return builtin(self._hollow) if isinstance(self._hollow, str) else self._hollow

    @cached_property
    def cube_ops(self):
        return MHDOperators(self.cube, self.degree)

    @cached_property
    def hollow_ops(self):
        return MHDOperators(self.hollow, self.degree)

    @cached_property
    def meshes(self):
        return {self.cube_desc: self.cube, self.hollow_desc: self.hollow}

    @cached_property
    def all_ops(self):
        return {self.cube_desc: self.cube_ops, self.hollow_desc: self.hollow_ops}

    @cached_property
    def hollow_data(self):
        """Smooth data exercising every term on the hollow mesh."""
        f = lambda p: np.stack([np.sin(np.pi * p[:, 1]), np.cos(np.pi * p[:, 2]), p[:, 0] * p[:, 1]], axis=1)
        g = lambda p: np.stack([p[:, 1] * p[:, 2], np.sin(p[:, 0]), p[:, 0] ** 2], axis=1)
        P0 = lambda p: 1.0 + p[:, 0] - 0.5 * p[:, 2] ** 2
        return MHDData(f=f, g=g, P0=P0)

    @cached_property
    def picard_runs(self):
        """Two Picard runs on the cube (zero and random small start) at small amplitude."""
        case = [c for c in builtin_cases(0.01) if c.name == "stream-cube"][0]
        ops = self.cube_ops
        f, g, h, _, P0 = case.data_for("nonlinear")
        opts = PicardOptions(tolerance=1e-10)
        r1 = picard_solve(None, f=f, g=g, P0=P0, opts=opts, ops=ops)
        rng = np.random.default_rng(1)
        init = (1e-3 * rng.standard_normal(ops.nV), 1e-3 * rng.standard_normal(ops.nV))
        r2 = picard_solve(None, f=f, g=g, P0=P0, ops=ops,
                          opts=PicardOptions(tolerance=1e-10, initial=init))
        est = estimate_constants(ops, MHDData(f=f, g=g, P0=P0), n_samples=50)
        return case, r1, r2, est, opts

    def random_free(self, ops):
        return self.rng.standard_normal(ops.nV)


# ---------------------------------------------------------------- mesh_geometry
@register("divergence_theorem", "mesh_geometry")
def _divergence_theorem(ctx):
    """Sum of area * normal over every boundary component vanishes."""
    worst = 0.0
    for mesh in ctx.meshes.values():
        for k in range(mesh.n_components):
            tris = mesh.tris_of_component(k)
            s = (mesh.tri_areas[tris, None] * mesh.tri_normals[tris]).sum(axis=0)
            worst = max(worst, float(np.abs(s).max() / mesh.component_area(k)))
    return worst <= 1e-12, worst, {}


@register("flood_fill_idempotence", "mesh_geometry")
def _flood_fill(ctx):
    """Classifying twice yields identical labels."""
    ok = all(np.array_equal(classify_boundary(classify_boundary(m)).component_of_tri, m.component_of_tri)
             for m in ctx.meshes.values())
    return ok, ok, {}


@register("quadrature_exactness", "mesh_geometry")
def _quadrature_exactness(ctx):
    """Random monomials of each declared degree integrate exactly on the reference tetrahedron."""
    worst = 0.0
    for deg in range(1, 11):
        rule = quadrature_rule(deg)
        x = rule.cartesian
        for _ in range(20):
            a = ctx.rng.multinomial(deg, [1 / 3] * 3)
            exact = math.factorial(a[0]) * math.factorial(a[1]) * math.factorial(a[2]) / math.factorial(deg + 3)
            val = rule.weights @ (x[:, 0] ** a[0] * x[:, 1] ** a[1] * x[:, 2] ** a[2])
            worst = max(worst, _rel(val, exact))
    return worst <= 1e-12, worst, {}


# ---------------------------------------------------------------- sparse_linalg
@register("residual_recheck", "sparse_linalg")
def _residual_recheck(ctx):
    """Reported residuals agree with an independent recomputation within a factor 10."""
    ops = ctx.cube_ops
    K = (ops.A + 0.1 * ops.h1_mass).tocsc()
    rhs = ctx.rng.standard_normal(K.shape[0])
    x, info = solve_general(K, rhs, return_info=True)
    again = relative_residual(K, x, rhs)
    ok = again <= 10 * max(info.residual, 1e-15) and info.residual <= 10 * max(again, 1e-15)
    return ok, again, {"claimed": info.residual}


@register("transpose_consistency", "sparse_linalg")
def _transpose(ctx):
    """(A^T)^T equals A entrywise."""
    A = assemble_curlcurl(ctx.cube_ops.V)
    diff = abs(A.T.T - A).max()
    return diff == 0, float(diff), {}


# ---------------------------------------------------------------- fe_assembly
@register("constraint_exactness", "fe_assembly")
def _constraint_exactness(ctx):
    """Boundary quadrature of |v x n|^2 is negligible for random admissible fields."""
    worst = 0.0
    for ops in ctx.all_ops.values():
        bq = boundary_quadrature(ops.mesh, degree=2 * ops.degree + 2)
        for _ in range(5):
            v = Field.from_free(ops.V, ctx.random_free(ops))
            vxn = np.cross(v.boundary_values(bq), bq.normals[:, None, :])
            tang = np.einsum("tq,tqc,tqc->", bq.weights, vxn, vxn)
            worst = max(worst, tang / compute_norm(v, "L2") ** 2)
    return worst <= 1e-20, worst, {}


@register("discrete_poincare", "fe_assembly")
def _discrete_poincare(ctx):
    """Smallest eigenvalue of the principal form on the flux-free space is positive."""
    out = {}
    for desc, ops in ctx.all_ops.items():
        C_P, lam, _, _ = discrete_poincare(ops)
        out[desc] = {"C_P": C_P, "lambda_min": lam}
    ok = all(v["lambda_min"] > 0 for v in out.values())
    return ok, min(v["lambda_min"] for v in out.values()), out


@register("matrix_symmetry", "fe_assembly")
def _matrix_symmetry(ctx):
    """curl-curl, div-div, mass and H1 matrices are symmetric."""
    worst = 0.0
    V = ctx.cube_ops.V
    for M in (assemble_curlcurl(V), assemble_divdiv(V), assemble_mass(V), assemble_h1_mass(V)):
        worst = max(worst, abs(M - M.T).max() / abs(M).max())
    return worst <= 1e-12, float(worst), {}


# ---------------------------------------------------------------- harmonic_kernel
@register("kernel_dimension", "harmonic_kernel")
def _kernel_dimension(ctx):
    """The kernel basis has one field per interior boundary component."""
    sizes = {d: (ops.basis.size, ops.mesh.n_internal) for d, ops in ctx.all_ops.items()}
    return all(a == b for a, b in sizes.values()), sizes, {}


@register("kernel_flux_identity", "harmonic_kernel")
def _kernel_flux(ctx):
    """Flux matrix is the identity (2%: diagonal relative, off-diagonal absolute); outer flux -1."""
    B = ctx.hollow_ops.basis
    F = B.flux_matrix
    dev = max(float(np.max(np.abs(np.diag(F) - 1))),
              float(np.max(np.abs(F - np.diag(np.diag(F))))) if len(F) > 1 else 0.0)
    outer = float(np.max(np.abs(B.outer_flux + 1)))
    return dev <= 0.02 and outer <= 0.02, dev, {"flux_matrix": F.tolist(), "outer": B.outer_flux.tolist()}


@register("projection_idempotence", "harmonic_kernel")
def _projection_idempotence(ctx):
    """Projecting twice onto the kernel complement equals projecting once."""
    ops = ctx.hollow_ops
    V = ConstrainedSpace(ops.mesh, "vector", ops.degree, "none")
    g = interpolate(V, lambda p: np.stack([p[:, 0] - 0.5, np.sin(p[:, 1]), p[:, 2] ** 2], axis=1))
    once = kernel_project(ops.basis, g)
    twice = kernel_project(ops.basis, once)
    diff = float(np.abs(twice.coeffs - once.coeffs).max() / max(np.abs(once.coeffs).max(), 1e-300))
    return diff <= 1e-12, diff, {}


@register("gradient_consistency", "harmonic_kernel")
def _gradient_consistency(ctx):
    """Stored gradients coincide with the gradients of the potentials at quadrature points."""
    B = ctx.hollow_ops.basis
    rule = quadrature_rule(4)
    worst = 0.0
    for q, gq in zip(B.q, B.grad_q):
        a = gq.values(rule)
        b = q.gradients(rule)[:, :, 0, :]
        worst = max(worst, float(np.abs(a - b).max() / np.abs(b).max()))
    return worst <= 1e-12, worst, {}


# ---------------------------------------------------------------- scalar_field_solvers
@register("lifting_fluxes", "scalar_field_solvers")
def _lifting(ctx):
    """Lifting has no flux through interior components and total flux equal to the integral of h."""
    ops = ctx.hollow_ops
    h = lambda p: 1.0 + p[:, 0] * p[:, 1]
    lift = divergence_lifting(ops.mesh, ops.basis, h, degree=ops.degree)
    wn = compute_norm(lift.field, "L2")
    inner = float(np.max(np.abs(lift.fluxes[1:]))) if len(lift.fluxes) > 1 else 0.0
    tot = _rel(lift.total_flux, lift.integral_h)
    return inner <= 1e-8 * wn and tot <= 1e-8, inner, {"total_rel": tot, "fluxes": lift.fluxes.tolist()}


@register("chi_vanishing_curl", "scalar_field_solvers")
def _chi_curl(ctx):
    """chi vanishes for a curl field."""
    case = builtin_cases(1.0)[0]
    chi = solve_chi(ctx.hollow, case.b)
    val = compute_norm(chi, "L2") / source_norm(case.b, ctx.hollow, 3, degree=10)
    return val <= 1e-8, val, {}


@register("max_principle", "scalar_field_solvers")
def _max_principle(ctx):
    """The harmonic extension stays within its boundary data."""
    bc = lambda p: np.sin(3 * p[:, 0]) + p[:, 1] * p[:, 2]
    worst = 0.0
    for mesh in ctx.meshes.values():
        P2 = solve_dirichlet_poisson(mesh, None, bc, degree=1, offsets=[0.3] * mesh.n_internal)
        nodes = np.array(sorted(P2.space.boundary_node_tris))
        bvals = P2.coeffs[nodes]
        lo, hi = bvals.min(), bvals.max()
        worst = max(worst, float(max(lo - P2.coeffs.min(), P2.coeffs.max() - hi, 0.0)))
    return worst <= 1e-8, worst, {}


# ---------------------------------------------------------------- mhd_linearized
@register("coercivity_witness", "mhd_linearized")
def _coercivity(ctx):
    """a((v,psi),(v,psi)) >= ||(v,psi)||^2 / C_P^2 for random flux-free pairs.

    The detail records the smallest ratio against 2 / C_P^2 as well; that
    stronger factor is not attained by the discrete form.
    """
    worst = np.inf
    out = {}
    for desc, ops in ctx.all_ops.items():
        C_P, lam, _, N = discrete_poincare(ops)
        for _ in range(ctx.samples):
            v = N @ ctx.rng.standard_normal(N.shape[1])
            psi = N @ ctx.rng.standard_normal(N.shape[1])
            a = v @ (ops.A @ v) + psi @ (ops.A @ psi)
            z = ops.z_norm(v, psi) ** 2
            worst = min(worst, a * C_P ** 2 / z)
        out[desc] = C_P
    worst = float(worst)
    return worst >= 1 - 1e-6, worst, {"C_P": out, "ratio_to_factor_two": worst / 2}


@register("coupling_neutrality", "mhd_linearized")
def _neutrality(ctx):
    """a_{w,d}((u,b),(u,b)) vanishes for random pairs."""
    worst = 0.0
    for ops in ctx.all_ops.values():
        V = ops.V
        for _ in range(ctx.samples):
            w, d, u, b = (Field.from_free(V, ctx.random_free(ops)) for _ in range(4))
            val = awd_value(V, w, d, u.coeffs, b.coeffs, u.coeffs, b.coeffs)
            scale = (compute_norm(u, "H1") + compute_norm(b, "H1")) ** 2
            worst = max(worst, abs(val) / scale)
    return worst <= 1e-10, worst, {}


@register("constants_consistency", "mhd_linearized")
def _constants(ctx):
    """Flux multipliers equal the discrete kernel-field formula in Stokes and coupled solves."""
    ops = ctx.hollow_ops
    data = ctx.hollow_data
    _, _, c, rep = solve_stokes_SN(ops.mesh, f=data.f, P0=data.P0, ops=ops)
    w = interpolate(ops.V, lambda p: np.stack([np.sin(p[:, 1]), p[:, 2], p[:, 0]], axis=1))
    sol = solve_linearized(LinearizedProblem(ops, data, w, w), recover=False)
    r1, r2 = rep.constants["c_rel_mismatch"], sol.report.constants["c_rel_mismatch"]
    return max(r1, r2) <= 1e-6, max(r1, r2), {
        "stokes_c": c.tolist(), "stokes_potential_formula": rep.constants["c_potential_formula"].tolist(),
        "linearized_c": sol.c.tolist(),
        "linearized_potential_formula": sol.report.constants["c_potential_formula"].tolist()}


@register("chi_vanishing", "mhd_linearized")
def _chi_multiplier(ctx):
    """chi of a divergence-free g vanishes; the mixed multiplier is reported alongside."""
    case = builtin_cases(1.0)[0]
    ops = ctx.cube_ops
    b, rep = solve_elliptic_EN(ops.mesh, g=case.g_elliptic, ops=ops)
    gn = source_norm(case.g_elliptic, ops.mesh, 3, degree=10)
    val = compute_norm(rep.extra["chi"], "L2") / gn
    mult = compute_norm(rep.extra["chi_multiplier"], "L2") / gn
    return val <= 1e-8, val, {"multiplier_relative": mult}


# ---------------------------------------------------------------- mhd_nonlinear
@register("uniqueness_two_guesses", "mhd_nonlinear")
def _two_guesses(ctx):
    """When the small-data indicator holds, two starts reach the same iterate."""
    case, r1, r2, est, opts = ctx.picard_runs
    ok_u, margin = uniqueness_check(est)
    ops = ctx.cube_ops
    dist = ops.z_norm(r1[0].free - r2[0].free, r1[1].free - r2[1].free)
    detail = {"uniqueness": ok_u, "margin": margin, "C_P": est.C_P, "C1": est.C1, "C2": est.C2, "M": est.M}
    return (dist <= 10 * opts.tolerance) if ok_u else True, dist, detail


@register("increment_ratios", "mhd_nonlinear")
def _increment_ratios(ctx):
    """Tail increment ratios of converged runs do not exceed one."""
    _, r1, r2, _, _ = ctx.picard_runs
    tails = [r[4].extra["max_tail_ratio"] for r in (r1, r2)]
    ok = all(t is None or t <= 1.0 for t in tails)
    return ok, tails, {"contraction": [r[4].extra["contraction_factor"] for r in (r1, r2)]}


@register("alpha_consistency", "mhd_nonlinear")
def _alpha(ctx):
    """alpha from the final multiplier equals its discrete quadrature formula."""
    ops = ctx.hollow_ops
    d = ctx.hollow_data
    scale = 0.1
    f = lambda p: scale * d.f(p)
    g = lambda p: scale * d.g(p)
    u, b, P, alpha, rep = picard_solve(None, f=f, g=g, P0=d.P0, ops=ops)
    rel = rep.constants["c_rel_mismatch"]
    return rel <= 1e-6, rel, {"alpha": alpha.tolist(),
                              "alpha_quadrature": rep.constants.get("alpha_quadrature", np.zeros(0)).tolist(),
                              "iterations": rep.iterations}


# ---------------------------------------------------------------- verify_bench
@register("mms_fd_crosscheck", "verify_bench")
def _fd(ctx):
    """Manufactured data match finite differences of the closed-form fields."""
    worst = 0.0
    for case in builtin_cases(1.0):
        worst = max(worst, max(fd_crosscheck(case).values()))
    return worst <= 1e-5, worst, {}


@register("mms_boundary_traces", "verify_bench")
def _traces(ctx):
    """Tangential traces vanish on the cube boundary and the stream case is divergence free."""
    p, n = cube_boundary_samples(1000)
    worst = 0.0
    for case in builtin_cases(1.0):
        worst = max(worst, float(np.abs(np.cross(case.u(p), n)).max()), float(np.abs(np.cross(case.b(p), n)).max()))
    q = ctx.rng.random((100, 3))
    div = float(np.abs(builtin_cases(1.0)[0].div_u(q)).max())
    return worst <= 1e-12 and div <= 1e-12, worst, {"div_u": div}


@register("registry_complete", "verify_bench")
def _complete(ctx):
    """Every required invariant has a registered check."""
    miss = missing_checks()
    return not miss, len(miss), {"missing": miss}


def select(filter_=None):
    checks = list(REGISTRY.values())
    if filter_:
        checks = [c for c in checks if filter_ in c.name or filter_ in c.module]
    return checks


def run_registry(filter_=None, cube="cube:2", hollow="hollow-box:2:1", degree=2, json_path=None,
                 samples=20, seed=0):
    """Run the (filtered) suite; returns the summary dict, also written to ``json_path``."""
    ctx = Context(cube, hollow, degree, seed, samples)
    results = []
    for chk in select(filter_):
        t0 = time.perf_counter()
        try:
            passed, value, detail = chk.func(ctx)
        except MHDPressError as exc:
            passed, value, detail = False, None, {"error": f"{type(exc).__name__}: {exc}"}
        res = CheckResult(chk.name, chk.module, bool(passed), value, detail, time.perf_counter() - t0)
        logger.info("%-28s %s (%.1fs)", chk.name, "pass" if res.passed else "FAIL", res.seconds)
        results.append(res)
    summary = {
        "passed": all(r.passed for r in results) and not missing_checks(),
        "n_checks": len(results),
        "n_failed": sum(not r.passed for r in results),
        "missing": missing_checks(),
        "meshes": [ctx.cube_desc, ctx.hollow_desc],
        "degree": degree,
        "checks": [to_jsonable(asdict(r)) for r in results],
    }
    if json_path is not None:
        with open(json_path, "w") as fh:
            json.dump(summary, fh, indent=2)
    return summary

