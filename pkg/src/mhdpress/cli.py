"""Command line: ``mhdpress solve | verify | rates``.

Exit status is 0 on success, 1 for configuration or input errors and 2 when
a solver fails (or, for ``verify``, when an invariant fails).
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .exceptions import ConfigError, IncompatibleData, MHDPressError, ParseError, SolveFailure
from .fem import ConstrainedSpace, Field, interpolate
from .harmonic import compute_harmonic_basis
from .io import RunConfig, load_config, read_vtk, write_csv, write_json, write_vtk
from .linearized import (
    LinearizedProblem,
    MHDData,
    MHDOperators,
    duality_gap,
    solve_dual,
    solve_elliptic_EN,
    solve_linearized,
    solve_stokes_SN,
)
from .mesh import builtin, load_mesh
from .nonlinear import PicardOptions, picard_solve

logger = logging.getLogger("mhdpress")

SOLVER_CHOICES = ("stokes", "elliptic", "linearized", "nonlinear", "kernel", "dual")
LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "warning": logging.WARNING,
              "info": logging.INFO, "debug": logging.DEBUG}


def _setup_logging():
    level = LOG_LEVELS.get(os.environ.get("MHDPRESS_LOG", "warn").lower(), logging.WARNING)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    logging.getLogger("mhdpress").setLevel(level)


def _common(p):
    p.add_argument("--config", help="flat key = value file; flags override its entries")
    p.add_argument("--mesh", help="mesh file (Gmsh 2.2 ASCII or native)")
    p.add_argument("--builtin", help="builtin mesh, e.g. cube:4 or hollow-box:3:1")
    p.add_argument("--degree", type=int, choices=(1, 2))
    p.add_argument("--jobs", type=int, help="parallelism cap (work is sequential)")
    p.add_argument("--out", help="output directory")


class _Parser(argparse.ArgumentParser):
    """Usage errors are configuration errors: exit status 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser():
    ap = _Parser(prog="mhdpress", description="Stationary MHD with pressure boundary data.")
    sub = ap.add_subparsers(dest="command", required=True)
    s = sub.add_parser("solve", help="run one solver and export fields")
    _common(s)
    s.add_argument("--case", help="manufactured case supplying the data (stream-cube, nonzero-div)")
    s.add_argument("--amplitude", type=float)
    s.add_argument("--data", help="VTK file with point arrays f, g, h, P0 used as data")
    s.add_argument("--solver", choices=SOLVER_CHOICES)
    s.add_argument("--tol", type=float)
    s.add_argument("--max-iters", dest="max_iters", type=int)
    s.add_argument("--damping", type=float)
    v = sub.add_parser("verify", help="run the invariant suite")
    _common(v)
    v.add_argument("--filter", help="substring of check or module names")
    r = sub.add_parser("rates", help="convergence study on refined cubes")
    _common(r)
    r.add_argument("--case")
    r.add_argument("--amplitude", type=float)
    r.add_argument("--solver", choices=SOLVER_CHOICES[:4])
    r.add_argument("--levels", type=int)
    r.add_argument("--start", type=int)
    return ap


def resolve_config(args):
    """Defaults, then the config file, then explicit flags."""
    values = {}
    if getattr(args, "config", None):
        values.update(load_config(args.config))
    names = {f.name for f in dataclasses.fields(RunConfig)}
    for key, val in vars(args).items():
        if key in names and val is not None:
            values[key] = val
    if values.get("mesh"):
        values.setdefault("builtin", None)
    cfg = RunConfig(**values)
    if cfg.mesh:
        cfg.builtin = None
        if not os.path.exists(cfg.mesh):
            raise ConfigError(f"mesh file not found: {cfg.mesh}")
    if cfg.data and not os.path.exists(cfg.data):
        raise ConfigError(f"data file not found: {cfg.data}")
    return cfg.validate()


def _mesh(cfg):
    try:
        return load_mesh(cfg.mesh) if cfg.mesh else builtin(cfg.builtin or "cube:2")
    except FileNotFoundError as exc:
        raise ConfigError(f"mesh file not found: {cfg.mesh}") from exc
    except MHDPressError as exc:
        raise ConfigError(f"load_mesh: {exc}") from exc


def _file_data(cfg, mesh):
    grid = read_vtk(cfg.data)
    if len(grid.points) != mesh.n_vertices or not np.allclose(grid.points, mesh.vertices):
        raise ConfigError("data file vertices do not match the mesh")
    V1 = ConstrainedSpace(mesh, "vector", 1, "none")
    S1 = ConstrainedSpace(mesh, "scalar", 1, "none")
    out = {}
    for key, space, nc in (("f", V1, 3), ("g", V1, 3), ("h", S1, 1), ("P0", S1, 1)):
        if key in grid.point_data:
            out[key] = Field(space, np.asarray(grid.point_data[key]).reshape(-1))
    return out


def _data(cfg, mesh, solver):
    """(f, g, h, h_grad, P0, case) from the manufactured case or a data file."""
    if cfg.data:
        d = _file_data(cfg, mesh)
        return d.get("f"), d.get("g"), d.get("h"), None, d.get("P0"), None
    if cfg.case:
        from .verify.mms import builtin_case
        try:
            case = builtin_case(cfg.case, cfg.amplitude)
        except KeyError as exc:
            raise ConfigError(str(exc)) from exc
        f, g, h, hg, P0 = case.data_for(solver)
        return f, g, h, hg, P0, case
    return None, None, None, None, None, None


def cmd_solve(cfg):
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    mesh = _mesh(cfg)
    solver = cfg.solver
    report = {"solver": solver, "mesh": cfg.mesh or cfg.builtin, "degree": cfg.degree,
              "case": cfg.case, "amplitude": cfg.amplitude, "jobs": cfg.jobs}
    if solver == "kernel":
        basis = compute_harmonic_basis(mesh, cfg.degree)
        I = basis.size
        rows = [[i + 1, *basis.flux_matrix[i]] for i in range(I)]
        write_csv(out / "flux_matrix.csv", ["i", *(f"gamma_{k + 1}" for k in range(I))], rows)
        report.update(n_internal=I, flux_matrix=basis.flux_matrix, outer_flux=basis.outer_flux,
                      surface_flux=basis.surface_flux, boundary_constants=basis.boundary_constants)
        if I:
            fields = {f"q{i + 1}": q for i, q in enumerate(basis.q)}
            write_vtk(out / "q.vtk", mesh, fields)
        write_json(out / "report.json", report)
        return 0
    f, g, h, hg, P0, case = _data(cfg, mesh, solver)
    ops = MHDOperators(mesh, cfg.degree)
    zero_v = Field(ops.V)
    zero_s = Field(ConstrainedSpace(mesh, "scalar", 1, "none"))
    chi = zero_s
    if solver == "stokes":
        u, P, c, rep = solve_stokes_SN(mesh, f=f, h=h, P0=P0, h_grad=hg, ops=ops)
        b = zero_v
        report["constants"] = {"c": c}
    elif solver == "elliptic":
        b, rep = solve_elliptic_EN(mesh, g=g, ops=ops)
        u, P, chi = zero_v, zero_s, rep.extra["chi"]
    elif solver == "linearized":
        w = interpolate(ops.V, case.u) if case else None
        d = interpolate(ops.V, case.b) if case else None
        sol = solve_linearized(LinearizedProblem(ops, MHDData(f=f, g=g, h=h, h_grad=hg, P0=P0), w, d))
        u, b, P, chi, rep = sol.u, sol.b, sol.P, sol.chi, sol.report
        report["constants"] = {"c": sol.c, "gamma": sol.gamma}
    elif solver == "nonlinear":
        opts = PicardOptions(cfg.max_iters, cfg.tol, cfg.damping)
        u, b, P, alpha, rep = picard_solve(mesh, f=f, g=g, P0=P0, h=h, opts=opts, ops=ops, h_grad=hg)
        chi = rep.extra["chi"]
        report["constants"] = {"alpha": alpha}
    elif solver == "dual":
        w = interpolate(ops.V, case.u) if case else None
        d = interpolate(ops.V, case.b) if case else None
        primal = solve_linearized(LinearizedProblem(ops, MHDData(f=f, g=g, P0=P0), w, d), recover=False)
        dual = solve_dual(ops, w, d, F=f, G=g)
        lhs, rhs, gap = duality_gap(ops, primal, dual, F=f, G=g)
        u, b, P, chi, rep = dual.v, dual.a, dual.theta, dual.tau, dual.report
        report["duality"] = {"primal_pairing": lhs, "dual_pairing": rhs, "relative_gap": gap}
    else:
        raise ConfigError(f"unknown solver {solver!r}")
    report["report"] = rep.to_dict() if hasattr(rep, "to_dict") else rep
    names = ("v", "a", "theta", "tau") if solver == "dual" else ("u", "b", "P", "chi")
    for name, fld in zip(names, (u, b, P, chi)):
        write_vtk(out / f"{name}.vtk", mesh, {name: fld})
    write_json(out / "report.json", report)
    logger.info("wrote %s", out)
    return 0


def cmd_verify(cfg):
    from .verify.registry import run_registry
    cube, hollow = "cube:2", "hollow-box:2:1"
    if cfg.mesh or (cfg.builtin and cfg.builtin != "cube:2"):
        m = _mesh(cfg)
        if m.n_internal:
            hollow = m
        else:
            cube = m
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    summary = run_registry(cfg.filter, cube=cube, hollow=hollow, degree=cfg.degree,
                           json_path=out / "verify.json")
    for c in summary["checks"]:
        print(f"{'PASS' if c['passed'] else 'FAIL'}  {c['module']}.{c['name']}")
    print(f"{summary['n_checks'] - summary['n_failed']}/{summary['n_checks']} checks passed")
    return 0 if summary["passed"] else 2


def cmd_rates(cfg):
    from .verify.convergence import convergence_study
    from .verify.mms import builtin_case
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        case = builtin_case(cfg.case or "stream-cube", cfg.amplitude)
    except KeyError as exc:
        raise ConfigError(str(exc)) from exc
    if cfg.solver not in ("stokes", "elliptic", "linearized", "nonlinear"):
        raise ConfigError(f"rates needs a PDE solver, got {cfg.solver!r}")
    picard = PicardOptions(cfg.max_iters, cfg.tol, cfg.damping)
    path = out / f"rates_{cfg.solver}.csv"
    table = convergence_study(case, cfg.solver, cfg.levels, cfg.degree, cfg.start, path, picard)
    for key in table.errors:
        if key.endswith("_L2"):
            print(key, " ".join("-" if r is None else f"{r:.2f}" for r in table.ratios(key)))
    print(f"wrote {path}")
    return 2 if table.failed else 0


COMMANDS = {"solve": cmd_solve, "verify": cmd_verify, "rates": cmd_rates}


def main(argv=None):
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg)
    except (ConfigError, ParseError, IncompatibleData, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SolveFailure as exc:
        print(f"error: solver failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
