"""Uniform-refinement convergence studies for the manufactured cases."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ..exceptions import SolveFailure
from ..linearized import (
    LinearizedProblem,
    MHDData,
    MHDOperators,
    solve_elliptic_EN,
    solve_linearized,
    solve_stokes_SN,
)
from ..mesh import unit_cube
from ..nonlinear import picard_solve
from ..norms import compute_error, field_difference_norm
from ..fem import interpolate

logger = logging.getLogger(__name__)

SOLVERS = ("stokes", "elliptic", "linearized", "nonlinear")
ERROR_NORMS = ("L2", "H1", "W0_3/2", "W0_3")


@dataclass
class RateTable:
    """Errors per level and observed orders log2(e_k / e_{k+1}).

    ``errors`` maps a key such as ``"u_L2"`` to one value per level (NaN on
    failed levels); ``failed`` holds the level indices that did not finish.
    """

    solver: str
    case: str
    degree: int
    h: list = field(default_factory=list)
    dofs: list = field(default_factory=list)
    errors: dict = field(default_factory=dict)
    failed: list = field(default_factory=list)
    notes: dict = field(default_factory=dict)

    @property
    def levels(self):
        return len(self.h)

    def ratios(self, key):
        """Successive ratios e_k / e_{k+1}; None where undefined (zero, NaN or one level)."""
        e = self.errors[key]
        out = []
        for a, b in zip(e[:-1], e[1:]):
            ok = np.isfinite(a) and np.isfinite(b) and b > 0 and a > 1e-13
            out.append(a / b if ok else None)
        return out

    def orders(self, key):
        return [None if r is None else math.log2(r) for r in self.ratios(key)]

    def min_ratio(self, key):
        r = [x for x in self.ratios(key) if x is not None]
        return min(r) if r else None

    def to_csv(self, path):
        """Columns: level, h, dofs, one per error key, then one ratio column per key."""
        keys = list(self.errors)
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["level", "h", "dofs", *keys, *(f"ratio_{k}" for k in keys), "status"])
            ratios = {k: [None] + self.ratios(k) for k in keys}
            for i in range(self.levels):
                row = [i, repr(self.h[i]), self.dofs[i]]
                row += ["" if not np.isfinite(self.errors[k][i]) else repr(float(self.errors[k][i])) for k in keys]
                row += ["" if ratios[k][i] is None else repr(float(ratios[k][i])) for k in keys]
                row.append("failed" if i in self.failed else "ok")
                wr.writerow(row)
        return path


def _errors(out, fields, case):
    exact = {"u": (case.u, case.grad_u), "b": (case.b, case.grad_b), "P": (case.P, case.grad_P)}
    for name, fld in fields.items():
        ex, gr = exact[name]
        for norm in ERROR_NORMS:
            if name == "P" and norm == "H1":
                gp = lambda p, g=gr: g(p)[:, None, :]
                out[f"{name}_{norm}"] = compute_error(fld, ex, gp, norm)
            else:
                out[f"{name}_{norm}"] = compute_error(fld, ex, gr, norm)


def _run_level(case, solver, mesh, degree, picard):
    ops = MHDOperators(mesh, degree)
    f, g, h, hg, P0 = case.data_for(solver)
    errs, notes = {}, {}
    if solver == "stokes":
        u, P, c, rep = solve_stokes_SN(mesh, f=f, h=h, P0=P0, h_grad=hg, ops=ops)
        _errors(errs, {"u": u, "P": P}, case)
        notes["pi_vs_P_L2"] = field_difference_norm(P, rep.extra["pi"])
    elif solver == "elliptic":
        b, rep = solve_elliptic_EN(mesh, g=g, ops=ops)
        _errors(errs, {"b": b}, case)
    elif solver == "linearized":
        w, d = interpolate(ops.V, case.u), interpolate(ops.V, case.b)
        sol = solve_linearized(LinearizedProblem(ops, MHDData(f=f, g=g, h=h, h_grad=hg, P0=P0), w, d))
        _errors(errs, {"u": sol.u, "b": sol.b, "P": sol.P}, case)
        notes["pi_vs_P_L2"] = field_difference_norm(sol.P, sol.pi)
        rep = sol.report
    elif solver == "nonlinear":
        if not case.h_zero:
            raise ValueError("the nonlinear solver needs a divergence-free case (h = 0)")
        u, b, P, alpha, rep = picard_solve(mesh, f=f, g=g, P0=P0, h=None, opts=picard, ops=ops)
        _errors(errs, {"u": u, "b": b, "P": P}, case)
        notes["iterations"] = rep.iterations
    else:
        raise ValueError(f"unknown solver {solver!r}; expected one of {SOLVERS}")
    return ops.V.n_free, errs, notes, rep


def convergence_study(case, solver="stokes", levels=3, degree=2, start=2, csv_path=None, picard=None):
    """Solve ``case`` on cube:start, cube:2 start, ... and tabulate the errors.

    A level whose solve fails (for instance a diverged Picard loop) is kept
    as a failed row with NaN errors instead of aborting the study.
    """
    if levels < 2:
        raise ValueError("a rate table needs at least two levels")
    table = RateTable(solver, case.name, degree)
    for k in range(levels):
        n = start * 2 ** k
        mesh = unit_cube(n)
        table.h.append(1.0 / n)
        try:
            dofs, errs, notes, rep = _run_level(case, solver, mesh, degree, picard)
        except SolveFailure as exc:
            logger.warning("level %d (cube:%d) failed: %s", k, n, exc)
            table.failed.append(k)
            table.dofs.append(0)
            for key in table.errors:
                table.errors[key].append(float("nan"))
            table.notes[k] = {"error": str(exc)}
            continue
        table.dofs.append(dofs)
        for key, val in errs.items():
            table.errors.setdefault(key, [float("nan")] * k).append(val)
        table.notes[k] = notes
        logger.info("%s cube:%d dofs=%d %s", solver, n, dofs,
                    " ".join(f"{k_}={v:.3e}" for k_, v in errs.items() if k_.endswith("L2")))
    if csv_path is not None:
        table.to_csv(csv_path)
    return table
