"""Finite-difference cross-check of manufactured data against the closed-form fields."""
from __future__ import annotations

import numpy as np

# fourth-order central stencils
_D1 = ((-2, 1 / 12), (-1, -8 / 12), (1, 8 / 12), (2, -1 / 12))
_D2 = ((-2, -1 / 12), (-1, 16 / 12), (0, -30 / 12), (1, 16 / 12), (2, -1 / 12))


def _shift(fn, p, axis, s):
    q = p.copy()
    q[:, axis] += s
    return np.asarray(fn(q), dtype=float)


def fd_gradient(fn, p, step=1e-3):
    """Jacobian of fn at points p: shape (N, ncomp, 3) (ncomp axis dropped for scalars)."""
    cols = [sum(c * _shift(fn, p, a, k * step) for k, c in _D1) / step for a in range(3)]
    return np.stack(cols, axis=-1)


def fd_laplacian(fn, p, step=1e-3):
    return sum(sum(c * _shift(fn, p, a, k * step) for k, c in _D2) / step ** 2 for a in range(3))


def _curl_from_jac(J):
    return np.stack([J[:, 2, 1] - J[:, 1, 2], J[:, 0, 2] - J[:, 2, 0], J[:, 1, 0] - J[:, 0, 1]], axis=1)


def fd_forcing(case, p, step=1e-3):
    """Recompute every data field of ``case`` at ``p`` from u, b and P alone."""
    Ju = fd_gradient(case.u, p, step)
    Jb = fd_gradient(case.b, p, step)
    gP = fd_gradient(case.P, p, step)
    u, b = case.u(p), case.b(p)
    cu, cb = _curl_from_jac(Ju), _curl_from_jac(Jb)
    f_st = -fd_laplacian(case.u, p, step) + gP
    f = f_st + np.cross(cu, u) - np.cross(cb, b)
    curl_b = lambda q: _curl_from_jac(fd_gradient(case.b, q, step))
    g_el = _curl_from_jac(fd_gradient(curl_b, p, step))
    uxb = lambda q: np.cross(case.u(q), case.b(q))
    g = g_el - _curl_from_jac(fd_gradient(uxb, p, step))
    h = np.trace(Ju, axis1=1, axis2=2)
    return {"f": f, "f_stokes": f_st, "g": g, "g_elliptic": g_el, "h": h,
            "grad_u": Ju, "grad_b": Jb, "grad_P": gP}


def fd_crosscheck(case, n_points=20, seed=0, step=1e-3):
    """Largest absolute deviation per data field between closed form and finite differences."""
    rng = np.random.default_rng(seed)
    p = 0.1 + 0.8 * rng.random((n_points, 3))
    fd = fd_forcing(case, p, step)
    return {k: float(np.max(np.abs(np.asarray(getattr(case, k)(p)) - v))) for k, v in fd.items()}
