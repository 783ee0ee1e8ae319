"""Manufactured solutions with data obtained by symbolic differentiation."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import sympy as sy

logger = logging.getLogger(__name__)

X, Y, Z = sy.symbols("x y z", real=True)
COORDS = (X, Y, Z)


def _curl(v):
    return sy.Matrix([sy.diff(v[2], Y) - sy.diff(v[1], Z),
                      sy.diff(v[0], Z) - sy.diff(v[2], X),
                      sy.diff(v[1], X) - sy.diff(v[0], Y)])


def _div(v):
    return sum(sy.diff(v[i], c) for i, c in enumerate(COORDS))


def _grad(s):
    return sy.Matrix([sy.diff(s, c) for c in COORDS])


def _lap(v):
    return sy.Matrix([sum(sy.diff(v[i], c, 2) for c in COORDS) for i in range(3)])


def _jac(v):
    return sy.Matrix(3, 3, lambda i, j: sy.diff(v[i], COORDS[j]))


def _vector_fn(expr):
    fn = sy.lambdify(COORDS, list(expr), "numpy")

    def call(p):
        p = np.asarray(p, dtype=float)
        vals = fn(p[:, 0], p[:, 1], p[:, 2])
        return np.stack([np.broadcast_to(np.asarray(v, dtype=float), (len(p),)) for v in vals], axis=1)
    return call


def _scalar_fn(expr):
    fn = sy.lambdify(COORDS, expr, "numpy")

    def call(p):
        p = np.asarray(p, dtype=float)
        return np.broadcast_to(np.asarray(fn(p[:, 0], p[:, 1], p[:, 2]), dtype=float), (len(p),)).copy()
    return call


def _matrix_fn(expr):
    flat = _vector_fn(list(expr))

    def call(p):
        return flat(p).reshape(-1, 3, 3)
    return call


@dataclass
class MMSCase:
    """Closed-form (u, b, P) with the induced data for each solver.

    Data attributes are callables on (N, 3) point arrays.  ``f``/``g`` are
    the full nonlinear (equivalently, linearized with w = u, d = b)
    forcings; ``f_stokes`` and ``g_elliptic`` drop the coupling terms.
    """

    name: str
    amplitude: float
    domain: str
    u: object
    b: object
    P: object
    grad_u: object
    grad_b: object
    grad_P: object
    div_u: object
    f: object
    g: object
    f_stokes: object
    g_elliptic: object
    h: object
    h_grad: object
    P0: object
    linear_only: bool = False
    symbolic: dict = field(default_factory=dict, repr=False)

    def data_for(self, solver):
        """Tuple (f, g, h, h_grad, P0) appropriate for a solver id."""
        hh = None if self.h_zero else self.h
        hg = None if self.h_zero else self.h_grad
        if solver == "stokes":
            return self.f_stokes, None, hh, hg, self.P0
        if solver == "elliptic":
            return None, self.g_elliptic, None, None, None
        return self.f, self.g, hh, hg, self.P0

    @property
    def h_zero(self):
        return self.symbolic.get("h") == 0


@lru_cache(maxsize=None)
def _build(name, amplitude, eps_b):
    a = sy.nsimplify(amplitude) if amplitude in (0, 1) else sy.Float(amplitude)
    pi = sy.pi
    chi_s = sy.sin(pi * X) ** 2 * sy.sin(pi * Y) ** 2 * sy.sin(pi * Z)
    chi_b = eps_b * sy.sin(pi * X) * sy.sin(pi * Y) ** 2 * sy.sin(pi * Z) ** 2
    u = a * _curl(sy.Matrix([0, 0, chi_s]))
    b = a * _curl(sy.Matrix([chi_b, 0, 0]))
    P = a * sy.cos(pi * X) * sy.cos(pi * Y) * sy.cos(pi * Z)
    linear_only = False
    if name == "nonzero-div":
        phi = (X * (1 - X) * Y * (1 - Y) * Z * (1 - Z)) ** 2
        u = u + a * _grad(phi)
        linear_only = True
    elif name != "stream-cube":
        raise KeyError(f"unknown manufactured case {name!r}")
    h = sy.simplify(_div(u)) if name == "nonzero-div" else sy.S(0)
    curl_u, curl_b = _curl(u), _curl(b)
    # -Lap u = curl curl u - grad div u
    f_st = -_lap(u) + _grad(P)
    f = f_st + curl_u.cross(u) - curl_b.cross(b)
    g_el = _curl(curl_b)
    g = g_el - _curl(u.cross(b))
    return dict(u=u, b=b, P=P, h=h, f=f, g=g, f_stokes=f_st, g_elliptic=g_el), linear_only


def builtin_case(name="stream-cube", amplitude=1.0, eps_b=1.0):
    """Build a manufactured case; ``amplitude`` scales u, b and P together."""
    sym, linear_only = _build(name, float(amplitude), float(eps_b))
    return MMSCase(
        name=name,
        amplitude=float(amplitude),
        domain="cube",
        u=_vector_fn(sym["u"]),
        b=_vector_fn(sym["b"]),
        P=_scalar_fn(sym["P"]),
        grad_u=_matrix_fn(_jac(sym["u"])),
        grad_b=_matrix_fn(_jac(sym["b"])),
        grad_P=_vector_fn(_grad(sym["P"])),
        div_u=_scalar_fn(_div(sym["u"])),
        f=_vector_fn(sym["f"]),
        g=_vector_fn(sym["g"]),
        f_stokes=_vector_fn(sym["f_stokes"]),
        g_elliptic=_vector_fn(sym["g_elliptic"]),
        h=_scalar_fn(sym["h"]),
        h_grad=_vector_fn(_grad(sym["h"])),
        P0=_scalar_fn(sym["P"]),
        linear_only=linear_only,
        symbolic=sym,
    )


def builtin_cases(amplitude=1.0):
    """The stock cases: ``stream-cube`` (divergence free) and ``nonzero-div``."""
    return [builtin_case("stream-cube", amplitude), builtin_case("nonzero-div", amplitude)]


def cube_boundary_samples(n, seed=0):
    """Random points on the faces of the unit cube with their outward normals."""
    rng = np.random.default_rng(seed)
    face = rng.integers(0, 6, n)
    p = rng.random((n, 3))
    axis, side = face // 2, face % 2
    p[np.arange(n), axis] = side
    normals = np.zeros((n, 3))
    normals[np.arange(n), axis] = np.where(side == 1, 1.0, -1.0)
    return p, normals
