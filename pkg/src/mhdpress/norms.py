"""Discrete norms and error norms by elementwise quadrature."""
from __future__ import annotations

import re
from fractions import Fraction

import numpy as np

from .assembly import _weights, evaluate_source
from .exceptions import UnsupportedNorm
from .fem import Field
from .quadrature import quadrature_rule

ALLOWED_P = (1.5, 2.0, 3.0)
_W_RE = re.compile(r"^W([01])[_,]([0-9./]+)$")


def parse_norm(norm_id):
    """Return (kind, m, p) with kind in {L, W, Hcurl, Hdiv}."""
    key = norm_id.strip()
    if key in ("L2", "L4"):
        return "L", 0, float(key[1])
    if key == "H1":
        return "W", 1, 2.0
    if key in ("Hcurl", "Hdiv"):
        return key, 0, 2.0
    m = _W_RE.match(key)
    if m:
        p = float(Fraction(m.group(2)))
        if p in ALLOWED_P:
            return "W", int(m.group(1)), p
    raise UnsupportedNorm(f"unknown norm {norm_id!r}")


def _integrands(field, rule, kind, m):
    vals = field.values(rule)
    parts = [np.linalg.norm(vals, axis=-1)]
    if kind == "W" and m == 1:
        parts.append(np.linalg.norm(field.gradients(rule), axis=(-2, -1)))
    elif kind == "Hcurl":
        parts.append(np.linalg.norm(field.curl(rule), axis=-1))
    elif kind == "Hdiv":
        parts.append(np.abs(field.div(rule)))
    return parts


def _combine(parts, wq, p):
    return float(sum(np.einsum("tq,tq->", wq, a ** p) for a in parts) ** (1.0 / p))


def compute_norm(field, norm_id, degree=None):
    """Norm of a field by quadrature; for p != 2 integrates |.|^p and takes the p-th root.

    ``H1`` is (||v||^2 + ||grad v||^2)^(1/2); ``W1_p`` the analogous p-sum.
    """
    kind, m, p = parse_norm(norm_id)
    if kind in ("Hcurl", "Hdiv") and field.space.kind != "vector":
        raise UnsupportedNorm(f"{norm_id} needs a vector field")
    rule = quadrature_rule(degree or field.space.quad_degree + 2)
    return _combine(_integrands(field, rule, kind, m), _weights(field.mesh, rule), p)


def compute_error(field, exact, exact_grad=None, norm_id="L2", degree=None):
    """Norm of (field - exact); ``exact_grad`` maps (N, 3) to (N, ncomp, 3) for W1 norms."""
    kind, m, p = parse_norm(norm_id)
    rule = quadrature_rule(degree or max(field.space.quad_degree + 2, 8))
    nc = field.space.ncomp
    mesh = field.mesh
    diff = field.values(rule) - evaluate_source(exact, mesh, rule, nc)
    parts = [np.linalg.norm(diff, axis=-1)]
    if kind == "W" and m == 1:
        if exact_grad is None:
            raise UnsupportedNorm("W1 error needs the exact gradient")
        g = evaluate_source(lambda x: np.asarray(exact_grad(x)).reshape(len(x), -1), mesh, rule, 3 * nc)
        gd = field.gradients(rule) - g.reshape(g.shape[:2] + (nc, 3))
        parts.append(np.linalg.norm(gd, axis=(-2, -1)))
    elif kind != "L" and not (kind == "W" and m == 0):
        raise UnsupportedNorm(f"error norm {norm_id} not supported")
    return _combine(parts, _weights(mesh, rule), p)


def field_difference_norm(a, b, norm_id="L2", degree=None):
    """Norm of a - b for two fields on the same mesh, possibly different spaces."""
    kind, m, p = parse_norm(norm_id)
    rule = quadrature_rule(degree or max(a.space.quad_degree, b.space.quad_degree) + 2)
    parts = [np.linalg.norm(a.values(rule) - b.values(rule), axis=-1)]
    if kind == "W" and m == 1:
        parts.append(np.linalg.norm(a.gradients(rule) - b.gradients(rule), axis=(-2, -1)))
    elif kind != "L" and not (kind == "W" and m == 0):
        raise UnsupportedNorm(f"difference norm {norm_id} not supported")
    return _combine(parts, _weights(a.mesh, rule), p)


def source_norm(src, mesh, ncomp, p=2.0, degree=6):
    """L^p norm of a data source (callable, Field, constant or None)."""
    rule = quadrature_rule(degree)
    vals = evaluate_source(src, mesh, rule, ncomp)
    return _combine([np.linalg.norm(vals, axis=-1)], _weights(mesh, rule), p)


__all__ = ["compute_norm", "compute_error", "field_difference_norm", "source_norm", "parse_norm", "Field"]
