"""Quadrature rules on the reference tetrahedron and triangle.

Low degrees use the classical symmetric rules; anything above uses a
collapsed (Stroud conical product) Gauss-Jacobi rule, which is exact to
any requested degree.
"""
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi

from .exceptions import UnsupportedDegree

MAX_DEGREE = 24


@dataclass(frozen=True)
class QuadRule:
    """Points in barycentric coordinates and weights summing to the reference volume."""

    points: np.ndarray  # (nq, dim+1) barycentric
    weights: np.ndarray  # (nq,)
    degree: int

    @property
    def cartesian(self):
        return self.points[:, 1:]

    def __len__(self):
        return len(self.weights)


def _gauss_jacobi01(n, alpha):
    # Gauss-Jacobi on [0, 1] for the weight (1 - t)**alpha
    x, w = roots_jacobi(n, alpha, 0.0)
    return (x + 1.0) / 2.0, w / 2.0 ** (alpha + 1)


@lru_cache(maxsize=None)
def quadrature_rule(degree):
    """Tetrahedral rule exact for polynomials of total degree ``degree``."""
    if degree < 1 or degree > MAX_DEGREE:
        raise UnsupportedDegree(f"tetrahedral quadrature degree {degree} not in [1, {MAX_DEGREE}]")
    if degree == 1:
        pts = np.array([[0.25, 0.25, 0.25, 0.25]])
        return QuadRule(pts, np.array([1.0 / 6.0]), 1)
    if degree == 2:
        a, b = 0.5854101966249685, 0.1381966011250105
        pts = np.full((4, 4), b)
        np.fill_diagonal(pts, a)
        return QuadRule(pts, np.full(4, 1.0 / 24.0), 2)
    n = (degree + 2) // 2
    a, wa = _gauss_jacobi01(n, 2.0)
    b, wb = _gauss_jacobi01(n, 1.0)
    c, wc = _gauss_jacobi01(n, 0.0)
    A, B, C = np.meshgrid(a, b, c, indexing="ij")
    W = wa[:, None, None] * wb[None, :, None] * wc[None, None, :]
    x = A
    y = B * (1.0 - A)
    z = C * (1.0 - A) * (1.0 - B)
    cart = np.stack([x.ravel(), y.ravel(), z.ravel()], axis=1)
    bary = np.column_stack([1.0 - cart.sum(axis=1), cart])
    return QuadRule(bary, W.ravel(), degree)


@lru_cache(maxsize=None)
def triangle_rule(degree):
    """Rule on the reference triangle (area 1/2), barycentric points."""
    if degree < 1 or degree > MAX_DEGREE:
        raise UnsupportedDegree(f"triangle quadrature degree {degree} not in [1, {MAX_DEGREE}]")
    if degree == 1:
        return QuadRule(np.full((1, 3), 1.0 / 3.0), np.array([0.5]), 1)
    if degree == 2:
        pts = np.full((3, 3), 1.0 / 6.0)
        np.fill_diagonal(pts, 2.0 / 3.0)
        return QuadRule(pts, np.full(3, 1.0 / 6.0), 2)
    n = (degree + 2) // 2
    a, wa = _gauss_jacobi01(n, 1.0)
    b, wb = _gauss_jacobi01(n, 0.0)
    A, B = np.meshgrid(a, b, indexing="ij")
    W = wa[:, None] * wb[None, :]
    x = A
    y = B * (1.0 - A)
    cart = np.stack([x.ravel(), y.ravel()], axis=1)
    bary = np.column_stack([1.0 - cart.sum(axis=1), cart])
    return QuadRule(bary, W.ravel(), degree)
