"""Compatibility audit of magnetic-field data g."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..assembly import _weights, evaluate_source
from ..harmonic import kernel_pairings
from ..norms import compute_norm
from ..quadrature import quadrature_rule
from ..scalar import solve_chi

logger = logging.getLogger(__name__)


@dataclass
class CompatReport:
    """Outcome of :func:`compat_audit`; relative quantities are scaled by ||g||_L2."""

    chi_norm: float
    chi_relative: float
    div_residual: float
    pairings: np.ndarray
    pairings_relative: np.ndarray
    kernel_energies: np.ndarray
    g_norm: float
    threshold: float
    passed: bool
    reasons: list = field(default_factory=list)

    def to_dict(self):
        return {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in self.__dict__.items()}


def _l2(src, mesh, degree=6):
    rule = quadrature_rule(degree)
    v = evaluate_source(src, mesh, rule, 3)
    return float(np.sqrt(np.einsum("tq,tqc,tqc->", _weights(mesh, rule), v, v)))


def compat_audit(mesh, basis, g=None, threshold=1e-6, g_curl=None, degree=1):
    """Check div g = 0 (through chi) and orthogonality of g to the harmonic kernel.

    ``div_residual`` is ||grad chi||_L2, the discrete H^-1 size of div g.
    The audit never raises; ``passed`` is False once a relative measure
    exceeds ``threshold``.
    """
    g_norm = _l2(g, mesh) if g is not None else 0.0
    scale = max(g_norm, 1e-300)
    chi = solve_chi(mesh, g, degree=degree)
    chi_norm = compute_norm(chi, "L2")
    div_res = float(np.sqrt(max(compute_norm(chi, "H1") ** 2 - chi_norm ** 2, 0.0)))
    pair = kernel_pairings(basis, g, g_curl) if basis.size else np.zeros(0)
    energies = np.array([compute_norm(gq, "L2") ** 2 for gq in basis.grad_q])
    pair_rel = np.abs(pair) / (scale * np.sqrt(energies)) if len(pair) else np.zeros(0)
    reasons = []
    if g_norm > 0:
        if chi_norm / scale > threshold:
            reasons.append(f"chi relative norm {chi_norm / scale:.3e}")
        if div_res / scale > threshold:
            reasons.append(f"divergence residual {div_res / scale:.3e}")
        for i, r in enumerate(pair_rel):
            if r > threshold:
                reasons.append(f"kernel pairing {i + 1} relative {r:.3e}")
    rep = CompatReport(chi_norm, chi_norm / scale if g_norm else 0.0, div_res, pair, pair_rel, energies,
                       g_norm, threshold, not reasons, reasons)
    logger.info("compat audit: %s", "pass" if rep.passed else "; ".join(reasons))
    return rep
