"""Weighted pairing against the curvature measures of a solved metric."""
from __future__ import annotations

import numpy as np

from .fem import Field


def _values(f, nodes, space):
    if isinstance(f, Field):
        return nodes.values(space, f.coefficients)
    if callable(f):
        return np.asarray(f(nodes.pts), float)
    return np.broadcast_to(np.asarray(f, float), nodes.pts.shape)


def weighted_pairing(f, sol, level: str = "ref") -> float:
    """``<f> = (1/4 pi) int f Lambda dv* + (1/4 pi) int f sigma dl*``.

    ``f`` is a Field on the solution's space, a callable of disk points or a
    constant; ``g* = e^{phi + H} g0`` is the solved metric.
    """
    from ..solver import EnergyModel
    if sol is None or getattr(sol, "U", None) is None:
        raise ValueError("weighted_pairing needs a solved configuration")
    em = EnergyModel(sol.spec, sol.disc, level)
    space = sol.disc.space
    bulk = np.sum(em.wL * np.exp(em.B @ sol.U) * _values(f, em.qb, space))
    bnd = np.sum(em.wS * np.exp(0.5 * (em.Bs @ sol.U)) * _values(f, em.qs, space))
    return float((bulk + bnd) / (4 * np.pi))
