"""Reference quadrature rules.

Triangle rules are collapsed (Duffy) tensor rules on the reference triangle
``{(xi, eta): xi, eta >= 0, xi + eta <= 1}`` with the collapse at vertex 0:

    (xi, eta) = (u (1 - v), u v),   d xi d eta = u du dv.

A Gauss-Jacobi rule in ``u`` with weight ``u^(beta + 1)`` and Gauss-Legendre
in ``v`` integrates ``|x - x_0|^beta * smooth`` exactly for polynomial smooth
parts.  The node set is symmetric under exchanging vertices 1 and 2.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi, roots_legendre


@lru_cache(maxsize=None)
def gauss_legendre01(n: int):
    x, w = roots_legendre(n)
    return 0.5 * (x + 1.0), 0.5 * w


@lru_cache(maxsize=None)
def gauss_jacobi01(n: int, beta: float):
    """Nodes and weights on ``[0, 1]`` for the weight ``u**beta``."""
    if beta <= -1.0:
        raise ValueError("Jacobi exponent must exceed -1")
    if beta == 0.0:
        return gauss_legendre01(n)
    x, w = roots_jacobi(n, 0.0, beta)
    return 0.5 * (x + 1.0), w * 0.5 ** (beta + 1.0)


@lru_cache(maxsize=None)
def collapsed_triangle(n: int, beta: float = 0.0):
    """Reference triangle rule of ``n**2`` nodes exact for ``u^beta * P_{2n-1}``.

    Returns ``(xi, eta, u, weight)`` where the weight already contains the
    collapse Jacobian and the factor ``u^beta`` has been divided out, so that
    ``sum(weight * f)`` approximates ``int f`` for integrands
    ``f ~ u^beta * smooth``.
    """
    u, wu = gauss_jacobi01(n, beta + 1.0)
    v, wv = gauss_legendre01(n)
    U, Vv = np.meshgrid(u, v, indexing="ij")
    W = np.outer(wu, wv)
    U, Vv, W = U.ravel(), Vv.ravel(), W.ravel()
    W = W * U ** (-beta)
    return U * (1.0 - Vv), U * Vv, U, W


def degree_to_points(degree: int) -> int:
    """Points per direction of a collapsed rule exact to the given degree."""
    return max(1, (degree + 2) // 2)


def line_rule(n: int, beta: float = 0.0):
    """Rule on ``[0, 1]`` for ``s^beta * smooth``; weights divided by ``s^beta``."""
    s, w = gauss_jacobi01(n, beta)
    return s, w * s ** (-beta) if beta != 0.0 else w


def trapezoid_circle(n: int, offset: float = 0.0):
    """Equispaced angles (exact for trigonometric polynomials of degree < n)."""
    t = offset + 2.0 * np.pi * np.arange(n) / n
    return t, np.full(n, 2.0 * np.pi / n)
