"""Hot loops with a numba backend and a pure-numpy fallback.

The backend is chosen once at import time from the environment variable
``LIOUVLAB_BACKEND`` (``numba`` or ``numpy``; default ``numba`` when it is
importable).  Both backends return identical results up to round-off.
"""
from __future__ import annotations

import os

import numpy as np

_REQUESTED = os.environ.get("LIOUVLAB_BACKEND", "numba").strip().lower()

try:
    if _REQUESTED == "numpy":
        raise ImportError
    from numba import njit

    BACKEND = "numba"
except ImportError:
    njit = None
    BACKEND = "numpy"


# --------------------------------------------------------------------------
# point location


def _locate_numpy(pts, cand, vx, vy):
    P, K = cand.shape
    x0, y0 = vx[cand, 0], vy[cand, 0]
    ax, ay = vx[cand, 1] - x0, vy[cand, 1] - y0
    bx, by = vx[cand, 2] - x0, vy[cand, 2] - y0
    det = ax * by - ay * bx
    rx = pts.real[:, None] - x0
    ry = pts.imag[:, None] - y0
    xi = (by * rx - bx * ry) / det
    eta = (-ay * rx + ax * ry) / det
    viol = np.maximum(np.maximum(-xi, -eta), xi + eta - 1.0)
    viol = np.maximum(viol, 0.0)
    best = np.argmin(viol, axis=1)
    rows = np.arange(P)
    return cand[rows, best], xi[rows, best], eta[rows, best], viol[rows, best]


def _locate_loop(pts, cand, vx, vy):
    P, K = cand.shape
    elem = np.empty(P, np.int64)
    oxi = np.empty(P)
    oeta = np.empty(P)
    oviol = np.empty(P)
    for p in range(P):
        px = pts[p].real
        py = pts[p].imag
        bestv = np.inf
        for k in range(K):
            e = cand[p, k]
            x0 = vx[e, 0]
            y0 = vy[e, 0]
            ax = vx[e, 1] - x0
            ay = vy[e, 1] - y0
            bx = vx[e, 2] - x0
            by = vy[e, 2] - y0
            det = ax * by - ay * bx
            rx = px - x0
            ry = py - y0
            xi = (by * rx - bx * ry) / det
            eta = (-ay * rx + ax * ry) / det
            v = max(max(-xi, -eta), xi + eta - 1.0)
            if v < 0.0:
                v = 0.0
            if v < bestv:
                bestv = v
                elem[p] = e
                oxi[p] = xi
                oeta[p] = eta
                oviol[p] = v
                if v == 0.0:
                    break
    return elem, oxi, oeta, oviol


# --------------------------------------------------------------------------
# dense kernel sums  sum_j w_j k(x_i - y_j)


def _kernel_sums_numpy(x, y, w, chunk=2048):
    """Return ``sum_j w_j ln|x-y|``, ``sum_j w_j/(x-y)``, ``sum_j w_j/(x-y)^2``."""
    m = x.size
    s0 = np.zeros(m)
    s1 = np.zeros(m, complex)
    s2 = np.zeros(m, complex)
    for i in range(0, m, chunk):
        d = x[i:i + chunk, None] - y[None, :]
        inv = 1.0 / d
        s0[i:i + chunk] = np.log(np.abs(d)) @ w
        s1[i:i + chunk] = inv @ w
        s2[i:i + chunk] = (inv * inv) @ w
    return s0, s1, s2


def _kernel_sums_loop(x, y, w):
    m = x.size
    n = y.size
    s0 = np.zeros(m)
    s1 = np.zeros(m, np.complex128)
    s2 = np.zeros(m, np.complex128)
    for i in range(m):
        a0 = 0.0
        a1 = 0.0 + 0.0j
        a2 = 0.0 + 0.0j
        xi = x[i]
        for j in range(n):
            d = xi - y[j]
            r2 = d.real * d.real + d.imag * d.imag
            inv = d.conjugate() / r2
            a0 += w[j] * 0.5 * np.log(r2)
            a1 += w[j] * inv
            a2 += w[j] * inv * inv
        s0[i] = a0
        s1[i] = a1
        s2[i] = a2
    return s0, s1, s2


def _cauchy_pair_numpy(x, y, w, chunk=2048):
    """``sum_j w_j (1/(x - y_j) + 1/(x - conj y_j))``."""
    out = np.zeros(x.size, complex)
    for i in range(0, x.size, chunk):
        xi = x[i:i + chunk, None]
        out[i:i + chunk] = (1.0 / (xi - y[None, :]) + 1.0 / (xi - np.conj(y)[None, :])) @ w
    return out


def _cauchy_pair_loop(x, y, w):
    m = x.size
    n = y.size
    out = np.zeros(m, np.complex128)
    for i in range(m):
        xr = x[i].real
        xim = x[i].imag
        ar = 0.0
        ai = 0.0
        for j in range(n):
            dr = xr - y[j].real
            d1 = xim - y[j].imag
            d2 = xim + y[j].imag
            q1 = w[j] / (dr * dr + d1 * d1)
            q2 = w[j] / (dr * dr + d2 * d2)
            ar += dr * (q1 + q2)
            ai -= d1 * q1 + d2 * q2
        out[i] = ar + 1j * ai
    return out


# --------------------------------------------------------------------------
# exponential sums used by the stochastic layer


def _expsum_numpy(X, A, V, gamma, c_shift):
    """Row sums ``sum_i A_i exp(gamma X_i - gamma^2 V_i c_shift)``."""
    return np.exp(gamma * X - (gamma * gamma * c_shift) * V[None, :]) @ A


def _expsum_loop(X, A, V, gamma, c_shift):
    n, m = X.shape
    out = np.zeros(n)
    g2 = gamma * gamma * c_shift
    for s in range(n):
        acc = 0.0
        for i in range(m):
            acc += A[i] * np.exp(gamma * X[s, i] - g2 * V[i])
        out[s] = acc
    return out


if BACKEND == "numba":
    _locate_jit = njit(cache=True)(_locate_loop)
    _kernel_jit = njit(cache=True)(_kernel_sums_loop)
    _expsum_jit = njit(cache=True)(_expsum_loop)
    _cauchy_jit = njit(cache=True)(_cauchy_pair_loop)

    def cauchy_pair(x, y, w):
        return _cauchy_jit(np.ascontiguousarray(x, np.complex128),
                           np.ascontiguousarray(y, np.complex128),
                           np.ascontiguousarray(w, np.float64))

    def locate_candidates(pts, cand, vx, vy):
        return _locate_jit(np.ascontiguousarray(pts, np.complex128),
                           np.ascontiguousarray(cand, np.int64),
                           np.ascontiguousarray(vx), np.ascontiguousarray(vy))

    def kernel_sums(x, y, w):
        return _kernel_jit(np.ascontiguousarray(x, np.complex128),
                           np.ascontiguousarray(y, np.complex128),
                           np.ascontiguousarray(w, np.float64))

    def expsum(X, A, V, gamma, c_shift=0.5):
        return _expsum_jit(np.ascontiguousarray(X, np.float64), np.ascontiguousarray(A, np.float64),
                           np.ascontiguousarray(V, np.float64), float(gamma), float(c_shift))
else:
    def cauchy_pair(x, y, w):
        return _cauchy_pair_numpy(np.asarray(x, complex), np.asarray(y, complex),
                                  np.asarray(w, float))

    def locate_candidates(pts, cand, vx, vy):
        return _locate_numpy(np.asarray(pts, complex), np.asarray(cand), vx, vy)

    def kernel_sums(x, y, w):
        return _kernel_sums_numpy(np.asarray(x, complex), np.asarray(y, complex),
                                  np.asarray(w, float))

    def expsum(X, A, V, gamma, c_shift=0.5):
        return _expsum_numpy(np.asarray(X, float), np.asarray(A, float),
                             np.asarray(V, float), float(gamma), float(c_shift))


# pure-numpy references, always available (used by the benchmark and tests)
locate_candidates_numpy = _locate_numpy
kernel_sums_numpy = _kernel_sums_numpy
expsum_numpy = _expsum_numpy
cauchy_pair_numpy = _cauchy_pair_numpy
