"""The explicit singular part ``H = sum_p -2 a~_p G0(., x_p)`` of a divisor.

In disk coordinates every term splits into ``2 c_p ln|w - w_p|`` plus a
smooth remainder, where ``c_p`` is the bulk weight ``a`` or the boundary
weight ``b``.  Dropping the logarithm of one puncture analytically gives the
stable factorisation ``e^{H} = |w - w_p|^{2 c_p} e^{H_p}`` used by the
singular quadrature.
"""
from __future__ import annotations

import numpy as np

from . import geometry as geo


def disk_green(w, v):
    """Neumann Green function in disk coordinates.

    ``-ln|w - v| - ln|1 - w conj(v)| - w0(w) - w0(v) - 1``; equal to
    ``green(cayley_inv(w), cayley_inv(v))``.
    """
    w = np.asarray(w, complex)
    v = np.asarray(v, complex)
    return (-np.log(np.abs(w - v)) - np.log(np.abs(1.0 - w * np.conj(v)))
            - geo.conformal_exponent(w) - geo.conformal_exponent(v) - 1.0)


class SingularPart:
    """Singular part of a divisor, evaluated in disk or half-plane coordinates."""

    def __init__(self, divisor: geo.Divisor):
        self.divisor = divisor
        pts = list(divisor.punctures)
        self.punctures = pts
        self.is_bulk = np.array([p.is_bulk for p in pts], bool)
        self.c = np.array([p.weight for p in pts], float)
        self.green_weight = np.array([p.green_weight for p in pts], float)
        self.x = np.array([p.location for p in pts], complex)
        wp = geo.cayley(self.x) if pts else np.zeros(0, complex)
        wp = np.where(self.is_bulk, wp, wp / np.where(np.abs(wp) > 0, np.abs(wp), 1.0))
        self.w = np.atleast_1d(wp)

    def __len__(self):
        return len(self.punctures)

    # ---------------------------------------------------------------- disk
    def remainder(self, w, p: int):
        """Smooth part of puncture ``p``'s term after removing ``2 c_p ln|w - w_p|``."""
        w = np.asarray(w, complex)
        c, wp = self.c[p], self.w[p]
        if self.is_bulk[p]:
            return 2.0 * c * (np.log(np.abs(1.0 - w * np.conj(wp)))
                              + geo.conformal_exponent(w) + geo.conformal_exponent(wp) + 1.0)
        return c * (geo.conformal_exponent(w) + 1.0)

    def log_term(self, w, p: int):
        return 2.0 * self.c[p] * np.log(np.abs(np.asarray(w, complex) - self.w[p]))

    def value(self, w, exclude: int | None = None):
        """``H`` at disk points; with ``exclude`` the log of that puncture is dropped."""
        w = np.asarray(w, complex)
        out = np.zeros(w.shape)
        for p in range(len(self)):
            out += self.remainder(w, p)
            if p != exclude:
                out += self.log_term(w, p)
        return out

    def nearest(self, w):
        """Index of the nearest puncture image to each disk point (-1 if none)."""
        w = np.asarray(w, complex)
        if len(self) == 0:
            return np.full(w.shape, -1, int)
        return np.argmin(np.abs(w[..., None] - self.w), axis=-1)

    # ---------------------------------------------------------------- half-plane
    def value_x(self, x):
        x = np.asarray(x, complex)
        out = np.zeros(x.shape)
        for p in range(len(self)):
            out += -2.0 * self.green_weight[p] * geo.green(x, self.x[p])
        return out

    def dx(self, x, exclude: int | None = None):
        """Wirtinger derivative of ``H`` in half-plane coordinates.

        With ``exclude`` the pole ``c_p/(x - x_p)`` of that puncture is dropped.
        """
        x = np.asarray(x, complex)
        out = np.zeros(x.shape, complex)
        for p in range(len(self)):
            g = self.green_weight[p]
            xp = self.x[p]
            if self.is_bulk[p]:
                term = g / (x - np.conj(xp)) + 2 * g * geo.d_conformal_exponent(x)
                if p != exclude:
                    term = term + g / (x - xp)
            else:
                term = 2 * g * geo.d_conformal_exponent(x)
                if p != exclude:
                    term = term + 2 * g / (x - xp)
            out += term
        return out

    def dxx(self, x, exclude: int | None = None):
        x = np.asarray(x, complex)
        out = np.zeros(x.shape, complex)
        for p in range(len(self)):
            g = self.green_weight[p]
            xp = self.x[p]
            if self.is_bulk[p]:
                term = -g / (x - np.conj(xp)) ** 2 + 2 * g * geo.d2_conformal_exponent(x)
                if p != exclude:
                    term = term - g / (x - xp) ** 2
            else:
                term = 2 * g * geo.d2_conformal_exponent(x)
                if p != exclude:
                    term = term - 2 * g / (x - xp) ** 2
            out += term
        return out
