"""Green-representation integrals of a solution at arbitrary targets.

At a minimiser,

    phi(x) = m(phi) - (1/2 pi) int G0(x, y) Lambda e^{Phi} d^2y
                    - (1/pi) int G0(x, t) sigma e^{Phi/2} dt,

and the same sums with the x-derivatives of ``G0`` give ``d phi`` and
``d^2 phi`` (the latter as a principal value).  Sources are the mesh
quadrature nodes.  Around each target the integrand is split with a smooth
partition of unity: the inner part is integrated on a polar patch centred at
the target (disk coordinates for bulk targets, a half-disk in half-plane
coordinates for boundary targets), the outer part on the mesh with elements
near the target subdivided.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import geometry as geo
from ._kernels import kernel_sums
from .discretization.fem import shape
from .discretization.quadrature import collapsed_triangle, gauss_jacobi01, gauss_legendre01

PATCH_FINE = (28, 64, 40)     # radial, angular (full circle), angular (half disk)
PATCH_COARSE = (18, 40, 24)


class ProbeError(ValueError):
    pass


def _bump(s):
    """Smooth partition: 1 for ``s <= 1/3``, 0 for ``s >= 1``."""
    s = np.asarray(s, float)
    u = np.clip((s - 1.0 / 3.0) * 1.5, 0.0, 1.0)

    def f(t):
        return np.where(t > 0, np.exp(-1.0 / np.where(t > 0, t, 1.0)), 0.0)

    a, b = f(1.0 - u), f(u)
    return a / (a + b)


@dataclass
class Sources:
    y: np.ndarray          # half-plane positions
    v: np.ndarray          # disk positions
    W: np.ndarray          # signed weights: phi - m = sum W G0(., y)
    elem: np.ndarray       # element (bulk) or -1
    edge: np.ndarray       # boundary edge or -1


def _phi_at(sol, elem, xi, eta):
    sp_ = sol.disc.space
    N = shape(sp_.order, xi, eta)
    return np.einsum("...i,...i->...", N, sol.U[sp_.elem_dofs[elem]])


def build_sources(sol, level: str = "ref") -> Sources:
    from .solver import bulk_weight, boundary_weight
    disc, spec = sol.disc, sol.spec
    nb = len(disc.sing)
    bb = np.zeros(nb) if spec.smooth_weights else disc.bulk_betas()
    bs = np.zeros(nb) if spec.smooth_weights else disc.boundary_betas()
    qb = disc.integ.bulk(bb, level)
    qs = disc.integ.boundary(bs, level)
    Wb = -qb.wts * bulk_weight(spec, disc, qb) * np.exp(qb.values(disc.space, sol.U)) / (2 * np.pi)
    Ws = -qs.wts * boundary_weight(spec, disc, qs) * np.exp(0.5 * qs.values(disc.space, sol.U)) / np.pi
    v = np.concatenate([qb.pts, qs.pts])
    # boundary images: project exactly onto the real axis
    ys = np.real(geo.cayley_inv(qs.pts / np.abs(qs.pts))) + 0j
    y = np.concatenate([geo.cayley_inv(qb.pts), ys])
    return Sources(y, v, np.concatenate([Wb, Ws]),
                   np.concatenate([qb.elem, np.full(qs.size, -1)]),
                   np.concatenate([np.full(qb.size, -1), qs.edge]))


def _sums(x, y, W):
    """Kernel sums for ``G0``, ``dG0/dx`` and ``d^2G0/dx^2`` (target-dependent parts)."""
    s0a, s1a, s2a = kernel_sums(np.atleast_1d(x), y, W)
    s0b, s1b, s2b = kernel_sums(np.atleast_1d(x), np.conj(y), W)
    w0y = geo.conformal_exponent(y)
    tot = W.sum()
    g = -s0a - s0b - np.sum(W * w0y) - tot * (geo.conformal_exponent(x) + 1.0)
    g1 = -0.5 * s1a - 0.5 * s1b - tot * geo.d_conformal_exponent(x)
    g2 = 0.5 * s2a + 0.5 * s2b - tot * geo.d2_conformal_exponent(x)
    return np.array([g[0], g1[0], g2[0]])


class ProbeEngine:
    """Evaluates ``phi - m``, ``d phi`` and ``d^2 phi`` at targets."""

    def __init__(self, sol, level: str = "ref", patch=PATCH_FINE):
        self.sol = sol
        self.patch = patch
        self.src = build_sources(sol, level)
        sp_ = sol.disc.space
        G = sp_.geom
        self.cen = G[:, :3].mean(axis=1)
        self.rad = 1.15 * np.max(np.abs(G - self.cen[:, None]), axis=1)
        cls = np.zeros(sol.disc.mesh.n_triangles, bool)
        for z in sol.disc.mesh.zones:
            cls[z.fan] = True
        self.is_fan = cls
        self.punct_w = sol.sing.w
        self.punct_x = sol.sing.x

    # ------------------------------------------------------------ helpers
    def _density_w(self, w):
        return self.sol.bulk_density_w(w)

    def _refined(self, elems, R, cut):
        """Sub-element nodes of ``elems`` with weights times ``cut``."""
        sol = self.sol
        sp_ = sol.disc.space
        out_v, out_w, out_e, out_xi, out_eta = [], [], [], [], []
        xi0, eta0, _, w0 = collapsed_triangle(6)
        for e in elems:
            L = int(np.clip(np.ceil(np.log2(max(2.0 * self.rad[e] / R, 1.0))) + 1, 1, 6))
            a, b, W = _subdivide(L)
            XI = a[:, 0:1] + xi0[None, :] * (a[:, 1:2] - a[:, 0:1]) + eta0[None, :] * (a[:, 2:3] - a[:, 0:1])
            ET = b[:, 0:1] + xi0[None, :] * (b[:, 1:2] - b[:, 0:1]) + eta0[None, :] * (b[:, 2:3] - b[:, 0:1])
            XI, ET = XI.ravel(), ET.ravel()
            E = np.full(XI.size, e)
            x, ja, jb = sp_.map_points(E, XI, ET)
            det = sp_.detj(ja, jb)
            out_v.append(x)
            out_w.append(np.tile(w0, W.size) * np.repeat(W, w0.size) * det)
            out_e.append(E)
            out_xi.append(XI)
            out_eta.append(ET)
        if not out_v:
            return np.zeros(0, complex), np.zeros(0)
        v = np.concatenate(out_v)
        wt = np.concatenate(out_w)
        E = np.concatenate(out_e)
        XI = np.concatenate(out_xi)
        ET = np.concatenate(out_eta)
        from .solver import bulk_mask
        spec = sol.spec
        lam = spec.lambda_fn(v) if spec.lambda_fn is not None else spec.Lambda
        dens = (lam * np.exp(_phi_at(sol, E, XI, ET) + sol.sing.value(v) + 2 * geo.conformal_exponent(v))
                * bulk_mask(spec, v))
        W = -wt * dens * cut(v) / (2 * np.pi)
        return geo.cayley_inv(v), W

    # ------------------------------------------------------------ bulk targets
    def bulk(self, x, R=None, at_puncture: int | None = None):
        """``(phi - m, d phi, d^2 phi)`` at a bulk target in half-plane coordinates.

        With ``at_puncture = p`` the target is the bulk puncture ``p`` itself;
        the rotation-symmetric patch then yields principal values of the
        derivatives (the fan elements of ``p`` lie inside the patch).
        """
        x = complex(x)
        w0 = complex(geo.cayley(x))
        dmax = 0.4 * (1.0 - abs(w0))
        others = np.ones(self.punct_w.size, bool)
        if at_puncture is not None:
            others[at_puncture] = False
        if np.any(others):
            dmax = min(dmax, 0.4 * np.min(np.abs(self.punct_w[others] - w0)))
        R = min(dmax, 0.2) if R is None else R
        if R <= 0:
            raise ProbeError("probe on a puncture or the boundary")
        near = np.where(np.abs(self.cen - w0) < R + self.rad)[0]
        own = np.zeros(self.is_fan.size, bool)
        if at_puncture is not None:
            own[self.sol.disc.mesh.zone_of(at_puncture).fan] = True
            if np.any(own & ~np.isin(np.arange(own.size), near)):
                raise ProbeError("puncture fan extends beyond the probe patch")
        if np.any(self.is_fan[near] & ~own[near]):
            raise ProbeError("probe too close to a puncture")
        src = self.src
        inner = np.isin(src.elem, near)
        cutf = lambda v: 1.0 - _bump(np.abs(v - w0) / R)  # noqa: E731
        keep = ~inner
        W_far = src.W[keep] * cutf(src.v[keep])
        y_ref, W_ref = self._refined(near, R, cutf)
        nr, nt, _ = self.patch
        th = 2 * np.pi * (np.arange(nt) + 0.5) / nt
        if at_puncture is None:
            s, ws = gauss_legendre01(nr)
            r = R * s * s
            wr = 2 * R * R * s ** 3 * ws
            V = w0 + r[:, None] * np.exp(1j * th[None, :])
            dens = self._density_w(V)
        else:
            # Jacobi weight r^{2a+1} absorbs the cone factor; an s^2 grading would put
            # nodes so close to the centre that the angular cancellation loses all digits
            beta = 2.0 * self.sol.sing.c[at_puncture]
            s, ws = gauss_jacobi01(nr, beta + 1.0)
            r = R * s
            wr = R ** (beta + 2.0) * ws
            V = w0 + r[:, None] * np.exp(1j * th[None, :])
            dens = self._density_w(V) * r[:, None] ** (-beta)
        Wp = -(wr[:, None] * (2 * np.pi / nt)) * dens * _bump(r / R)[:, None] / (2 * np.pi)
        y = np.concatenate([src.y[keep], y_ref, geo.cayley_inv(V.ravel())])
        W = np.concatenate([W_far, W_ref, Wp.ravel()])
        return _sums(x, y, W)

    # ------------------------------------------------------------ boundary targets
    def boundary(self, t, R=None):
        """``phi - m`` at a real boundary point ``t``."""
        sol = self.sol
        t = float(t)
        dmax = 0.4 * np.min(np.abs(self.punct_x - t)) if self.punct_x.size else 0.5
        R = min(dmax, 0.15 * (1 + t * t)) if R is None else R
        src = self.src
        # element centres and radii in half-plane coordinates
        xc = geo.cayley_inv(self.cen)
        wt = geo.cayley(t + 0j)
        # conservative: elements whose disk distance to the target is within the image radius
        Rw = 2.0 * R / (1.0 + t * t) * 1.5 + 1e-12
        near = np.where(np.abs(self.cen - wt) < Rw + self.rad)[0]
        if np.any(self.is_fan[near]):
            raise ProbeError("boundary probe too close to a puncture")
        cut_y = lambda y: 1.0 - _bump(np.abs(y - t) / R)  # noqa: E731
        cutf = lambda v: cut_y(geo.cayley_inv(v))  # noqa: E731
        bulk_src = src.elem >= 0
        inner = bulk_src & np.isin(src.elem, near)
        # boundary edges of near elements
        sp_ = sol.disc.space
        near_edges = np.where(np.isin(sp_.bedge_elem, near))[0]
        inner |= (~bulk_src) & np.isin(src.edge, near_edges)
        keep = ~inner
        W_far = src.W[keep] * cut_y(src.y[keep])
        y_ref, W_ref = self._refined(near, Rw, cutf)
        y_bref, W_bref = self._refined_edges(near_edges, cut_y)
        # half-disk patch in x coordinates
        nr, _, nth = self.patch
        s, ws = gauss_legendre01(nr)
        r = R * s * s
        wr = 2 * R * R * s ** 3 * ws
        u, wu = gauss_legendre01(nth)
        th = np.pi * u
        Y = t + r[:, None] * np.exp(1j * th[None, :])
        rho = sol.spec.Lambda * np.exp(self._Phi_x(Y)) * _mask_x(sol, Y)
        Wp = -(wr[:, None] * (np.pi * wu)[None, :]) * rho * _bump(r / R)[:, None] / (2 * np.pi)
        # 1D patch on both sides of t
        s1 = np.concatenate([t + R * s * s, t - R * s * s])
        w1 = np.concatenate([2 * R * s * ws, 2 * R * s * ws])
        sig = sol.sigma_at(geo.cayley(s1 + 0j))
        W1 = -w1 * sig * np.exp(0.5 * self._Phi_x(s1 + 0j)) * _bump(np.abs(s1 - t) / R) / np.pi
        y = np.concatenate([src.y[keep], y_ref, y_bref, Y.ravel(), s1 + 0j])
        W = np.concatenate([W_far, W_ref, W_bref, Wp.ravel(), W1])
        return _sums(t + 0j, y, W)[0].real

    def _Phi_x(self, y):
        y = np.asarray(y, complex)
        w = geo.cayley(y)
        ph = self.sol.phi.evaluate(w.ravel()).reshape(y.shape)
        return ph + self.sol.sing.value_x(y) + 2 * geo.conformal_exponent(y)

    def _refined_edges(self, edges, cut_y):
        sol = self.sol
        sp_ = sol.disc.space
        if len(edges) == 0:
            return np.zeros(0, complex), np.zeros(0)
        s0, w0 = gauss_legendre01(8)
        L = 32
        s = (np.arange(L)[:, None] + s0[None, :]).ravel() / L
        w = np.tile(w0, L) / L
        x, ds, E, XI, ET = sp_.boundary_points(np.asarray(edges), s)
        v = x.ravel()
        y = np.real(geo.cayley_inv(v / np.abs(v))) + 0j
        dens = sol.sigma_at(v) * np.exp(0.5 * (_phi_at(sol, E.ravel(), XI.ravel(), ET.ravel())
                                               + sol.sing.value(v)) + geo.conformal_exponent(v))
        W = -(ds * w[None, :]).ravel() * dens * cut_y(y) / np.pi
        return y, W


def _mask_x(sol, y):
    from .solver import bulk_mask
    return bulk_mask(sol.spec, geo.cayley(np.asarray(y, complex)))


@lru_cache(maxsize=None)
def _subdivide(L: int):
    """Reference sub-triangles of a uniform ``2^L`` split: vertex coords and area fractions."""
    n = 2 ** L
    A, B = [], []
    for i in range(n):
        for j in range(n - i):
            p = [(i, j), (i + 1, j), (i, j + 1)]
            A.append([q[0] / n for q in p])
            B.append([q[1] / n for q in p])
            if j < n - i - 1:
                p = [(i + 1, j), (i + 1, j + 1), (i, j + 1)]
                A.append([q[0] / n for q in p])
                B.append([q[1] / n for q in p])
    A = np.array(A)
    B = np.array(B)
    # collapsed rule weights refer to the reference triangle of area 1/2
    return A, B, np.full(A.shape[0], 1.0 / (n * n))


def green_representation(sol, probes_w, engine: ProbeEngine | None = None):
    """Return ``(phi - m, error estimate)`` from the Green representation at disk probes."""
    fine = engine or ProbeEngine(sol, "ref", PATCH_FINE)
    coarse = ProbeEngine(sol, "solve", PATCH_COARSE)
    x = geo.cayley_inv(np.asarray(probes_w, complex))
    v1 = np.array([fine.bulk(xx)[0].real for xx in np.atleast_1d(x)])
    v0 = np.array([coarse.bulk(xx)[0].real for xx in np.atleast_1d(x)])
    return v1, np.abs(v1 - v0)
