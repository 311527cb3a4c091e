"""Classical descendants, accessory parameters and the stress-energy tensor.

Every quantity is indexed by the *doubled list*: each bulk puncture ``z``
contributes the entries ``z`` and ``conj(z)`` with weight ``a``, each boundary
puncture ``s`` the entry ``s`` with weight ``b``.  The total curvature
functional is

    I_tot[f] = (1/4 pi) int (f(y) + f(conj y)) Lambda e^Phi d^2y
               + (1/pi) int f(t) sigma e^{Phi/2} dt,

and the first descendant of entry ``k`` is

    L1_k = sum_{l != k} 2 c_k c_l / (x_l - x_k) + I_tot[2 c_k / (x - x_k)],

with accessory parameter ``c_k = L1_k / 2`` and conformal weight
``delta_k = -c_k (1 + c_k / 2)`` (``c_k`` the puncture weight here).  The
stress-energy tensor is ``T(z) = sum delta_k/(z - x_k)^2 + c_k/(z - x_k)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from ._kernels import cauchy_pair
from .discretization.quadrature import gauss_jacobi01, gauss_legendre01
from .probe import PATCH_COARSE, PATCH_FINE, ProbeEngine, ProbeError, _bump, build_sources
from .solver import Solution, SpecError, key_constant

# radial grading exponent of the near-puncture patch rules
GRADING = 4
# (inner radial, outer radial, angular, annulus radial) points
NEAR_FINE = (16, 16, 32, 24)
NEAR_COARSE = (10, 10, 20, 16)


class DescendantError(ValueError):
    pass


def conformal_weight(c):
    """``delta = -c (1 + c/2)`` for a puncture weight ``c``."""
    c = np.asarray(c, float)
    return -c * (1.0 + 0.5 * c)


# --------------------------------------------------------------------------
# report types


@dataclass
class Entry:
    x: complex
    weight: float          # a (bulk) or b (boundary)
    index: int             # puncture index in the divisor
    bulk: bool
    l1: complex
    l1_error: float
    l2: complex | None = None

    @property
    def delta(self) -> float:
        return float(conformal_weight(self.weight))

    @property
    def accessory(self) -> complex:
        return 0.5 * self.l1


@dataclass
class DescendantReport:
    entries: list
    meta: dict = field(default_factory=dict)

    @property
    def x(self) -> np.ndarray:
        return np.array([e.x for e in self.entries], complex)

    @property
    def c(self) -> np.ndarray:
        """Accessory parameters."""
        return np.array([e.accessory for e in self.entries], complex)

    @property
    def delta(self) -> np.ndarray:
        return np.array([e.delta for e in self.entries])

    @property
    def l1(self) -> np.ndarray:
        return np.array([e.l1 for e in self.entries], complex)

    @property
    def l1_error(self) -> np.ndarray:
        return np.array([e.l1_error for e in self.entries])

    def as_dict(self) -> dict:
        rows = []
        for e in self.entries:
            rows.append({"x": [e.x.real, e.x.imag], "weight": e.weight, "index": e.index,
                         "bulk": e.bulk, "l1": [e.l1.real, e.l1.imag], "l1_error": e.l1_error,
                         "accessory": [e.accessory.real, e.accessory.imag], "delta": e.delta,
                         "l2": None if e.l2 is None else [e.l2.real, e.l2.imag]})
        return {"entries": rows, "meta": dict(self.meta)}


@dataclass
class L1Result:
    value: float
    error: float
    r: float
    terms: dict


# --------------------------------------------------------------------------
# engine


class DescendantEngine:
    """Caches the source measures and probe engines of one solution."""

    def __init__(self, sol: Solution):
        if sol is None or sol.U is None:
            raise SpecError("descendants need a solved configuration")
        self.sol = sol
        self.spec = sol.spec
        self.entries = sol.spec.divisor.doubled_list()
        self._src = {}
        self._probe = {}
        self._key = key_constant(sol)

    # ------------------------------------------------------------ sources
    def sources(self, level: str = "ref"):
        if level not in self._src:
            self._src[level] = build_sources(self.sol, level)
        return self._src[level]

    def probe(self, level: str = "ref") -> ProbeEngine:
        if level not in self._probe:
            patch = PATCH_FINE if level == "ref" else PATCH_COARSE
            self._probe[level] = ProbeEngine(self.sol, level, patch)
        return self._probe[level]

    def itot(self, f, level: str = "ref"):
        """``I_tot[f]`` on the mesh node set (principal values by rule symmetry)."""
        src = self.sources(level)
        # bulk: -W/2 (f(y) + f(conj y)); boundary sources are real, same formula
        return -0.5 * np.sum(src.W * (f(src.y) + f(np.conj(src.y))))

    def _check(self, k):
        if not 0 <= k < len(self.entries):
            raise DescendantError(f"entry {k} out of range (doubled list has {len(self.entries)})")
        return self.entries[k]

    def pole_sum(self, k) -> complex:
        xk, ck, _ = self.entries[k]
        return complex(sum(2 * ck * cl / (xl - xk) for l, (xl, cl, _) in enumerate(self.entries)
                           if l != k))

    # ------------------------------------------------------------ L1 on the node set
    def l1_nodes(self, k: int, level: str = "ref") -> complex:
        xk, ck, _ = self._check(k)
        if ck == 0.0:
            return 0j
        return self.pole_sum(k) + complex(self.itot(lambda y: 2 * ck / (y - xk), level))

    def l1_integral(self, k: int):
        """``(value, nested error)`` of the integral form."""
        v1 = self.l1_nodes(k, "ref")
        v0 = self.l1_nodes(k, "solve")
        return v1, abs(v1 - v0)

    def l1_direct(self, k: int):
        """``(-2 a_k dPhi^{(k)}(x_k), nested error)`` for a bulk entry from field differentiation."""
        xk, ck, p = self._check(k)
        if not self.spec.divisor.punctures[p].is_bulk:
            raise DescendantError("the direct form is defined for bulk entries")
        vals = []
        for level in ("ref", "solve"):
            val = -2 * ck * self.dPhi_regular(p, level)[0]
            vals.append(complex(np.conj(val) if np.imag(xk) < 0 else val))
        return vals[0], abs(vals[0] - vals[1])

    def dPhi_regular(self, p: int, level: str = "ref"):
        """``(dPhi^{(p)}, d^2 Phi^{(p)})`` at bulk puncture ``p`` (principal values)."""
        z = self.spec.divisor.punctures[p].location
        g = self.probe(level).bulk(z, at_puncture=p)
        x = np.array([z])
        d1 = g[1] + self.sol.sing.dx(x, exclude=p)[0] + 2 * geo.d_conformal_exponent(z)
        d2 = g[2] + self.sol.sing.dxx(x, exclude=p)[0] + 2 * geo.d2_conformal_exponent(z)
        return d1, d2

    # ------------------------------------------------------------ boundary L1
    def default_r(self, k: int) -> float:
        xk = self.entries[k][0]
        others = [x for j, (x, _, _) in enumerate(self.entries) if j != k and x != xk]
        return float(min(np.abs(np.array(others) - xk)) / 3.0) if others else 0.5

    def l1_boundary(self, k: int, r: float | None = None) -> L1Result:
        """Explicit near/far split of the boundary descendant at radius ``r``."""
        xk, b, p = self._check(k)
        if self.spec.divisor.punctures[p].is_bulk:
            raise DescendantError("l1_boundary needs a boundary entry")
        if self.spec.regularization is not None:
            raise DescendantError("l1_boundary is defined for unregularized solutions")
        rmax = self.default_r(k)
        r = rmax if r is None else float(r)
        if not 0 < r <= rmax * (1 + 1e-12):
            raise DescendantError(f"r = {r} must lie in (0, {rmax:.4g}] (a third of the "
                                  "distance to the nearest other puncture)")
        fine = self._l1_split(k, r, "ref", NEAR_FINE)
        coarse = self._l1_split(k, r, "solve", NEAR_COARSE)
        return L1Result(fine[0], abs(fine[0] - coarse[0]), r, fine[1])

    def _phi_x(self, x):
        x = np.asarray(x, complex)
        return self.sol.phi.evaluate(geo.cayley(x).ravel()).reshape(x.shape)

    def _l1_split(self, k, r, level, npts):
        sol, spec = self.sol, self.spec
        s = float(np.real(self.entries[k][0]))
        b = float(self.entries[k][1])
        p = self.entries[k][2]
        n_in, n_out, n_th, n_ann = npts
        rho2 = 2.0 * r
        psi = lambda d: _bump((d - r) / (rho2 - r))  # noqa: E731
        sing = sol.sing
        Lam = spec.Lambda

        def Phi_l(x):
            """``Phi - 2 b ln|x - s|`` (the regular factor at ``s``)."""
            return self._phi_x(x) + sing.value_x(x) - 2 * b * np.log(np.abs(x - s)) + 2 * geo.conformal_exponent(x)

        def sigma(t):
            return sol.sigma_at(geo.cayley(np.asarray(t, float) + 0j))

        # ---- target rules inside B_r (half disk) and I_r (two segments)
        u, wu = gauss_jacobi01(n_in, GRADING * (2 * b + 2) - 1)
        rin = 0.5 * r * u ** GRADING
        win = GRADING * (0.5 * r) ** (2 * b + 2) * wu          # weight of rho^{2b} rho drho
        v, wv = gauss_legendre01(n_out)
        rout = r - 0.5 * r * v * v
        wout = r * v * wv                                         # plain drho
        th, wth = gauss_legendre01(n_th)
        th, wth = np.pi * th, np.pi * wth
        u1, wu1 = gauss_jacobi01(n_in, GRADING * (b + 1) - 1)
        tin = 0.5 * r * u1 ** GRADING
        w1in = GRADING * (0.5 * r) ** (b + 1) * wu1              # weight of |t-s|^b dt

        # bulk targets: (points, weight, density-with-weight)
        Xi = s + rin[:, None] * np.exp(1j * th[None, :])
        Wi = win[:, None] * wth[None, :]
        Di = Lam * np.exp(Phi_l(Xi))
        Xo = s + rout[:, None] * np.exp(1j * th[None, :])
        Wo = (wout * rout)[:, None] * wth[None, :]
        Do = Lam * np.exp(Phi_l(Xo)) * np.abs(Xo - s) ** (2 * b)
        Xb = np.concatenate([Xi.ravel(), Xo.ravel()])
        mub = np.concatenate([(Wi * Di).ravel(), (Wo * Do).ravel()])   # Lambda e^Phi d^2x
        # boundary targets
        tb = np.concatenate([s + tin, s - tin, s + rout, s - rout])
        wtb = np.concatenate([w1in, w1in, wout * (rout ** b), wout * (rout ** b)])
        mus = wtb * sigma(tb) * np.exp(0.5 * Phi_l(tb + 0j))              # sigma e^{Phi/2} dt

        # ---- far sources: mesh nodes times (1 - psi) plus an annulus times psi
        src = self.sources(level)
        eng = self.probe(level)
        ws = complex(geo.cayley(s + 0j))
        ws = ws / abs(ws)
        Rw = 1.5 * 2.0 * rho2 / (1.0 + s * s)
        own = np.zeros(eng.is_fan.size, bool)
        own[sol.disc.mesh.zone_of(p).fan] = True
        # fans of other punctures keep their singular node rules
        near = np.where((np.abs(eng.cen - ws) < Rw + eng.rad) & ~(eng.is_fan & ~own))[0]
        near_edges = np.where(np.isin(sol.disc.space.bedge_elem, near))[0]
        bulk_src = src.elem >= 0
        inner = (bulk_src & np.isin(src.elem, near)) | (~bulk_src & np.isin(src.edge, near_edges))
        keep = ~inner
        cut_y = lambda y: 1.0 - psi(np.abs(y - s))  # noqa: E731
        cut_v = lambda vv: cut_y(geo.cayley_inv(vv))  # noqa: E731
        y_ref, W_ref = eng._refined(near, Rw / 3.0, cut_v)
        y_bref, W_bref = eng._refined_edges(near_edges, cut_y)
        a_, wa = gauss_legendre01(n_ann)
        ra = r + (rho2 - r) * a_ * a_
        wra = 2 * (rho2 - r) * a_ * wa
        Ya = s + ra[:, None] * np.exp(1j * th[None, :])
        Wa = -(wra * ra)[:, None] * wth[None, :] * Lam * np.exp(sol.Phi_flat(Ya)) * psi(ra)[:, None] / (2 * np.pi)
        ta = np.concatenate([s + ra, s - ra])
        Wta = -np.concatenate([wra, wra]) * sigma(ta) * np.exp(0.5 * sol.Phi_flat(ta + 0j)) \
            * psi(np.abs(ta - s)) / np.pi
        yF = np.concatenate([src.y[keep], y_ref, y_bref, Ya.ravel(), ta + 0j])
        WF = np.concatenate([src.W[keep] * cut_y(src.y[keep]), W_ref, W_bref, Wa.ravel(), Wta])

        # ---- the terms
        T1 = float(np.real(self.pole_sum(k)))
        I_reg = float(-b * np.sum(WF * (1.0 / (yF - s) + 1.0 / (np.conj(yF) - s))).real)
        edge = np.array([s + r, s - r])
        sE = sigma(edge) * np.exp(0.5 * sol.Phi_flat(edge + 0j))
        T3 = float(2.0 / np.pi * (sE[0] - sE[1]))
        Xc = s + r * np.exp(1j * th)
        T4 = float(np.sum(wth * Lam * np.exp(sol.Phi_flat(Xc)) * r * np.cos(th)) / (2 * np.pi))
        tgt = np.concatenate([Xb, tb + 0j])
        M = -np.sum(src.W)
        dphiF = -0.5 * cauchy_pair(tgt, yF, WF) + M * geo.d_conformal_exponent(tgt)
        dreg = sing.dx(tgt, exclude=p) + 2 * geo.d_conformal_exponent(tgt)
        d1 = 2.0 * np.real(dphiF + dreg)                         # d/dx_1 of Phi^{(l)} minus near part
        nb = Xb.size
        T56 = float(-np.sum(mub * d1[:nb]) / (2 * np.pi) - np.sum(mus * d1[nb:]) / np.pi)
        total = T1 + I_reg + T3 + T4 + T56
        return total, {"pole_sum": T1, "I_reg": I_reg, "boundary_bracket": T3,
                       "semicircle_flux": T4, "I_sing": T56}

    def l1_closed_form(self, k: int):
        """``r = 0`` form for ``b >= 0``: integral form plus the sigma jump term."""
        xk, b, p = self._check(k)
        if self.spec.divisor.punctures[p].is_bulk or b < 0:
            raise DescendantError("the closed form needs a boundary entry with b >= 0")
        v, err = self.l1_integral(k)
        if b == 0.0:
            s = float(np.real(xk))
            eps = 1e-9 * (1 + abs(s))
            sig = self.sol.sigma_at(geo.cayley(np.array([s + eps, s - eps]) + 0j))
            Phi = self.sol.Phi_flat(np.array([s + 0j]))[0]
            v = v + 2.0 / np.pi * (sig[0] - sig[1]) * np.exp(0.5 * Phi)
        return complex(v).real, err

    # ------------------------------------------------------------ stress tensor
    def stress_tensor_direct(self, z, level: str = "ref") -> complex:
        """``T = d^2 Phi - (d Phi)^2 / 2`` from the field at a bulk point."""
        z = complex(z)
        if z.imag <= 0:
            raise DescendantError("the direct stress tensor needs a bulk point")
        try:
            g = self.probe(level).bulk(z)
        except ProbeError as exc:
            raise DescendantError(str(exc)) from exc
        x = np.array([z])
        d1 = g[1] + self.sol.sing.dx(x)[0] + 2 * geo.d_conformal_exponent(z)
        d2 = g[2] + self.sol.sing.dxx(x)[0] + 2 * geo.d2_conformal_exponent(z)
        return complex(d2 - 0.5 * d1 * d1)

    def field_derivatives(self, z, level: str = "ref"):
        """``(Phi, dPhi, d^2 Phi)`` at a bulk point."""
        z = complex(z)
        g = self.probe(level).bulk(z)
        x = np.array([z])
        Phi = (g[0].real + self._key + float(self.sol.sing.value_x(x)[0])
               + 2 * float(geo.conformal_exponent(x)[0]))
        d1 = g[1] + self.sol.sing.dx(x)[0] + 2 * geo.d_conformal_exponent(z)
        d2 = g[2] + self.sol.sing.dxx(x)[0] + 2 * geo.d2_conformal_exponent(z)
        return Phi, complex(d1), complex(d2)

    def boundary_trace(self, t, level: str = "ref", R=None) -> float:
        """``Phi(t)`` on the real axis from the Green representation."""
        t = float(t)
        g = self.probe(level).boundary(t, R)
        x = np.array([t + 0j])
        return float(g + self._key + self.sol.sing.value_x(x)[0] + 2 * geo.conformal_exponent(x)[0])


# --------------------------------------------------------------------------
# public operations


def _engine(sol, engine):
    return engine if engine is not None else DescendantEngine(sol)


def l1_bulk(sol: Solution, k: int, engine: DescendantEngine | None = None, direct: bool = False):
    """Descendant of the bulk entry ``k``: ``(value, error)`` of the integral form.

    With ``direct=True`` the field-derivative form and its error are appended.
    """
    eng = _engine(sol, engine)
    xk, c, p = eng._check(k)
    if not sol.spec.divisor.punctures[p].is_bulk:
        raise DescendantError(f"entry {k} is a boundary entry")
    v, err = eng.l1_integral(k)
    if direct:
        return (v, err) + eng.l1_direct(k)
    return v, err


def l1_boundary(sol: Solution, k: int, r: float | None = None,
                engine: DescendantEngine | None = None) -> L1Result:
    return _engine(sol, engine).l1_boundary(k, r)


def accessory_parameters(sol: Solution, engine: DescendantEngine | None = None,
                         r: float | None = None, with_l2: bool = True) -> DescendantReport:
    """Accessory parameters ``c_k = L1_k / 2`` over the doubled list.

    Bulk entries use the integral form; boundary entries the explicit split
    at radius ``r`` (default a third of the distance to the nearest other
    puncture), whose nested-rule and ``r``-halving differences enter the
    error.
    """
    eng = _engine(sol, engine)
    entries = []
    rs = {}
    for k, (x, c, p) in enumerate(eng.entries):
        bulk = sol.spec.divisor.punctures[p].is_bulk
        if c == 0.0 and (bulk or _sigma_continuous(sol, x)):
            entries.append(Entry(complex(x), float(c), p, bulk, 0j, 0.0))
            continue
        if bulk:
            v, err = eng.l1_integral(k)
        else:
            res = eng.l1_boundary(k, r)
            half = eng.l1_boundary(k, res.r / 2)
            v, err = complex(res.value), max(res.error, abs(res.value - half.value))
            rs[k] = (res.r, res.value, half.value)
        entries.append(Entry(complex(x), float(c), p, bulk, complex(v), float(err)))
    rep = DescendantReport(entries, {"boundary_r": rs})
    if with_l2:
        for k, e in enumerate(rep.entries):
            e.l2 = l2_ward(rep, k)
    return rep


def _sigma_continuous(sol, x) -> bool:
    s = float(np.real(x))
    eps = 1e-9 * (1 + abs(s))
    sig = sol.sigma_at(geo.cayley(np.array([s + eps, s - eps]) + 0j))
    return bool(sig[0] == sig[1])


def ward_terms(report: DescendantReport, n: int) -> np.ndarray:
    """Terms ``c_k x_k^n + n delta_k x_k^{n-1}`` over the doubled list."""
    x, c, d = report.x, report.c, report.delta
    xn1 = x ** (n - 1) if n > 0 else np.zeros_like(x)
    return c * x ** n + n * d * xn1


def global_ward_residuals(report: DescendantReport) -> np.ndarray:
    """Normalised residuals of the ``n = 0, 1, 2`` global Ward identities."""
    out = []
    for n in range(3):
        t = ward_terms(report, n)
        scale = np.sum(np.abs(t))
        out.append(abs(np.sum(t)) / scale if scale > 0 else 0.0)
    return np.array(out)


@dataclass
class StressTensorModel:
    x: np.ndarray
    delta: np.ndarray
    c: np.ndarray

    def __call__(self, z):
        z = np.asarray(z, complex)
        if np.any(np.abs(z[..., None] - self.x) == 0):
            raise DescendantError("stress tensor evaluated at a pole")
        d = z[..., None] - self.x
        return np.sum(self.delta / d ** 2 + self.c / d, axis=-1)

    evaluate = __call__

    @property
    def poles(self):
        return list(zip(self.x, self.delta, self.c))


def stress_tensor(report: DescendantReport) -> StressTensorModel:
    keep = np.array([not (e.weight == 0.0 and e.l1 == 0) for e in report.entries], bool)
    return StressTensorModel(report.x[keep], report.delta[keep], report.c[keep])


def stress_tensor_direct(sol: Solution, z, engine: DescendantEngine | None = None) -> complex:
    return _engine(sol, engine).stress_tensor_direct(z)


def l2_ward(report: DescendantReport, k: int) -> complex:
    """``sum_{l != k} delta_l/(x_k - x_l)^2 + c_l/(x_k - x_l)``."""
    x, c, d = report.x, report.c, report.delta
    m = np.arange(x.size) != k
    dx = x[k] - x[m]
    return complex(np.sum(d[m] / dx ** 2 + c[m] / dx))


def l2_bulk_direct(sol: Solution, k: int, engine: DescendantEngine | None = None) -> complex:
    """``(1 - a) d^2 Phi^{(k)} - (d Phi^{(k)})^2 / 2`` at a bulk entry."""
    eng = _engine(sol, engine)
    xk, a, p = eng._check(k)
    if not sol.spec.divisor.punctures[p].is_bulk:
        raise DescendantError("l2_bulk_direct needs a bulk entry")
    d1, d2 = eng.dPhi_regular(p)
    val = (1 - a) * d2 - 0.5 * d1 * d1
    return complex(np.conj(val) if np.imag(xk) < 0 else val)


# --------------------------------------------------------------------------
# higher equations of motion


@dataclass
class HEMReport:
    bulk_residual: float
    bulk_scale: float
    boundary: list                 # dicts per probe
    convention: dict

    def as_dict(self) -> dict:
        return {"bulk_residual": self.bulk_residual, "bulk_scale": self.bulk_scale,
                "boundary": list(self.boundary), "convention": dict(self.convention)}


def _fd5(f, t, h):
    """First and second derivatives by 5-point centred differences."""
    v = np.array([f(t + j * h) for j in (-2, -1, 0, 1, 2)])
    d1 = (v[0] - 8 * v[1] + 8 * v[3] - v[4]) / (12 * h)
    d2 = (-v[0] + 16 * v[1] - 30 * v[2] + 16 * v[3] - v[4]) / (12 * h * h)
    return v[2], d1, d2


def hem_residuals(sol: Solution, report: DescendantReport, bulk_probes=(), boundary_probes=(),
                  engine: DescendantEngine | None = None, spacing: float | None = None) -> HEMReport:
    """Higher equations of motion at bulk and boundary probes.

    Bulk: ``(d^2 + T/2) e^{-Phi/2}`` from field derivatives (an identity of the
    direct ``T``).  Boundary: ``(d_t^2 + k T) e^{-Phi/4}`` against the
    rational ``T`` with both normalisations ``k = 1/2`` (right side
    ``(sigma^2 - Lambda/2) e^{3 Phi/4} / 4``) and ``k = 2`` (right side
    ``(sigma^2 - Lambda/2) e^{3 Phi/4}``); tangential derivatives use
    5-point differences of the trace.
    """
    eng = _engine(sol, engine)
    model = stress_tensor(report)
    res_b, scale_b = 0.0, 0.0
    for z in np.atleast_1d(np.asarray(bulk_probes, complex)):
        Phi, d1, d2 = eng.field_derivatives(z)
        T = d2 - 0.5 * d1 * d1
        e = np.exp(-0.5 * Phi)
        # d^2 e^{-Phi/2} = (-d2/2 + d1^2/4) e^{-Phi/2}
        lhs = (-0.5 * d2 + 0.25 * d1 * d1) * e + 0.5 * T * e
        res_b = max(res_b, abs(lhs))
        scale_b = max(scale_b, abs(0.5 * T * e), abs(0.5 * d2 * e))
    h = spacing if spacing is not None else max(0.5 * sol.disc.h, 0.01)
    rows = []
    Lam = sol.spec.Lambda
    for t in np.atleast_1d(np.asarray(boundary_probes, float)):
        dist = np.min(np.abs(sol.sing.x - t)) if len(sol.sing) else np.inf
        hh = min(h, dist / 6.0)
        if hh < 0.25 * h:
            raise DescendantError(f"boundary probe {t} too close to a puncture")
        R = min(0.4 * (dist - 2 * hh), 0.15 * (1 + t * t))
        f = lambda tt: np.exp(-0.25 * eng.boundary_trace(tt, R=R))  # noqa: E731
        u, du, ddu = _fd5(f, t, hh)
        Phi = -4.0 * np.log(u)
        sig = float(sol.sigma_at(geo.cayley(np.array([t + 0j])))[0])
        T = complex(model(np.array([t + 0j]))[0]).real
        rhs = (sig * sig - 0.5 * Lam) * np.exp(0.75 * Phi)
        half = ddu + 0.5 * T * u - 0.25 * rhs
        two = ddu + 2.0 * T * u - rhs
        scale = max(abs(ddu), abs(0.5 * T * u), abs(0.25 * rhs), abs(2 * T * u), abs(rhs))
        rows.append({"t": float(t), "sigma": sig, "T": T, "residual_half": float(abs(half)),
                     "residual_two": float(abs(two)), "scale": float(scale), "spacing": float(hh)})
    conv = {}
    for key, sel in (("sigma_zero", lambda r_: r_["sigma"] == 0.0), ("sigma_positive", lambda r_: r_["sigma"] > 0)):
        rs = [r_ for r_ in rows if sel(r_)]
        if rs:
            a = max(r_["residual_half"] / r_["scale"] for r_ in rs)
            b = max(r_["residual_two"] / r_["scale"] for r_ in rs)
            conv[key] = {"half_quarter": a, "two_one": b,
                         "preferred": "half_quarter" if a <= b else "two_one"}
    return HEMReport(float(res_b), float(scale_b), rows, conv)
