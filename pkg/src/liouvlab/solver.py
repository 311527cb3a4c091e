"""Convex variational solver for the regular part of the singular metric.

The unknown is ``phi`` on the disk model with metric
``e^{phi + H} g0``.  The discrete energy is

    E(U) = (1/4 pi) U^T K U + (1/2 pi) sum_q wL_q e^{(B U)_q}
           + (2/pi) sum_q wS_q e^{(Bb U)_q / 2} + 2 chi m^T U,

with ``wL = weight * Lambda * e^{H + 2 w0}`` on bulk nodes,
``wS = weight * sigma * e^{H/2 + w0}`` on boundary nodes and
``m_i = (1/2 pi) int N_i dv_{g0}``.  Its critical point solves
``Delta_{g0} phi = 2 chi + Lambda e^{phi + H}`` with
``d_n phi = -2 sigma e^{(phi + H)/2}`` on the circle.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import geometry as geo
from .discretization.fem import Field, FESpace, model_area_weight
from .discretization.integrate import Integrator, NodeSet
from .discretization.mesh import Mesh, build_mesh, deform_mesh
from .singular import SingularPart

log = logging.getLogger(__name__)

EXP_CAP = 700.0


class SpecError(ValueError):
    """Invalid problem specification."""


class ConvergenceError(RuntimeError):
    """Newton iteration did not reach the tolerance."""

    def __init__(self, msg, diagnostics=None):
        super().__init__(msg)
        self.diagnostics = diagnostics or {}


# --------------------------------------------------------------------------
# problem specification


@dataclass(frozen=True)
class Regularization:
    """Masks of width ``eps`` around punctures and ``delta`` along the boundary."""

    delta: float
    eps: float
    band: float = 0.1          # transition width as a fraction of the mask radius

    def __post_init__(self):
        if not (self.delta > 0 and self.eps > 0 and 0 < self.band < 1):
            raise SpecError("regularization needs delta > 0, eps > 0 and 0 < band < 1")


@dataclass(frozen=True)
class ProblemSpec:
    divisor: geo.Divisor
    Lambda: float = 2.0
    sigma_arcs: tuple = ()
    regularization: Optional[Regularization] = None
    # Non-constant curvature data (disk coordinates).  When given, the
    # singular factor e^{H} is assumed absorbed, so no fan exponent is used.
    lambda_fn: Optional[Callable] = field(default=None, compare=False)
    sigma_fn: Optional[Callable] = field(default=None, compare=False)

    def __post_init__(self):
        sig = tuple(float(s) for s in self.sigma_arcs)
        if not sig:
            sig = (0.0,) * self.n_arcs
        object.__setattr__(self, "sigma_arcs", sig)

    @property
    def n_arcs(self) -> int:
        return max(1, len(self.divisor.boundary))

    @property
    def chi(self) -> float:
        return self.divisor.chi

    @property
    def smooth_weights(self) -> bool:
        return self.lambda_fn is not None

    def validate(self) -> list[str]:
        errs = geo.validate_divisor(self.divisor)
        if not (np.isfinite(self.Lambda) and self.Lambda > 0):
            errs.append(f"Lambda must be positive (got {self.Lambda})")
        if len(self.sigma_arcs) != self.n_arcs:
            errs.append(f"expected {self.n_arcs} sigma values (one per boundary arc), "
                        f"got {len(self.sigma_arcs)}")
        for j, s in enumerate(self.sigma_arcs):
            if not (np.isfinite(s) and s >= 0):
                errs.append(f"sigma on arc {j} must be >= 0 (got {s})")
        if self.regularization is not None and len(self.divisor) > 1:
            x = np.array([p.location for p in self.divisor])
            dmin = min(abs(x[i] - x[j]) for i in range(x.size) for j in range(i + 1, x.size))
            if self.regularization.eps >= dmin / 3.0:
                errs.append(f"eps = {self.regularization.eps} must be below a third of the "
                            f"minimal puncture distance {dmin:.4g}")
        return errs

    def check(self) -> None:
        errs = self.validate()
        if errs:
            raise SpecError("; ".join(errs))

    def moved(self, index: int, location) -> "ProblemSpec":
        return replace(self, divisor=self.divisor.moved(index, location))

    def transformed(self, theta: float) -> "ProblemSpec":
        """Apply a rotation of the hemisphere model and relabel the arcs.

        Arc ``j`` starts at the ``j``-th boundary puncture in increasing order;
        the isometry preserves the cyclic order, so each arc keeps its sigma.
        """
        d2 = self.divisor.transformed(theta)
        old = geo.sorted_boundary(self.divisor)
        new = geo.sorted_boundary(d2)
        sig = list(self.sigma_arcs)
        if old:
            sig = [0.0] * len(old)
            for j, i in enumerate(old):
                sig[new.index(i)] = self.sigma_arcs[j]
        return replace(self, divisor=d2, sigma_arcs=tuple(sig))


def reference_spec(**kw) -> ProblemSpec:
    """Bulk -0.75 at i, boundary -0.75 at 0 and 1, Lambda = 2, sigma = 1."""
    kw.setdefault("Lambda", 2.0)
    kw.setdefault("sigma_arcs", (1.0, 1.0))
    return ProblemSpec(geo.reference_divisor(), **kw)


# --------------------------------------------------------------------------
# discretization bundle


class Discretization:
    """Mesh, FE space, operators and node sets for one divisor."""

    def __init__(self, divisor: geo.Divisor, h: float = 0.05, depth: int = 12, order: int = 2,
                 mesh: Mesh | None = None):
        self.divisor = divisor
        self.mesh = mesh if mesh is not None else build_mesh(divisor, h, depth)
        self.h = self.mesh.h
        self.depth = self.mesh.depth
        self.order = order
        self.space = FESpace(self.mesh, order)
        self.integ = Integrator(self.space)
        self.sing = SingularPart(divisor)
        self.K = self.space.assemble_stiffness()
        self.mvec = (self.space.assemble_mass(model_area_weight) @ np.ones(self.space.ndof)) / (2 * np.pi)

    def morphed(self, divisor: geo.Divisor) -> "Discretization":
        return Discretization(divisor, order=self.order, mesh=deform_mesh(self.mesh, divisor))

    # exponents of the densities at each puncture
    def bulk_betas(self, power: float = 1.0):
        return 2.0 * power * self.sing.c

    def boundary_betas(self, power: float = 0.5):
        return np.where(self.sing.is_bulk, 0.0, 2.0 * power * self.sing.c)


# --------------------------------------------------------------------------
# masks and curvature data at nodes


def _smoothstep(s):
    s = np.clip(s, 0.0, 1.0)
    return s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)


def _ramp(dist, radius, band):
    """0 below ``(1 - band) radius``, 1 above ``radius``, quintic in between."""
    return _smoothstep((dist - (1.0 - band) * radius) / (band * radius))


def bulk_mask(spec: ProblemSpec, w):
    reg = spec.regularization
    w = np.asarray(w, complex)
    if reg is None:
        return np.ones(w.shape)
    x = geo.cayley_inv(w)
    out = _ramp(np.imag(x), reg.delta, reg.band)
    for p in spec.divisor:
        out = out * _ramp(np.abs(x - p.location), reg.eps, reg.band)
    return out


def boundary_mask(spec: ProblemSpec, w):
    reg = spec.regularization
    w = np.asarray(w, complex)
    if reg is None:
        return np.ones(w.shape)
    t = np.real(geo.cayley_inv(w))
    out = np.ones(w.shape)
    for p in spec.divisor.boundary:
        out = out * _ramp(np.abs(t - p.location.real), reg.eps, reg.band)
    return out


def bulk_weight(spec: ProblemSpec, disc: Discretization, q: NodeSet):
    """``Lambda_eff * e^{H + 2 w0}`` at bulk nodes (density factor of ``e^{phi}``)."""
    lam = spec.lambda_fn(q.pts) if spec.lambda_fn is not None else spec.Lambda
    H = disc.sing.value(q.pts)
    return lam * np.exp(H + 2.0 * geo.conformal_exponent(q.pts)) * bulk_mask(spec, q.pts)


def boundary_weight(spec: ProblemSpec, disc: Discretization, q: NodeSet):
    """``sigma_eff * e^{H/2 + w0}`` at boundary nodes (density factor of ``e^{phi/2}``)."""
    if spec.sigma_fn is not None:
        sig = spec.sigma_fn(q.pts)
    else:
        sig = np.asarray(spec.sigma_arcs)[q.arcs]
    H = disc.sing.value(q.pts)
    return sig * np.exp(0.5 * H + geo.conformal_exponent(q.pts)) * boundary_mask(spec, q.pts)


class EnergyModel:
    """Discrete energy, gradient and Hessian on one rule level."""

    def __init__(self, spec: ProblemSpec, disc: Discretization, level: str = "solve"):
        self.spec = spec
        self.disc = disc
        smooth = spec.smooth_weights
        nb = len(disc.sing)
        self.qb = disc.integ.bulk(np.zeros(nb) if smooth else disc.bulk_betas(), level)
        self.qs = disc.integ.boundary(np.zeros(nb) if smooth else disc.boundary_betas(), level)
        self.B = self.qb.basis(disc.space)
        self.Bs = self.qs.basis(disc.space)
        self.wL = self.qb.wts * bulk_weight(spec, disc, self.qb)
        self.wS = self.qs.wts * boundary_weight(spec, disc, self.qs)
        self.chi = spec.chi
        self.overflow = False

    def parts(self, U):
        """Return the energy terms (Dirichlet, bulk, boundary, linear)."""
        K, m = self.disc.K, self.disc.mvec
        e1 = self.B @ U
        e2 = 0.5 * (self.Bs @ U)
        if max(e1.max(initial=-np.inf), e2.max(initial=-np.inf)) > EXP_CAP:
            self.overflow = True
            return np.inf, np.inf, np.inf, np.inf
        return (U @ (K @ U) / (4 * np.pi), np.sum(self.wL * np.exp(e1)) / (2 * np.pi),
                2.0 / np.pi * np.sum(self.wS * np.exp(e2)), 2.0 * self.chi * (m @ U))

    def energy(self, U):
        return float(sum(self.parts(U)))

    def gradient(self, U):
        K, m = self.disc.K, self.disc.mvec
        return (K @ U / (2 * np.pi) + self.B.T @ (self.wL * np.exp(self.B @ U)) / (2 * np.pi)
                + self.Bs.T @ (self.wS * np.exp(0.5 * (self.Bs @ U))) / np.pi + 2.0 * self.chi * m)

    def hessian(self, U):
        K = self.disc.K
        dL = sp.diags(self.wL * np.exp(self.B @ U) / (2 * np.pi))
        dS = sp.diags(self.wS * np.exp(0.5 * (self.Bs @ U)) / (2 * np.pi))
        return (K / (2 * np.pi) + self.B.T @ dL @ self.B + self.Bs.T @ dS @ self.Bs).tocsr()

    def constant_guess(self) -> float:
        """Minimiser of the energy restricted to constants."""
        A = np.sum(self.wL) / (2 * np.pi)
        Bc = np.sum(self.wS) / np.pi
        c2 = 2.0 * self.chi
        if A > 0:
            y = (-Bc + np.sqrt(Bc * Bc - 4.0 * A * c2)) / (2.0 * A)
        elif Bc > 0:
            y = -c2 / Bc
        else:
            raise SpecError("curvature data vanish identically")
        return 2.0 * np.log(y)

    def densities(self, U):
        """Gauss-Bonnet terms ``(1/4 pi) int Lambda e^Phi`` and ``(1/2 pi) int sigma e^{Phi/2}``."""
        return (np.sum(self.wL * np.exp(self.B @ U)) / (4 * np.pi),
                np.sum(self.wS * np.exp(0.5 * (self.Bs @ U))) / (2 * np.pi))


# --------------------------------------------------------------------------
# solution


@dataclass
class Solution:
    spec: ProblemSpec
    disc: Discretization
    U: np.ndarray
    newton_iterations: int
    gradient_norm: float
    energy_history: list
    quadrature_error: float
    overflow: bool = False
    tol: float = 1e-10

    @property
    def phi(self) -> Field:
        return Field(self.disc.space, self.U)

    @property
    def sing(self) -> SingularPart:
        return self.disc.sing

    @property
    def mean_c(self) -> float:
        """``m_{g0}(phi)``."""
        return float(self.disc.mvec @ self.U)

    @property
    def energy(self) -> float:
        return self.energy_history[-1]

    # ------------------------------------------------------------ evaluation
    def phi_disk(self, w):
        return self.phi.evaluate(np.asarray(w, complex))

    def Phi_flat(self, x):
        """``Phi = phi + H + 2 w0`` at half-plane points (metric ``e^Phi |dx|^2``)."""
        x = np.asarray(x, complex)
        w = geo.cayley(x)
        return self.phi.evaluate(w.ravel()).reshape(x.shape) + self.sing.value_x(x) + 2 * geo.conformal_exponent(x)

    def bulk_density_w(self, w):
        """``Lambda e^{phi + H + 2 w0}`` per unit ``d^2 w`` (masked if regularized)."""
        w = np.asarray(w, complex)
        lam = self.spec.lambda_fn(w) if self.spec.lambda_fn is not None else self.spec.Lambda
        return (lam * np.exp(self.phi.evaluate(w.ravel()).reshape(w.shape) + self.sing.value(w)
                             + 2 * geo.conformal_exponent(w)) * bulk_mask(self.spec, w))

    def sigma_at(self, w):
        w = np.asarray(w, complex)
        if self.spec.sigma_fn is not None:
            return self.spec.sigma_fn(w)
        t = np.real(geo.cayley_inv(w / np.abs(w)))
        arcs = geo.arc_of_points(self.spec.divisor, t)
        return np.asarray(self.spec.sigma_arcs)[arcs] * boundary_mask(self.spec, w)

    def gauss_bonnet(self, level: str = "ref"):
        """Return ``(defect, bulk term, boundary term)`` of the Gauss-Bonnet identity."""
        em = EnergyModel(self.spec, self.disc, level)
        a, b = em.densities(self.U)
        return a + b + self.spec.chi, a, b


# --------------------------------------------------------------------------
# Newton


def _linear_solve(Hs, rhs):
    d = Hs.diagonal()
    M = sp.diags(1.0 / d)
    x, info = spla.cg(Hs, rhs, rtol=1e-10, atol=0.0, maxiter=4000, M=M)
    if info != 0:
        x = spla.splu(Hs.tocsc()).solve(rhs)
    return x


def _gnorm(g) -> float:
    """Stopping norm: max of the entrywise maximum and the constant-mode component.

    The constant mode carries the Gauss-Bonnet balance, which a small
    entrywise maximum alone does not control on fine meshes.
    """
    return float(max(np.max(np.abs(g)), abs(np.sum(g))))


def newton(em: EnergyModel, U0, tol=1e-10, max_iter=60):
    """Damped Newton iteration on the discrete energy."""
    U = np.array(U0, float)
    E = em.energy(U)
    hist = [E]
    g = em.gradient(U)
    gnorm = _gnorm(g)
    it = 0
    while gnorm > tol:
        if it >= max_iter:
            raise ConvergenceError(f"Newton did not converge in {max_iter} iterations "
                                   f"(gradient norm {gnorm:.3e})",
                                   {"iterations": it, "gradient_norm": gnorm, "energy": hist})
        d = _linear_solve(em.hessian(U), -g)
        slope = float(g @ d)
        if slope >= 0:
            d, slope = -g, -float(g @ g)
        s = 1.0
        # below round-off in the energy the line search is meaningless
        roundoff = -slope < 1e-13 * max(1.0, abs(E))
        while True:
            Un = U + s * d
            En = em.energy(Un)
            if roundoff or En <= E + 1e-4 * s * slope or s < 1e-12:
                break
            s *= 0.5
        if not np.isfinite(En):
            raise ConvergenceError("line search failed to find a finite energy",
                                   {"iterations": it, "gradient_norm": gnorm})
        stalled = abs(E - En) <= 1e-15 * max(1.0, abs(E)) and s < 1.0
        U, E = Un, En
        hist.append(E)
        g = em.gradient(U)
        gnorm = _gnorm(g)
        it += 1
        log.debug("newton %d: energy %.15g |g| %.3e step %.3g", it, E, gnorm, s)
        if stalled and gnorm < 1e3 * tol:
            break
    return U, it, gnorm, hist


def solve(spec: ProblemSpec, h: float = 0.05, depth: int = 12, order: int = 2, tol: float = 1e-10,
          max_iter: int = 60, disc: Discretization | None = None, U0=None) -> Solution:
    """Minimise the discrete energy with damped Newton iterations.

    Raises
    ------
    SpecError
        If the specification is invalid (including ``chi >= 0``).
    ConvergenceError
        If the gradient norm stays above ``tol`` after ``max_iter`` steps.
    """
    spec.check()
    if disc is None:
        disc = Discretization(spec.divisor, h, depth, order)
    em = EnergyModel(spec, disc, "solve")
    if U0 is None:
        U0 = np.full(disc.space.ndof, em.constant_guess())
    U, it, gnorm, hist = newton(em, U0, tol, max_iter)
    # nested-rule error of the Gauss-Bonnet densities
    a0, b0 = em.densities(U)
    a1, b1 = EnergyModel(spec, disc, "ref").densities(U)
    # plus the area defect of the discrete domain, which enters through m
    qerr = abs(a1 - a0) + abs(b1 - b0) + abs(spec.chi) * abs(disc.mvec.sum() - 1.0)
    return Solution(spec, disc, U, it, gnorm, hist, qerr, em.overflow, tol)


def solve_regularized(spec: ProblemSpec, delta: float, eps: float, **kw) -> Solution:
    return solve(replace(spec, regularization=Regularization(delta, eps)), **kw)


def energy(U, spec: ProblemSpec, disc: Discretization, level: str = "solve") -> float:
    """Discrete energy of coefficient vector ``U`` (or a Field)."""
    if isinstance(U, Field):
        U = U.coefficients
    return EnergyModel(spec, disc, level).energy(np.asarray(U, float))


# --------------------------------------------------------------------------
# diagnostics


@dataclass
class ResidualReport:
    interior: float
    boundary: float
    interior_vector: np.ndarray = field(repr=False)
    boundary_vector: np.ndarray = field(repr=False)


def residual_check(sol: Solution, U=None) -> ResidualReport:
    """Discrete Euler-Lagrange residual split into interior and boundary DOFs.

    The weak residual tested against each basis function is the energy
    gradient; its Euclidean norm over interior (boundary) DOFs is the dual
    norm reported for the interior (boundary) equation.
    """
    em = EnergyModel(sol.spec, sol.disc, "solve")
    U = sol.U if U is None else np.asarray(U, float)
    g = em.gradient(U)
    bd = np.zeros(sol.disc.space.ndof, bool)
    bd[boundary_dofs(sol.disc.space)] = True
    return ResidualReport(float(np.linalg.norm(g[~bd])), float(np.linalg.norm(g[bd])), g[~bd], g[bd])


def boundary_dofs(space: FESpace) -> np.ndarray:
    be = space.mesh.boundary_edges
    dofs = [be.ravel()]
    if space.order == 2:
        nv = space.mesh.n_vertices
        key = np.sort(be, axis=1)
        ek = space.edges[:, 0] * nv + space.edges[:, 1]
        dofs.append(nv + np.searchsorted(ek, key[:, 0] * nv + key[:, 1]))
    return np.unique(np.concatenate(dofs))


def manufactured_oracle(amplitude: float = 0.2, divisor: geo.Divisor | None = None,
                        max_tries: int = 8):
    """Smooth exact solution with matching curvature data.

    ``phi_hat = A (1 - |w|^2)(1 + 0.3 Re w^2)``.  The curvature data are
    ``Lambda_hat = (Delta_{g0} phi_hat - 2 chi) e^{-(phi_hat + H)}`` and
    ``sigma_hat = -(1/2) d_n phi_hat e^{-(phi_hat + H)/2}``; drafts with
    non-positive data are rejected by halving the amplitude.

    Returns ``(spec, phi_hat)`` with ``phi_hat`` a callable of disk points.
    """
    d = divisor if divisor is not None else geo.reference_divisor()
    chi = d.chi
    if chi >= 0:
        raise SpecError("manufactured oracle needs chi < 0")
    sing = SingularPart(d)
    A = amplitude
    for _ in range(max_tries):
        def phi_hat(w, A=A):
            w = np.asarray(w, complex)
            return A * (1 - np.abs(w) ** 2) * (1 + 0.3 * np.real(w * w))

        def lap_g(w, A=A):
            w = np.asarray(w, complex)
            flat = A * (-4.0 - 3.6 * np.real(w * w))
            return flat * np.exp(-2 * geo.conformal_exponent(w))

        def lam(w, A=A, phi_hat=phi_hat, lap_g=lap_g):
            return (lap_g(w) - 2 * chi) * np.exp(-(phi_hat(w) + sing.value(w)))

        def sig(w, A=A, phi_hat=phi_hat):
            w = np.asarray(w, complex)
            # outward derivative at |w| = 1 (metric factor e^{w0} = 1 there)
            dn = -2.0 * A * (1 + 0.3 * np.real(w * w) / np.abs(w) ** 2)
            return -0.5 * dn * np.exp(-0.5 * (phi_hat(w) + sing.value(w)))

        # draft acceptance on a probe grid
        r = np.linspace(0, 1, 41)[:, None]
        t = np.linspace(0, 2 * np.pi, 73)[None, :]
        probe = (r * np.exp(1j * t)).ravel()
        probe = probe[np.min(np.abs(probe[:, None] - sing.w[None, :]), axis=1) > 1e-3] \
            if len(sing) else probe
        if np.all(lap_g(probe) - 2 * chi > 0) and np.all(sig(np.exp(1j * t.ravel())) >= 0):
            spec = ProblemSpec(d, Lambda=1.0, sigma_arcs=(1.0,) * max(1, len(d.boundary)),
                               lambda_fn=lam, sigma_fn=sig)
            return spec, phi_hat
        A *= 0.5
    raise SpecError("manufactured oracle: rejection cap exceeded")


GREEN_MEAN = -np.log(4.0)      # m_{g0}(G0(., y)) for every y


def key_constant(sol: Solution) -> float:
    """Constant ``c`` of the Green representation with the kernel ``G0``.

    ``G0`` has ``g0``-mean ``-ln 4`` rather than zero, so
    ``c = m(phi) - ln 4 * M`` with ``M = (1/2 pi) int Lambda e^Phi + (1/pi) int sigma e^{Phi/2}``
    (``M = -2 chi`` by Gauss-Bonnet).
    """
    _, a, b = sol.gauss_bonnet("ref")
    return sol.mean_c + GREEN_MEAN * 2.0 * (a + b)


def consistency_identity(sol: Solution, probes, constant_shift: float = 0.0):
    """Max deviation between ``phi`` and its Green representation at disk probes.

    Returns ``(max deviation, max quadrature error estimate)``.
    """
    from .probe import green_representation
    probes = np.asarray(probes, complex)
    rhs, err = green_representation(sol, probes)
    lhs = sol.phi_disk(probes)
    dev = lhs - (rhs + key_constant(sol) + constant_shift)
    return float(np.max(np.abs(dev))), float(np.max(err))
