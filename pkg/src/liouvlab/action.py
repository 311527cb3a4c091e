"""Classical Liouville action, its interaction term and puncture derivatives.

``S = I(phi) + G(z, a)`` where ``I`` is the minimised energy and ``G`` the
explicit interaction of the punctures through the Green function.  The
configuration-independent constant depending only on ``w0`` is dropped, so
only differences and derivatives of ``S`` carry meaning.

``S`` is measured against the round background ``g0``.  Relative to the flat
half-plane metric it carries the conformal-anomaly term
``sum_x 2 delta_x w0(x)`` over the doubled list; ``S_flat`` removes it, and
its puncture derivatives are ``-L1`` (twice minus the accessory parameters).
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import geometry as geo
from .solver import (Discretization, ProblemSpec, Regularization, Solution, SpecError,
                     solve)


def weyl_term(divisor: geo.Divisor) -> float:
    """``sum_x 2 delta_x w0(x)`` over the doubled list, ``delta = -c (1 + c/2)``."""
    total = 0.0
    for x, c, _ in divisor.doubled_list():
        total += 2.0 * (-c * (1.0 + 0.5 * c)) * float(geo.conformal_exponent(complex(x)))
    return total


def interaction_term(divisor: geo.Divisor) -> float:
    """``-2 sum_{k != l} a_k a_l G0(z_k, z_l) - 2 sum_k a_k^2 W(z_k)``.

    Boundary entries use ``a = b/2`` and the boundary constant ``W``.
    """
    pts = list(divisor)
    a = np.array([p.green_weight for p in pts])
    x = np.array([p.location for p in pts], complex)
    total = 0.0
    for k in range(len(pts)):
        for l in range(len(pts)):
            if k != l:
                total -= 2.0 * a[k] * a[l] * float(geo.green(x[k], x[l]))
    total -= 2.0 * float(np.sum(a * a * geo.diagonal_W(x))) if pts else 0.0
    return float(total)


@dataclass
class ActionReport:
    I_value: float
    G_interaction: float
    S_total: float
    terms: dict = field(default_factory=dict)
    quadrature_error: float = 0.0
    weyl: float = 0.0
    # the additive constant depending only on w0 is not included
    background_constant_excluded: bool = True

    @property
    def S_flat(self) -> float:
        return self.S_total - self.weyl

    def as_dict(self) -> dict:
        return {"I": self.I_value, "G": self.G_interaction, "S": self.S_total,
                "S_flat": self.S_flat, "weyl": self.weyl,
                "terms": dict(self.terms), "quadrature_error": self.quadrature_error,
                "background_constant_excluded": self.background_constant_excluded}


def classical_action(sol: Solution) -> ActionReport:
    """Action of a solved configuration (masked curvatures if regularized)."""
    from .solver import EnergyModel
    if sol is None or sol.U is None:
        raise SpecError("classical_action needs a solved configuration")
    em = EnergyModel(sol.spec, sol.disc, "solve")
    dirichlet, bulk, bdry, lin = em.parts(sol.U)
    I = dirichlet + bulk + bdry + lin
    I_ref = EnergyModel(sol.spec, sol.disc, "ref").energy(sol.U)
    G = interaction_term(sol.spec.divisor)
    terms = {"dirichlet": dirichlet, "bulk": bulk, "boundary": bdry, "linear": lin}
    return ActionReport(float(I), G, float(I) + G, terms, abs(I_ref - I),
                        weyl_term(sol.spec.divisor))


def regularized_action(spec: ProblemSpec, schedule, h: float = 0.05, depth: int = 12,
                       band: float = 0.1, disc: Discretization | None = None, **kw):
    """``S_{delta, eps}`` along a schedule of ``(delta, eps)`` pairs.

    Returns a list of ``(delta, eps, S)``.  The unregularized mesh is reused
    so the masks are the only change between entries.
    """
    if disc is None:
        disc = Discretization(spec.divisor, h, depth)
    out = []
    U0 = None
    for delta, eps in schedule:
        s = replace(spec, regularization=Regularization(delta, eps, band))
        sol = solve(s, disc=disc, U0=U0, **kw)
        U0 = sol.U
        out.append((float(delta), float(eps), classical_action(sol).S_total))
    return out


# --------------------------------------------------------------------------
# finite-difference derivatives in the puncture positions


@dataclass
class FDResult:
    value: complex
    error: float
    steps: tuple
    raw: tuple       # central differences at h and h/2


def _action_at(spec: ProblemSpec, base: Discretization, index: int, loc, U0, tol, background):
    d2 = spec.divisor.moved(index, loc)
    disc = base.morphed(d2)
    sol = solve(replace(spec, divisor=d2), disc=disc, U0=U0, tol=tol)
    rep = classical_action(sol)
    return rep.S_flat if background == "flat" else rep.S_total


def default_step(spec: ProblemSpec, index: int) -> float:
    x = np.array([p.location for p in spec.divisor], complex)
    others = np.delete(x, index)
    dmin = np.min(np.abs(others - x[index])) if others.size else 1.0
    if spec.divisor.punctures[index].is_bulk:
        dmin = min(dmin, x[index].imag)
    return 1e-3 * float(dmin)


def action_derivative_fd(spec: ProblemSpec, index: int, step: float | None = None,
                         sol: Solution | None = None, h: float = 0.05, depth: int = 12,
                         tol: float = 1e-11, background: str = "flat") -> FDResult:
    """Derivative of ``S`` in the position of puncture ``index``.

    Bulk punctures give the Wirtinger derivative ``(d_x - i d_y) S / 2``;
    boundary punctures the real derivative along the axis.  Central
    differences at ``step`` and ``step/2`` are Richardson-combined; the mesh
    is morphed (same connectivity) so the discrete action is smooth in the
    puncture position.  ``background`` selects ``S_flat`` (default) or the
    ``g0`` action ``S``; they differ by the anomaly term.
    """
    if background not in ("flat", "g0"):
        raise ValueError("background must be 'flat' or 'g0'")
    p = spec.divisor.punctures[index]
    if step is None:
        step = default_step(spec, index)
    if sol is None:
        sol = solve(spec, h=h, depth=depth, tol=tol)
    base, U0 = sol.disc, sol.U
    x0 = complex(p.location)
    dirs = [1.0, 1j] if p.is_bulk else [1.0]

    def central(hh):
        parts = []
        for d in dirs:
            sp_ = _action_at(spec, base, index, x0 + hh * d, U0, tol, background)
            sm_ = _action_at(spec, base, index, x0 - hh * d, U0, tol, background)
            parts.append((sp_ - sm_) / (2 * hh))
        if p.is_bulk:
            return 0.5 * (parts[0] - 1j * parts[1])
        return complex(parts[0])

    d1 = central(step)
    d2 = central(step / 2)
    rich = (4.0 * d2 - d1) / 3.0
    value = rich if p.is_bulk else complex(rich.real, 0.0)
    return FDResult(value, float(abs(rich - d2)), (step, step / 2), (d1, d2))
