"""Exact formulas of the hemisphere background on the upper half-plane.

The background metric is ``g0 = 4|dx|^2 / (1 + |x|^2)^2`` on the closed upper
half-plane.  It has scalar curvature 2, geodesic boundary, area ``2*pi`` and
boundary length ``2*pi``.  The Cayley map ``w = (x - i)/(x + i)`` is an
isometry onto the closed unit disk carrying the metric
``4|dw|^2/(1 + |w|^2)^2``, which has the same form.  Every formula here
therefore holds verbatim in disk coordinates as well.

All functions accept scalars or numpy arrays of complex points.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

LN2 = float(np.log(2.0))
MODEL_AREA = 2.0 * np.pi
MODEL_BOUNDARY_LENGTH = 2.0 * np.pi
SCALAR_CURVATURE = 2.0
GEODESIC_CURVATURE = 0.0
EULER_CHARACTERISTIC = 1.0
# Points with |Im x| below this are treated as boundary points.
BOUNDARY_TOL = 1e-12


def conformal_exponent(x):
    """Return ``w0(x) = ln 2 - ln(1 + |x|^2)`` so that ``g0 = e^{2 w0}|dx|^2``."""
    x = np.asarray(x)
    out = LN2 - np.log1p(np.abs(x) ** 2)
    return out[()] if out.ndim == 0 else out


def d_conformal_exponent(x):
    """Wirtinger derivative ``d w0/dx = -conj(x)/(1 + |x|^2)``."""
    x = np.asarray(x, dtype=complex)
    out = -np.conj(x) / (1.0 + np.abs(x) ** 2)
    return out[()] if out.ndim == 0 else out


def d2_conformal_exponent(x):
    """Second Wirtinger derivative ``d^2 w0/dx^2 = conj(x)^2/(1 + |x|^2)^2``."""
    x = np.asarray(x, dtype=complex)
    out = np.conj(x) ** 2 / (1.0 + np.abs(x) ** 2) ** 2
    return out[()] if out.ndim == 0 else out


def green(x, y):
    """Neumann Green function of ``g0``.

    ``G0(x, y) = -ln|x - y| - ln|x - conj(y)| - w0(x) - w0(y) - 1``.  Its
    ``g0``-mean in ``x`` is the constant ``-ln 4`` for every ``y``.

    Raises
    ------
    ValueError
        If any pair of points coincides.
    """
    x = np.asarray(x, dtype=complex)
    y = np.asarray(y, dtype=complex)
    d1 = np.abs(x - y)
    if np.any(d1 == 0.0):
        raise ValueError("green: coincident points")
    d2 = np.abs(x - np.conj(y))
    out = -np.log(d1) - np.log(d2) - conformal_exponent(x) - conformal_exponent(y) - 1.0
    return out[()] if np.ndim(out) == 0 else out


def green_dx(x, y):
    """Wirtinger derivative of ``G0(x, y)`` in ``x``."""
    x = np.asarray(x, dtype=complex)
    y = np.asarray(y, dtype=complex)
    return -0.5 / (x - y) - 0.5 / (x - np.conj(y)) - d_conformal_exponent(x)


def green_dxx(x, y):
    """Second Wirtinger derivative of ``G0(x, y)`` in ``x``."""
    x = np.asarray(x, dtype=complex)
    y = np.asarray(y, dtype=complex)
    return 0.5 / (x - y) ** 2 + 0.5 / (x - np.conj(y)) ** 2 - d2_conformal_exponent(x)


def geodesic_distance(x, y):
    """Closed-form ``g0`` distance: ``2 arcsin(|x - y| / sqrt((1+|x|^2)(1+|y|^2)))``.

    This is the great-circle distance between the stereographic images on the
    unit sphere; the same expression holds in disk coordinates.
    """
    x = np.asarray(x, dtype=complex)
    y = np.asarray(y, dtype=complex)
    s = np.abs(x - y) / np.sqrt((1.0 + np.abs(x) ** 2) * (1.0 + np.abs(y) ** 2))
    out = 2.0 * np.arcsin(np.clip(s, 0.0, 1.0))
    return out[()] if np.ndim(out) == 0 else out


def is_boundary_point(y) -> np.ndarray:
    return np.abs(np.imag(np.asarray(y, dtype=complex))) <= BOUNDARY_TOL


def diagonal_W(y):
    """Constant ``W(y)`` in the diagonal expansion of the Green function.

    Bulk points: ``G0(x, y) + ln d(x, y) -> W(y) = -ln(2 Im y) - w0(y) - 1``.
    Boundary points: ``G0(x, y) + 2 ln d(x, y) -> W(y) = -1`` for every ``y``
    (the boundary is a single orbit of the isometry group, so the constant
    cannot depend on ``y``).
    """
    y = np.asarray(y, dtype=complex)
    bdry = is_boundary_point(y)
    im = np.where(bdry, 1.0, np.imag(y))
    out = np.where(bdry, -1.0, -np.log(2.0 * im) - conformal_exponent(y) - 1.0)
    return out[()] if out.ndim == 0 else out


# --------------------------------------------------------------------------
# Cayley model and isometries


def cayley(x):
    """Map the closed upper half-plane onto the closed unit disk."""
    x = np.asarray(x, dtype=complex)
    out = (x - 1j) / (x + 1j)
    return out[()] if out.ndim == 0 else out


def cayley_inv(w):
    """Inverse Cayley map ``x = i (1 + w)/(1 - w)``."""
    w = np.asarray(w, dtype=complex)
    out = 1j * (1.0 + w) / (1.0 - w)
    return out[()] if out.ndim == 0 else out


def dx_dw(w):
    """Derivative of ``cayley_inv``: ``2i/(1 - w)^2``."""
    w = np.asarray(w, dtype=complex)
    return 2j / (1.0 - w) ** 2


def boundary_angle(x):
    """Angle in ``(0, 2 pi)`` of the disk image of a real point; increases with ``x``."""
    return np.mod(np.angle(cayley(np.asarray(x, dtype=float) + 0j)), 2.0 * np.pi)


def half_plane_isometry(theta: float, x):
    """Rotation ``x -> (cos t x - sin t)/(sin t x + cos t)`` of the hemisphere model.

    Raises
    ------
    ValueError
        If a point is sent to infinity.
    """
    x = np.asarray(x, dtype=complex)
    c, s = np.cos(theta), np.sin(theta)
    den = s * x + c
    if np.any(np.abs(den) < 1e-14):
        raise ValueError("half_plane_isometry: point mapped to infinity")
    out = (c * x - s) / den
    # real inputs stay exactly real
    out = np.where(np.imag(x) == 0.0, np.real(out) + 0j, out)
    return out[()] if out.ndim == 0 else out


# --------------------------------------------------------------------------
# Divisors


@dataclass(frozen=True)
class Puncture:
    """A bulk (``Im > 0``) or boundary (``Im = 0``) puncture with weight."""

    kind: str
    location: complex
    weight: float

    def __post_init__(self):
        if self.kind not in ("bulk", "boundary"):
            raise ValueError(f"unknown puncture kind {self.kind!r}")
        object.__setattr__(self, "location", complex(self.location))
        object.__setattr__(self, "weight", float(self.weight))

    @property
    def is_bulk(self) -> bool:
        return self.kind == "bulk"

    @property
    def green_weight(self) -> float:
        """Coefficient ``a`` with ``H = -2 a G0(., p)``; boundary entries halve ``b``."""
        return self.weight if self.is_bulk else 0.5 * self.weight


def bulk(location, weight) -> Puncture:
    return Puncture("bulk", complex(location), weight)


def boundary(location, weight) -> Puncture:
    return Puncture("boundary", complex(float(np.real(location)), 0.0), weight)


@dataclass(frozen=True)
class Divisor:
    punctures: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "punctures", tuple(self.punctures))

    def __len__(self) -> int:
        return len(self.punctures)

    def __iter__(self):
        return iter(self.punctures)

    @property
    def bulk(self) -> list[Puncture]:
        return [p for p in self.punctures if p.is_bulk]

    @property
    def boundary(self) -> list[Puncture]:
        return [p for p in self.punctures if not p.is_bulk]

    @property
    def chi(self) -> float:
        return chi_singular(self)

    def doubled_list(self) -> list[tuple[complex, float, int]]:
        """Entries ``(x, c, index)`` of the doubled list.

        Each bulk puncture ``z`` contributes ``z`` and ``conj(z)`` with weight
        ``a``; each boundary puncture contributes itself with weight ``b``.
        ``index`` refers back to ``punctures``.
        """
        out = []
        for i, p in enumerate(self.punctures):
            if p.is_bulk:
                out.append((p.location, p.weight, i))
        for i, p in enumerate(self.punctures):
            if p.is_bulk:
                out.append((np.conj(p.location), p.weight, i))
        for i, p in enumerate(self.punctures):
            if not p.is_bulk:
                out.append((p.location, p.weight, i))
        return out

    def moved(self, index: int, location) -> "Divisor":
        ps = list(self.punctures)
        p = ps[index]
        ps[index] = Puncture(p.kind, location, p.weight)
        return Divisor(tuple(ps))

    def transformed(self, theta: float) -> "Divisor":
        return Divisor(tuple(Puncture(p.kind, half_plane_isometry(theta, p.location), p.weight)
                             for p in self.punctures))

    def disk_locations(self) -> np.ndarray:
        w = cayley(np.array([p.location for p in self.punctures], dtype=complex))
        # boundary images lie exactly on the unit circle
        for i, p in enumerate(self.punctures):
            if not p.is_bulk:
                w[i] = np.exp(1j * np.angle(w[i]))
        return w


def make_divisor(punctures: Iterable[Puncture]) -> Divisor:
    return Divisor(tuple(punctures))


def chi_singular(d: Divisor) -> float:
    """Singular Euler characteristic ``1 + sum a_k + sum b_l / 2``."""
    return EULER_CHARACTERISTIC + sum(p.weight if p.is_bulk else 0.5 * p.weight for p in d)


def validate_divisor(d: Divisor, require_negative_chi: bool = True) -> list[str]:
    """Return human-readable descriptions of every violated constraint."""
    errors = []
    for i, p in enumerate(d.punctures):
        x = p.location
        if not (np.isfinite(x.real) and np.isfinite(x.imag)):
            errors.append(f"puncture {i}: non-finite location {x}")
            continue
        if not np.isfinite(p.weight):
            errors.append(f"puncture {i}: non-finite weight")
        elif p.weight <= -1.0:
            errors.append(f"puncture {i}: weight {p.weight} must exceed -1")
        if p.is_bulk and x.imag <= BOUNDARY_TOL:
            errors.append(f"puncture {i}: bulk puncture must lie in the open half-plane (Im = {x.imag})")
        if not p.is_bulk and abs(x.imag) > BOUNDARY_TOL:
            errors.append(f"puncture {i}: boundary puncture must be real (Im = {x.imag})")
    locs = [p.location for p in d.punctures]
    for i in range(len(locs)):
        for j in range(i + 1, len(locs)):
            if abs(locs[i] - locs[j]) < 1e-12:
                errors.append(f"punctures {i} and {j} coincide at {locs[i]}")
    chi = chi_singular(d)
    if require_negative_chi and chi >= 0.0:
        errors.append(f"singular Euler characteristic {chi:g} must be negative")
    return errors


def reference_divisor() -> Divisor:
    """Bulk ``-0.75`` at ``i``, boundary ``-0.75`` at ``0`` and ``1``."""
    return Divisor((bulk(1j, -0.75), boundary(0.0, -0.75), boundary(1.0, -0.75)))


def sorted_boundary(d: Divisor) -> list[int]:
    """Indices of boundary punctures sorted by real coordinate."""
    idx = [i for i, p in enumerate(d.punctures) if not p.is_bulk]
    return sorted(idx, key=lambda i: d.punctures[i].location.real)


def arc_of_points(d: Divisor, t: Sequence[float] | np.ndarray) -> np.ndarray:
    """Arc label of real points.

    Arcs are numbered by the sorted boundary punctures ``s_1 < ... < s_M``:
    arc ``j < M - 1`` is ``(s_{j+1}, s_{j+2})`` and arc ``M - 1`` is the arc
    through infinity.  With no boundary puncture there is a single arc ``0``.
    """
    t = np.asarray(t, dtype=float)
    s = np.array([d.punctures[i].location.real for i in sorted_boundary(d)])
    if s.size == 0:
        return np.zeros(t.shape, dtype=int)
    j = np.searchsorted(s, t, side="right") - 1
    return np.where(j < 0, s.size - 1, j).astype(int)
