import numpy as np
import pytest
from dataclasses import replace
from hypothesis import given, settings
from hypothesis import strategies as hst

from liouvlab import geometry as geo
from liouvlab.solver import (ConvergenceError, ProblemSpec, Regularization, SpecError,
                             consistency_identity, energy, key_constant, manufactured_oracle,
                             reference_spec, residual_check, solve)


def test_reference_solve_converges(coarse_sol):
    assert coarse_sol.gradient_norm <= coarse_sol.tol
    defect, a, b = coarse_sol.gauss_bonnet()
    assert abs(defect) <= max(1e-6, 10 * coarse_sol.quadrature_error)
    assert a > 0 and b > 0


def test_energy_history_decreasing(coarse_sol):
    assert np.all(np.diff(coarse_sol.energy_history) <= 1e-12)


def test_residual_small(coarse_sol):
    rep = residual_check(coarse_sol)
    assert rep.interior < 1e-9 and rep.boundary < 1e-9


@settings(max_examples=15, deadline=None)
@given(hst.integers(0, 2 ** 32 - 1), hst.floats(1e-3, 1e-1))
def test_minimizer_is_minimum(coarse_sol, seed, eps):
    d = np.random.default_rng(seed).standard_normal(coarse_sol.disc.space.ndof)
    d /= np.linalg.norm(d)
    E0 = energy(coarse_sol.U, coarse_sol.spec, coarse_sol.disc)
    assert energy(coarse_sol.U + eps * d, coarse_sol.spec, coarse_sol.disc) > E0
    assert energy(coarse_sol.U - eps * d, coarse_sol.spec, coarse_sol.disc) > E0


@pytest.mark.parametrize("theta", [0.3, -0.5])
def test_isometry_invariance(ref_sol, theta):
    spec2 = ref_sol.spec.transformed(theta)
    sol2 = solve(spec2, h=0.05)
    x = np.array([0.5 + 0.5j, -0.4 + 1.3j, 1.6 + 0.8j])
    v1 = ref_sol.phi_disk(geo.cayley(x))
    v2 = sol2.phi_disk(geo.cayley(geo.half_plane_isometry(theta, x)))
    assert np.allclose(v1, v2, atol=1e-4)
    assert sol2.gauss_bonnet()[1] == pytest.approx(ref_sol.gauss_bonnet()[1], abs=1e-6)


def test_green_representation_identity(coarse_sol):
    probes = np.array([0.1 + 0.2j, -0.3 - 0.4j, 0.6j])
    dev, err = consistency_identity(coarse_sol, probes)
    assert dev <= max(1e-4, 10 * err)


def test_key_constant_offset(coarse_sol):
    _, a, b = coarse_sol.gauss_bonnet()
    assert key_constant(coarse_sol) - coarse_sol.mean_c == pytest.approx(-np.log(4) * 2 * (a + b))


def test_larger_lambda_lowers_field():
    s1 = solve(reference_spec(Lambda=2.0), h=0.12, depth=6)
    s2 = solve(reference_spec(Lambda=4.0), h=0.12, depth=6)
    assert s2.mean_c < s1.mean_c


@pytest.mark.parametrize("kw, fragment", [
    ({"Lambda": -1.0}, "Lambda must be positive"),
    ({"sigma_arcs": (1.0,)}, "expected 2 sigma values"),
    ({"sigma_arcs": (1.0, -0.5)}, "must be >= 0"),
])
def test_invalid_spec(kw, fragment):
    with pytest.raises(SpecError, match=fragment):
        solve(reference_spec(**kw), h=0.2, depth=4)


def test_nonnegative_chi_rejected():
    d = geo.Divisor((geo.bulk(1j, -0.2),))
    with pytest.raises(SpecError, match="Euler characteristic"):
        solve(ProblemSpec(d), h=0.2, depth=4)


def test_regularization_checks():
    with pytest.raises(SpecError):
        Regularization(0.0, 0.1)
    spec = replace(reference_spec(), regularization=Regularization(0.5, 0.5))
    assert any("third of the minimal puncture distance" in e for e in spec.validate())


def test_convergence_error_diagnostics():
    with pytest.raises(ConvergenceError) as exc:
        solve(reference_spec(), h=0.15, depth=4, max_iter=1, tol=1e-14)
    assert exc.value.diagnostics["iterations"] == 1


def test_manufactured_data_positive():
    spec, phat = manufactured_oracle()
    w = 0.9 * np.exp(1j * np.linspace(0, 2 * np.pi, 50))
    assert np.all(spec.lambda_fn(w) > 0)
    assert np.all(spec.sigma_fn(w / 0.9) >= 0)
    assert np.allclose(phat(w / 0.9), 0.0)


def test_transformed_spec_keeps_arc_sigma():
    spec = reference_spec(sigma_arcs=(1.0, 0.0))
    t = spec.transformed(0.4)
    # the arc between the images of 0 and 1 keeps sigma = 1
    s0 = geo.half_plane_isometry(0.4, 0.0 + 0j).real
    s1 = geo.half_plane_isometry(0.4, 1.0 + 0j).real
    mid = 0.5 * (s0 + s1)
    lab = geo.arc_of_points(t.divisor, [mid])[0]
    assert t.sigma_arcs[lab] == 1.0
