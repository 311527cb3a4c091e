import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as hst

from liouvlab import geometry as geo
from liouvlab.discretization import mesh as ms
from liouvlab.discretization.fem import FESpace, Field, model_area_weight, model_length_weight
from liouvlab.discretization.integrate import Integrator, QuadratureError
from liouvlab.discretization.pairing import weighted_pairing
from liouvlab.discretization.quadrature import collapsed_triangle, gauss_jacobi01, trapezoid_circle


@pytest.fixture(scope="module")
def mesh():
    return ms.build_mesh(geo.reference_divisor(), 0.1, 8)


@pytest.fixture(scope="module")
def space(mesh):
    return FESpace(mesh, 2)


# ---------------------------------------------------------------- quadrature


@given(hst.floats(-0.9, 3.0), hst.integers(0, 9))
def test_gauss_jacobi_exact(beta, k):
    x, w = gauss_jacobi01(6, beta)
    assert np.sum(w * x ** k) == pytest.approx(1.0 / (beta + k + 1), rel=1e-12)


def test_gauss_jacobi_rejects_nonintegrable():
    with pytest.raises(ValueError):
        gauss_jacobi01(4, -1.0)


@pytest.mark.parametrize("beta", [0.0, -0.5, -1.5, 0.7])
@pytest.mark.parametrize("k", [0, 1, 4])
def test_collapsed_triangle_singular_monomial(beta, k):
    # int over the reference triangle of u^beta xi^k with u = xi + eta
    xi, eta, u, w = collapsed_triangle(6, beta)
    num = np.sum(w * u ** beta * xi ** k)
    # int_0^1 u^(beta + k + 1) du * int_0^1 (1 - v)^k dv
    assert num == pytest.approx(1.0 / ((beta + k + 2) * (k + 1)), rel=1e-12)


@given(hst.integers(0, 7))
def test_trapezoid_circle_trig_exact(m):
    t, w = trapezoid_circle(8)
    assert np.sum(w * np.cos(m * t)) == pytest.approx(2 * np.pi if m == 0 else 0.0, abs=1e-12)


# ---------------------------------------------------------------- mesh


def test_mesh_quality(mesh):
    assert mesh.min_angle() > 15.0
    assert np.all(np.abs(mesh.vertices) <= 1 + 1e-12)
    # boundary vertices lie on the circle
    assert np.allclose(np.abs(mesh.vertices[mesh.boundary_edges.ravel()]), 1.0)


def test_mesh_has_puncture_vertices(mesh):
    d = geo.reference_divisor()
    w = d.disk_locations()
    for i in range(len(d)):
        assert mesh.vertices[mesh.puncture_vertex(i)] == pytest.approx(w[i], abs=1e-14)


def test_mesh_export_roundtrip(mesh, tmp_path):
    p = tmp_path / "m.txt"
    ms.export_text(mesh, p)
    m2 = ms.import_text(p, geo.reference_divisor())
    assert np.allclose(m2.vertices, mesh.vertices, atol=1e-15)
    assert np.array_equal(m2.triangles, mesh.triangles)


def test_deform_mesh_moves_puncture(mesh):
    d2 = geo.reference_divisor().moved(0, 0.01 + 1.0j)
    m2 = ms.deform_mesh(mesh, d2)
    assert m2.triangles is mesh.triangles or np.array_equal(m2.triangles, mesh.triangles)
    assert m2.vertices[m2.puncture_vertex(0)] == pytest.approx(geo.cayley(0.01 + 1.0j), abs=1e-13)
    assert m2.min_angle() > 10.0


# ---------------------------------------------------------------- FE space


def test_mass_matrix_area(space):
    M = space.assemble_mass(model_area_weight)
    assert M.sum() == pytest.approx(2 * np.pi, rel=1e-6)
    Mb = space.assemble_boundary_mass(model_length_weight)
    assert Mb.sum() == pytest.approx(2 * np.pi, rel=1e-8)


def test_stiffness_kernel_and_energy(space):
    K = space.assemble_stiffness()
    assert np.max(np.abs(K @ np.ones(space.ndof))) < 1e-12
    f = space.interpolate(lambda w: np.real(w) ** 2 + 0.3 * np.imag(w))
    # int_disk |grad(x^2 + 0.3 y)|^2 = pi + 0.09 pi
    assert f.coefficients @ (K @ f.coefficients) == pytest.approx(1.09 * np.pi, rel=1e-5)


@settings(max_examples=25, deadline=None)
@given(hst.floats(-2, 2), hst.floats(-2, 2), hst.floats(-2, 2))
def test_linear_reproduction(space, a, b, c):
    f = space.interpolate(lambda w: a + b * np.real(w) + c * np.imag(w))
    rng = np.random.default_rng(0)
    r = 0.99 * np.sqrt(rng.uniform(size=50))
    w = r * np.exp(2j * np.pi * rng.uniform(size=50))
    assert np.allclose(f.evaluate(w), a + b * w.real + c * w.imag, atol=1e-11)
    g = f.gradient(w)
    assert np.allclose(g[:, 0], b, atol=1e-9) and np.allclose(g[:, 1], c, atol=1e-9)


def test_field_arithmetic(space):
    f = Field(space, np.ones(space.ndof))
    g = (f + f) * 0.5
    assert np.allclose(g.coefficients, 1.0)


def test_order_checked(mesh):
    with pytest.raises(ValueError):
        FESpace(mesh, 3)


# ---------------------------------------------------------------- singular integration


@pytest.mark.parametrize("beta", [-1.5, -0.5, 0.8])
def test_singular_bulk_integral(space, beta):
    integ = Integrator(space)
    betas = np.array([beta, 0.0, 0.0])
    val, err = integ.integrate_bulk(lambda q: np.abs(q.pts) ** beta, betas=betas)
    assert val == pytest.approx(2 * np.pi / (beta + 2), rel=1e-5)
    assert err < 1e-6


def test_nonfinite_integrand_raises(space):
    integ = Integrator(space)
    with pytest.raises(QuadratureError):
        integ.integrate_bulk(lambda q: np.full(q.size, np.inf))
    with pytest.raises(QuadratureError):
        integ.integrate_boundary(lambda q: np.full(q.size, np.nan))


# ---------------------------------------------------------------- weighted pairing


def test_pairing_of_one_is_gauss_bonnet_sum(coarse_sol):
    _, a, b = coarse_sol.gauss_bonnet()
    assert weighted_pairing(1.0, coarse_sol) == pytest.approx(a + 0.5 * b, rel=1e-12)


@settings(max_examples=10, deadline=None)
@given(hst.floats(-3, 3), hst.floats(-3, 3))
def test_pairing_linear(coarse_sol, s, t):
    sp_ = coarse_sol.disc.space
    f = sp_.interpolate(lambda w: np.real(w))
    g = sp_.interpolate(lambda w: np.imag(w) ** 2)
    lhs = weighted_pairing(f * s + g * t, coarse_sol)
    rhs = s * weighted_pairing(f, coarse_sol) + t * weighted_pairing(g, coarse_sol)
    assert lhs == pytest.approx(rhs, abs=1e-12)


def test_pairing_callable_matches_field(coarse_sol):
    sp_ = coarse_sol.disc.space
    f = sp_.interpolate(lambda w: np.real(w))
    assert weighted_pairing(lambda w: np.real(w), coarse_sol) == pytest.approx(
        weighted_pairing(f, coarse_sol), abs=1e-10)


def test_pairing_needs_solution():
    with pytest.raises(ValueError):
        weighted_pairing(1.0, None)
