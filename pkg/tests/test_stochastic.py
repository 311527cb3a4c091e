import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as hst
from scipy import integrate, stats

from liouvlab import stochastic as st
from liouvlab.solver import reference_spec


# ---------------------------------------------------------------- lattice and GFF


def test_lattice_size_and_gauss_bonnet(lattice):
    assert lattice.ndof <= st.MAX_DOF
    assert abs(lattice.gauss_bonnet_defect) < 1e-6
    assert lattice.vol0.sum() == pytest.approx(2 * np.pi, rel=1e-3)
    assert lattice.len0.sum() == pytest.approx(2 * np.pi, rel=1e-3)
    assert np.all(lattice.a >= 0) and np.all(lattice.s >= 0)


def test_lattice_dof_cap():
    with pytest.raises(st.StochasticError, match="degrees of freedom"):
        st.build_lattice(reference_spec(), h=0.03, depth=6)


def test_lattice_needs_input():
    with pytest.raises(st.StochasticError):
        st.build_lattice()


def test_covariance_inverts_stiffness(ensemble, lattice):
    C = ensemble.covariance
    n = lattice.ndof
    # K C / 2 pi is the M-orthogonal projector off the constants
    P = lattice.K @ C / (2 * np.pi)
    proj = np.eye(n) - np.outer(lattice.M @ np.ones(n), np.ones(n)) / (np.ones(n) @ lattice.M @ np.ones(n))
    assert np.allclose(P, proj, atol=1e-9)
    assert np.allclose(C @ (lattice.M @ np.ones(n)), 0.0, atol=1e-9)


def test_variance_is_covariance_diagonal(ensemble):
    assert np.allclose(ensemble.variance, np.diag(ensemble.covariance))


@settings(max_examples=10, deadline=None)
@given(seed=hst.integers(0, 2 ** 63 - 1))
def test_sampling_reproducible(ensemble, seed):
    a = ensemble.samples(520, seed)
    b = ensemble.samples(520, seed)
    assert np.array_equal(a, b)
    # the block layout makes prefixes independent of N (up to BLAS round-off)
    assert np.allclose(ensemble.samples(3, seed), a[:3], rtol=1e-13, atol=1e-13)
    assert np.array_equal(np.concatenate(list(ensemble.blocks(520, seed))), a)


def test_gff_sample_field(ensemble):
    f = st.gff_sample(ensemble, seed=3)
    assert np.array_equal(f.coefficients, ensemble.samples(1, 3)[0])


def test_covariance_monte_carlo(ensemble):
    chk = st.gff_covariance_check(ensemble, N=10_000, seed=101)
    assert chk.passed(4.0)
    assert chk.N == 10_000 and chk.seed == 101


# ---------------------------------------------------------------- chaos


@pytest.mark.parametrize("region", ["bulk", "boundary"])
@pytest.mark.parametrize("gamma", [0.3, 0.6])
def test_gmc_expectation(ensemble, region, gamma):
    chk = st.gmc_expectation_check(ensemble, gamma, N=10_000, region=region, seed=5)
    assert abs(chk.z) < 4


def test_gmc_mass_shapes(ensemble):
    X = ensemble.samples(4, 1)
    m = st.gmc_mass(ensemble, X, 0.4)
    assert m.shape == (4,)
    assert st.gmc_mass(ensemble, X[0], 0.4) == pytest.approx(m[0])
    assert st.gmc_mass(ensemble, X[0], 0.0) == pytest.approx(ensemble.lattice.vol0.sum())


@pytest.mark.parametrize("gamma", [-0.1, 1.0, 1.5])
def test_gmc_rejects_gamma(ensemble, gamma):
    with pytest.raises(st.StochasticError):
        st.gmc_mass(ensemble, ensemble.samples(1, 0)[0], gamma)


def test_gmc_rejects_region(ensemble):
    with pytest.raises(st.StochasticError):
        st.gmc_mass(ensemble, ensemble.samples(1, 0)[0], 0.2, region="edge")


@given(hst.lists(hst.floats(-5, 5), min_size=1, max_size=6), hst.floats(0.01, 3), hst.floats(0, 0.9))
def test_hermite_recurrence_matches_closed_form(xs, v, g0):
    X = np.array(xs)
    V = np.full_like(X, v)
    c = st.dgmc_coefficients(X, V, g0)
    assert np.allclose(c.H, c.direct(X, V), rtol=1e-10, atol=1e-10)


@settings(max_examples=20)
@given(hst.floats(-3, 3), hst.floats(0.1, 2), hst.floats(0.05, 0.8))
def test_hermite_generating_function(x, v, g0):
    # exp(g x - g^2 v/2) = sum (g - g0)^n/n! H_n exp(g0 x - g0^2 v/2) for small g - g0
    from math import factorial
    dg = 1e-2
    H = st.dgmc_coefficients(np.array([x]), np.array([v]), g0).H[:, 0]
    series = sum(dg ** n / factorial(n) * H[n] for n in range(st.KMAX + 1))
    lhs = np.exp((g0 + dg) * x - 0.5 * (g0 + dg) ** 2 * v) / np.exp(g0 * x - 0.5 * g0 ** 2 * v)
    assert series == pytest.approx(lhs, rel=1e-9)


@pytest.mark.parametrize("region", ["bulk", "boundary"])
def test_dgmc_first_derivative(ensemble, region):
    X = ensemble.samples(1, 9)[0]
    h = 1e-5
    fd = (st.gmc_mass(ensemble, X, 0.3 + h, region) - st.gmc_mass(ensemble, X, 0.3 - h, region)) / (2 * h)
    assert st.dgmc_measure(ensemble, X, 0.3, 1, region=region) == pytest.approx(fd, rel=1e-7)


def test_dgmc_order_checked(ensemble):
    with pytest.raises(st.StochasticError):
        st.dgmc_measure(ensemble, ensemble.samples(1, 0)[0], 0.1, 5)


@settings(max_examples=10, deadline=None)
@given(hst.integers(0, 1000), hst.integers(1, 4), hst.floats(0.05, 0.9))
def test_taylor_identity(ensemble, seed, n, gamma):
    X = ensemble.samples(1, seed)[0]
    r = st.taylor_identity_check(ensemble, X, gamma, n)
    assert r.residual <= 1e-10 * max(1.0, r.scale)


# ---------------------------------------------------------------- Robin field


def test_robin_reproduction(robin, lattice):
    f = np.random.default_rng(0).standard_normal(lattice.ndof)
    assert st.reproduction_residual(robin, f) < 1e-10
    assert not robin.ill_conditioned
    assert robin.total == pytest.approx(lattice.a.sum() / 2 + lattice.s.sum() / 8)


def test_robin_eigenvectors_mean_zero(robin):
    assert np.allclose(robin.alpha @ robin.vecs, 0.0, atol=1e-10)
    G = st.massive_green(robin)
    assert np.allclose(G, G.T)
    assert np.all(np.linalg.eigvalsh(G) > -1e-12)


def test_conjugacy(ensemble, robin):
    assert st.massive_reweighting_check(ensemble, robin).deviation < 1e-10


def test_reweighting_monte_carlo(ensemble, robin):
    mc = st.massive_reweighting_mc(ensemble, robin, N=10_000, seed=8)
    assert np.max(np.abs(mc.z)) < 4
    assert mc.ess > 1000


def test_partition_two_routes(ensemble, robin):
    pz = st.partition_zero(ensemble, robin)
    assert pz.relative_gap < 1e-10
    assert 0 < pz.value


def test_partition_grows_with_lambda(ensemble, lattice, robin):
    # exact Wick ordering: E[exp(-sum alpha (Y^2 - V))] increases with alpha here
    z1 = st.partition_zero(ensemble, robin).value
    z2 = st.partition_zero(ensemble, st.robin_build(lattice, lambda_scale=2.0)).value
    assert z2 > z1


def test_robin_rejects_zero_pairing(lattice):
    with pytest.raises(st.StochasticError):
        st.robin_build(lattice, lambda_scale=0.0, sigma_scale=0.0)


# ---------------------------------------------------------------- functionals and targets


@settings(max_examples=20, deadline=None)
@given(hst.floats(-2, 2), hst.floats(0.05, 3), hst.floats(0.2, 2))
def test_clipped_gaussian_mean(mu, var, clip):
    F = st.ClippedPairing(np.ones(1), clip)
    num, _ = integrate.quad(lambda t: F(t) * stats.norm.pdf(t, mu, np.sqrt(var)),
                            mu - 12 * np.sqrt(var), mu + 12 * np.sqrt(var), points=[-clip, 0, clip],
                            epsabs=1e-13, limit=200)
    assert F.gaussian_mean(mu, var) == pytest.approx(num, abs=1e-9)


@settings(max_examples=20, deadline=None)
@given(hst.floats(-2, 2), hst.floats(0.05, 3), hst.floats(0.2, 2))
def test_smoothed_gaussian_mean(mu, var, kappa):
    F = st.SmoothedNorm(np.ones(1), kappa)
    num, _ = integrate.quad(lambda t: F(t) * stats.norm.pdf(t, mu, np.sqrt(var)),
                            mu - 12 * np.sqrt(var), mu + 12 * np.sqrt(var), epsabs=1e-13)
    assert F.gaussian_mean(mu, var) == pytest.approx(num, abs=1e-9)


@pytest.mark.parametrize("name", st.FUNCTIONALS)
def test_functional_family(lattice, name):
    F = st.functional(name, lattice)
    assert F.name == name
    vals = F(np.linspace(-5, 5, 11))
    assert np.all((0 <= vals) & (vals <= 1))


def test_functional_unknown(lattice):
    with pytest.raises(st.StochasticError):
        st.functional("norm", lattice)


@pytest.mark.parametrize("f, exact", [
    (np.exp, np.e - 1),
    (lambda x: np.exp(-x * x), np.sqrt(np.pi) / 2 * 0.8427007929497149),
])
def test_simpson_halving(f, exact):
    val, change, n = st.simpson_halving(f, np.array(0.0), np.array(1.0), 1e-13)
    assert val == pytest.approx(exact, rel=1e-12)
    assert change < 1e-13


@pytest.mark.parametrize("name", ["one", "clipped_pairing", "smoothed_norm"])
def test_target_quadrature_matches_closed_form(ensemble, robin, name):
    F = st.functional(name, ensemble.lattice)
    t = st.semiclassical_target(ensemble, robin, F)
    assert t.value == pytest.approx(t.closed_form, rel=1e-9)


def test_semiclassical_smoothed_norm(ensemble, robin):
    F = st.functional("smoothed_norm", ensemble.lattice)
    run = st.semiclassical_mc(ensemble, robin, F, (0.5, 0.1), N=4000, seed=3)
    assert abs(run.final_z) < 4
    rows = run.table()
    assert [r["gamma"] for r in rows] == [0.5, 0.1]
    assert all(r["seed"] == 3 and r["N"] == 4000 for r in rows)
    # window edges carry a negligible weight relative to the mode
    assert all(e.quadrature["tail"] < 1e-8 for e in run.estimates)


def test_semiclassical_seed_reproducible(ensemble, robin):
    F = st.functional("one", ensemble.lattice)
    a = st.semiclassical_mc(ensemble, robin, F, (0.2,), N=600, seed=42)
    b = st.semiclassical_mc(ensemble, robin, F, (0.2,), N=600, seed=42)
    assert a.estimates[0].mean == b.estimates[0].mean
