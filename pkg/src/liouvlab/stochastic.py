"""Finite-dimensional Gaussian free field, chaos measures and the semiclassical limit.

Everything lives on a coarse P1 lattice carried by a solved configuration.
The lattice is the regularization: Wick ordering uses the exact nodal
variance ``V_i = Var(X_i)``, so the Gaussian identities below hold exactly
in finite dimensions and can be checked to round-off.

Nodal measures of the solved metric ``g* = e^{phi + H} g0``:

* ``a_i = (1/2 pi) int N_i Lambda dv*``  (bulk curvature measure),
* ``s_i = (2/pi) int N_i sigma dl*``     (boundary curvature measure),
* pairing ``<f> = sum_i alpha_i f_i`` with ``alpha = a/2 + s/8``.

They are built from the singular quadrature of the energy, so the discrete
Euler-Lagrange equation gives ``sum a + sum s / 2 = -2 chi(Sigma, D)`` to
solver tolerance, which is what cancels the ``1/gamma`` terms in ``[F]_gamma``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.special import erfc

from . import geometry as geo
from ._kernels import expsum
from .discretization.fem import Field, model_area_weight, model_length_weight
from .solver import EnergyModel, ProblemSpec, Solution, solve

MAX_DOF = 2000
BLOCK = 500          # samples drawn per derived seed; fixes the stream layout
KMAX = 4
CHI_SURFACE = 1.0    # Euler characteristic of the disk


class StochasticError(ValueError):
    pass


def _rng(seed: int, block: int) -> np.random.Generator:
    """Counter-based stream for one block of samples."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(block)])))


# --------------------------------------------------------------------------
# lattice


@dataclass(frozen=True, eq=False)
class Lattice:
    sol: Solution
    K: np.ndarray           # stiffness (dense)
    M: np.ndarray           # consistent g0 mass
    vol0: np.ndarray        # lumped g0 area
    len0: np.ndarray        # lumped g0 boundary length
    a: np.ndarray           # (1/2 pi) int N Lambda dv*
    s: np.ndarray           # (2/pi) int N sigma dl*
    vol_star: np.ndarray    # int N dv*

    @property
    def ndof(self) -> int:
        return self.K.shape[0]

    @property
    def points(self) -> np.ndarray:
        return self.sol.disc.mesh.vertices

    @property
    def gauss_bonnet_defect(self) -> float:
        """``sum a + sum s / 2 + 2 chi``; zero up to solver tolerance."""
        return float(self.a.sum() + 0.5 * self.s.sum() + 2.0 * self.sol.spec.chi)


def build_lattice(spec: ProblemSpec | None = None, h: float = 0.12, depth: int = 6,
                  sol: Solution | None = None, tol: float = 1e-12) -> Lattice:
    """Solve on a P1 mesh and assemble the nodal measures."""
    if sol is None:
        if spec is None:
            raise StochasticError("build_lattice needs a spec or a solution")
        sol = solve(spec, h=h, depth=depth, order=1, tol=tol)
    disc = sol.disc
    if disc.order != 1:
        raise StochasticError("the stochastic lattice uses P1 elements")
    if disc.space.ndof > MAX_DOF:
        raise StochasticError(f"lattice has {disc.space.ndof} > {MAX_DOF} degrees of freedom")
    space = disc.space
    M = space.assemble_mass(model_area_weight).toarray()
    vol0 = M.sum(axis=1)
    len0 = space.assemble_boundary_mass(model_length_weight).toarray().sum(axis=1)
    em = EnergyModel(sol.spec, disc, "ref")
    eb = np.exp(em.B @ sol.U)
    a = em.B.T @ (em.wL * eb) / (2 * np.pi)
    s = 2.0 / np.pi * (em.Bs.T @ (em.wS * np.exp(0.5 * (em.Bs @ sol.U))))
    q = em.qb
    dens = np.exp(disc.sing.value(q.pts) + 2.0 * geo.conformal_exponent(q.pts))
    vol_star = em.B.T @ (q.wts * dens * eb)
    return Lattice(sol, disc.K.toarray(), M, vol0, len0, np.asarray(a), np.asarray(s),
                   np.asarray(vol_star))


# --------------------------------------------------------------------------
# Neumann GFF


@dataclass(frozen=True, eq=False)
class GaussianEnsemble:
    """Spectral sampler ``X = sqrt(2 pi) sum_n xi_n e_n / sqrt(lambda_n)``."""
    lattice: Lattice
    lam: np.ndarray          # ascending, constant mode removed
    vecs: np.ndarray         # mass-orthonormal columns
    seed: int = 0
    scale: float = np.sqrt(2 * np.pi)

    @property
    def factor(self) -> np.ndarray:
        """``L`` with ``X = L xi``."""
        return self.scale * self.vecs / np.sqrt(self.lam)[None, :]

    @property
    def covariance(self) -> np.ndarray:
        L = self.factor
        return L @ L.T

    @property
    def variance(self) -> np.ndarray:
        return np.sum(self.factor ** 2, axis=1)

    def samples(self, N: int, seed: int | None = None) -> np.ndarray:
        """``N`` samples as rows; block ``j`` uses the stream ``(seed, j)``."""
        seed = self.seed if seed is None else seed
        L = self.factor
        out = np.empty((N, L.shape[0]))
        for j, start in enumerate(range(0, N, BLOCK)):
            stop = min(N, start + BLOCK)
            xi = _rng(seed, j).standard_normal((BLOCK, L.shape[1]))[: stop - start]
            out[start:stop] = xi @ L.T
        return out

    def blocks(self, N: int, seed: int | None = None):
        """Iterate over the same samples block by block."""
        seed = self.seed if seed is None else seed
        L = self.factor
        for j, start in enumerate(range(0, N, BLOCK)):
            stop = min(N, start + BLOCK)
            yield _rng(seed, j).standard_normal((BLOCK, L.shape[1]))[: stop - start] @ L.T


def gaussian_ensemble(lat: Lattice, seed: int = 0) -> GaussianEnsemble:
    lam, vecs = sla.eigh(lat.K, lat.M)
    if abs(lam[0]) > 1e-8 * lam[-1] or lam[1] <= 1e-8 * lam[-1]:
        raise StochasticError("stiffness must have exactly one constant null mode")
    return GaussianEnsemble(lat, lam[1:], vecs[:, 1:], int(seed))


def gff_sample(ens: GaussianEnsemble, seed: int | None = None) -> Field:
    """First sample of the stream ``seed`` as an FE field."""
    X = ens.samples(1, seed)[0]
    return Field(ens.lattice.sol.disc.space, X)


@dataclass
class CovarianceCheck:
    pairs: np.ndarray
    empirical: np.ndarray
    exact: np.ndarray
    z: np.ndarray            # deviation in units of the exact standard error
    mean_z: np.ndarray
    N: int
    seed: int

    @property
    def max_z(self) -> float:
        return float(max(np.max(np.abs(self.z)), np.max(np.abs(self.mean_z))))

    def passed(self, band: float = 4.0) -> bool:
        return self.max_z <= band


def gff_covariance_check(ens: GaussianEnsemble, N: int = 10_000, pairs=None,
                         seed: int | None = None) -> CovarianceCheck:
    """Empirical covariance at node pairs against ``2 pi K^+``.

    The standard error of ``X_i X_j`` is ``sqrt(C_ii C_jj + C_ij^2) / sqrt(N)``.
    """
    seed = ens.seed if seed is None else seed
    n = ens.lattice.ndof
    if pairs is None:
        rng = np.random.default_rng(12345)
        pairs = rng.integers(0, n, size=(10, 2))
    pairs = np.asarray(pairs)
    X = ens.samples(N, seed)
    C = ens.covariance
    i, j = pairs[:, 0], pairs[:, 1]
    emp = np.mean(X[:, i] * X[:, j], axis=0)
    exact = C[i, j]
    se = np.sqrt(C[i, i] * C[j, j] + C[i, j] ** 2) / np.sqrt(N)
    mean_z = X[:, np.unique(pairs)].mean(axis=0) / np.sqrt(np.diag(C)[np.unique(pairs)] / N)
    return CovarianceCheck(pairs, emp, exact, (emp - exact) / se, mean_z, N, seed)


# --------------------------------------------------------------------------
# chaos measures


def _region(ens: GaussianEnsemble, region: str, weights):
    lat = ens.lattice
    if region == "bulk":
        w, half = lat.vol0, False
    elif region == "boundary":
        w, half = lat.len0, True
    else:
        raise StochasticError("region must be 'bulk' or 'boundary'")
    if weights is not None:
        w = w * np.asarray(weights, float)
    return w, half


def _check_gamma(gamma: float):
    if not 0.0 <= gamma < 1.0:
        raise StochasticError("gamma must lie in [0, 1)")


def gmc_mass(ens: GaussianEnsemble, X, gamma: float, region: str = "bulk", weights=None):
    """``sum_i w_i exp(gamma X_i - gamma^2 V_i / 2)``.

    The boundary variant uses ``gamma/2`` and the counterterm ``gamma^2 V / 8``.
    ``X`` may hold one sample or samples as rows.
    """
    _check_gamma(gamma)
    w, half = _region(ens, region, weights)
    g = 0.5 * gamma if half else gamma
    X2 = np.atleast_2d(X)
    out = expsum(X2, w, ens.variance, g, 0.5)
    return out if np.ndim(X) == 2 else float(out[0])


@dataclass
class MeanCheck:
    mean: float
    expected: float
    std_error: float
    N: int
    seed: int

    @property
    def z(self) -> float:
        return (self.mean - self.expected) / self.std_error if self.std_error > 0 else 0.0


def gmc_expectation_check(ens: GaussianEnsemble, gamma: float, N: int = 10_000,
                          region: str = "bulk", seed: int | None = None) -> MeanCheck:
    """``E[mass] = volume`` by Monte Carlo."""
    seed = ens.seed if seed is None else seed
    m = gmc_mass(ens, ens.samples(N, seed), gamma, region)
    w, _ = _region(ens, region, None)
    se = float(np.std(m, ddof=1) / np.sqrt(N)) if N > 1 else 0.0
    return MeanCheck(float(m.mean()), float(w.sum()), se, N, seed)


@dataclass
class DGMCCoefficients:
    """Generalized Hermite polynomials ``H_{n, gamma0}(X)`` for ``n <= KMAX``.

    ``exp(g X - g^2 V/2) = sum_n (g - g0)^n / n! H_n exp(g0 X - g0^2 V/2)``,
    so ``H_1 = X - g0 V`` and ``H_2 = (X - g0 V)^2 - V``.
    """
    gamma0: float
    H: np.ndarray            # shape (KMAX + 1, *X.shape)

    def direct(self, X, V) -> np.ndarray:
        """Closed form ``sum_k n! / (k! (n-2k)!) (-V/2)^k Y^(n-2k)``."""
        from math import factorial
        Y = np.asarray(X) - self.gamma0 * V
        out = np.zeros_like(self.H)
        for n in range(self.H.shape[0]):
            for k in range(n // 2 + 1):
                coef = factorial(n) / (factorial(k) * factorial(n - 2 * k))
                out[n] = out[n] + coef * (-0.5 * V) ** k * Y ** (n - 2 * k)
        return out


def dgmc_coefficients(X, V, gamma0: float, kmax: int = KMAX) -> DGMCCoefficients:
    X = np.asarray(X, float)
    Y = X - gamma0 * V
    H = np.empty((kmax + 1,) + X.shape)
    H[0] = 1.0
    if kmax >= 1:
        H[1] = Y
    for n in range(1, kmax):
        H[n + 1] = Y * H[n] - n * V * H[n - 1]
    return DGMCCoefficients(float(gamma0), H)


def dgmc_measure(ens: GaussianEnsemble, X, gamma0: float, k: int, f=None,
                 region: str = "bulk"):
    """``sum_i w_i f_i d^k/dgamma^k exp(gamma X_i - gamma^2 V_i/2)`` at ``gamma0``."""
    if not (isinstance(k, (int, np.integer)) and 0 <= k <= KMAX):
        raise StochasticError(f"derivative order must be an integer in [0, {KMAX}]")
    _check_gamma(gamma0)
    w, half = _region(ens, region, f)
    V = ens.variance
    X = np.asarray(X, float)
    g0 = 0.5 * gamma0 if half else gamma0
    H = dgmc_coefficients(X, V, g0, k).H[k]
    val = np.exp(g0 * X - 0.5 * g0 * g0 * V) * H
    out = val @ w if X.ndim == 2 else float(val @ w)
    return out * (0.5 ** k if half else 1.0)


@dataclass
class TaylorCheck:
    residual: float
    scale: float
    lhs: float
    terms: list


def taylor_identity_check(ens: GaussianEnsemble, X, gamma: float, n: int, f=None,
                          gamma0: float = 0.0, region: str = "bulk",
                          nodes: int = 40) -> TaylorCheck:
    """Taylor's formula with integral remainder for one sample.

    ``M(gamma) = sum_{k<n} (gamma-gamma0)^k/k! D^(k)(gamma0)
    + int_{gamma0}^{gamma} (gamma-t)^(n-1)/(n-1)! D^(n)(t) dt``.
    """
    from math import factorial
    if not 1 <= n <= KMAX:
        raise StochasticError(f"Taylor order must lie in [1, {KMAX}]")
    X = np.asarray(X, float)
    lhs = dgmc_measure(ens, X, gamma, 0, f, region)
    dg = gamma - gamma0
    terms = [dg ** k / factorial(k) * dgmc_measure(ens, X, gamma0, k, f, region) for k in range(n)]
    x, wq = np.polynomial.legendre.leggauss(nodes)
    t = gamma0 + 0.5 * dg * (x + 1.0)
    rem = 0.0
    for tk, wk in zip(t, wq):
        rem += wk * (gamma - tk) ** (n - 1) / factorial(n - 1) * dgmc_measure(ens, X, tk, n, f, region)
    rem *= 0.5 * dg
    terms.append(rem)
    w, half = _region(ens, region, f)
    V = ens.variance
    g = 0.5 * gamma if half else gamma
    scale = float(np.sum(np.abs(w) * np.exp(g * X - 0.5 * g * g * V))) + 1e-300
    return TaylorCheck(abs(lhs - sum(terms)), scale, lhs, terms)


# --------------------------------------------------------------------------
# massive Robin field


@dataclass(frozen=True, eq=False)
class RobinOperator:
    """``Q = K/(2 pi) + 2 diag(alpha)`` and its eigenpairs on ``<f> = 0``.

    ``ê_n`` are orthonormal in the lumped ``L^2(g*)`` product; ``Z`` is an
    orthonormal basis of the pairing-mean-zero subspace.
    """
    Q: np.ndarray
    alpha: np.ndarray
    Z: np.ndarray
    lam: np.ndarray
    vecs: np.ndarray
    vol_star: np.ndarray
    condition: float

    @property
    def total(self) -> float:
        """``<1>``."""
        return float(self.alpha.sum())

    @property
    def ill_conditioned(self) -> bool:
        return self.condition > 1e12

    def pairing(self, f) -> float:
        return float(self.alpha @ np.asarray(f))

    def mean(self, f):
        """``m_{z,a}(f) = <f> / <1>``."""
        return np.asarray(f) @ self.alpha / self.total

    def spectral_sum(self, power: float = 2.0, keep: float = 1.0) -> float:
        """``sum lambda_n^-power`` over the lowest ``keep`` fraction of the spectrum."""
        m = max(1, int(round(keep * self.lam.size)))
        return float(np.sum(self.lam[:m] ** -power))


def robin_build(lat: Lattice, lambda_scale: float = 1.0, sigma_scale: float = 1.0) -> RobinOperator:
    """Assemble ``Q_{Lambda, sigma}`` in the solved metric.

    ``Q(f, h) = (1/2 pi) int grad f . grad h + 2 <f h>``; the Dirichlet part is
    conformally invariant, so the plain stiffness is used.
    """
    alpha = 0.5 * lambda_scale * lat.a + 0.125 * sigma_scale * lat.s
    if alpha.sum() <= 0:
        raise StochasticError("the pairing vanishes identically")
    Q = lat.K / (2 * np.pi) + 2.0 * np.diag(alpha)
    Z = sla.null_space(alpha[None, :] / np.linalg.norm(alpha))
    A = Z.T @ Q @ Z
    Ms = Z.T @ (lat.vol_star[:, None] * Z)
    lam, y = sla.eigh(A, Ms)
    ew = np.linalg.eigvalsh(Q)
    cond = float(ew[-1] / ew[0]) if ew[0] > 0 else np.inf
    return RobinOperator(Q, alpha, Z, lam, Z @ y, lat.vol_star, cond)


def massive_green(rob: RobinOperator) -> np.ndarray:
    """``G = sum_n ê_n ê_n^T / lambda_n`` (covariance of the massive field)."""
    return (rob.vecs / rob.lam[None, :]) @ rob.vecs.T


def reproduction_residual(rob: RobinOperator, f) -> float:
    """``max |G Q f - (f - m(f))|``."""
    f = np.asarray(f, float)
    return float(np.max(np.abs(massive_green(rob) @ (rob.Q @ f) - (f - rob.mean(f)))))


def _centered_cov(ens: GaussianEnsemble, rob: RobinOperator) -> np.ndarray:
    """Covariance of ``X - m_{z,a}(X)`` from the Neumann ensemble."""
    n = rob.alpha.size
    P = np.eye(n) - np.outer(np.ones(n), rob.alpha) / rob.total
    return P @ ens.covariance @ P.T


@dataclass
class ConjugacyCheck:
    deviation: float
    covariance: np.ndarray
    green: np.ndarray


def massive_reweighting_check(ens: GaussianEnsemble, rob: RobinOperator) -> ConjugacyCheck:
    """Reweighting by ``exp(-<H2[X - m(X)]>)`` adds ``2 diag(alpha)`` to the precision.

    The base precision is read off the Neumann ensemble on the mean-zero
    subspace; the result is compared with the Robin eigen-expansion.
    """
    Z = rob.Z
    A = Z.T @ _centered_cov(ens, rob) @ Z
    prec = np.linalg.inv(A) + 2.0 * Z.T @ (rob.alpha[:, None] * Z)
    cov = Z @ np.linalg.solve(prec, Z.T)
    G = massive_green(rob)
    return ConjugacyCheck(float(np.max(np.abs(cov - G))), cov, G)


def wick_pairing(rob: RobinOperator, V, Y):
    """``<H2[Y]> = sum alpha (Y^2 - V)`` for samples as rows."""
    return (np.asarray(Y) ** 2 - V) @ rob.alpha


@dataclass
class ReweightMC:
    z: np.ndarray
    ess: float
    N: int
    seed: int


def massive_reweighting_mc(ens: GaussianEnsemble, rob: RobinOperator, N: int = 10_000,
                           pairs=None, seed: int | None = None) -> ReweightMC:
    """Self-normalized importance estimate of ``G`` at node pairs (delta-method errors)."""
    seed = ens.seed if seed is None else seed
    n = rob.alpha.size
    if pairs is None:
        pairs = np.random.default_rng(54321).integers(0, n, size=(10, 2))
    pairs = np.asarray(pairs)
    X = ens.samples(N, seed)
    Xb = X - rob.mean(X)[:, None]
    h = wick_pairing(rob, ens.variance, Xb)
    w = np.exp(-(h - h.min()))
    w /= w.sum()
    G = massive_green(rob)
    z = []
    for i, j in pairs:
        v = Xb[:, i] * Xb[:, j]
        est = w @ v
        se = np.sqrt(np.sum(w ** 2 * (v - est) ** 2))
        z.append((est - G[i, j]) / se)
    return ReweightMC(np.array(z), float(1.0 / np.sum(w ** 2)), N, seed)


@dataclass
class PartitionZero:
    """``E[exp(-<H2[X - m(X)]>)]`` by two routes."""
    determinant: float
    cholesky: float
    w: float
    log_det: float           # log det(I + delta)
    trace: float             # tr delta

    @property
    def value(self) -> float:
        return self.determinant

    @property
    def relative_gap(self) -> float:
        return abs(self.determinant - self.cholesky) / abs(self.cholesky)


def partition_zero(ens: GaussianEnsemble, rob: RobinOperator) -> PartitionZero:
    """``e^{-w} det((I + delta) e^{-delta})^{-1/2}`` against a Cholesky Gaussian integral.

    Determinant route: ``delta = D_{Lambda,sigma} D_0^{-1} - I`` in the Robin
    eigenbasis, ``D_0`` the Gram matrix of the Dirichlet form.  On the lattice
    ``w = sum alpha (E[(X - m X)^2] - V)``, with ``V`` the Neumann nodal variance.
    Cholesky route: ``e^{sum alpha V} det(I + 2 L^T P^T diag(alpha) P L)^{-1/2}``
    with ``X = L xi`` from the Neumann sampler.
    """
    V = ens.variance
    E = rob.vecs
    D0 = E.T @ (ens.lattice.K / (2 * np.pi)) @ E
    c0 = sla.cho_factor(D0)
    logdet_D0 = 2.0 * np.sum(np.log(np.diag(c0[0])))
    log_det = float(np.sum(np.log(rob.lam)) - logdet_D0)
    D0inv = sla.cho_solve(c0, np.eye(D0.shape[0]))
    trace = float(np.sum(rob.lam * np.diag(D0inv)) - rob.lam.size)
    var_bar = np.einsum("ik,kl,il->i", E, D0inv, E)
    w = float(rob.alpha @ (var_bar - V))
    det_val = np.exp(-w - 0.5 * (log_det - trace))

    n = rob.alpha.size
    P = np.eye(n) - np.outer(np.ones(n), rob.alpha) / rob.total
    PL = P @ ens.factor
    Mq = PL.T @ (rob.alpha[:, None] * PL)
    ch = np.linalg.cholesky(np.eye(Mq.shape[0]) + 2.0 * Mq)
    chol_val = np.exp(rob.alpha @ V - np.sum(np.log(np.diag(ch))))
    return PartitionZero(float(det_val), float(chol_val), w, log_det, trace)


# --------------------------------------------------------------------------
# semiclassical limit


class Functional:
    """Bounded continuous functional ``F(Y)`` depending on ``Y`` through ``ell = nu . Y``."""
    name = "functional"
    smooth = True

    def __init__(self, nu=None):
        self.nu = None if nu is None else np.asarray(nu, float)

    def stat(self, X) -> np.ndarray:
        X = np.atleast_2d(X)
        return np.zeros(X.shape[0]) if self.nu is None else X @ self.nu

    @property
    def slope(self) -> float:
        """``nu . 1``: shift of ``ell`` per unit of the constant mode."""
        return 0.0 if self.nu is None else float(self.nu.sum())

    def __call__(self, ell):
        raise NotImplementedError

    def gaussian_mean(self, mu, var):
        """``E[F]`` for ``ell ~ N(mu, var)``."""
        raise NotImplementedError


class ConstantOne(Functional):
    name = "one"

    def __call__(self, ell):
        return np.ones_like(np.asarray(ell, float))

    def gaussian_mean(self, mu, var):
        return np.ones_like(np.asarray(mu, float))


class ClippedPairing(Functional):
    """``F = min(|nu . Y|, clip)``."""
    name = "clipped_pairing"
    smooth = False

    def __init__(self, nu, clip: float = 1.0):
        super().__init__(nu)
        self.clip = float(clip)

    def __call__(self, ell):
        return np.minimum(np.abs(ell), self.clip)

    def gaussian_mean(self, mu, var):
        mu = np.asarray(mu, float)
        s = np.sqrt(var)
        k = self.clip

        def Phi(t):
            return 0.5 * erfc(-t / np.sqrt(2))

        def phi(t):
            return np.exp(-0.5 * t * t) / np.sqrt(2 * np.pi)

        def partial(lo, hi):
            # E[ell; lo < ell < hi]
            a, b = (lo - mu) / s, (hi - mu) / s
            return mu * (Phi(b) - Phi(a)) + s * (phi(a) - phi(b))

        tails = Phi((-k - mu) / s) + 1.0 - Phi((k - mu) / s)
        return partial(0.0, k) - partial(-k, 0.0) + k * tails


class SmoothedNorm(Functional):
    """``F = 1 - exp(-ell^2 / (2 kappa^2))``, a smooth bounded norm of the pairing."""
    name = "smoothed_norm"

    def __init__(self, nu, kappa: float = 1.0):
        super().__init__(nu)
        self.kappa = float(kappa)

    def __call__(self, ell):
        return -np.expm1(-0.5 * np.asarray(ell) ** 2 / self.kappa ** 2)

    def gaussian_mean(self, mu, var):
        k2 = self.kappa ** 2
        return 1.0 - np.sqrt(k2 / (k2 + var)) * np.exp(-0.5 * np.asarray(mu) ** 2 / (k2 + var))


def default_test_field(lat: Lattice) -> np.ndarray:
    """``nu`` averaging ``1/2 + Re w`` against the lumped ``g0`` area."""
    w = lat.points
    return lat.vol0 * (0.5 + w.real) / lat.vol0.sum()


FUNCTIONALS = ("one", "clipped_pairing", "smoothed_norm")


def functional(name: str, lat: Lattice, scale: float = 1.0) -> Functional:
    """Built-in family; ``scale`` is the clip level or the smoothing width."""
    if name == "one":
        return ConstantOne()
    if name == "clipped_pairing":
        return ClippedPairing(default_test_field(lat), scale)
    if name == "smoothed_norm":
        return SmoothedNorm(default_test_field(lat), scale)
    raise StochasticError(f"unknown functional {name!r}; use one of {FUNCTIONALS}")


def _simpson(y, dx):
    return dx / 3.0 * (y[..., 0] + y[..., -1] + 4.0 * y[..., 1:-1:2].sum(-1)
                       + 2.0 * y[..., 2:-1:2].sum(-1))


def simpson_halving(f, lo, hi, tol: float = 1e-12, start: int = 64, max_points: int = 2 ** 14):
    """Composite Simpson with step halving until the relative change is below ``tol``.

    ``f`` maps a grid (broadcast along the last axis) to values; returns the
    integral, the last change and the number of intervals.
    """
    n = start
    prev = None
    while True:
        t = np.linspace(0.0, 1.0, n + 1)
        x = lo[..., None] + (hi - lo)[..., None] * t
        val = _simpson(f(x), (hi - lo) / n)
        if prev is not None:
            change = np.max(np.abs(val - prev) / np.maximum(np.abs(val), 1e-300))
            if change < tol or n >= max_points:
                return val, float(change), n
        prev = val
        n *= 2


@dataclass
class Target:
    """Exact ``gamma = 0`` values."""
    one: float               # [1]_0
    value: float             # [F]_0
    partition: PartitionZero
    pairing_total: float
    ell_variance: float      # nu^T G nu
    quadrature_change: float
    closed_form: float       # [F]_0 with the c-integral done analytically


def semiclassical_target(ens: GaussianEnsemble, rob: RobinOperator, F: Functional,
                         tol: float = 1e-12) -> Target:
    """``[F]_0 = [1]_0 int E[F(X_{z,a} + c)] e^{-c^2 <1>} sqrt(<1>/pi) dc``.

    ``[1]_0 = e^{-chi c*/2} Z_0 sqrt(pi/<1>)`` with ``Z_0`` from
    :func:`partition_zero` and ``c* = m_{g0}(phi)``.
    """
    pz = partition_zero(ens, rob)
    one = rob.total
    cstar = ens.lattice.sol.mean_c
    one_val = np.exp(-0.5 * CHI_SURFACE * cstar) * pz.value * np.sqrt(np.pi / one)
    nu = F.nu
    s2 = 0.0 if nu is None else float(nu @ massive_green(rob) @ nu)
    slope = F.slope
    C = np.sqrt(2.0 * np.log(1e10) / one) * 1.5

    def integrand(c):
        return F.gaussian_mean(c * slope, max(s2, 1e-300)) * np.exp(-c * c * one) * np.sqrt(one / np.pi)

    val, change, _ = simpson_halving(integrand, np.array(-C), np.array(C), tol)
    closed = F.gaussian_mean(0.0, max(s2 + slope ** 2 / (2 * one), 1e-300))
    return Target(float(one_val), float(one_val * val), pz, one, s2, change,
                  float(one_val * closed))


@dataclass
class SemiclassicalEstimate:
    gamma: float
    mean: float
    std_error: float
    N: int
    seed: int
    quadrature: dict = field(default_factory=dict)
    flagged: bool = False

    def z(self, target: float) -> float:
        return (self.mean - target) / self.std_error


@dataclass
class SemiclassicalRun:
    functional: str
    estimates: list
    target: Target
    seed: int
    N: int

    @property
    def deviations(self) -> list:
        return [abs(e.mean - self.target.value) for e in self.estimates]

    @property
    def monotone(self) -> bool:
        """``|[F]_gamma - [F]_0|`` decreasing along the schedule (reported only)."""
        d = self.deviations
        return all(d[k + 1] < d[k] for k in range(len(d) - 1))

    @property
    def brackets(self) -> bool:
        """Target inside the hull of the ``3 SE`` intervals of the schedule."""
        lo = min(e.mean - 3 * e.std_error for e in self.estimates)
        hi = max(e.mean + 3 * e.std_error for e in self.estimates)
        return lo <= self.target.value <= hi

    @property
    def final_z(self) -> float:
        return self.estimates[-1].z(self.target.value)

    def table(self) -> list:
        return [{"gamma": e.gamma, "mean": e.mean, "std_error": e.std_error, "N": e.N,
                 "seed": e.seed, "target": self.target.value, "z": e.z(self.target.value)}
                for e in self.estimates]


def _log_weight(c, gamma, SA, SB, LX, Sa, Ss):
    """Log of ``e^{-(gamma/2) chi c - R_gamma}`` per sample (rows) on grids ``c``."""
    g = gamma
    SA, SB, LX = SA[:, None], SB[:, None], LX[:, None]
    R = (np.exp(g * c) * SA + np.exp(0.5 * g * c) * SB - Sa - Ss
         - g * (LX + c * (Sa + 0.5 * Ss))) / (g * g)
    return -0.5 * g * CHI_SURFACE * c - R


def _mode(gamma, SA, SB, Sa, Ss, c0, iters: int = 60):
    """Maximiser of the (concave) log weight in ``c`` by safeguarded Newton."""
    g = gamma
    c = c0.copy()
    for _ in range(iters):
        ea, eb = np.exp(g * c) * SA, np.exp(0.5 * g * c) * SB
        d1 = -0.5 * g * CHI_SURFACE - (ea + 0.5 * eb - (Sa + 0.5 * Ss)) / g
        d2 = -(ea + 0.25 * eb)
        step = np.clip(-d1 / d2, -1.0 / g, 1.0 / g)
        c = c + step
        if np.max(np.abs(step)) < 1e-13:
            break
    ea, eb = np.exp(g * c) * SA, np.exp(0.5 * g * c) * SB
    return c, 1.0 / np.sqrt(ea + 0.25 * eb)


def semiclassical_mc(ens: GaussianEnsemble, rob: RobinOperator, F: Functional,
                     gammas=(0.5, 0.25, 0.1), N: int = 10_000, seed: int | None = None,
                     width: float = 12.0, tol: float = 1e-10,
                     max_rel_se: float | None = None) -> SemiclassicalRun:
    """Monte Carlo estimates of ``[F]_gamma`` along a schedule, with the exact target.

    ``[F]_gamma = e^{-chi c*/2} int e^{-(gamma/2) chi c}
    E[F(X + c) exp(-R_gamma(X, c))] dc`` with

    ``R_gamma = gamma^-2 sum_i a_i (e^{gamma(X_i + c) - gamma^2 V_i/2} - 1 - gamma(X_i + c))
    + gamma^-2 sum_i s_i (e^{gamma(X_i + c)/2 - gamma^2 V_i/8} - 1 - gamma(X_i + c)/2)``.

    This is the correlation of vertex operators with ``alpha_k = -2 a_k / gamma``
    and cosmological constants ``mu = Lambda / gamma^2`` after the shift by the
    classical solution; the ``-gamma c`` terms carry the ``-2 chi(Sigma, D) c / gamma``
    part of the exponent through the discrete Gauss-Bonnet identity.  As
    ``gamma -> 0`` the weight tends to ``exp(-<H2[X + c]>)``.

    The ``c``-integral is done per sample by Simpson halving on
    ``c_mode +- width * c_scale``; the endpoint weight is reported.
    """
    seed = ens.seed if seed is None else seed
    lat = ens.lattice
    V = ens.variance
    a, s = lat.a, lat.s
    Sa, Ss = float(a.sum()), float(s.sum())
    target = semiclassical_target(ens, rob, F)
    pref = np.exp(-0.5 * CHI_SURFACE * lat.sol.mean_c)
    vals = {g: [] for g in gammas}
    diag = {g: {"intervals": 0, "halving_change": 0.0, "tail": 0.0} for g in gammas}
    for X in ens.blocks(N, seed):
        LX = X @ (a + 0.5 * s)
        ell = F.stat(X)
        m = rob.mean(X)
        for g in gammas:
            _check_gamma(g)
            SA = expsum(X, a, V, g, 0.5)
            SB = expsum(X, s, V, 0.5 * g, 0.5)
            c0, sc = _mode(g, SA, SB, Sa, Ss, -m)
            l0 = _log_weight(c0[:, None], g, SA, SB, LX, Sa, Ss)[:, 0]

            def integrand(c):
                return np.exp(_log_weight(c, g, SA, SB, LX, Sa, Ss) - l0[:, None]) * \
                    F(ell[:, None] + c * F.slope)

            lo, hi = c0 - width * sc, c0 + width * sc
            # a kinked F stalls the halving; its quadrature error stays far below the MC error
            I, change, n = simpson_halving(integrand, lo, hi, tol,
                                           max_points=2 ** 14 if F.smooth else 2 ** 11)
            tail = max(np.max(integrand(lo[:, None])), np.max(integrand(hi[:, None])))
            vals[g].append(pref * np.exp(l0) * I)
            d = diag[g]
            d["intervals"] = max(d["intervals"], n)
            d["halving_change"] = max(d["halving_change"], change)
            d["tail"] = max(d["tail"], float(tail))
    est = []
    for g in gammas:
        v = np.concatenate(vals[g])
        mean = float(v.mean())
        se = float(v.std(ddof=1) / np.sqrt(v.size))
        flagged = max_rel_se is not None and se > max_rel_se * abs(mean)
        est.append(SemiclassicalEstimate(float(g), mean, se, v.size, seed, diag[g], flagged))
    return SemiclassicalRun(F.name, est, target, seed, N)
