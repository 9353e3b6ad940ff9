import math

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import integrate, stats

from ngmix.errors import DomainError, ParameterError
from ngmix.gig import GigParams, gig_logpdf, gig_mean
from ngmix.mixtures import (
    CAUCHY_B,
    NvmSpec,
    constrain_unit,
    nvm_logpdf_1d,
    nvm_sample,
)

SPECS = [
    NvmSpec("normal"),
    NvmSpec("nig", nu=0.7),
    NvmSpec("nig", nu=5.0),
    NvmSpec("gal", nu=1.3),
    NvmSpec("gal", nu=4.0),
    NvmSpec("t", nu=3.0),
    NvmSpec("t", nu=11.0),
    NvmSpec("cauchy"),
]


class TestConstrainUnit:
    @pytest.mark.parametrize("nu", [0.01, 0.5, 1.0, 20.0, 250.0])
    def test_nig_unit_mean(self, nu):
        assert_allclose(gig_mean(constrain_unit("nig", nu)), 1.0, rtol=1e-12)

    @pytest.mark.parametrize("nu", [0.3, 1.0, 7.0])
    def test_gal_unit_mean(self, nu):
        assert_allclose(gig_mean(constrain_unit("gal", nu)), 1.0, rtol=1e-12)

    def test_cauchy_unit_mode(self):
        par = constrain_unit("cauchy")
        x = np.linspace(0.25, 4.0, 40_001)
        dens = gig_logpdf(par, x)
        assert_allclose(x[np.argmax(dens)], 1.0, atol=2e-4)

    def test_t_matches_inverse_gamma(self):
        par = constrain_unit("t", 6.0)
        assert par == GigParams(-3.0, 0.0, 6.0)

    def test_normal_is_degenerate(self):
        assert constrain_unit("normal") is None

    def test_errors(self):
        with pytest.raises(DomainError):
            constrain_unit("nig", -1.0)
        with pytest.raises(DomainError):
            constrain_unit("gal", None)
        with pytest.raises(DomainError):
            constrain_unit("weibull", 1.0)


class TestNvmSpec:
    def test_symmetric_only_families_reject_mu(self):
        for fam, nu in [("t", 4.0), ("cauchy", None), ("normal", None)]:
            with pytest.raises(ParameterError):
                NvmSpec(fam, nu=nu, mu=0.3)

    def test_skew_allowed_for_nig_gal(self):
        NvmSpec("nig", nu=1.0, mu=0.5)
        NvmSpec("gal", nu=1.0, mu=np.array([0.1, -0.2]))

    def test_delta_is_minus_mu(self):
        s = NvmSpec("nig", nu=1.0, mu=np.array([0.5, -1.0]))
        assert_allclose(s.delta, [-0.5, 1.0])

    def test_expectations(self):
        assert NvmSpec("normal").ev() == 1.0
        assert NvmSpec("normal").einv() == 1.0
        assert_allclose(NvmSpec("nig", nu=2.0).einv(), 1.5)
        assert_allclose(NvmSpec("gal", nu=4.0).einv(), 4.0 / 3.0)
        assert math.isinf(NvmSpec("gal", nu=0.8).einv())
        assert NvmSpec("t", nu=5.0).einv() == 1.0
        assert_allclose(NvmSpec("t", nu=5.0).ev(), 5.0 / 3.0)
        assert math.isinf(NvmSpec("t", nu=1.5).ev())
        assert_allclose(NvmSpec("cauchy").einv(), 1.0 / CAUCHY_B)
        assert math.isinf(NvmSpec("cauchy").ev())

    def test_nu_required(self):
        with pytest.raises(ParameterError):
            NvmSpec("nig")
        with pytest.raises(ParameterError):
            NvmSpec("t", nu=-2.0)


class TestLogpdf1d:
    @pytest.mark.parametrize("spec", SPECS, ids=lambda s: f"{s.family}-{s.nu}")
    @pytest.mark.parametrize("sigma", [0.5, 1.0, 2.3])
    def test_integrates_to_one(self, spec, sigma):
        pdf = lambda x: np.exp(nvm_logpdf_1d(spec, sigma, x))
        total = 0.0
        # piecewise panels handle the heavy tails of cauchy/t
        edges = sigma * np.array([0.0, 0.5, 1, 2, 4, 8, 16, 64, 512, 1e4, 1e7, 1e10])
        for lo, hi in zip(edges[:-1], edges[1:]):
            val, _ = integrate.quad(pdf, lo, hi, limit=200)
            total += 2 * val
        assert_allclose(total, 1.0, atol=1e-6)

    @pytest.mark.parametrize(
        "spec", [NvmSpec("nig", nu=1.7), NvmSpec("gal", nu=2.2), NvmSpec("t", nu=4.0)],
        ids=lambda s: s.family,
    )
    def test_matches_mixture_quadrature(self, spec):
        # oracle: integrate N(x; 0, sigma^2 v) against the mixing density
        sigma = 1.3
        mix = spec.mixing()
        for x in [0.1, 0.7, 2.0, 6.0]:
            def integrand(v):
                return math.exp(
                    -0.5 * math.log(2 * math.pi * sigma**2 * v)
                    - x**2 / (2 * sigma**2 * v)
                    + gig_logpdf(mix, v)
                )
            val, _ = integrate.quad(integrand, 0, np.inf, limit=500)
            assert_allclose(nvm_logpdf_1d(spec, sigma, x), math.log(val), atol=1e-8)

    def test_cauchy_tail_ratio(self):
        # scale sqrt(3): pdf(20)/pdf(10) = (3+100)/(3+400), about one quarter
        lp = nvm_logpdf_1d(NvmSpec("cauchy"), 1.0, np.array([10.0, 20.0]))
        got = math.exp(lp[1] - lp[0])
        assert_allclose(got, 103.0 / 403.0, rtol=1e-12)
        assert abs(got - 0.25) < 0.01

    def test_t_matches_scipy(self):
        x = np.linspace(-8, 8, 33)
        for nu, sigma in [(3.0, 1.0), (7.0, 2.5)]:
            want = stats.t.logpdf(x, df=nu, scale=sigma)
            got = nvm_logpdf_1d(NvmSpec("t", nu=nu), sigma, x)
            assert_allclose(got, want, atol=1e-12)

    def test_normal_matches_scipy(self):
        x = np.linspace(-5, 5, 21)
        got = nvm_logpdf_1d(NvmSpec("normal"), 1.7, x)
        assert_allclose(got, stats.norm.logpdf(x, scale=1.7), atol=1e-12)

    def test_gal_nu_one_is_laplace(self):
        # GAL with nu = 1 has exponential mixing: X is Laplace(sigma/sqrt(2))
        x = np.linspace(-6, 6, 25)
        x = x[x != 0]
        got = nvm_logpdf_1d(NvmSpec("gal", nu=1.0), 1.0, x)
        want = stats.laplace.logpdf(x, scale=1.0 / math.sqrt(2.0))
        assert_allclose(got, want, atol=1e-10)

    def test_gal_origin_branch(self):
        val = nvm_logpdf_1d(NvmSpec("gal", nu=2.0), 1.0, 0.0)
        # limit of the Bessel form
        lim = nvm_logpdf_1d(NvmSpec("gal", nu=2.0), 1.0, 1e-8)
        assert_allclose(val, lim, atol=1e-6)
        assert math.isinf(nvm_logpdf_1d(NvmSpec("gal", nu=0.4), 1.0, 0.0))

    def test_nig_gaussian_limit(self):
        x = np.linspace(-4, 4, 17)
        got = nvm_logpdf_1d(NvmSpec("nig", nu=1e6), 1.0, x)
        assert_allclose(got, stats.norm.logpdf(x), atol=1e-4)

    def test_asymmetric_rejected(self):
        with pytest.raises(ParameterError):
            nvm_logpdf_1d(NvmSpec("nig", nu=1.0, mu=0.4), 1.0, 0.0)


class TestSample:
    def test_zero_mean_for_skewed_families(self):
        rng = np.random.default_rng(0)
        for fam in ("nig", "gal"):
            spec = NvmSpec(fam, nu=2.0, mu=0.8)
            draws = nvm_sample(spec, 1.0, rng, size=400_000)
            # E[X] = delta + mu E[V] = 0 under the unit-mean constraint
            assert abs(draws.mean()) < 0.02
            assert stats.skew(draws) > 0.1  # mu > 0 skews right

    def test_variance_symmetric_nig(self):
        rng = np.random.default_rng(1)
        spec = NvmSpec("nig", nu=4.0)
        sigma = 1.5
        draws = nvm_sample(spec, sigma, rng, size=200_000)
        assert_allclose(draws.var(), sigma**2, rtol=0.03)

    def test_multivariate_shapes_and_cov(self):
        rng = np.random.default_rng(2)
        ell = np.array([[1.0, 0.0], [0.4, 0.8]])
        spec = NvmSpec("nig", nu=6.0, mu=np.array([0.0, 0.0]))
        draws = nvm_sample(spec, ell, rng, size=200_000)
        assert draws.shape == (200_000, 2)
        assert_allclose(np.cov(draws.T), ell @ ell.T, atol=0.03)

    def test_ks_against_logpdf(self):
        rng = np.random.default_rng(3)
        spec = NvmSpec("nig", nu=1.2)
        draws = nvm_sample(spec, 1.0, rng, size=20_000)
        x = np.linspace(-400, 400, 2_000_001)
        pdf = np.exp(nvm_logpdf_1d(spec, 1.0, x))
        cdf = integrate.cumulative_trapezoid(pdf, x, initial=0.0)
        cdf /= cdf[-1]
        u = np.interp(draws, x, cdf)
        d = np.max(np.abs(np.sort(u) - (np.arange(1, 20_001) - 0.5) / 20_000))
        assert d < 1.95 / math.sqrt(20_000)

    def test_normal_family(self):
        rng = np.random.default_rng(4)
        draws = nvm_sample(NvmSpec("normal"), 2.0, rng, size=50_000)
        _, pval = stats.kstest(draws, stats.norm(scale=2.0).cdf)
        assert pval > 1e-3
