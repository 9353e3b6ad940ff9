"""Stochastic optimizer: schedules, sub-sampling, fit loop, Louis SEs."""

import itertools
import logging

import numpy as np
import pytest
from scipy.optimize import minimize
from scipy.stats import norm

from ngmix.errors import ConfigError, DataError, DivergenceError
from ngmix.estimator import (
    FitSettings,
    StepSchedule,
    build_plan,
    draw_subsample,
    fit,
    form_groups,
    louis_observed_fim,
    p_bounds,
)
from ngmix.fem import OperatorSpec, default_grid
from ngmix.gradients import ParamLayout
from ngmix.mixtures import NvmSpec
from ngmix.model import ModelParams, SubjectRecord, marginal_loglik_gaussian, simulate


def pure_noise_subjects(rng, m=40, n=6, beta=1.5, sigma=0.7):
    subs = []
    for i in range(m):
        t = np.linspace(0.0, 1.0, n)
        y = beta + sigma * rng.standard_normal(n)
        subs.append(SubjectRecord(str(i), t, y, np.ones((n, 1)), np.zeros((n, 0))))
    return subs


class TestStepSchedule:
    def test_alpha_sequence(self):
        sched = StepSchedule(alpha0=2.0, n0=100.0, gamma=0.75,
                             burn_in=10, total_iters=50)
        assert sched.alpha(0) == 2.0
        assert np.isclose(sched.alpha(100), 2.0 / 2.0**0.75)

    @pytest.mark.parametrize("kwargs", [
        dict(alpha0=0.0), dict(alpha0=-1.0), dict(n0=0.0),
        dict(gamma=0.5), dict(gamma=1.2), dict(gamma=0.0),
        dict(total_iters=0), dict(burn_in=60), dict(burn_in=-1),
    ])
    def test_invalid_config_rejected(self, kwargs):
        base = dict(alpha0=1.0, n0=10.0, gamma=0.6, burn_in=25, total_iters=50)
        base.update(kwargs)
        with pytest.raises(ConfigError):
            StepSchedule(**base)

    def test_series_conditions(self):
        # gamma in (0.5, 1]: sum alpha diverges, sum alpha^2 converges.
        sched = StepSchedule(alpha0=1.0, n0=1.0, gamma=0.6,
                             burn_in=0, total_iters=10)
        n = np.arange(1, 200001, dtype=float)
        alphas = sched.alpha(n)
        # partial sums of alpha keep growing (divergent series) while the
        # squared series has a negligible tail
        assert np.sum(alphas) > 1.5 * np.sum(alphas[:50000])
        tail_sq = np.sum(alphas[100000:] ** 2)
        head_sq = np.sum(alphas[:100000] ** 2)
        assert tail_sq < 0.05 * head_sq


class TestFormGroups:
    def test_identical_full_rank_designs_become_singletons(self):
        x = np.column_stack([np.ones(4), np.arange(4.0)])
        groups, leftover = form_groups([x] * 6)
        assert groups == [[i] for i in range(6)]
        assert leftover == []

    def test_unit_row_designs_pair_up(self):
        e1 = np.array([[1.0, 0.0]])
        e2 = np.array([[0.0, 1.0]])
        groups, leftover = form_groups([e1, e2, e1, e2])
        assert groups == [[0, 1], [2, 3]]
        assert leftover == []

    def test_cohort_design_takes_one_subject_per_cohort(self):
        # five cohorts, one of them a 7-subject stratum; each subject's
        # rows are the cohort indicator, so a full-rank group needs all
        # five cohorts represented
        rng = np.random.default_rng(3)
        sizes = [7, 11, 9, 12, 10]
        designs, cohort_of = [], []
        for c, size in enumerate(sizes):
            for _ in range(size):
                x = np.zeros((3, 5))
                x[:, c] = 1.0
                designs.append(x)
                cohort_of.append(c)
        order = rng.permutation(len(designs))
        groups, leftover = form_groups([designs[i] for i in order])
        assert groups, "full-rank groups must exist"
        for g in groups:
            cohorts = {cohort_of[order[i]] for i in g}
            assert cohorts == set(range(5))
            gram = sum(designs[order[i]].T @ designs[order[i]] for i in g)
            assert np.linalg.matrix_rank(gram) == 5
        # the 7-subject stratum caps the number of groups
        assert len(groups) == 7
        assert len(leftover) == len(designs) - 5 * 7

    def test_deterministic_given_order(self):
        rng = np.random.default_rng(8)
        designs = [rng.standard_normal((2, 3)) for _ in range(12)]
        assert form_groups(designs) == form_groups(designs)

    def test_rank_deficient_pool_goes_to_leftover(self):
        e1 = np.array([[1.0, 0.0]])
        groups, leftover = form_groups([e1, e1, e1])
        assert groups == []
        assert leftover == [0, 1, 2]

    def test_empty_designs_rejected(self):
        with pytest.raises(DataError):
            form_groups([])


class TestBuildPlan:
    def designs(self):
        e1 = np.array([[1.0, 0.0]])
        e2 = np.array([[0.0, 1.0]])
        return [e1, e2, e1, e2, e1, e1]

    def test_grouped_plan_records_partition(self):
        plan = build_plan(self.designs(), "grouped", M=4, r=2)
        assert plan.groups == ((0, 1), (2, 3))
        assert plan.leftover == (4, 5)

    def test_subsample_size_below_largest_group_rejected(self):
        with pytest.raises(ConfigError):
            build_plan(self.designs(), "grouped", M=1, r=1)

    def test_r_out_of_range_rejected(self):
        with pytest.raises(ConfigError):
            build_plan(self.designs(), "grouped", M=4, r=3)
        with pytest.raises(ConfigError):
            build_plan(self.designs(), "grouped", M=4, r=0)

    def test_bernoulli_rate_validated(self):
        with pytest.raises(ConfigError):
            build_plan(self.designs(), "bernoulli", s=0.5)
        plan = build_plan(self.designs(), "bernoulli", s=3.0)
        assert plan.s == 3.0

    def test_unknown_strategy_rejected(self):
        with pytest.raises(ConfigError):
            build_plan(self.designs(), "stratified")

    def test_no_full_rank_group_falls_back_to_full(self, caplog):
        e1 = np.array([[1.0, 0.0]])
        with caplog.at_level(logging.WARNING, logger="ngmix.estimator"):
            plan = build_plan([e1, e1, e1], "grouped", M=2, r=1)
        assert plan.strategy == "full"
        assert any("full" in rec.message for rec in caplog.records)


class ScriptedRng:
    """Replays a fixed script of choice()/random() results for enumeration."""

    def __init__(self, script):
        self.script = list(script)

    def choice(self, n, size=None, replace=True):
        return np.asarray(self.script.pop(0), dtype=np.int64)

    def random(self, n=None):
        return np.asarray(self.script.pop(0), dtype=float)


def enumerate_grouped(plan, values):
    """Exact expectation of the weighted sum over all grouped outcomes."""
    k = len(plan.groups)
    total = np.zeros_like(np.asarray(values[0], dtype=float))
    p_groups = 1.0 / len(list(itertools.combinations(range(k), plan.r)))
    for chosen in itertools.combinations(range(k), plan.r):
        selected = sum(len(plan.groups[g]) for g in chosen)
        if plan.leftover:
            pool = len(plan.leftover)
            drawn = min(pool, max(1, plan.m_target - selected))
            p_picks = 1.0 / len(list(itertools.combinations(range(pool), drawn)))
            for picks in itertools.combinations(range(pool), drawn):
                rng = ScriptedRng([list(chosen), list(picks)])
                idx, wts = draw_subsample(plan, rng)
                contrib = sum(w * values[i] for i, w in zip(idx, wts))
                total += p_groups * p_picks * contrib
        else:
            rng = ScriptedRng([list(chosen)])
            idx, wts = draw_subsample(plan, rng)
            total += p_groups * sum(w * values[i] for i, w in zip(idx, wts))
    return total


class TestDrawSubsample:
    def test_full_returns_census(self):
        plan = build_plan([np.ones((1, 1))] * 4, "full")
        idx, wts = draw_subsample(plan, np.random.default_rng(0))
        assert np.array_equal(idx, np.arange(4))
        assert np.array_equal(wts, np.ones(4))

    def test_census_grouped_weights_are_one(self):
        e1, e2 = np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]])
        designs = [e1, e2, e1, e2, e1, e1]
        plan = build_plan(designs, "grouped", M=6, r=2)
        rng = ScriptedRng([[0, 1], [0, 1]])
        idx, wts = draw_subsample(plan, rng)
        assert sorted(idx.tolist()) == list(range(6))
        assert np.allclose(wts, 1.0)

    def test_bernoulli_enumeration_is_unbiased(self):
        plan = build_plan([np.ones((1, 1))] * 3, "bernoulli", s=5.0)
        total = 0.0
        p_in = 1.0 / plan.s
        for keep in itertools.product([True, False], repeat=3):
            script = [[0.0 if k else 0.99 for k in keep]]
            idx, wts = draw_subsample(plan, ScriptedRng(script))
            prob = np.prod([p_in if k else 1 - p_in for k in keep])
            total += prob * np.sum(wts)
        assert abs(total - 3.0) < 1e-12

    def test_empty_bernoulli_draw_possible(self):
        plan = build_plan([np.ones((1, 1))] * 3, "bernoulli", s=5.0)
        idx, wts = draw_subsample(plan, ScriptedRng([[0.9, 0.9, 0.9]]))
        assert idx.size == 0 and wts.size == 0

    @pytest.mark.parametrize("M,r", [(2, 1), (3, 1), (4, 1), (2, 2), (4, 2)])
    def test_grouped_enumeration_is_unbiased(self, M, r):
        # k=2 groups of sizes 2 and 1, leftover pool of 2; includes
        # configurations where M - selected <= 0 so the at-least-one
        # leftover clamp is load-bearing
        e1, e2 = np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]])
        both = np.eye(2)
        designs = [e1, e2, both, e1, e1]
        plan = build_plan(designs, "grouped", M=M, r=r)
        assert plan.groups == ((0, 1), (2,))
        assert plan.leftover == (3, 4)
        rng = np.random.default_rng(0)
        values = [rng.standard_normal(3) for _ in range(5)]
        expect = enumerate_grouped(plan, values)
        exact = sum(values)
        assert np.max(np.abs(expect - exact)) < 1e-12

    def test_grouped_draw_shapes_and_weights(self):
        e1, e2 = np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]])
        designs = [e1, e2, e1, e2, e1, e1]
        plan = build_plan(designs, "grouped", M=3, r=1)
        idx, wts = draw_subsample(plan, np.random.default_rng(4))
        assert idx.size == wts.size
        # group members carry k/r = 2, leftovers |G0|/drawn = 2/1
        assert set(np.round(wts, 12)) <= {2.0}


class TestFitGaussian:
    def test_pure_noise_reaches_closed_form(self):
        rng = np.random.default_rng(12)
        subs = pure_noise_subjects(rng, m=120, n=6, beta=1.5, sigma=0.7)
        ys = np.concatenate([s.y for s in subs])
        p0 = ModelParams(beta=[0.0], sigma=2.0, noise_spec=NvmSpec("normal"))
        res = fit(subs, p0, FitSettings(iters=400, burn_in=200, se_draws=0, seed=1))
        assert abs(res.theta_hat.beta[0] - ys.mean()) < max(3 * res.mc_se[0], 1e-6)
        assert abs(res.theta_hat.sigma - ys.std(ddof=0)) < max(3 * res.mc_se[1], 1e-6)

    def test_fixed_point_has_no_drift(self):
        rng = np.random.default_rng(12)
        subs = pure_noise_subjects(rng, m=60, n=5, beta=0.8, sigma=0.5)
        ys = np.concatenate([s.y for s in subs])
        mle = ModelParams(beta=[ys.mean()], sigma=ys.std(ddof=0),
                          noise_spec=NvmSpec("normal"))
        res = fit(subs, mle, FitSettings(iters=2000, burn_in=1000, se_draws=0, seed=2))
        drift = np.array([res.theta_hat.beta[0] - ys.mean(),
                          res.theta_hat.sigma - ys.std(ddof=0)])
        assert np.all(np.abs(drift) <= 2 * res.mc_se + 1e-12)

    def test_trace_has_one_column_per_scalar(self):
        rng = np.random.default_rng(3)
        subs = pure_noise_subjects(rng, m=10, n=4)
        p0 = ModelParams(beta=[0.0], sigma=1.0, noise_spec=NvmSpec("normal"))
        res = fit(subs, p0, FitSettings(iters=25, burn_in=5, se_draws=0, seed=0))
        assert set(res.trace) == {"iteration", "beta[0]", "sigma"}
        assert all(len(v) == 25 for v in res.trace.values())
        assert np.array_equal(res.trace["iteration"], np.arange(25))

    def test_divergence_raises_with_trace(self):
        rng = np.random.default_rng(3)
        subs = pure_noise_subjects(rng, m=10, n=4)
        p0 = ModelParams(beta=[0.0], sigma=1.0, noise_spec=NvmSpec("normal"))
        with pytest.raises(DivergenceError) as err:
            fit(subs, p0, FitSettings(iters=200, burn_in=100, alpha0=1e9,
                                      se_draws=0, seed=0))
        assert err.value.trace is not None
        assert "beta[0]" in err.value.trace

    def test_empty_dataset_rejected(self):
        p0 = ModelParams(beta=[0.0], sigma=1.0, noise_spec=NvmSpec("normal"))
        with pytest.raises(DataError):
            fit([], p0, FitSettings(iters=10, se_draws=0))

    def test_mostly_empty_bernoulli_draws_are_tolerated(self):
        rng = np.random.default_rng(9)
        subs = pure_noise_subjects(rng, m=3, n=4)
        p0 = ModelParams(beta=[0.0], sigma=1.0, noise_spec=NvmSpec("normal"))
        res = fit(subs, p0, FitSettings(iters=60, burn_in=30, se_draws=0,
                                        seed=5, strategy="bernoulli", s=40.0))
        assert len(res.trace["iteration"]) == 60
        assert np.isfinite(res.theta_hat.sigma)

    def test_matches_marginal_likelihood_optimum(self):
        # random-intercept Gaussian model: the stochastic fit agrees with
        # direct optimization of the exact marginal likelihood
        rng = np.random.default_rng(21)
        m, n = 150, 5
        subs = []
        for i in range(m):
            t = np.linspace(0.0, 1.0, n)
            u = 0.6 * rng.standard_normal()
            y = 1.2 + u + 0.5 * rng.standard_normal(n)
            subs.append(SubjectRecord(str(i), t, y, np.ones((n, 1)), np.ones((n, 1))))
        p0 = ModelParams(beta=[0.0], sigma=1.0, noise_spec=NvmSpec("normal"),
                         Sigma=np.array([[1.0]]), re_spec=NvmSpec("normal"))
        res = fit(subs, p0, FitSettings(iters=600, burn_in=300, se_draws=0, seed=4))
        layout = ParamLayout.from_params(res.theta_hat)

        def negll(vec):
            params = layout.unpack(res.theta_hat, vec)
            return -sum(marginal_loglik_gaussian(params, s) for s in subs)

        direct = minimize(negll, layout.pack(p0), method="Nelder-Mead",
                          options={"xatol": 1e-8, "fatol": 1e-10, "maxiter": 2000})
        got = layout.natural(res.theta_hat)
        want = layout.natural(layout.unpack(res.theta_hat, direct.x))
        # agreement within 3 Monte Carlo SEs (plus slack for the direct
        # optimizer's own tolerance)
        assert np.all(np.abs(got - want) <= 3 * res.mc_se + 5e-3)


class TestFitSwitching:
    def test_heavy_tail_parameter_collapses_to_gaussian(self):
        rng = np.random.default_rng(6)
        subs = pure_noise_subjects(rng, m=30, n=5)
        p0 = ModelParams(beta=[0.0], sigma=1.0, noise_spec=NvmSpec("nig", nu=300.0))
        res = fit(subs, p0, FitSettings(iters=40, burn_in=20, se_draws=0, seed=1))
        assert res.theta_hat.noise_spec.family == "normal"
        assert "nu_noise" not in res.names
        assert set(res.trace) == {"iteration", "beta[0]", "sigma"}

    def test_low_tail_parameter_collapses_to_cauchy(self):
        rng = np.random.default_rng(6)
        subs = pure_noise_subjects(rng, m=30, n=5)
        p0 = ModelParams(beta=[0.0], sigma=1.0, noise_spec=NvmSpec("nig", nu=5e-4))
        res = fit(subs, p0, FitSettings(iters=40, burn_in=20, se_draws=0, seed=1))
        assert res.theta_hat.noise_spec.family == "cauchy"
        assert "nu_noise" not in res.names


class TestFitSubsampled:
    def test_grouped_fit_runs_and_estimates(self):
        rng = np.random.default_rng(13)
        m, n = 40, 6
        subs = []
        for i in range(m):
            cohort = i % 2
            t = np.linspace(0.0, 1.0, n)
            x = np.zeros((n, 2))
            x[:, cohort] = 1.0
            y = (1.0 if cohort == 0 else -1.0) + 0.5 * rng.standard_normal(n)
            subs.append(SubjectRecord(str(i), t, y, x, np.zeros((n, 0))))
        p0 = ModelParams(beta=[0.0, 0.0], sigma=1.0, noise_spec=NvmSpec("normal"))
        res = fit(subs, p0, FitSettings(iters=800, burn_in=400, se_draws=0,
                                        seed=7, strategy="grouped", M=8, r=4))
        assert abs(res.theta_hat.beta[0] - 1.0) < 0.1
        assert abs(res.theta_hat.beta[1] + 1.0) < 0.1


class TestLouisInformation:
    def test_pure_noise_information_is_analytic(self):
        rng = np.random.default_rng(14)
        m, n = 25, 6
        subs = [SubjectRecord(str(i), np.linspace(0, 1, n),
                              0.9 * rng.standard_normal(n),
                              np.zeros((n, 0)), np.zeros((n, 0)))
                for i in range(m)]
        ys = np.concatenate([s.y for s in subs])
        # no mean term in the model, so the scale MLE is the raw rms
        sig_hat = np.sqrt(np.mean(ys**2))
        params = ModelParams(beta=np.zeros(0), sigma=sig_hat,
                             noise_spec=NvmSpec("normal"))
        fim = louis_observed_fim(params, subs, 50, rng=3)
        assert fim.shape == (1, 1)
        assert np.isclose(fim[0, 0], 2 * m * n / sig_hat**2, rtol=1e-10)

    def test_gaussian_random_intercept_matches_fd_hessian(self):
        rng = np.random.default_rng(15)
        m, n = 40, 4
        subs = []
        for i in range(m):
            t = np.linspace(0.0, 1.0, n)
            u = 0.5 * rng.standard_normal()
            y = 0.7 + u + rng.standard_normal(n)
            subs.append(SubjectRecord(str(i), t, y, np.ones((n, 1)), np.ones((n, 1))))
        params = ModelParams(beta=[0.7], sigma=1.0, noise_spec=NvmSpec("normal"),
                             Sigma=np.array([[0.25]]), re_spec=NvmSpec("normal"))
        layout = ParamLayout.from_params(params)
        fim = louis_observed_fim(params, subs, 10000, rng=5)

        nat0 = layout.natural(params)
        logmask = np.concatenate(
            [np.full(b.size, b.log) for b in layout.blocks]
        )

        def loglik(nat):
            p = layout.unpack(params, np.where(logmask, np.log(nat), nat))
            return sum(marginal_loglik_gaussian(p, s) for s in subs)

        dim = nat0.size
        fd = np.zeros((dim, dim))
        hstep = 1e-4 * np.maximum(1.0, np.abs(nat0))
        for a in range(dim):
            for b in range(dim):
                pts = []
                for sa, sb in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
                    nat = nat0.copy()
                    nat[a] += sa * hstep[a]
                    nat[b] += sb * hstep[b]
                    pts.append(loglik(nat))
                fd[a, b] = (pts[0] - pts[1] - pts[2] + pts[3]) / (4 * hstep[a] * hstep[b])
        target = -fd
        rel = np.abs(fim - target) / np.maximum(1.0, np.abs(target))
        assert np.max(rel) < 0.05

    def test_symmetric_and_diagonal_variance_nonnegative(self):
        rng = np.random.default_rng(16)
        m, n = 12, 5
        subs = []
        for i in range(m):
            t = np.sort(rng.uniform(0, 2, n))
            y = 0.3 + 0.4 * rng.standard_normal(n)
            subs.append(SubjectRecord(str(i), t, y, np.ones((n, 1)), np.zeros((n, 0))))
        params = ModelParams(beta=[0.3], sigma=0.4, noise_spec=NvmSpec("nig", nu=1.5))
        fim = louis_observed_fim(params, subs, 300, rng=2, burn=50)
        assert np.allclose(fim, fim.T)

    def test_too_few_draws_rejected(self):
        params = ModelParams(beta=[0.0], sigma=1.0, noise_spec=NvmSpec("normal"))
        subs = pure_noise_subjects(np.random.default_rng(0), m=2, n=3)
        with pytest.raises(ConfigError):
            louis_observed_fim(params, subs, 1)
        with pytest.raises(DataError):
            louis_observed_fim(params, [], 10)


class TestPBounds:
    def test_worked_example(self):
        p_lo, p_hi = p_bounds(np.array([2.0]), np.array([1.0]), np.array([0.25]))
        assert abs(p_lo[0] - 2 * norm.sf(2.5)) < 1e-12
        assert abs(p_hi[0] - 2 * norm.sf(1.5)) < 1e-12
        assert abs(p_lo[0] - 0.0124193) < 1e-6
        assert abs(p_hi[0] - 0.1336144) < 1e-6

    def test_zero_mc_error_collapses_to_wald(self):
        th = np.array([1.0, -2.5, 0.3])
        se = np.array([0.5, 1.0, 0.2])
        p_lo, p_hi = p_bounds(th, se, np.zeros(3))
        wald = 2 * norm.sf(np.abs(th) / se)
        assert np.allclose(p_lo, wald)
        assert np.allclose(p_hi, wald)

    def test_ordering_holds_for_random_inputs(self):
        rng = np.random.default_rng(17)
        for _ in range(100):
            th = rng.normal(size=4)
            se = rng.uniform(0.1, 2.0, size=4)
            mc = rng.uniform(0.0, 0.5, size=4)
            mcs = rng.uniform(0.0, 0.05, size=4)
            p_lo, p_hi = p_bounds(th, se, mc, mcs)
            assert np.all(p_lo <= p_hi + 1e-15)

    def test_estimate_shrunk_to_zero_gives_p_one(self):
        p_lo, p_hi = p_bounds(np.array([0.1]), np.array([1.0]), np.array([0.5]))
        assert p_hi[0] == pytest.approx(1.0)
        assert p_lo[0] < 1.0


class TestMcseShrinks:
    def test_batch_means_mcse_shrinks_with_iterations(self):
        rng = np.random.default_rng(18)
        m, n = 25, 4
        subs = []
        for i in range(m):
            t = np.linspace(0, 1, n)
            y = 0.5 + 0.6 * rng.standard_normal(n) * np.sqrt(rng.exponential())
            subs.append(SubjectRecord(str(i), t, y, np.ones((n, 1)), np.zeros((n, 0))))
        p0 = ModelParams(beta=[0.0], sigma=1.0, noise_spec=NvmSpec("nig", nu=2.0))
        short = fit(subs, p0, FitSettings(iters=500, burn_in=250, se_draws=0, seed=3))
        long = fit(subs, p0, FitSettings(iters=4000, burn_in=2000, se_draws=0, seed=3))
        assert np.mean(long.mc_se) < np.mean(short.mc_se)
