import math
import warnings

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import integrate, stats

from klcombine.combiner import NoPlausibleDistributionError
from klcombine.ebayes import (
    DegenerateGeneError,
    ExpressionMatrix,
    LfdrVector,
    bayes_factor_lower_bound,
    combine_lfdr,
    combine_p_pair,
    excluded_by_bound,
    fit_truncated_normal,
    lfdr_empirical,
    lfdr_from_densities,
    lfdr_lower_bound,
    lfdr_lower_bound_from_t,
    lfdr_theoretical,
    noncentral_t_pdf,
    pvalue_plausible_lower_bound,
    q_values,
    run_pipeline,
    simulate_dataset,
    t_test,
)

from conftest import BINARY_004_01, NCT_FOLDED_3_5_3, PVALUE_BOUND_001_HALF, T_123


def p_and_signs(z):
    return 2 * stats.norm.sf(np.abs(z)), np.sign(z)


class TestTTest:
    def test_zero_mean(self):
        res = t_test(ExpressionMatrix([[1.0, -1.0]]))
        assert res.t_stat[0] == 0.0 and res.p_value[0] == 1.0

    def test_one_two_three(self):
        res = t_test(ExpressionMatrix([[1.0, 2.0, 3.0]]))
        assert res.df == 2
        assert_allclose([res.t_stat[0], res.p_value[0]], T_123, rtol=1e-12)

    def test_sign_flip(self, rng):
        x = rng.normal(size=(30, 5))
        assert_allclose(t_test(ExpressionMatrix(x)).p_value, t_test(ExpressionMatrix(-x)).p_value)

    def test_degenerate_gene(self):
        x = ExpressionMatrix([[1.0, 1.0], [0.0, 0.0], [1.0, 2.0]], ("a", "b", "c"))
        with pytest.raises(DegenerateGeneError) as info:
            t_test(x)
        assert info.value.gene_ids == ["a"]

    def test_flat_zero_gene(self):
        assert t_test(ExpressionMatrix([[0.0, 0.0]])).p_value[0] == 1.0

    def test_missing_values_rejected(self):
        with pytest.raises(ValueError):
            ExpressionMatrix([[1.0, np.nan]])


class TestHistogramLfdr:
    def test_pure_null(self):
        p = np.random.default_rng(1).uniform(size=4000)
        assert np.median(lfdr_theoretical(p).values) >= 0.8

    def test_tail_with_alternatives(self):
        rng = np.random.default_rng(2)
        alt = rng.uniform(size=5000) < 0.2
        z = rng.normal(size=5000) + 2.0 * alt * rng.choice([-1, 1], size=5000)
        p, s = p_and_signs(z)
        lfdr = lfdr_theoretical(p, s).values
        assert np.median(lfdr[np.abs(z) > 4]) < 0.05

    def test_null_self_consistency(self):
        f0 = stats.norm.pdf(np.linspace(-3, 3, 11))
        assert_allclose(lfdr_from_densities(f0, f0, 1.0), 1.0)

    def test_too_few(self):
        with pytest.raises(ValueError):
            lfdr_theoretical(np.full(10, 0.5))


class TestEmpiricalNull:
    def test_standard_normal(self):
        z = np.random.default_rng(4).normal(size=1_000_000)
        p, s = p_and_signs(z)
        fit = fit_truncated_normal(z)
        assert abs(fit.mu) < 0.05 and abs(fit.sigma - 1) < 0.05
        diff = np.abs(lfdr_empirical(p, s).values - lfdr_theoretical(p, s).values)
        assert np.median(diff) <= 0.1

    def test_wide_null(self):
        z = np.random.default_rng(5).normal(scale=1.5, size=1_000_000)
        p, s = p_and_signs(z)
        assert abs(fit_truncated_normal(z).sigma - 1.5) < 0.1
        tail = np.abs(z) > 3
        emp, theo = lfdr_empirical(p, s).values, lfdr_theoretical(p, s).values
        assert np.all(emp[tail] >= theo[tail]) and np.mean(emp[tail] > theo[tail]) > 0.9

    def test_translation(self):
        z = np.random.default_rng(6).normal(size=5000)
        a, b = fit_truncated_normal(z), fit_truncated_normal(z + 0.7)
        assert_allclose(b.mu - a.mu, 0.7, atol=1e-5)
        assert_allclose(b.sigma, a.sigma, rtol=1e-5)


class TestQValues:
    def test_step_up(self):
        assert_allclose(q_values([0.01, 0.02, 0.03]).values, [0.03, 0.03, 0.03])

    def test_single(self):
        assert_allclose(q_values([0.2]).values, [0.2])

    def test_all_one(self):
        assert_allclose(q_values(np.ones(5)).values, 1.0)

    def test_order_preserved(self, rng):
        p = rng.uniform(size=200) ** 3
        q = q_values(p).values
        order = np.argsort(p)
        assert np.all(np.diff(q[order]) >= 0)


class TestNoncentralT:
    @pytest.mark.parametrize("df", [1, 3, 5, 30])
    def test_central_matches_closed_form(self, df):
        for t in np.arange(0, 5.01, 0.5):
            assert_allclose(noncentral_t_pdf(t, df, 0.0), 2 * stats.t.pdf(t, df), atol=1e-8)

    @pytest.mark.parametrize("df,ncp", [(5, 0.0), (5, 3.0), (2, 1.5)])
    def test_normalized(self, df, ncp):
        total, _ = integrate.quad(lambda t: noncentral_t_pdf(t, df, ncp), 0, np.inf, limit=400)
        assert abs(total - 1.0) <= 1e-6

    def test_refinement_oracle(self):
        assert_allclose(noncentral_t_pdf(3.0, 5, 3.0), NCT_FOLDED_3_5_3, rtol=1e-10)

    def test_matches_scipy(self):
        for t, df, ncp in [(0.3, 4, 2.0), (6.0, 5, 1.0), (2.0, 10, -1.0)]:
            ref = stats.nct.pdf(t, df, ncp) + stats.nct.pdf(-t, df, ncp)
            assert_allclose(noncentral_t_pdf(t, df, ncp), ref, rtol=1e-8)

    def test_bad_df(self):
        with pytest.raises(ValueError):
            noncentral_t_pdf(1.0, 0, 0.0)


class TestLowerBound:
    def test_zero_statistic(self):
        bf = bayes_factor_lower_bound(np.array([0.0]), 6)
        assert_allclose(bf.theta_hat, 0.0, atol=1e-6)
        assert_allclose(bf.bayes_factor, 1.0)
        assert_allclose(lfdr_lower_bound_from_t([0.0], 6, 0.8).values, 0.8)

    def test_vanishes_for_large_statistics(self):
        b = lfdr_lower_bound_from_t([2.0, 5.0, 40.0, 1000.0], 6).values
        assert np.all(np.diff(b) < 0)
        assert b[-1] < 1e-10

    def test_matches_quadrature_maximization(self):
        from scipy.optimize import minimize_scalar

        t, n = 3.2, 6
        res = minimize_scalar(lambda d: -noncentral_t_pdf(t, n - 1, d), bounds=(0, 50), method="bounded",
                              options={"xatol": 1e-10})
        expected = noncentral_t_pdf(t, n - 1, 0.0) / -res.fun
        assert_allclose(bayes_factor_lower_bound([t], n).bayes_factor[0], expected, rtol=1e-7)

    def test_monotone_in_pi0(self):
        x = simulate_dataset(200, 4, 0.7, 1.5, 1.0, seed=8).matrix
        lo, hi = lfdr_lower_bound(x, 0.6).values, lfdr_lower_bound(x, 0.9).values
        assert np.all(hi >= lo)

    def test_extreme_statistics_use_quadrature(self):
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            bf = bayes_factor_lower_bound(np.array([1e4]), 3)
        assert not bf.flagged[0]
        assert 0 <= bf.bayes_factor[0] < 1e-6

    def test_pi0_domain(self):
        with pytest.raises(ValueError):
            lfdr_lower_bound_from_t([1.0], 5, 1.0)


class TestPValueBound:
    def test_boundary(self):
        assert_allclose(pvalue_plausible_lower_bound(math.exp(-1), 0.3), 0.3)

    def test_worked_value(self):
        assert_allclose(pvalue_plausible_lower_bound(0.01, 0.5), PVALUE_BOUND_001_HALF, rtol=1e-12)

    def test_cap_active_near_one(self):
        assert pvalue_plausible_lower_bound(0.2, 0.999999) <= 0.999999

    def test_domain(self):
        with pytest.raises(ValueError):
            pvalue_plausible_lower_bound(0.5, 0.5)
        with pytest.raises(ValueError):
            pvalue_plausible_lower_bound(0.0, 0.5)


class TestPPair:
    def test_both_implausible(self):
        assert combine_p_pair(0.001, 0.005, 0.01) == 0.01

    def test_one_plausible(self):
        assert combine_p_pair(0.005, 0.05, 0.01) == 0.05

    def test_both_plausible(self):
        assert_allclose(combine_p_pair(0.04, 0.1, 0.01), BINARY_004_01["p_plus"], atol=1e-6)

    def test_order_required(self):
        with pytest.raises(ValueError):
            combine_p_pair(0.2, 0.1, 0.01)


class TestSimulation:
    def test_all_null(self):
        assert not simulate_dataset(100, 3, 1.0, 1.0, 1.0, seed=0).alternative.any()

    def test_deterministic(self):
        a = simulate_dataset(50, 4, 0.8, 1.0, 1.0, seed=12).matrix.values
        b = simulate_dataset(50, 4, 0.8, 1.0, 1.0, seed=12).matrix.values
        assert np.array_equal(a, b)

    def test_invalid(self):
        with pytest.raises(ValueError):
            simulate_dataset(10, 1, 0.8, 1.0, 1.0, seed=0)


class TestCombineLfdr:
    def test_violator_excluded(self):
        bound = LfdrVector([0.1, 0.1, 0.1], "lower-bound")
        a = LfdrVector([0.5, 0.2, 0.3], "a")
        b = LfdrVector([0.6, 0.05, 0.9], "b")
        res = combine_lfdr([a, b], bound)
        assert res.excluded == ("b",)
        assert_allclose(res.combined.values, a.values)

    def test_two_survivors(self):
        bound = LfdrVector(np.zeros(4), "lower-bound")
        a = LfdrVector([0.1, 0.2, 0.3, 0.9], "a")
        b = LfdrVector([0.4, 0.2, 0.8, 0.5], "b")
        res = combine_lfdr([a, b], bound)
        w = res.weights["a"]
        assert 0.3679 <= w <= 0.6321
        assert_allclose(w + res.weights["b"], 1.0, atol=1e-12)
        assert_allclose(res.combined.values, w * a.values + (1 - w) * b.values, atol=1e-12)

    def test_all_excluded(self):
        bound = LfdrVector([0.5, 0.5], "lower-bound")
        with pytest.raises(NoPlausibleDistributionError):
            combine_lfdr([LfdrVector([0.1, 0.9], "a")], bound)


def test_pipeline_small():
    sim = simulate_dataset(600, 6, 0.8, 1.5, 1.0, seed=3)
    res = run_pipeline(sim.matrix)
    comb = res.combination
    assert list(comb.excluded) == excluded_by_bound(res.estimates, res.bound)
    assert_allclose(sum(comb.weights.values()), 1.0, atol=1e-9)
    surv = np.stack([res.estimates[i].values for i in comb.combination.surviving])
    c = comb.combined.values
    assert np.all(c >= surv.min(axis=0) - 1e-12) and np.all(c <= surv.max(axis=0) + 1e-12)
