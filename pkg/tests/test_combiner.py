import numpy as np
import pytest
from numpy.testing import assert_allclose

from klcombine.centroid import SHULMAN_BOUND, grid_oracle_weighting
from klcombine.combiner import (
    NoPlausibleDistributionError,
    PlausibleBox,
    combine,
    combine_binary,
    combine_independent,
    game_utility,
    lex_compare,
    optimal_action,
)
from klcombine.distributions import BernoulliProduct, DimensionError, FiniteDistribution, bernoulli

from conftest import BINARY_001_02, BINARY_004_01


class TestBox:
    def test_invalid_bounds(self):
        with pytest.raises(ValueError):
            PlausibleBox([0.6], [0.4])
        with pytest.raises(ValueError):
            PlausibleBox([-0.1], [0.4])

    def test_closed_bounds(self):
        box = PlausibleBox.interval(0.2, 0.4)
        assert box.contains([0.2]) and box.contains([0.4])
        assert not box.contains([0.41])


class TestCombine:
    def test_single_plausible(self):
        res = combine([bernoulli(0.3)], PlausibleBox.interval(0.0, 1.0))
        assert_allclose(res.combined.probs, [0.3, 0.7])
        assert_allclose(res.weights, [1.0])

    def test_interior_member_not_extreme(self):
        res = combine([bernoulli(0.2), bernoulli(0.5), bernoulli(0.8)])
        assert res.extreme == (0, 2)
        assert_allclose(res.weights, [0.5, 0.5], atol=1e-10)
        assert_allclose(res.combined.probs[0], 0.5, atol=1e-10)
        assert res.weight_of(1) == 0.0

    def test_single_survivor(self):
        res = combine([bernoulli(0.01), bernoulli(0.2)], PlausibleBox.interval(0.05, 1.0))
        assert res.surviving == (1,)
        assert res.excluded == (0,)
        assert_allclose(res.combined.probs[0], 0.2)

    def test_empty_intersection_reports_violations(self):
        with pytest.raises(NoPlausibleDistributionError) as info:
            combine([bernoulli(0.01), bernoulli(0.02)], PlausibleBox.interval(0.05, 1.0))
        assert set(info.value.violations) == {0, 1}
        assert "distribution 0" in str(info.value)

    def test_enlarging_box_never_shrinks_survivors(self, rng):
        for _ in range(20):
            probs = rng.uniform(0, 1, 5)
            lo, hi = np.sort(rng.uniform(0, 1, 2))
            fam = [bernoulli(p) for p in probs]
            try:
                small = set(combine(fam, PlausibleBox.interval(lo, hi)).surviving)
            except NoPlausibleDistributionError:
                small = set()
            big = set(combine(fam, PlausibleBox.interval(lo / 2, (1 + hi) / 2)).surviving)
            assert small <= big


class TestCombineBinary:
    def test_symmetric(self):
        res = combine_binary([0.3, 0.7])
        assert_allclose([res.w_plus, res.p_plus], [0.5, 0.5], atol=1e-10)

    def test_equal_probs(self):
        res = combine_binary([0.42, 0.42])
        assert res.w_plus == 1.0 and res.p_plus == 0.42

    def test_grid_oracle_regression(self):
        res = combine_binary([0.001, 0.2])
        assert_allclose(res.w_plus, BINARY_001_02["w_plus"], atol=1e-6)
        assert_allclose(res.p_plus, BINARY_001_02["p_plus"], atol=1e-6)
        assert_allclose(res.value, BINARY_001_02["value"], atol=1e-10)

    def test_grid_oracle_regression_with_bound(self):
        res = combine_binary([0.04, 0.1, 0.005], lower=0.01)
        assert (res.lo, res.hi) == (0.04, 0.1)
        assert_allclose(res.w_plus, BINARY_004_01["w_plus"], atol=1e-6)
        assert_allclose(res.p_plus, BINARY_004_01["p_plus"], atol=1e-6)

    def test_nothing_plausible(self):
        with pytest.raises(NoPlausibleDistributionError):
            combine_binary([0.1, 0.2], lower=0.5)

    def test_near_midpoint(self, rng):
        for lo, hi in np.sort(rng.uniform(0, 1, (50, 2)), axis=1):
            res = combine_binary([lo, hi])
            assert abs(res.p_plus - (lo + hi) / 2) <= (SHULMAN_BOUND - 0.5) * (hi - lo) + 1e-12


class TestCombineIndependent:
    def test_coordinate_swap_symmetry(self):
        res = combine_independent([BernoulliProduct([0.1, 0.8]), BernoulliProduct([0.9, 0.2])])
        assert_allclose(res.weights, [0.5, 0.5], atol=1e-10)

    def test_matches_grid_oracle(self):
        rng = np.random.default_rng(5)
        fam = [BernoulliProduct(rng.uniform(0.05, 0.95, 3)) for _ in range(3)]
        res = combine_independent(fam)
        oracle = grid_oracle_weighting([fam[i] for i in res.extreme], 1e-5)
        assert_allclose(res.weights, oracle.weights, atol=1e-4)

    def test_single_hypothesis_matches_binary(self):
        res = combine_independent([BernoulliProduct([0.001]), BernoulliProduct([0.2])])
        ref = combine_binary([0.001, 0.2])
        assert_allclose(res.combined.null_probs[0], ref.p_plus, atol=1e-10)

    def test_combined_within_member_range(self, rng):
        fam = [BernoulliProduct(rng.uniform(0, 1, 40)) for _ in range(3)]
        res = combine_independent(fam)
        stacked = np.stack([d.null_probs for d in fam])
        c = res.combined.null_probs
        assert np.all(c >= stacked.min(axis=0) - 1e-12) and np.all(c <= stacked.max(axis=0) + 1e-12)

    def test_rejects_mixed_lengths(self):
        with pytest.raises(DimensionError):
            combine_independent([BernoulliProduct([0.1]), BernoulliProduct([0.1, 0.2])])

    def test_rejects_finite_members(self):
        with pytest.raises(TypeError):
            combine_independent([bernoulli(0.1)])


class TestLexicographic:
    def test_first_component_dominates(self):
        assert lex_compare((1, 9), (2, 0)) == -1

    def test_tie_on_first(self):
        assert lex_compare((1, 2), (1, 3)) == -1

    def test_equal_triples(self):
        assert lex_compare((1, 2, 5), (1, 2, 5)) == 0

    def test_greater(self):
        assert lex_compare((1, 2, 6), (1, 2, 5)) == 1

    def test_arity_mismatch(self):
        with pytest.raises(ValueError):
            lex_compare((1, 2), (1, 2, 3))

    def test_utility_prefers_truth(self):
        truth, other = bernoulli(0.3), bernoulli(0.6)
        good = game_utility(truth, other, truth)
        bad = game_utility(truth, other, bernoulli(0.5))
        assert lex_compare(bad, good) == -1
        assert len(game_utility(truth, other, truth, expected_loss=0.2)) == 3


class TestOptimalAction:
    zero_one = np.array([[0.0, 1.0], [1.0, 0.0]])

    def test_mode_under_zero_one_loss(self):
        assert optimal_action(0.7, self.zero_one) == 0

    def test_constant_loss_tie(self):
        assert optimal_action(0.3, np.ones((2, 3))) == 0

    def test_asymmetric_loss(self):
        # columns: reject, accept; L(0, reject) = 4, L(1, accept) = 1
        loss = np.array([[4.0, 0.0], [0.0, 1.0]])
        assert optimal_action(0.25, loss) == 1

    def test_accepts_combination_result(self):
        res = combine([bernoulli(0.6), bernoulli(0.9)])
        assert optimal_action(res, self.zero_one) == 0

    def test_validates_shape(self):
        with pytest.raises(DimensionError):
            optimal_action(FiniteDistribution([0.2, 0.3, 0.5]), self.zero_one)
        with pytest.raises(ValueError):
            optimal_action(0.5, np.zeros((2, 0)))
