import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from msmpolicy import (
    FiniteLaw,
    bound_integrand,
    cate_bounds,
    closed_form_bound,
    first_best_improvement_arm,
    first_best_welfare_arm,
    lp_sharp_bound,
    three_case_rule,
)
from msmpolicy.errors import (
    BadLawError,
    PropensityOutOfRangeError,
    UnorderedInputError,
)
from msmpolicy.selfcheck import mixture_law, normal_law, uniform_law


class TestBoundIntegrand:
    def test_lam_one_is_ipw(self):
        val = bound_integrand(2.0, 1, 1, 0.4, q=5.0, lam=1.0, side="lower")
        assert val == pytest.approx(2.0 / 0.4, abs=1e-12)

    def test_other_arm_is_zero(self):
        assert bound_integrand(2.0, 0, 1, 0.4, q=1.0, lam=2.0, side="lower") == 0.0

    def test_hand_value(self):
        # y above the pivotal quantile under the lower bound takes weight 1/lam
        val = bound_integrand(2.0, 1, 1, 0.5, q=1.0, lam=2.0, side="lower")
        assert val == pytest.approx(3.0, abs=1e-12)

    def test_sign_convention_at_tie(self):
        # sgn(0) = +1: outcomes equal to the quantile take the >= branch
        lo = bound_integrand(1.0, 1, 1, 0.5, q=1.0, lam=2.0, side="lower")
        hi = bound_integrand(1.0, 1, 1, 0.5, q=1.0, lam=2.0, side="upper")
        assert lo == pytest.approx(1.5)
        assert hi == pytest.approx(3.0)

    def test_propensity_validated(self):
        with pytest.raises(PropensityOutOfRangeError):
            bound_integrand(1.0, 1, 1, 1.0, q=0.0, lam=2.0, side="lower")


class TestLpSharpBound:
    def test_lam_one_returns_mean(self):
        law = FiniteLaw(np.array([-1.0, 0.5, 2.0]), np.array([0.25, 0.5, 0.25]), 0.3)
        for direction in ("min", "max"):
            assert lp_sharp_bound(law, 1.0, direction) == pytest.approx(law.mean(), abs=1e-12)

    def test_two_point_hand_example(self):
        law = FiniteLaw(np.array([0.0, 1.0]), np.array([0.5, 0.5]), 0.5)
        # weights in [1.5, 3], sum p*w = 2 -> top outcome 2.5, bottom 1.5
        assert lp_sharp_bound(law, 2.0, "max") == pytest.approx(0.625, abs=1e-12)

    def test_weights_feasible(self):
        rng = np.random.default_rng(4)
        y = np.sort(rng.normal(size=12))
        p = rng.random(12)
        p /= p.sum()
        law = FiniteLaw(y, p, 0.37)
        for lam in (1.0, 1.7, 3.2):
            for direction in ("min", "max"):
                val, w = lp_sharp_bound(law, lam, direction, return_weights=True)
                ratio = (1 - 0.37) / 0.37
                assert np.all(w >= 1 + ratio / lam - 1e-10)
                assert np.all(w <= 1 + ratio * lam + 1e-10)
                assert np.sum(p * w) == pytest.approx(1 / 0.37, abs=1e-10)
                assert val == pytest.approx(0.37 * np.sum(p * y * w), abs=1e-12)

    def test_sandwich(self):
        law = FiniteLaw(np.array([-2.0, 0.0, 3.0]), np.array([0.2, 0.5, 0.3]), 0.6)
        for lam in (1.5, 2.5, 6.0):
            assert lp_sharp_bound(law, lam, "min") <= law.mean() + 1e-12
            assert lp_sharp_bound(law, lam, "max") >= law.mean() - 1e-12

    @given(seed=st.integers(0, 10_000), lam1=st.floats(1.0, 8.0), lam2=st.floats(1.0, 8.0))
    @settings(max_examples=60, deadline=None)
    def test_monotone_nesting(self, seed, lam1, lam2):
        rng = np.random.default_rng(seed)
        k = int(rng.integers(2, 9))
        y = np.sort(rng.normal(size=k))
        if len(np.unique(y)) < k:
            return
        p = rng.random(k) + 0.05
        p /= p.sum()
        law = FiniteLaw(y, p, float(rng.uniform(0.1, 0.9)))
        lo, hi = min(lam1, lam2), max(lam1, lam2)
        assert lp_sharp_bound(law, hi, "max") >= lp_sharp_bound(law, lo, "max") - 1e-12
        assert lp_sharp_bound(law, hi, "min") <= lp_sharp_bound(law, lo, "min") + 1e-12

    def test_bad_law(self):
        with pytest.raises(BadLawError):
            FiniteLaw(np.array([1.0, 1.0]), np.array([0.5, 0.5]), 0.5)
        with pytest.raises(BadLawError):
            FiniteLaw(np.array([1.0, 2.0]), np.array([0.7, 0.7]), 0.5)


class TestClosedFormVsLp:
    def test_uniform_anchor(self):
        law = uniform_law(2000, 0.5)
        assert closed_form_bound(law, 2.0, "upper") == pytest.approx(7 / 12, abs=2e-3)
        assert closed_form_bound(law, 2.0, "lower") == pytest.approx(5 / 12, abs=2e-3)
        assert lp_sharp_bound(law, 2.0, "max") == pytest.approx(7 / 12, abs=2e-3)

    @pytest.mark.parametrize("lam", [1.0, 1.5, 2.0, 4.482])
    def test_fine_grid_agreement(self, lam):
        laws = [uniform_law(2000, 0.5), normal_law(0.3, 0.8, 2000, 0.45),
                mixture_law([-0.5, 0.8], [0.7, 0.9], [0.4, 0.6], 2000, 0.55)]
        for law in laws:
            assert abs(closed_form_bound(law, lam, "upper")
                       - lp_sharp_bound(law, lam, "max")) <= 2e-3
            assert abs(closed_form_bound(law, lam, "lower")
                       - lp_sharp_bound(law, lam, "min")) <= 2e-3


class TestDecisionRules:
    def test_cate_bounds(self):
        assert cate_bounds(0.3, 0.3, 0.1, 0.1) == pytest.approx((0.2, 0.2))
        lo, hi = cate_bounds(5 / 12, 7 / 12, 5 / 12, 7 / 12)
        assert (lo, hi) == pytest.approx((-1 / 6, 1 / 6))

    def test_cate_bounds_unordered(self):
        with pytest.raises(UnorderedInputError):
            cate_bounds(1.0, 0.0, 0.0, 1.0)

    def test_first_best_welfare(self):
        assert first_best_welfare_arm(0.2, 0.1) == 1
        assert first_best_welfare_arm(0.1, 0.1) == 0
        assert first_best_welfare_arm(-0.5, -0.4) == 0

    def test_first_best_welfare_shift_invariant(self):
        rng = np.random.default_rng(1)
        a, b = rng.normal(size=100), rng.normal(size=100)
        c = 3.7
        assert np.array_equal(first_best_welfare_arm(a, b),
                              first_best_welfare_arm(a + c, b + c))

    def test_first_best_improvement(self):
        assert first_best_improvement_arm(0.01) == 1
        assert first_best_improvement_arm(0.0) == 0
        assert first_best_improvement_arm(-1 / 6) == 0

    def test_three_case_rule(self):
        # straddle with positive midpoint: treats where the strict rule does not
        assert three_case_rule(-0.1, 0.5) == 1
        assert first_best_improvement_arm(-0.1) == 0
        # negative midpoint: both withhold
        assert three_case_rule(-0.5, 0.3) == 0
        # symmetric straddle resolves to no treatment
        assert three_case_rule(-0.1, 0.1) == 0
        assert three_case_rule(0.05, 0.2) == 1
        assert three_case_rule(-0.2, -0.05) == 0
        with pytest.raises(UnorderedInputError):
            three_case_rule(0.2, -0.2)
