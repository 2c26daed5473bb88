import numpy as np
import pytest

from msmpolicy import (
    ConstantPolicy,
    DgpConfig,
    LogisticPolicy,
    QuadrantPolicy,
    build_score_table,
    draw,
    estimate_improvement,
    estimate_improvement_vs,
    estimate_welfare,
    fit_crossfit,
    improvement_scores,
    plug_in_bounds,
    score_lower,
    score_upper,
    welfare_scores,
)
from msmpolicy.errors import (
    DimensionMismatchError,
    MissingNuisanceError,
    NotBinaryError,
    PropensityOutOfRangeError,
)
from msmpolicy.selfcheck import (
    atomic_direct_bound_average,
    atomic_population,
    exact_score_mean,
    gateaux_probe,
    normal_population,
    true_criterion,
    true_eta,
)
from msmpolicy.simlab import oracle_nuisance_spec


class TestScoreLower:
    def test_hand_value(self):
        val = score_lower(y=2.0, a_obs=1, arm=1, e_arm=0.5, q_low=1.0,
                          mean_below_low=0.3, mean_above_low=0.8, lam=2.0)
        assert val == pytest.approx(2.5, abs=1e-12)

    def test_lam_one_is_aipw(self):
        val = score_lower(2.0, 1, 1, 0.5, 1.0, 0.3, 0.8, lam=1.0)
        m_hat = 0.3 + 0.8
        aipw = m_hat + (2.0 - m_hat) / 0.5
        assert val == pytest.approx(aipw, abs=1e-12)
        assert val == pytest.approx(2.9, abs=1e-12)

    def test_other_arm(self):
        val = score_lower(5.0, 0, 1, 0.5, 1.0, 0.3, 0.8, lam=2.0)
        assert val == pytest.approx(1.0, abs=1e-12)

    def test_propensity_precondition(self):
        with pytest.raises(PropensityOutOfRangeError):
            score_lower(1.0, 1, 1, 0.0, 0.0, 0.0, 0.0, 2.0)


class TestScoreUpper:
    def test_hand_value(self):
        val = score_upper(y=2.0, a_obs=1, arm=1, e_arm=0.5, q_high=1.0,
                          mean_below_high=0.3, mean_above_high=0.8, lam=2.0)
        assert val == pytest.approx(3.25, abs=1e-12)

    def test_lam_one_equals_lower(self):
        rng = np.random.default_rng(0)
        for _ in range(25):
            y, q, rb, ra = rng.normal(size=4)
            e = rng.uniform(0.1, 0.9)
            a = rng.integers(0, 2)
            lo = score_lower(y, a, 1, e, q, rb, ra, 1.0)
            hi = score_upper(y, a, 1, e, q, rb, ra, 1.0)
            assert lo == pytest.approx(hi, abs=1e-12)

    def test_other_arm(self):
        val = score_upper(7.0, 0, 1, 0.5, 1.0, 0.3, 0.8, lam=2.0)
        assert val == pytest.approx(-(1 / 0.5) * (0.3 / 2 + 2 * 0.8) * (0 - 0.5), abs=1e-12)


class TestPolicyWeighting:
    def test_welfare_score_selects_arm(self):
        row = np.array([[1.5, 2.5]])
        assert welfare_scores(row, np.array([[0.0, 1.0]]))[0] == 2.5
        assert welfare_scores(row, np.array([[1.0, 0.0]]))[0] == 1.5
        assert welfare_scores(row, np.array([[0.5, 0.5]]))[0] == 2.0

    def test_improvement_score(self):
        assert improvement_scores(np.array([2.5]), np.array([3.25]), np.array([1.0]))[0] \
            == pytest.approx(-0.75)
        assert improvement_scores(np.array([2.5]), np.array([3.25]), np.array([0.5]))[0] \
            == pytest.approx(-0.375)
        assert improvement_scores(np.array([2.5]), np.array([3.25]), np.array([0.0]))[0] == 0.0

    def test_affinity_three_point_collinearity(self):
        """psi_W is affine in pi(1|x) with slope phi_1 - phi_0, per unit."""
        rng = np.random.default_rng(1)
        rows = rng.normal(size=(30, 2))
        p = np.array([0.0, 0.5, 1.0])
        for row in rows:
            vals = [welfare_scores(row[None, :], np.array([[1 - pi, pi]]))[0] for pi in p]
            assert vals[1] == pytest.approx(0.5 * (vals[0] + vals[2]), abs=1e-12)
            assert vals[2] - vals[0] == pytest.approx(row[1] - row[0], abs=1e-12)


@pytest.fixture(scope="module")
def atomic():
    return atomic_population()


class TestBuildScoreTable:
    def test_moment_identity_exact(self, atomic):
        ds, model = atomic
        table = build_score_table(ds, model, need_upper=True)
        for pol in (ConstantPolicy(arm=1), ConstantPolicy(arm=0),
                    QuadrantPolicy(i=0, j=1, s1=1, s2=-1, t1=-0.5, t2=0.2),
                    LogisticPolicy(beta=(0.4, -0.7, 0.1), basis="affine")):
            lhs, _ = estimate_welfare(table, pol)
            rhs = atomic_direct_bound_average(ds, model, pol.prob_matrix(ds.X))
            assert lhs == pytest.approx(rhs, abs=1e-12)

    def test_column_means_match_bound_averages(self, atomic):
        ds, model = atomic
        table = build_score_table(ds, model, need_upper=False)
        for t in (0, 1):
            probs = np.zeros((ds.n, 2))
            probs[:, t] = 1.0
            direct = atomic_direct_bound_average(ds, model, probs)
            assert table.lower[:, t].mean() == pytest.approx(direct, abs=1e-12)

    def test_lam1_oracle_equals_aipw(self):
        cfg = DgpConfig(n=120)
        ds = draw(cfg, seed=2).dataset()
        spec = oracle_nuisance_spec(cfg, lam=1.0, n_folds=3)
        model = fit_crossfit(ds, spec, seed=0, need_upper=True)
        table = build_score_table(ds, model, need_upper=True)
        m_hat = model.mean_below_low + model.mean_above_low
        ind = (ds.a[:, None] == np.arange(2)[None, :]).astype(float)
        aipw = m_hat + ind * (ds.y[:, None] - m_hat) / model.propensity
        assert np.max(np.abs(table.lower - aipw)) <= 1e-12
        assert np.max(np.abs(table.upper - table.lower)) <= 1e-12

    def test_missing_upper(self, atomic):
        ds, model = atomic
        table = build_score_table(ds, model, need_upper=False)
        with pytest.raises(MissingNuisanceError):
            estimate_improvement(table, ConstantPolicy(arm=1))

    def test_policy_arm_mismatch(self, atomic):
        ds, model = atomic
        table = build_score_table(ds, model)
        with pytest.raises(DimensionMismatchError):
            estimate_welfare(table, ConstantPolicy(arm=2, m=3))


class TestEstimators:
    def test_constant_scores(self, atomic):
        ds, model = atomic
        table = build_score_table(ds, model, need_upper=True)
        val1, _ = estimate_welfare(table, ConstantPolicy(arm=1))
        assert val1 == pytest.approx(table.lower[:, 1].mean(), abs=1e-14)
        val0, _ = estimate_welfare(table, ConstantPolicy(arm=0))
        assert val0 == pytest.approx(table.lower[:, 0].mean(), abs=1e-14)

    def test_improvement_never_treat_zero(self, atomic):
        ds, model = atomic
        table = build_score_table(ds, model, need_upper=True)
        assert estimate_improvement(table, ConstantPolicy(arm=0))[0] == 0.0

    def test_improvement_rejects_multiarm_policy(self, atomic):
        ds, model = atomic
        table = build_score_table(ds, model, need_upper=True)
        with pytest.raises(NotBinaryError):
            estimate_improvement(table, ConstantPolicy(arm=0, m=3))

    def test_se_matches_sample_sd(self, atomic):
        ds, model = atomic
        table = build_score_table(ds, model, need_upper=True)
        val, se = estimate_welfare(table, ConstantPolicy(arm=1))
        col = table.lower[:, 1]
        assert se == pytest.approx(col.std(ddof=1) / np.sqrt(ds.n))


class TestBaselineImprovement:
    def test_same_policy_zero(self, atomic):
        ds, model = atomic
        table = build_score_table(ds, model, need_upper=True)
        pol = QuadrantPolicy(i=0, j=1, s1=1, s2=1, t1=0.0, t2=-1.0)
        assert estimate_improvement_vs(table, pol, pol)[0] == 0.0

    def test_never_treat_baseline_reduces(self, atomic):
        ds, model = atomic
        table = build_score_table(ds, model, need_upper=True)
        pol = QuadrantPolicy(i=0, j=1, s1=1, s2=-1, t1=-0.5, t2=0.2)
        vs, _ = estimate_improvement_vs(table, pol, ConstantPolicy(arm=0))
        plain, _ = estimate_improvement(table, pol)
        assert vs == pytest.approx(plain, abs=1e-14)

    def test_downweight_uses_mirror(self, atomic):
        ds, model = atomic
        table = build_score_table(ds, model, need_upper=True)
        val, _ = estimate_improvement_vs(table, ConstantPolicy(arm=0), ConstantPolicy(arm=1))
        mirror = -(table.upper[:, 1] - table.lower[:, 0]).mean()
        assert val == pytest.approx(mirror, abs=1e-14)


class TestAnalyticMomentAndOrthogonality:
    def test_moment_identity_normal_population(self):
        pop = normal_population()
        pi1 = np.array([0.9, 0.2, 0.55])
        for lam in (1.0, 2.0, 4.482):
            eta = true_eta(pop, lam)
            for crit in ("welfare", "improvement"):
                lhs = exact_score_mean(pop, eta, lam, pi1, crit)
                rhs = true_criterion(pop, lam, pi1, crit)
                assert lhs == pytest.approx(rhs, abs=1e-12)

    def test_orthogonal_quadratic_or_exact(self):
        pop = normal_population()
        for crit in ("welfare", "improvement"):
            probes = gateaux_probe(pop, 2.0, crit, plug_in=False)
            for name, rec in probes.items():
                assert rec["slope"] >= 1.9, (crit, name, rec)

    def test_plugin_linear(self):
        pop = normal_population()
        probes = gateaux_probe(pop, 2.0, "welfare", plug_in=True)
        assert probes["e1"]["slope"] <= 1.2
        assert probes["q_lo"]["slope"] <= 1.2


def test_plug_in_bounds_consistency():
    cfg = DgpConfig(n=100)
    ds = draw(cfg, seed=6).dataset()
    spec = oracle_nuisance_spec(cfg, lam=2.0, n_folds=2)
    model = fit_crossfit(ds, spec, seed=0, need_upper=True)
    mu_lo, mu_hi = plug_in_bounds(model)
    from msmpolicy.simlab import oracle_bounds

    truth = oracle_bounds(cfg, ds.X, 2.0)
    assert np.max(np.abs(mu_lo - truth.mu_lo)) <= 1e-9
    assert np.max(np.abs(mu_hi - truth.mu_hi)) <= 1e-9


def test_plug_in_bounds_nested_across_lam_with_oracle():
    cfg = DgpConfig(n=80)
    ds = draw(cfg, seed=9).dataset()
    lo_small, hi_small = plug_in_bounds(
        fit_crossfit(ds, oracle_nuisance_spec(cfg, 1.5, 2), seed=0))
    lo_big, hi_big = plug_in_bounds(
        fit_crossfit(ds, oracle_nuisance_spec(cfg, 3.0, 2), seed=0))
    assert np.all(lo_big <= lo_small + 1e-10)
    assert np.all(hi_big >= hi_small - 1e-10)
