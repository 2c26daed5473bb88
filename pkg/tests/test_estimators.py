import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from msmpolicy import DgpConfig, RobustPolicyLearner, draw
from msmpolicy.errors import ConfigError


@pytest.fixture(scope="module")
def xyz():
    pt = draw(DgpConfig(n=250), seed=13)
    ds = pt.dataset()
    return ds.X, ds.a, ds.y


def _learner(**kw):
    base = dict(criterion="mmw", log_lambda=0.7, policy="tree", learner="knn",
                n_folds=4, random_state=3)
    base.update(kw)
    return RobustPolicyLearner(**base)


class TestSklearnProtocol:
    def test_get_set_params_round_trip(self):
        est = _learner()
        params = est.get_params()
        assert params["log_lambda"] == 0.7
        est.set_params(log_lambda=1.2)
        assert est.get_params()["log_lambda"] == 1.2

    def test_clone(self, xyz):
        est = _learner().fit(*xyz)
        fresh = clone(est)
        assert not hasattr(fresh, "policy_")
        assert fresh.get_params() == est.get_params()

    def test_not_fitted(self):
        with pytest.raises(NotFittedError):
            _learner().predict(np.zeros((2, 2)))

    def test_unknown_criterion(self, xyz):
        with pytest.raises(ConfigError):
            _learner(criterion="best").fit(*xyz)


class TestFitPredict:
    def test_fit_sets_attributes(self, xyz):
        est = _learner().fit(*xyz)
        assert hasattr(est, "policy_")
        assert np.isfinite(est.value_) and np.isfinite(est.se_)
        assert 0.0 <= est.treated_fraction_ <= 1.0
        assert est.n_features_in_ == 2 and est.n_arms_ == 2

    def test_predict_shapes(self, xyz):
        X, a, y = xyz
        est = _learner().fit(X, a, y)
        arms = est.predict(X[:17])
        assert arms.shape == (17,) and set(np.unique(arms)) <= {0, 1}
        probs = est.predict_proba(X[:17])
        assert probs.shape == (17, 2)
        assert np.allclose(probs.sum(axis=1), 1.0)

    def test_deterministic_given_state(self, xyz):
        a = _learner().fit(*xyz)
        b = _learner().fit(*xyz)
        assert a.policy_.to_json() == b.policy_.to_json()
        assert a.value_ == b.value_

    def test_mmi_criterion(self, xyz):
        est = _learner(criterion="mmi", policy="quadrant").fit(*xyz)
        assert est.policy_.kind == "quadrant"

    def test_logistic_policy(self, xyz):
        est = _learner(policy="logistic", restarts=3).fit(*xyz)
        probs = est.predict_proba(xyz[0][:5])
        assert np.all((probs >= 0) & (probs <= 1))
        assert np.allclose(probs.sum(axis=1), 1.0)

    def test_lam_zero_matches_aipw_reduction(self, xyz):
        est = _learner(log_lambda=0.0).fit(*xyz)
        assert np.isfinite(est.value_)

    def test_default_gbt_learner_end_to_end(self, xyz):
        X, a, y = xyz
        est = RobustPolicyLearner(criterion="mmw", log_lambda=0.5, policy="tree",
                                  learner="gbt", n_trees=25, n_folds=3,
                                  random_state=1).fit(X[:150], a[:150], y[:150])
        assert np.isfinite(est.value_)
        assert est.predict(X[:5]).shape == (5,)
