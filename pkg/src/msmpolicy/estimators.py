"""Scikit-learn style front end for confounding-robust policy learning."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .core import from_arrays
from .errors import ConfigError
from .nuisance import NuisanceSpec
from .optimize import PolicySpec, learn_mmi, learn_mmw


class RobustPolicyLearner(BaseEstimator):
    """Learn a treatment policy that is robust to unobserved confounding.

    Fits cross-fitted doubly robust scores for the chosen worst-case
    criterion at odds-ratio sensitivity exp(log_lambda), then maximizes the
    estimated criterion over the requested policy class.

    Parameters
    ----------
    criterion : "mmw" (worst-case welfare) or "mmi" (worst-case improvement
        over never treating; binary treatments only).
    log_lambda : log of the sensitivity parameter; 0 recovers the
        unconfounded (AIPW) learner.
    policy : policy class, one of "tree", "quadrant", "logistic", "constant".
    learner : nuisance learner, "gbt" or "knn".
    policy_features : covariate indices the policy may use (default: all;
        quadrant uses the first two given).
    random_state : master seed; fits are deterministic given it.

    Attributes (after fit)
    ----------
    policy_ : the learned :class:`~msmpolicy.policies.Policy`.
    value_, se_ : the estimated criterion value and its iid standard error.
    treated_fraction_ : in-sample mean treatment probability (binary).

    Examples
    --------
    >>> learner = RobustPolicyLearner(criterion="mmi", log_lambda=1.0,
    ...                               policy="tree", learner="knn")
    >>> learner.fit(X, a, y).predict(X_new)
    """

    def __init__(self, criterion: str = "mmw", log_lambda: float = 0.0,
                 policy: str = "tree", learner: str = "gbt", n_arms: int | None = None,
                 n_folds: int = 10, clip_kappa: float = 0.01, n_trees: int = 200,
                 max_depth: int = 3, learning_rate: float = 0.1, min_leaf: int = 10,
                 n_neighbors: int | None = None, policy_features=None,
                 tree_depth: int = 2, restarts: int = 20, basis: str = "affine",
                 random_state: int = 0):
        self.criterion = criterion
        self.log_lambda = log_lambda
        self.policy = policy
        self.learner = learner
        self.n_arms = n_arms
        self.n_folds = n_folds
        self.clip_kappa = clip_kappa
        self.n_trees = n_trees
        self.max_depth = max_depth
        self.learning_rate = learning_rate
        self.min_leaf = min_leaf
        self.n_neighbors = n_neighbors
        self.policy_features = policy_features
        self.tree_depth = tree_depth
        self.restarts = restarts
        self.basis = basis
        self.random_state = random_state

    def fit(self, X, a, y):
        """Learn the policy from covariates X, arms a, outcomes y."""
        if self.criterion not in ("mmw", "mmi"):
            raise ConfigError(f"criterion must be 'mmw' or 'mmi', got {self.criterion!r}")
        X = np.asarray(X, dtype=float)
        n_arms = self.n_arms or max(2, int(np.max(a)) + 1)
        dataset = from_arrays(X, a, y, n_arms)
        nspec = NuisanceSpec(
            learner=self.learner, n_trees=self.n_trees, max_depth=self.max_depth,
            learning_rate=self.learning_rate, min_leaf=self.min_leaf,
            n_neighbors=self.n_neighbors, clip_kappa=self.clip_kappa,
            n_folds=self.n_folds, lam=float(np.exp(self.log_lambda)))
        feats = None if self.policy_features is None else tuple(self.policy_features)
        pspec = PolicySpec(kind=self.policy, features=feats, depth=self.tree_depth,
                           restarts=self.restarts, basis=self.basis)
        fitter = learn_mmw if self.criterion == "mmw" else learn_mmi
        fit = fitter(dataset, nspec, pspec, seed=int(self.random_state))
        self.policy_ = fit.policy
        self.value_ = fit.value
        self.se_ = fit.se
        self.arm_shares_ = fit.arm_shares
        self.treated_fraction_ = fit.treated_fraction
        self.n_features_in_ = dataset.d
        self.n_arms_ = dataset.n_arms
        return self

    def _require_fitted(self):
        if not hasattr(self, "policy_"):
            raise NotFittedError("call fit before predict")

    def predict(self, X) -> np.ndarray:
        """Assigned arm per row (most probable arm for randomized policies)."""
        self._require_fitted()
        return np.argmax(self.policy_.prob_matrix(X), axis=1)

    def predict_proba(self, X) -> np.ndarray:
        """Arm-assignment probabilities, shape (n, n_arms)."""
        self._require_fitted()
        return self.policy_.prob_matrix(X)
