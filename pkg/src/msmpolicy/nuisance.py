"""Nuisance estimation with K-fold cross-fitting.

The nuisance tuple per arm is: arm-assignment probabilities, the two
pivotal conditional outcome quantiles (levels 1/(1+lam) and lam/(1+lam)),
and the truncated conditional means below/above each quantile. Each unit is
served predictions from models trained only on the other folds.

Three learners:

* ``gbt``  - gradient boosted trees (squared / logistic / pinball losses),
  backed by scikit-learn.
* ``knn``  - k-nearest-neighbor averages with per-feature standardization by
  training-fold standard deviation; quantiles are exact empirical quantiles
  (inf{q : Fhat >= tau}) of the neighbor outcomes.
* ``oracle`` - closed-form truth injected through an :class:`OracleBundle`,
  for tests and simulation-lab evaluation.

Quantile levels and truncations are recomputed lazily per sensitivity
parameter, so a single cross-fit supports a whole sensitivity sweep (the
expensive parts - fold models, neighbor searches - do not depend on it).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from sklearn.ensemble import GradientBoostingClassifier, GradientBoostingRegressor

from .core import Dataset, FoldAssignment, clip_simplex, make_folds, mix_seed, parallel_map
from .errors import ConfigError, DegenerateArmError, MissingNuisanceError

BELOW, ABOVE = "below", "above"


def default_neighbors(n_train: int) -> int:
    return int(math.ceil(n_train ** 0.6))


def quantile_index(tau: float, k: int) -> int:
    """0-based index of inf{q : Fhat(q) >= tau} in a sorted k-sample."""
    idx = int(math.ceil(tau * k - 1e-9)) - 1
    return min(max(idx, 0), k - 1)


@dataclass(frozen=True)
class OracleBundle:
    """Closed-form nuisance truth.

    propensity(X) -> (n, m) arm probabilities;
    quantile(X, arm, tau) -> (n,) conditional tau-quantiles;
    truncated_mean(X, arm, tau, side) -> (n,) E[Y 1{Y < q_tau}] ("below")
    or E[Y 1{Y > q_tau}] ("above") given X, A=arm.
    """

    propensity: Callable
    quantile: Callable
    truncated_mean: Callable


@dataclass(frozen=True)
class NuisanceSpec:
    """Learner choice, hyperparameters, clip level, sensitivity and folds."""

    learner: str = "gbt"
    n_trees: int = 200
    max_depth: int = 3
    learning_rate: float = 0.1
    min_leaf: int = 10
    n_neighbors: int | None = None
    clip_kappa: float = 0.01
    n_folds: int = 10
    lam: float = 1.0
    oracle: OracleBundle | None = None

    def __post_init__(self):
        if self.learner not in ("gbt", "knn", "oracle"):
            raise ConfigError(f"unknown learner {self.learner!r}")
        if self.learner == "oracle" and self.oracle is None:
            raise ConfigError("oracle learner needs an OracleBundle")
        if not 0.0 < self.clip_kappa < 0.5:
            raise ConfigError(f"clip_kappa must lie in (0, 0.5), got {self.clip_kappa}")
        if min(self.n_trees, self.max_depth, self.min_leaf) <= 0 or self.learning_rate <= 0:
            raise ConfigError("gbt hyperparameters must be positive")
        if self.n_neighbors is not None and self.n_neighbors <= 0:
            raise ConfigError("n_neighbors must be positive")
        if not np.isfinite(self.lam) or self.lam < 1.0:
            raise ConfigError(f"lam must be finite and >= 1, got {self.lam}")
        if self.n_folds < 2:
            raise ConfigError(f"need at least 2 folds, got {self.n_folds}")


# ---------------------------------------------------------------------------
# kNN machinery
# ---------------------------------------------------------------------------

def _train_scale(X: np.ndarray) -> np.ndarray:
    sd = X.std(axis=0)
    sd[sd == 0] = 1.0
    return sd


def _nearest(Xq_s: np.ndarray, Xtr_s: np.ndarray, k: int, block: int = 768) -> np.ndarray:
    """Indices of the k nearest training rows per query row.

    Works on query blocks with a reused distance buffer; the per-query
    squared-norm term is dropped since it cannot change the ordering.
    """
    nq, ntr = Xq_s.shape[0], Xtr_s.shape[0]
    if k >= ntr:
        return np.tile(np.arange(ntr), (nq, 1))
    out = np.empty((nq, k), dtype=np.intp)
    tt = np.sum(Xtr_s * Xtr_s, axis=1)
    buf = np.empty((min(block, nq), ntr))
    for start in range(0, nq, block):
        rows = slice(start, min(start + block, nq))
        d = buf[: rows.stop - rows.start]
        np.dot(Xq_s[rows], Xtr_s.T, out=d)
        d *= -2.0
        d += tt[None, :]
        out[rows] = np.argpartition(d, k - 1, axis=1)[:, :k]
    return out


class _KnnOutcome:
    """Outcome law estimator on one training subset; serves neighbor blocks."""

    def __init__(self, Xtr, ytr, k):
        self.Xtr = np.asarray(Xtr, dtype=float)
        self.ytr = np.asarray(ytr, dtype=float)
        self.k = min(int(k), len(ytr))
        self.scale = _train_scale(self.Xtr)
        self.Xs = self.Xtr / self.scale

    def neighbors(self, Xq) -> np.ndarray:
        return _nearest(np.asarray(Xq, dtype=float) / self.scale, self.Xs, self.k)

    def served(self, Xq) -> "_KnnServed":
        idx = self.neighbors(Xq)
        return _KnnServed(self, idx)


class _KnnServed:
    """Neighbor sets of one query block, with sorted outcomes and prefix sums."""

    def __init__(self, model: _KnnOutcome, idx: np.ndarray):
        self.model = model
        self.idx = idx
        self.k = idx.shape[1]
        self.ys = np.sort(model.ytr[idx], axis=1)
        self.prefix = np.concatenate(
            [np.zeros((idx.shape[0], 1)), np.cumsum(self.ys, axis=1)], axis=1)

    def quantile(self, tau: float) -> np.ndarray:
        return self.ys[:, quantile_index(tau, self.k)].copy()

    def mean(self) -> np.ndarray:
        return self.prefix[:, -1] / self.k

    def truncated(self, q: np.ndarray, side: str) -> np.ndarray:
        """Mean of y*1{y < q} ("below") or y*1{y > q} ("above") over neighbors."""
        q = np.asarray(q, dtype=float)
        if side == BELOW:
            cnt = np.sum(self.ys < q[:, None], axis=1)
            return self.prefix[np.arange(len(q)), cnt] / self.k
        cnt = np.sum(self.ys <= q[:, None], axis=1)
        return (self.prefix[:, -1] - self.prefix[np.arange(len(q)), cnt]) / self.k

    def average_of(self, values: np.ndarray) -> np.ndarray:
        return values[self.idx].mean(axis=1)


# ---------------------------------------------------------------------------
# GBT wrappers
# ---------------------------------------------------------------------------

def _seed32(seed: int, *salts) -> int:
    return mix_seed(seed, *salts) & 0x7FFFFFFF


def _gbt_regressor(spec: NuisanceSpec, seed: int, loss: str, alpha: float | None = None):
    kwargs = dict(
        n_estimators=spec.n_trees,
        max_depth=spec.max_depth,
        learning_rate=spec.learning_rate,
        min_samples_leaf=spec.min_leaf,
        random_state=seed,
    )
    if loss == "quantile":
        kwargs.update(loss="quantile", alpha=alpha)
    else:
        kwargs.update(loss="squared_error")
    return GradientBoostingRegressor(**kwargs)


def _gbt_classifier(spec: NuisanceSpec, seed: int):
    return GradientBoostingClassifier(
        n_estimators=spec.n_trees,
        max_depth=spec.max_depth,
        learning_rate=spec.learning_rate,
        min_samples_leaf=spec.min_leaf,
        random_state=seed,
    )


class _FittedPredictor:
    """Callable wrapper keeping the fitted model inspectable."""

    def __init__(self, model, transform=None):
        self.model = model
        self._transform = transform

    def __call__(self, X):
        X = np.asarray(X, dtype=float)
        out = self.model.predict(X)
        return self._transform(out) if self._transform else out


# ---------------------------------------------------------------------------
# Standalone fitting operations (the contract surface)
# ---------------------------------------------------------------------------

def fit_propensity(X, a, n_arms: int, spec: NuisanceSpec, seed: int = 0):
    """Fit arm-assignment probabilities on a training subset.

    Returns a callable Xq -> (nq, n_arms) of clipped simplex rows. Raises
    DegenerateArmError when an arm is absent from the training data.
    """
    X = np.asarray(X, dtype=float)
    a = np.asarray(a, dtype=int)
    if X.shape[0] == 0:
        raise DegenerateArmError("empty training subset")
    counts = np.bincount(a, minlength=n_arms)
    missing = np.nonzero(counts == 0)[0]
    if missing.size:
        raise DegenerateArmError(f"arms {missing.tolist()} absent from training data")
    kappa = spec.clip_kappa

    if spec.learner == "oracle":
        bundle = spec.oracle
        return lambda Xq: clip_simplex(bundle.propensity(np.asarray(Xq, float)), kappa)

    if spec.learner == "knn":
        k = spec.n_neighbors or default_neighbors(len(a))
        model = _KnnOutcome(X, a.astype(float), k)

        def predict(Xq):
            idx = model.neighbors(Xq)
            arms = a[idx]
            freq = np.stack([(arms == t).mean(axis=1) for t in range(n_arms)], axis=1)
            return clip_simplex(freq, kappa)

        return predict

    if n_arms == 2:
        clf = _gbt_classifier(spec, _seed32(seed, 0xE))
        clf.fit(X, a)
        col = int(np.nonzero(clf.classes_ == 1)[0][0])

        def predict(Xq):
            p1 = clf.predict_proba(np.asarray(Xq, float))[:, col]
            return clip_simplex(np.column_stack([1.0 - p1, p1]), kappa)

        return predict

    models = []
    for t in range(n_arms):
        clf = _gbt_classifier(spec, _seed32(seed, 0xE, t))
        clf.fit(X, (a == t).astype(int))
        models.append((clf, int(np.nonzero(clf.classes_ == 1)[0][0])))

    def predict(Xq):
        Xq = np.asarray(Xq, float)
        raw = np.column_stack([clf.predict_proba(Xq)[:, col] for clf, col in models])
        return clip_simplex(raw, kappa)

    return predict


def fit_quantile(X, y, arm: int, tau: float, spec: NuisanceSpec, seed: int = 0):
    """Fit the conditional tau-quantile of Y on a within-arm training subset.

    gbt minimizes pinball loss at level tau; knn returns the level-tau
    empirical quantile (inf{q : Fhat >= tau}) of the neighbor outcomes.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(y) == 0:
        raise DegenerateArmError(f"no training observations for arm {arm}")
    if not 0.0 < tau < 1.0:
        raise ConfigError(f"quantile level must lie in (0, 1), got {tau}")
    if spec.learner == "oracle":
        bundle = spec.oracle
        return lambda Xq: bundle.quantile(np.asarray(Xq, float), arm, tau)
    if spec.learner == "knn":
        k = spec.n_neighbors or default_neighbors(len(y))
        model = _KnnOutcome(X, y, k)
        return lambda Xq: model.served(Xq).quantile(tau)
    reg = _gbt_regressor(spec, _seed32(seed, 0xA, arm, int(tau * 2**40)), "quantile", tau)
    reg.fit(X, y)
    return _FittedPredictor(reg)


def fit_rho(X, y, arm: int, side: str, quantile_predictor, spec: NuisanceSpec, seed: int = 0):
    """Fit the truncated conditional mean around a fitted quantile.

    Regresses the pseudo-outcome y*1{y < qhat(x)} (side="below") or
    y*1{y > qhat(x)} (side="above") on X within the arm; the inequalities
    are strict, so outcomes tied with the quantile drop from both sides.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(y) == 0:
        raise DegenerateArmError(f"no training observations for arm {arm}")
    if side not in (BELOW, ABOVE):
        raise ConfigError(f"side must be 'below' or 'above', got {side!r}")
    q_train = np.asarray(quantile_predictor(X), dtype=float)
    pseudo = y * ((y < q_train) if side == BELOW else (y > q_train))
    if spec.learner == "oracle":
        raise ConfigError("oracle learner serves truncated means directly")
    if spec.learner == "knn":
        k = spec.n_neighbors or default_neighbors(len(y))
        model = _KnnOutcome(X, y, k)
        return lambda Xq: model.served(Xq).average_of(pseudo)
    reg = _gbt_regressor(spec, _seed32(seed, 0xB, arm, 0 if side == BELOW else 1), "squared")
    reg.fit(X, pseudo)
    return _FittedPredictor(reg)


# ---------------------------------------------------------------------------
# Per-fold outcome views used by the cross-fit
# ---------------------------------------------------------------------------

class _ArmView:
    """Per-(fold, arm) predictions at that fold's query points, cached by level."""

    def quantile(self, tau: float) -> np.ndarray:
        raise NotImplementedError

    def truncated(self, tau: float, side: str) -> np.ndarray:
        raise NotImplementedError


class _KnnArmView(_ArmView):
    def __init__(self, Xtr, ytr, Xq, k):
        self._model = _KnnOutcome(Xtr, ytr, k)
        self._at_train = self._model.served(Xtr)
        self._at_query = self._model.served(Xq)
        self._rho_cache = {}

    def quantile(self, tau):
        return self._at_query.quantile(tau)

    def truncated(self, tau, side):
        key = (tau, side)
        if key not in self._rho_cache:
            q_train = self._at_train.quantile(tau)
            y = self._model.ytr
            pseudo = y * ((y < q_train) if side == BELOW else (y > q_train))
            self._rho_cache[key] = self._at_query.average_of(pseudo)
        return self._rho_cache[key]


class _GbtArmView(_ArmView):
    def __init__(self, Xtr, ytr, Xq, arm, spec, seed):
        self._Xtr, self._ytr, self._Xq = Xtr, ytr, Xq
        self._arm, self._spec, self._seed = arm, spec, seed
        self._q_models = {}
        self._rho_cache = {}

    def _quantile_model(self, tau):
        if tau not in self._q_models:
            reg = _gbt_regressor(self._spec, _seed32(self._seed, 0xA, self._arm,
                                                     int(tau * 2**40)), "quantile", tau)
            reg.fit(self._Xtr, self._ytr)
            self._q_models[tau] = reg
        return self._q_models[tau]

    def quantile(self, tau):
        return self._quantile_model(tau).predict(self._Xq)

    def truncated(self, tau, side):
        key = (tau, side)
        if key not in self._rho_cache:
            q_train = self._quantile_model(tau).predict(self._Xtr)
            pseudo = self._ytr * ((self._ytr < q_train) if side == BELOW
                                  else (self._ytr > q_train))
            reg = _gbt_regressor(self._spec, _seed32(self._seed, 0xB, self._arm,
                                                     int(tau * 2**40),
                                                     0 if side == BELOW else 1), "squared")
            reg.fit(self._Xtr, pseudo)
            self._rho_cache[key] = reg.predict(self._Xq)
        return self._rho_cache[key]


class _OracleArmView(_ArmView):
    def __init__(self, bundle, arm, Xq):
        self._bundle, self._arm, self._Xq = bundle, arm, Xq

    def quantile(self, tau):
        return np.asarray(self._bundle.quantile(self._Xq, self._arm, tau), dtype=float)

    def truncated(self, tau, side):
        return np.asarray(self._bundle.truncated_mean(self._Xq, self._arm, tau, side),
                          dtype=float)


# ---------------------------------------------------------------------------
# Cross-fitting
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NuisanceModel:
    """Cross-fitted nuisance values served at the sample's own points.

    All arrays are (n, m): column t holds the prediction for arm t at each
    unit's covariates, produced by the model trained without that unit's
    fold. ``q_low``/``q_high`` are the quantiles at levels 1/(1+lam) and
    lam/(1+lam) after monotone rearrangement; ``mean_below_*`` and
    ``mean_above_*`` are the matching truncated conditional means. The
    ``*_high`` fields are None when the model was fitted lower-side only.
    """

    folds: FoldAssignment
    lam: float
    clip_kappa: float
    provenance: str
    propensity: np.ndarray
    q_low: np.ndarray
    mean_below_low: np.ndarray
    mean_above_low: np.ndarray
    q_high: np.ndarray | None = None
    mean_below_high: np.ndarray | None = None
    mean_above_high: np.ndarray | None = None

    @property
    def n_arms(self) -> int:
        return self.propensity.shape[1]

    @property
    def has_upper(self) -> bool:
        return self.q_high is not None

    def require_upper(self) -> None:
        if not self.has_upper:
            raise MissingNuisanceError(
                "model was cross-fitted without the upper-quantile nuisances")


class CrossfitModels:
    """Fold models fitted once; nuisance values served per sensitivity level."""

    def __init__(self, dataset: Dataset, spec: NuisanceSpec, seed: int, threads: int = 1):
        self.dataset = dataset
        self.spec = spec
        self.seed = int(seed)
        n, m = dataset.n, dataset.n_arms
        self.folds = make_folds(n, spec.n_folds, mix_seed(seed, 0xC0))
        for k in range(spec.n_folds):
            comp = self.folds.complement(k)
            counts = np.bincount(dataset.a[comp], minlength=m)
            missing = np.nonzero(counts == 0)[0]
            if missing.size:
                raise DegenerateArmError(
                    f"fold {k}: arms {missing.tolist()} absent from the training complement")
        results = parallel_map(self._fit_fold, range(spec.n_folds), threads)
        self.propensity = np.empty((n, m))
        self.views: dict[tuple[int, int], _ArmView] = {}
        for k, (rows, probs, arm_views) in enumerate(results):
            self.propensity[rows] = probs
            for t, view in enumerate(arm_views):
                self.views[(k, t)] = view
        self.propensity.flags.writeable = False

    def _fit_fold(self, k: int):
        ds, spec = self.dataset, self.spec
        rows = self.folds.members(k)
        comp = self.folds.complement(k)
        Xq = ds.X[rows]
        prop = fit_propensity(ds.X[comp], ds.a[comp], ds.n_arms, spec,
                              seed=mix_seed(self.seed, 0xF0, k))
        probs = prop(Xq)
        arm_views = []
        for t in range(ds.n_arms):
            sub = comp[ds.a[comp] == t]
            Xs, ys = ds.X[sub], ds.y[sub]
            if spec.learner == "oracle":
                view = _OracleArmView(spec.oracle, t, Xq)
            elif spec.learner == "knn":
                k_nb = spec.n_neighbors or default_neighbors(len(sub))
                view = _KnnArmView(Xs, ys, Xq, k_nb)
            else:
                view = _GbtArmView(Xs, ys, Xq, t, spec, mix_seed(self.seed, 0xD0, k))
            arm_views.append(view)
        return rows, probs, arm_views

    def nuisance_for(self, lam: float, need_upper: bool = True) -> NuisanceModel:
        lam = float(lam)
        n, m = self.dataset.n, self.dataset.n_arms
        tau_lo = 1.0 / (1.0 + lam)
        tau_hi = lam / (1.0 + lam)
        shape = (n, m)
        q_lo = np.empty(shape)
        mb_lo = np.empty(shape)
        ma_lo = np.empty(shape)
        q_hi = np.empty(shape) if need_upper else None
        mb_hi = np.empty(shape) if need_upper else None
        ma_hi = np.empty(shape) if need_upper else None
        for k in range(self.folds.k):
            rows = self.folds.members(k)
            for t in range(m):
                view = self.views[(k, t)]
                q_lo[rows, t] = view.quantile(tau_lo)
                mb_lo[rows, t] = view.truncated(tau_lo, BELOW)
                ma_lo[rows, t] = view.truncated(tau_lo, ABOVE)
                if need_upper:
                    q_hi[rows, t] = view.quantile(tau_hi)
                    mb_hi[rows, t] = view.truncated(tau_hi, BELOW)
                    ma_hi[rows, t] = view.truncated(tau_hi, ABOVE)
        if need_upper:
            q_lo, q_hi = np.minimum(q_lo, q_hi), np.maximum(q_lo, q_hi)
        arrays = [a for a in (q_lo, mb_lo, ma_lo, q_hi, mb_hi, ma_hi) if a is not None]
        for arr in arrays:
            arr.flags.writeable = False
        return NuisanceModel(
            folds=self.folds, lam=lam, clip_kappa=self.spec.clip_kappa,
            provenance="oracle" if self.spec.learner == "oracle" else "crossfit",
            propensity=self.propensity,
            q_low=q_lo, mean_below_low=mb_lo, mean_above_low=ma_lo,
            q_high=q_hi, mean_below_high=mb_hi, mean_above_high=ma_hi)


def fit_crossfit(dataset: Dataset, spec: NuisanceSpec, seed: int,
                 need_upper: bool = True, threads: int = 1) -> NuisanceModel:
    """Cross-fit all nuisances at one sensitivity level (``spec.lam``)."""
    return CrossfitModels(dataset, spec, seed, threads).nuisance_for(spec.lam, need_upper)
