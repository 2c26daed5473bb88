"""Doubly robust scores for the worst-case welfare and improvement criteria.

``score_lower``/``score_upper`` are the per-observation orthogonalized
scores whose means identify the sharp lower/upper conditional-mean bounds.
Each has three pieces: the closed-form bound integrand, a quantile
correction, and a propensity correction; the corrections have conditional
mean zero at the true nuisances, and their presence makes the estimator
first-order insensitive to nuisance error.

A :class:`ScoreTable` holds the cross-fitted scores for every unit and arm
(unit i scored with its own fold's held-out predictors); the criterion
estimators are sample means of policy-weighted score rows.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .bounds import bound_integrand, check_propensity
from .core import Dataset
from .errors import DimensionMismatchError, NotBinaryError
from .nuisance import NuisanceModel
from .policies import Policy


def score_lower(y, a_obs, arm, e_arm, q_low, mean_below_low, mean_above_low, lam):
    """Doubly robust score for the lower conditional-mean bound of one arm.

    Vectorized over observations; no clipping is applied here (the
    propensity must already lie strictly inside (0, 1)).
    """
    e = check_propensity(e_arm)
    lam = float(lam)
    y = np.asarray(y, dtype=float)
    q = np.asarray(q_low, dtype=float)
    ind = (np.asarray(a_obs) == arm).astype(float)
    term1 = bound_integrand(y, a_obs, arm, e, q, lam, "lower")
    term2 = q * ind * (1.0 - e) / e * (lam - 1.0 / lam) \
        * (1.0 / (1.0 + lam) - (y < q))
    term3 = -(lam * np.asarray(mean_below_low, float)
              + np.asarray(mean_above_low, float) / lam) / e * (ind - e)
    out = term1 + term2 + term3
    return float(out) if np.ndim(out) == 0 else out


def score_upper(y, a_obs, arm, e_arm, q_high, mean_below_high, mean_above_high, lam):
    """Doubly robust score for the upper conditional-mean bound (the mirror)."""
    e = check_propensity(e_arm)
    lam = float(lam)
    y = np.asarray(y, dtype=float)
    q = np.asarray(q_high, dtype=float)
    ind = (np.asarray(a_obs) == arm).astype(float)
    term1 = bound_integrand(y, a_obs, arm, e, q, lam, "upper")
    term2 = -q * ind * (1.0 - e) / e * (lam - 1.0 / lam) \
        * (lam / (1.0 + lam) - (y < q))
    term3 = -(np.asarray(mean_below_high, float) / lam
              + lam * np.asarray(mean_above_high, float)) / e * (ind - e)
    out = term1 + term2 + term3
    return float(out) if np.ndim(out) == 0 else out


def welfare_scores(lower: np.ndarray, probs: np.ndarray) -> np.ndarray:
    """Per-unit welfare score: sum_t phi_t * pi(t|x). ``probs`` rows on simplex."""
    lower = np.atleast_2d(np.asarray(lower, float))
    probs = np.atleast_2d(np.asarray(probs, float))
    if lower.shape != probs.shape:
        raise DimensionMismatchError(
            f"score block {lower.shape} vs probabilities {probs.shape}")
    return np.sum(lower * probs, axis=1)


def improvement_scores(lower_1: np.ndarray, upper_0: np.ndarray, p1: np.ndarray) -> np.ndarray:
    """Per-unit improvement score: pi(x) * (phi_1^lower - phi_0^upper)."""
    p1 = np.asarray(p1, dtype=float)
    if np.any(p1 < -1e-12) or np.any(p1 > 1 + 1e-12):
        raise NotBinaryError("treatment probabilities must lie in [0, 1]")
    return p1 * (np.asarray(lower_1, float) - np.asarray(upper_0, float))


@dataclass(frozen=True)
class ScoreTable:
    """Cross-fitted doubly robust scores for one sensitivity level.

    ``lower[i, t]`` is the lower-bound score of arm t at unit i; ``upper``
    is present when the table was built for improvement-style criteria.
    ``X`` is kept so policies can be evaluated against the same sample.
    """

    X: np.ndarray
    lower: np.ndarray
    upper: np.ndarray | None
    lam: float
    provenance: str

    @property
    def n(self) -> int:
        return self.lower.shape[0]

    @property
    def n_arms(self) -> int:
        return self.lower.shape[1]

    def require_upper(self) -> np.ndarray:
        if self.upper is None:
            from .errors import MissingNuisanceError

            raise MissingNuisanceError("score table built without upper-bound scores")
        return self.upper

    def write_csv(self, path) -> None:
        """Long format: unit,arm,phi_minus[,phi_plus]."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            header = ["unit", "arm", "phi_minus"] + (["phi_plus"] if self.upper is not None else [])
            writer.writerow(header)
            for i in range(self.n):
                for t in range(self.n_arms):
                    row = [i, t, repr(float(self.lower[i, t]))]
                    if self.upper is not None:
                        row.append(repr(float(self.upper[i, t])))
                    writer.writerow(row)


def build_score_table(dataset: Dataset, model: NuisanceModel,
                      need_upper: bool = False) -> ScoreTable:
    """Score every unit and arm with its fold's held-out nuisance values."""
    if model.propensity.shape != (dataset.n, dataset.n_arms):
        raise DimensionMismatchError("nuisance model does not match the dataset")
    if need_upper:
        model.require_upper()
    n, m = dataset.n, dataset.n_arms
    lower = np.empty((n, m))
    upper = np.empty((n, m)) if need_upper else None
    for t in range(m):
        e_t = model.propensity[:, t]
        lower[:, t] = score_lower(dataset.y, dataset.a, t, e_t,
                                  model.q_low[:, t], model.mean_below_low[:, t],
                                  model.mean_above_low[:, t], model.lam)
        if need_upper:
            upper[:, t] = score_upper(dataset.y, dataset.a, t, e_t,
                                      model.q_high[:, t], model.mean_below_high[:, t],
                                      model.mean_above_high[:, t], model.lam)
    lower.flags.writeable = False
    if upper is not None:
        upper.flags.writeable = False
    return ScoreTable(X=dataset.X, lower=lower, upper=upper,
                      lam=model.lam, provenance=model.provenance)


def plug_in_bounds(model: NuisanceModel) -> tuple[np.ndarray, np.ndarray]:
    """Per-unit plug-in conditional-mean bound estimates, (mu_lo, mu_hi).

    Uses the truncated-mean decomposition of the sharp bounds; the
    conditional outcome mean is recovered as the sum of the two truncated
    pieces (exact for continuous outcome laws).
    """
    model.require_upper()
    lam = model.lam
    e = model.propensity
    mean_lo = model.mean_below_low + model.mean_above_low
    mean_hi = model.mean_below_high + model.mean_above_high
    mu_lo = e * mean_lo + (1 - e) * (lam * model.mean_below_low
                                     + model.mean_above_low / lam)
    mu_hi = e * mean_hi + (1 - e) * (model.mean_below_high / lam
                                     + lam * model.mean_above_high)
    return mu_lo, mu_hi


def _mean_se(values: np.ndarray) -> tuple[float, float]:
    n = len(values)
    se = float(values.std(ddof=1) / np.sqrt(n)) if n > 1 else float("nan")
    return float(values.mean()), se


def estimate_welfare(table: ScoreTable, policy: Policy) -> tuple[float, float]:
    """Cross-fitted worst-case welfare of a policy: (estimate, iid SE)."""
    if policy.m != table.n_arms:
        raise DimensionMismatchError(
            f"policy has {policy.m} arms but the table has {table.n_arms}")
    probs = policy.prob_matrix(table.X)
    return _mean_se(welfare_scores(table.lower, probs))


def estimate_improvement(table: ScoreTable, policy: Policy) -> tuple[float, float]:
    """Cross-fitted worst-case improvement over never-treat (binary only)."""
    if table.n_arms != 2 or policy.m != 2:
        raise NotBinaryError("improvement criterion is defined for two arms")
    upper = table.require_upper()
    p1 = policy.treated_probability(table.X)
    return _mean_se(improvement_scores(table.lower[:, 1], upper[:, 0], p1))


def estimate_improvement_vs(table: ScoreTable, policy: Policy,
                            baseline: Policy) -> tuple[float, float]:
    """Worst-case improvement of ``policy`` against an arbitrary baseline.

    Per-unit shift w = pi(x) - pi0(x); units pushed toward treatment are
    scored with the pessimistic gain (lower_1 - upper_0), units pulled away
    with the pessimistic loss via the mirror (upper_1 - lower_0). Reduces
    exactly to :func:`estimate_improvement` when the baseline never treats.
    """
    if table.n_arms != 2 or policy.m != 2 or baseline.m != 2:
        raise NotBinaryError("baseline-relative improvement is defined for two arms")
    upper = table.require_upper()
    w = policy.treated_probability(table.X) - baseline.treated_probability(table.X)
    gain_down = table.lower[:, 1] - upper[:, 0]
    gain_up = upper[:, 1] - table.lower[:, 0]
    contrib = np.where(w > 0, w * gain_down, w * gain_up)
    return _mean_se(contrib)
