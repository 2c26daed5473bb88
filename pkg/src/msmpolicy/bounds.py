"""Sharp partial-identification bounds for conditional means and CATEs.

Two independent routes to the same object:

* ``bound_integrand`` - the closed-form per-observation integrand whose
  conditional average is the sharp bound; callers (scores, simulation lab)
  average it with their own integrators.
* ``lp_sharp_bound`` - an exact optimizer over inverse-propensity weights on
  a finite conditional law, constrained to the odds-ratio box and the
  conditional balancing constraint. Sort-based (fractional-knapsack), used
  as the oracle the closed form is checked against.

Caveat kept deliberately: the closed form is derived under a continuous
outcome law. On a law with an atom exactly at the pivotal quantile it can
exceed the sharp LP value; oracle-equivalence checks therefore use
atom-free-at-quantile laws.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    BadLawError,
    NumericError,
    PropensityOutOfRangeError,
    UnorderedInputError,
)


def sign_at_least(t):
    """+1 where t >= 0, else -1 (the convention used by the closed form)."""
    return np.where(np.asarray(t, dtype=float) >= 0, 1.0, -1.0)


def check_propensity(e):
    e = np.asarray(e, dtype=float)
    if np.any(~np.isfinite(e)) or np.any(e <= 0.0) or np.any(e >= 1.0):
        raise PropensityOutOfRangeError("propensity must lie strictly in (0, 1)")
    return e


def bound_integrand(y, a_obs, arm, e_arm, q, lam, side, sgn=sign_at_least):
    """Pointwise integrand of the sharp conditional-mean bound.

    ``side`` is "lower" or "upper"; ``q`` is the matching pivotal quantile
    (level 1/(1+lam) for the lower bound, lam/(1+lam) for the upper).
    Conditional means of this integrand over Y, A | X = x are the bounds;
    this function does no averaging. Vectorized over y/a_obs/e_arm/q.

    ``sgn`` is injectable only so the self-check can demonstrate that a
    corrupted sign convention is caught.
    """
    e_arm = check_propensity(e_arm)
    y = np.asarray(y, dtype=float)
    lam = float(lam)
    ind = (np.asarray(a_obs) == arm).astype(float)
    expo = sgn(y - np.asarray(q, dtype=float))
    if side == "lower":
        expo = -expo
    elif side != "upper":
        raise ValueError(f"side must be 'lower' or 'upper', got {side!r}")
    weight = 1.0 + (1.0 - e_arm) / e_arm * lam ** expo
    out = y * ind * weight
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class FiniteLaw:
    """Law of Y given X=x, A=a at a fixed x: atoms, probabilities, propensity."""

    outcomes: np.ndarray
    probs: np.ndarray
    propensity: float

    def __post_init__(self):
        y = np.asarray(self.outcomes, dtype=float)
        p = np.asarray(self.probs, dtype=float)
        if y.ndim != 1 or y.shape != p.shape or y.size == 0:
            raise BadLawError("outcomes and probs must be matching nonempty vectors")
        if np.any(p <= 0) or abs(p.sum() - 1.0) > 1e-12:
            raise BadLawError("probabilities must be positive and sum to 1")
        if not np.isfinite(y).all():
            raise BadLawError("outcomes must be finite")
        if np.any(np.diff(y) <= 0):
            raise BadLawError("outcomes must be strictly increasing")
        if not 0.0 < self.propensity < 1.0:
            raise PropensityOutOfRangeError("law propensity must lie in (0, 1)")
        object.__setattr__(self, "outcomes", y)
        object.__setattr__(self, "probs", p)

    @classmethod
    def from_samples(cls, y, propensity, weights=None) -> "FiniteLaw":
        """Collapse samples into a sorted atomic law."""
        y = np.asarray(y, dtype=float)
        w = np.ones_like(y) if weights is None else np.asarray(weights, dtype=float)
        order = np.argsort(y, kind="stable")
        y, w = y[order], w[order]
        uniq, inv = np.unique(y, return_inverse=True)
        p = np.zeros_like(uniq)
        np.add.at(p, inv, w)
        return cls(uniq, p / p.sum(), propensity)

    def quantile(self, tau: float) -> float:
        """inf{q : F(q) >= tau} over the atoms."""
        cdf = np.cumsum(self.probs)
        idx = int(np.searchsorted(cdf, tau - 1e-15, side="left"))
        return float(self.outcomes[min(idx, len(self.outcomes) - 1)])

    def mean(self) -> float:
        return float(self.probs @ self.outcomes)


def lp_sharp_bound(law: FiniteLaw, lam: float, direction: str,
                   return_weights: bool = False):
    """Exact sharp bound on E[Y(a) | X=x] for a finite conditional law.

    Optimizes e * sum_j p_j y_j w_j over weights w_j in
    [1 + ((1-e)/e)/lam, 1 + ((1-e)/e)*lam] subject to sum_j p_j w_j = 1/e.
    The optimum has fractional-knapsack structure: extreme weights with a
    single fractional pivot, found by sorting.
    """
    lam = float(lam)
    if lam < 1.0:
        raise NumericError(f"lam must be >= 1, got {lam}")
    if direction not in ("min", "max"):
        raise ValueError(f"direction must be 'min' or 'max', got {direction!r}")
    e = law.propensity
    ratio = (1.0 - e) / e
    w_lo = 1.0 + ratio / lam
    w_hi = 1.0 + ratio * lam
    p, y = law.probs, law.outcomes
    budget = 1.0 / e - w_lo  # slack above the all-w_lo base, consumed as p*(w_hi-w_lo)
    if budget < -1e-12 or w_hi - 1.0 / e < -1e-12:
        raise NumericError("weight box infeasible; cannot happen for lam >= 1")
    w = np.full_like(p, w_lo)
    span = w_hi - w_lo
    if span > 0 and budget > 0:
        # raise weights to w_hi starting from the most favorable outcomes
        order = np.argsort(-y, kind="stable") if direction == "max" else \
            np.argsort(y, kind="stable")
        remaining = budget
        for j in order:
            cost = p[j] * span
            if cost <= remaining * (1 + 1e-15):
                w[j] = w_hi
                remaining -= cost
            else:
                w[j] = w_lo + remaining / p[j]
                remaining = 0.0
                break
    value = float(e * np.sum(p * y * w))
    if return_weights:
        return value, w
    return value


def closed_form_bound(law: FiniteLaw, lam: float, side: str, sgn=sign_at_least) -> float:
    """Average of ``bound_integrand`` over the law, with the law's own quantile.

    This is the estimator's formula applied to a finite law; it matches
    ``lp_sharp_bound`` up to the pivot atom's mass.
    """
    tau = (1.0 / (1.0 + lam)) if side == "lower" else (lam / (1.0 + lam))
    q = law.quantile(tau)
    vals = bound_integrand(law.outcomes, 1, 1, law.propensity, q, lam, side, sgn=sgn)
    return float(law.propensity * np.sum(law.probs * vals))


def cate_bounds(mu_lo_1, mu_hi_1, mu_lo_0, mu_hi_0):
    """Sharp CATE interval: (lo1 - hi0, hi1 - lo0). Vectorized."""
    lo1 = np.asarray(mu_lo_1, float)
    hi1 = np.asarray(mu_hi_1, float)
    lo0 = np.asarray(mu_lo_0, float)
    hi0 = np.asarray(mu_hi_0, float)
    if np.any(lo1 > hi1 + 1e-12) or np.any(lo0 > hi0 + 1e-12):
        raise UnorderedInputError("bound pairs must satisfy lower <= upper")
    lower = lo1 - hi0
    upper = hi1 - lo0
    if lower.ndim == 0:
        return float(lower), float(upper)
    return lower, upper


def first_best_welfare_arm(mu_lo_1, mu_lo_0):
    """Pointwise max-min-welfare rule: treat iff lower(1) > lower(0)."""
    out = (np.asarray(mu_lo_1, float) > np.asarray(mu_lo_0, float)).astype(int)
    return int(out) if out.ndim == 0 else out


def first_best_improvement_arm(tau_lo):
    """Pointwise max-min-improvement rule: treat iff the CATE lower bound > 0."""
    out = (np.asarray(tau_lo, float) > 0).astype(int)
    return int(out) if out.ndim == 0 else out


def three_case_rule(tau_lo, tau_hi):
    """Comparison baseline: treat if lo > 0; withhold if hi < 0; under a
    straddle treat iff the interval midpoint is positive (ties withhold)."""
    lo = np.asarray(tau_lo, float)
    hi = np.asarray(tau_hi, float)
    if np.any(lo > hi):
        raise UnorderedInputError("need tau_lo <= tau_hi")
    out = (lo + hi > 0).astype(int)
    return int(out) if out.ndim == 0 else out
