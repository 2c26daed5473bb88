"""Policy-class optimizers: the argmax step of the learning algorithms.

Quadrant and tree searches are exact over an explicit candidate grid
(thresholds at midpoints between consecutive distinct feature values, plus
+-inf sentinels for the quadrant class), with deterministic tie-breaking.
The logistic class is optimized by multi-restart gradient ascent with
backtracking line search (the objective is not concave in the
coefficients).
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import expit

from .core import Dataset, mix_seed, rng_from
from .errors import (
    BadDepthError,
    ConfigError,
    NeedTwoFeaturesError,
    NotBinaryError,
    UnsupportedClassForArmsError,
)
from .nuisance import NuisanceSpec, fit_crossfit
from .policies import (
    ConstantPolicy,
    LogisticPolicy,
    Policy,
    QuadrantPolicy,
    TreePolicy,
    feature_map,
)
from .scores import (
    ScoreTable,
    build_score_table,
    estimate_improvement,
    estimate_welfare,
)

NEG_INF = float("-inf")
POS_INF = float("inf")


def _suffix_sum(v: np.ndarray) -> np.ndarray:
    """out[c] = sum(v[c:]); length len(v)+1 with out[-1] = 0."""
    out = np.zeros(len(v) + 1)
    out[:-1] = np.cumsum(v[::-1])[::-1]
    return out


def _threshold(values: np.ndarray, cut: int, sign: int) -> float:
    """Threshold realizing 'ranks >= cut' (sign +1) or 'ranks < cut' (sign -1)."""
    u = len(values)
    if cut == 0:
        return NEG_INF
    if cut == u:
        return POS_INF
    xl, xr = values[cut - 1], values[cut]
    if sign > 0:
        return float(xl + 0.5 * (xr - xl))   # in [xl, xr): x > t picks ranks >= cut
    return float(xr - 0.5 * (xr - xl))       # in (xl, xr]: x < t picks ranks < cut


def quadrant_search(X: np.ndarray, gains: np.ndarray,
                    features: Sequence[int] = (0, 1)) -> QuadrantPolicy:
    """Exact maximizer of sum_i gains_i * pi(x_i) over quadrant rules.

    Candidates: all four sign patterns crossed with thresholds at midpoints
    of consecutive distinct feature values plus +-inf. Ties break toward the
    smallest treated count, then lexicographically on (s1, s2, t1, t2).
    """
    X = np.asarray(X, dtype=float)
    gains = np.asarray(gains, dtype=float)
    features = tuple(int(f) for f in features)
    if len(features) != 2 or features[0] == features[1]:
        raise NeedTwoFeaturesError(f"quadrant search needs two distinct features, got {features}")
    if X.ndim != 2 or max(features) >= X.shape[1]:
        raise NeedTwoFeaturesError(f"features {features} out of range for X with shape {X.shape}")
    fi, fj = features
    w1, r1 = np.unique(X[:, fi], return_inverse=True)
    w2, r2 = np.unique(X[:, fj], return_inverse=True)
    u1, u2 = len(w1), len(w2)

    ones = np.ones_like(gains)
    by_r1 = [np.nonzero(r1 == c)[0] for c in range(u1)]
    c2_all = np.zeros(u2)
    np.add.at(c2_all, r2, gains)
    n2_all = np.zeros(u2)
    np.add.at(n2_all, r2, ones)
    C2 = _suffix_sum(c2_all)      # gains with r2 >= c2, over all units
    N2 = _suffix_sum(n2_all)
    tot, ntot = gains.sum(), float(len(gains))

    patterns = ((1, 1), (1, -1), (-1, 1), (-1, -1))

    def sweep():
        """Yield (c1, pattern vectors over c2) rows; deterministic order."""
        s2 = np.zeros(u2)
        m2 = np.zeros(u2)
        for c1 in range(u1, -1, -1):
            if c1 < u1:
                rows = by_r1[c1]
                np.add.at(s2, r2[rows], gains[rows])
                np.add.at(m2, r2[rows], ones[rows])
            T = _suffix_sum(s2)    # gains in r1 >= c1 and r2 >= c2
            NT = _suffix_sum(m2)
            vecs = {
                (1, 1): (T, NT),
                (1, -1): (T[0] - T, NT[0] - NT),
                (-1, 1): (C2 - T, N2 - NT),
                (-1, -1): (tot - T[0] - C2 + T, ntot - NT[0] - N2 + NT),
            }
            yield c1, vecs

    best_obj = -np.inf
    for _, vecs in sweep():
        for pat in patterns:
            best_obj = max(best_obj, float(vecs[pat][0].max()))

    best_key = None
    for c1, vecs in sweep():
        for s1, s2sign in patterns:
            vec, cnt = vecs[(s1, s2sign)]
            hits = np.nonzero(vec == best_obj)[0]
            if hits.size == 0:
                continue
            cmin = cnt[hits].min()
            c2 = int(hits[cnt[hits] == cmin].min())
            key = (float(cmin), s1, s2sign,
                   _threshold(w1, c1, s1), _threshold(w2, c2, s2sign))
            if best_key is None or key < best_key:
                best_key = key
    _, s1, s2, t1, t2 = best_key
    return QuadrantPolicy(i=fi, j=fj, s1=s1, s2=s2, t1=t1, t2=t2)


# ---------------------------------------------------------------------------
# Exact decision-tree search
# ---------------------------------------------------------------------------

def _best_leaf(scores: np.ndarray):
    sums = scores.sum(axis=0)
    arm = int(np.argmax(sums))  # first max -> lowest arm
    return float(sums[arm]), ("leaf", arm)


def _best_depth1(X: np.ndarray, scores: np.ndarray, features: Sequence[int]):
    """Exact best among {leaf} and single splits; shallow-first tie-break."""
    best_val, best_spec = _best_leaf(scores)
    total = scores.sum(axis=0)
    for f in features:
        x = X[:, f]
        order = np.argsort(x, kind="stable")
        xs = x[order]
        valid = xs[:-1] < xs[1:]
        if not valid.any():
            continue
        pref = np.cumsum(scores[order], axis=0)
        left = pref[:-1]
        obj = left.max(axis=1) + (total - left).max(axis=1)
        obj = np.where(valid, obj, -np.inf)
        p = int(np.argmax(obj))  # first max -> lowest threshold
        if obj[p] > best_val:
            thr = float(xs[p] + 0.5 * (xs[p + 1] - xs[p]))
            arm_l = int(np.argmax(left[p]))
            arm_r = int(np.argmax(total - left[p]))
            best_val = float(obj[p])
            best_spec = ("split", f, thr, ("leaf", arm_l), ("leaf", arm_r))
    return best_val, best_spec


def tree_search(X: np.ndarray, scores: np.ndarray, depth: int,
                features: Sequence[int] | None = None) -> TreePolicy:
    """Exact argmax of sum_i scores[i, pi(x_i)] over depth<=``depth`` trees.

    Depth 1 scans every (feature, midpoint threshold) with running per-arm
    prefix sums; depth 2 additionally pairs every root split with the best
    depth-1 subtree on each side. Ties prefer shallower trees, then the
    lowest feature index, lowest threshold, lowest arm.
    """
    X = np.asarray(X, dtype=float)
    scores = np.asarray(scores, dtype=float)
    if depth not in (1, 2):
        raise BadDepthError(f"tree depth must be 1 or 2, got {depth}")
    if scores.ndim != 2 or scores.shape[0] != X.shape[0]:
        raise ConfigError("scores must be (n, m) aligned with X")
    features = tuple(range(X.shape[1])) if features is None else tuple(int(f) for f in features)
    if not features or max(features) >= X.shape[1]:
        raise ConfigError(f"features {features} out of range")

    best_val, best_spec = _best_depth1(X, scores, features)
    if depth == 2:
        for f in features:
            x = X[:, f]
            order = np.argsort(x, kind="stable")
            xs = x[order]
            for p in range(1, len(xs)):
                if xs[p - 1] >= xs[p]:
                    continue
                lrows, rrows = order[:p], order[p:]
                lval, lspec = _best_depth1(X[lrows], scores[lrows], features)
                rval, rspec = _best_depth1(X[rrows], scores[rrows], features)
                if lval + rval > best_val:
                    thr = float(xs[p - 1] + 0.5 * (xs[p] - xs[p - 1]))
                    best_val = lval + rval
                    best_spec = ("split", f, thr, lspec, rspec)
    nodes: list[dict] = []
    _emit(best_spec, nodes)
    return TreePolicy(nodes=tuple(nodes), m=scores.shape[1])


def _emit(spec, nodes: list) -> int:
    idx = len(nodes)
    if spec[0] == "leaf":
        nodes.append({"leaf": spec[1]})
        return idx
    _, f, thr, lspec, rspec = spec
    nodes.append(None)
    left = _emit(lspec, nodes)
    right = _emit(rspec, nodes)
    nodes[idx] = {"feat": int(f), "thr": float(thr), "left": left, "right": right}
    return idx


# ---------------------------------------------------------------------------
# Logistic ascent
# ---------------------------------------------------------------------------

def logistic_ascent(T: np.ndarray, gains: np.ndarray, restarts: int = 20,
                    seed: int = 0, max_iter: int = 500, tol: float = 1e-8,
                    extra_inits: np.ndarray | None = None):
    """Maximize (1/n) sum_i gains_i * sigma(T_i' beta) by gradient ascent.

    Runs from ``restarts`` centered-uniform random initializations plus the
    zero vector (plus any ``extra_inits``), each with backtracking line
    search and step-size carryover; returns the best final iterate and a
    diagnostics dict (per-restart objectives, convergence flag).
    """
    T = np.asarray(T, dtype=float)
    gains = np.asarray(gains, dtype=float)
    n, d = T.shape
    if restarts < 1:
        raise ConfigError(f"need at least one restart, got {restarts}")
    rng = rng_from(seed, 0x10615)
    inits = [np.zeros((1, d)), rng.uniform(-1.0, 1.0, (restarts, d))]
    if extra_inits is not None and len(extra_inits):
        inits.append(np.atleast_2d(np.asarray(extra_inits, dtype=float)))
    beta = np.concatenate(inits, axis=0)
    R = beta.shape[0]

    s = expit(beta @ T.T)
    f = (s * gains).mean(axis=1)
    step = np.ones(R)
    active = np.ones(R, dtype=bool)
    for _ in range(max_iter):
        idx = np.nonzero(active)[0]
        if idx.size == 0:
            break
        sa = s[idx]
        grad = ((sa * (1.0 - sa) * gains) @ T) / n
        gnorm2 = np.sum(grad * grad, axis=1)
        alive = np.sqrt(gnorm2) > tol
        active[idx[~alive]] = False
        idx, grad, gnorm2 = idx[alive], grad[alive], gnorm2[alive]
        if idx.size == 0:
            break
        trial = 2.0 * step[idx]
        pending = np.ones(idx.size, dtype=bool)
        for _ in range(60):
            rows = np.nonzero(pending)[0]
            if rows.size == 0:
                break
            cand = beta[idx[rows]] + trial[rows, None] * grad[rows]
            sc = expit(cand @ T.T)
            fc = (sc * gains).mean(axis=1)
            ok = fc >= f[idx[rows]] + 1e-4 * trial[rows] * gnorm2[rows]
            acc = idx[rows[ok]]
            beta[acc] = cand[ok]
            f[acc] = fc[ok]
            s[acc] = sc[ok]
            step[acc] = trial[rows[ok]]
            pending[rows[ok]] = False
            trial[rows[~ok]] /= 2.0
            dead = rows[~ok][trial[rows[~ok]] <= 1e-18]
            pending[dead] = False
            active[idx[dead]] = False
    best = int(np.argmax(f))
    info = {
        "objective": float(f[best]),
        "restart_objectives": f.tolist(),
        "converged": bool(~active[best]),
        "n_starts": R,
    }
    return beta[best].copy(), info


# ---------------------------------------------------------------------------
# Learning pipelines
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PolicySpec:
    """Which policy class to optimize, and with what knobs."""

    kind: str = "tree"
    features: tuple | None = None
    depth: int = 2
    restarts: int = 20
    basis: str = "affine"
    max_iter: int = 500
    tol: float = 1e-8

    def __post_init__(self):
        if self.kind not in ("constant", "quadrant", "tree", "logistic"):
            raise ConfigError(f"unknown policy class {self.kind!r}")


def optimize_policy(X: np.ndarray, values: np.ndarray, pspec: PolicySpec,
                    seed: int = 0, extra_inits=None):
    """Maximize sum_i values[i, pi(x_i)] over the requested class.

    Returns (policy, info). ``values`` is the (n, m) per-unit per-arm score
    block of the criterion being optimized.
    """
    X = np.asarray(X, dtype=float)
    values = np.asarray(values, dtype=float)
    m = values.shape[1]
    if pspec.kind == "constant":
        val, (_, arm) = _best_leaf(values)
        return ConstantPolicy(arm=arm, m=m), {"objective": val / len(values)}
    if pspec.kind == "tree":
        policy = tree_search(X, values, pspec.depth, pspec.features)
        probs = policy.prob_matrix(X)
        return policy, {"objective": float((values * probs).sum() / len(values))}
    if m != 2:
        raise UnsupportedClassForArmsError(
            f"{pspec.kind} policies are binary; scores have {m} arms")
    gains = values[:, 1] - values[:, 0]
    if pspec.kind == "quadrant":
        feats = pspec.features or (0, 1)
        policy = quadrant_search(X, gains, feats)
        treated = policy.treated_probability(X)
        return policy, {"objective": float((gains * treated).mean())}
    T = feature_map(X, pspec.features, pspec.basis)
    beta, info = logistic_ascent(T, gains, restarts=pspec.restarts, seed=seed,
                                 max_iter=pspec.max_iter, tol=pspec.tol,
                                 extra_inits=extra_inits)
    policy = LogisticPolicy(beta=tuple(beta), basis=pspec.basis,
                            features=None if pspec.features is None else tuple(pspec.features))
    return policy, info


@dataclass(frozen=True)
class PolicyFit:
    """Result of one end-to-end policy learning run."""

    policy: Policy
    value: float
    se: float
    arm_shares: tuple
    table: ScoreTable
    optimizer: dict = field(default_factory=dict)
    wall_time: float = 0.0

    @property
    def treated_fraction(self) -> float:
        return float(self.arm_shares[1]) if len(self.arm_shares) == 2 else float("nan")


def _finish(dataset, table, policy, value, se, info, t0) -> PolicyFit:
    shares = tuple(policy.prob_matrix(dataset.X).mean(axis=0))
    return PolicyFit(policy=policy, value=float(value), se=float(se),
                     arm_shares=shares, table=table, optimizer=dict(info),
                     wall_time=time.perf_counter() - t0)


def learn_mmw(dataset: Dataset, nspec: NuisanceSpec, pspec: PolicySpec,
              seed: int, threads: int = 1) -> PolicyFit:
    """Max-min welfare learning: cross-fit, score, argmax over the class."""
    t0 = time.perf_counter()
    model = fit_crossfit(dataset, nspec, seed=mix_seed(seed, 0x5CF1),
                         need_upper=False, threads=threads)
    table = build_score_table(dataset, model, need_upper=False)
    policy, info = optimize_policy(dataset.X, table.lower, pspec,
                                   seed=mix_seed(seed, 0x0917))
    value, se = estimate_welfare(table, policy)
    return _finish(dataset, table, policy, value, se, info, t0)


def learn_mmi(dataset: Dataset, nspec: NuisanceSpec, pspec: PolicySpec,
              seed: int, threads: int = 1) -> PolicyFit:
    """Max-min improvement learning (binary treatments)."""
    if dataset.n_arms != 2:
        raise NotBinaryError("improvement learning is defined for two arms")
    t0 = time.perf_counter()
    model = fit_crossfit(dataset, nspec, seed=mix_seed(seed, 0x5CF1),
                         need_upper=True, threads=threads)
    table = build_score_table(dataset, model, need_upper=True)
    values = np.column_stack([np.zeros(dataset.n),
                              table.lower[:, 1] - table.upper[:, 0]])
    policy, info = optimize_policy(dataset.X, values, pspec,
                                   seed=mix_seed(seed, 0x0917))
    value, se = estimate_improvement(table, policy)
    return _finish(dataset, table, policy, value, se, info, t0)
