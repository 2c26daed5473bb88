"""Simulation laboratory: confounded DGP, oracle nuisances, metrics, sweeps.

The data-generating process draws bivariate-normal covariates, a binary
latent confounder whose conditional law makes the true assignment odds
deviate from the nominal ones by exactly the factor Lambda*^{2u-1}, and
linear-in-covariates potential outcomes with a confounder shift. Because
P(U=1 | X, A=a) is constant in x under this construction, the conditional
outcome law given (x, a) is a two-component normal mixture whose
standardized part does not depend on x; every oracle quantity reduces to
one scalar root-find per (arm, level) plus affine algebra, which keeps
100k-point evaluation cheap.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit, ndtr

from .core import Dataset, from_arrays, mix_seed, parallel_map, rng_from
from .errors import ConfigError, NumericError, UnsupportedClassError
from .nuisance import BELOW, NuisanceSpec, OracleBundle
from .optimize import PolicySpec, optimize_policy
from .policies import LogisticPolicy, Policy
from .scores import build_score_table

DEFAULT_GRID = tuple(round(0.1 * k, 10) for k in range(1, 36))
METHODS = ("AW", "MMW", "MMI")


@dataclass(frozen=True)
class DgpConfig:
    """Parameters of the synthetic confounded environment."""

    n: int = 2000
    log_lambda_true: float = 1.5
    mu_x: tuple = (-1.0, 1.0)
    theta: tuple = (0.2, 0.4, 0.1, -0.1, 0.5, -0.5)
    outcome_intercept: float = -0.2
    outcome_treat: float = -0.1
    outcome_x: tuple = (1.0, -1.0)
    outcome_x_treat: tuple = (0.2, 0.4)
    confounder_gain: float = 1.5
    noise_sd: float = 1.0

    @property
    def lambda_true(self) -> float:
        return math.exp(self.log_lambda_true)

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError("n must be positive")
        vals = (self.log_lambda_true, *self.mu_x, *self.theta, self.outcome_intercept,
                self.outcome_treat, *self.outcome_x, *self.outcome_x_treat,
                self.confounder_gain, self.noise_sd)
        if not np.all(np.isfinite(vals)):
            raise ConfigError("DGP parameters must be finite")


@dataclass(frozen=True)
class PotentialTable:
    """Drawn sample with latent confounder and both potential outcomes."""

    X: np.ndarray
    u: np.ndarray
    a: np.ndarray
    y0: np.ndarray
    y1: np.ndarray

    @property
    def y(self) -> np.ndarray:
        return np.where(self.a == 1, self.y1, self.y0)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    def dataset(self) -> Dataset:
        return from_arrays(self.X, self.a, self.y, 2)


def propensity_features(X: np.ndarray) -> np.ndarray:
    """Nonlinear feature map feeding the nominal assignment model."""
    x1, x2 = X[:, 0], X[:, 1]
    return np.column_stack([np.maximum(x1, 0.0), x1 * x2 ** 2 / 10.0,
                            np.sin(x2 ** 2), x1, x2, np.ones_like(x1)])


def nominal_propensity(cfg: DgpConfig, X: np.ndarray) -> np.ndarray:
    return expit(propensity_features(X) @ np.asarray(cfg.theta))


def confounder_prob(cfg: DgpConfig, X: np.ndarray) -> np.ndarray:
    """P(U = 1 | X): the mixture that keeps the nominal propensity exact."""
    lam = cfg.lambda_true
    e = nominal_propensity(cfg, X)
    return lam / (1 + lam) * e + 1 / (1 + lam) * (1 - e)


def confounded_propensity(cfg: DgpConfig, X: np.ndarray, u: np.ndarray) -> np.ndarray:
    """P(A = 1 | X, U): odds shifted by the factor Lambda*^(2u-1)."""
    lam = cfg.lambda_true
    e = nominal_propensity(cfg, X)
    return e / (e + lam ** (1.0 - 2.0 * np.asarray(u, float)) * (1 - e))


def arm_location(cfg: DgpConfig, X: np.ndarray, arm: int) -> np.ndarray:
    """Outcome mean given (x, a) net of the confounder shift."""
    base = cfg.outcome_intercept + X @ np.asarray(cfg.outcome_x)
    if arm == 1:
        base = base + cfg.outcome_treat + X @ np.asarray(cfg.outcome_x_treat)
    return base


def draw(cfg: DgpConfig, seed: int) -> PotentialTable:
    """Draw n i.i.d. units; deterministic per seed."""
    rng = rng_from(seed, 0xD6B)
    X = np.asarray(cfg.mu_x) + rng.standard_normal((cfg.n, 2))
    u = (rng.random(cfg.n) < confounder_prob(cfg, X)).astype(int)
    a = (rng.random(cfg.n) < confounded_propensity(cfg, X, u)).astype(int)
    shift = cfg.confounder_gain * u
    y0 = arm_location(cfg, X, 0) + shift + cfg.noise_sd * rng.standard_normal(cfg.n)
    y1 = arm_location(cfg, X, 1) + shift + cfg.noise_sd * rng.standard_normal(cfg.n)
    return PotentialTable(X=X, u=u, a=a, y0=y0, y1=y1)


# ---------------------------------------------------------------------------
# Closed-form oracle nuisances
# ---------------------------------------------------------------------------

def _mix_weight(cfg: DgpConfig, arm: int) -> float:
    """P(U = 1 | X, A = arm); constant in x under this DGP."""
    lam = cfg.lambda_true
    return lam / (1 + lam) if arm == 1 else 1 / (1 + lam)


def _phi(z):
    return np.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)


def _std_mix_cdf(cfg: DgpConfig, arm: int, c):
    w = _mix_weight(cfg, arm)
    g, s = cfg.confounder_gain, cfg.noise_sd
    return w * ndtr((c - g) / s) + (1 - w) * ndtr(np.asarray(c) / s)


def _std_mix_trunc_below(cfg: DgpConfig, arm: int, c) -> float:
    """E[Z 1{Z < c}] for the standardized outcome residual Z."""
    w = _mix_weight(cfg, arm)
    g, s = cfg.confounder_gain, cfg.noise_sd

    def piece(mu):
        zc = (c - mu) / s
        return mu * ndtr(zc) - s * _phi(zc)

    return w * piece(g) + (1 - w) * piece(0.0)


def _std_mix_quantile(cfg: DgpConfig, arm: int, tau: float) -> float:
    """tau-quantile of the standardized residual, by bracketed bisection."""
    if not 0.0 < tau < 1.0:
        raise ConfigError(f"quantile level must lie in (0, 1), got {tau}")
    g, s = cfg.confounder_gain, cfg.noise_sd
    lo = min(0.0, g) - 13.0 * s
    hi = max(0.0, g) + 13.0 * s
    if not (_std_mix_cdf(cfg, arm, lo) < tau < _std_mix_cdf(cfg, arm, hi)):
        raise NumericError("quantile bracket failed; mixture CDF not spanning tau")
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if _std_mix_cdf(cfg, arm, mid) >= tau:
            hi = mid
        else:
            lo = mid
    return hi


def oracle_bundle(cfg: DgpConfig) -> OracleBundle:
    """Exact nuisance truth as an injectable bundle (binary arms)."""
    zcache: dict[tuple[int, float], float] = {}

    def zq(arm: int, tau: float) -> float:
        key = (arm, tau)
        if key not in zcache:
            zcache[key] = _std_mix_quantile(cfg, arm, tau)
        return zcache[key]

    def propensity(X):
        e = nominal_propensity(cfg, np.asarray(X, float))
        return np.column_stack([1.0 - e, e])

    def quantile(X, arm, tau):
        return arm_location(cfg, np.asarray(X, float), arm) + zq(arm, tau)

    def truncated_mean(X, arm, tau, side):
        m = arm_location(cfg, np.asarray(X, float), arm)
        z = zq(arm, tau)
        w = _mix_weight(cfg, arm)
        cdf = float(_std_mix_cdf(cfg, arm, z))
        t_below = _std_mix_trunc_below(cfg, arm, z)
        ez = w * cfg.confounder_gain
        if side == BELOW:
            return m * cdf + t_below
        return m * (1.0 - cdf) + (ez - t_below)

    return OracleBundle(propensity=propensity, quantile=quantile,
                        truncated_mean=truncated_mean)


def oracle_nuisance_spec(cfg: DgpConfig, lam: float, n_folds: int = 2) -> NuisanceSpec:
    return NuisanceSpec(learner="oracle", oracle=oracle_bundle(cfg),
                        lam=lam, n_folds=n_folds)


@dataclass(frozen=True)
class BoundArrays:
    """Oracle sharp-bound functions evaluated on a covariate block."""

    mu_lo: np.ndarray   # (n, 2)
    mu_hi: np.ndarray   # (n, 2)

    @property
    def tau_lo(self) -> np.ndarray:
        return self.mu_lo[:, 1] - self.mu_hi[:, 0]

    @property
    def tau_hi(self) -> np.ndarray:
        return self.mu_hi[:, 1] - self.mu_lo[:, 0]


def oracle_bounds(cfg: DgpConfig, X: np.ndarray, lam: float) -> BoundArrays:
    """Exact mu bounds at sensitivity lam on every row of X."""
    X = np.asarray(X, dtype=float)
    e1 = nominal_propensity(cfg, X)
    mu_lo = np.empty((X.shape[0], 2))
    mu_hi = np.empty((X.shape[0], 2))
    tau_lo_level = 1.0 / (1.0 + lam)
    tau_hi_level = lam / (1.0 + lam)
    for arm in (0, 1):
        w = _mix_weight(cfg, arm)
        ez = w * cfg.confounder_gain
        m = arm_location(cfg, X, arm)
        e_arm = e1 if arm == 1 else 1.0 - e1
        z_lo = _std_mix_quantile(cfg, arm, tau_lo_level)
        z_hi = _std_mix_quantile(cfg, arm, tau_hi_level)
        t_lo = _std_mix_trunc_below(cfg, arm, z_lo)
        t_hi = _std_mix_trunc_below(cfg, arm, z_hi)
        d_lo = lam * t_lo + (ez - t_lo) / lam
        d_hi = t_hi / lam + lam * (ez - t_hi)
        mu_lo[:, arm] = m + e_arm * ez + (1.0 - e_arm) * d_lo
        mu_hi[:, arm] = m + e_arm * ez + (1.0 - e_arm) * d_hi
    return BoundArrays(mu_lo=mu_lo, mu_hi=mu_hi)


def gauss_hermite_lattice(cfg: DgpConfig, nodes: int = 96):
    """Tensor Gauss-Hermite lattice for E over X ~ N(mu_x, I2)."""
    t, w = np.polynomial.hermite.hermgauss(nodes)
    T1, T2 = np.meshgrid(t, t, indexing="ij")
    W = np.outer(w, w).ravel() / math.pi
    X = np.asarray(cfg.mu_x) + math.sqrt(2.0) * np.column_stack([T1.ravel(), T2.ravel()])
    return X, W


def true_worst_welfare(cfg: DgpConfig, lam: float, treated_prob_fn, nodes: int = 96) -> float:
    """Quadrature value of the worst-case welfare of a policy."""
    X, W = gauss_hermite_lattice(cfg, nodes)
    b = oracle_bounds(cfg, X, lam)
    p1 = np.asarray(treated_prob_fn(X), dtype=float)
    return float(np.sum(W * (b.mu_lo[:, 1] * p1 + b.mu_lo[:, 0] * (1.0 - p1))))


def true_worst_improvement(cfg: DgpConfig, lam: float, treated_prob_fn, nodes: int = 96) -> float:
    X, W = gauss_hermite_lattice(cfg, nodes)
    b = oracle_bounds(cfg, X, lam)
    p1 = np.asarray(treated_prob_fn(X), dtype=float)
    return float(np.sum(W * b.tau_lo * p1))


# ---------------------------------------------------------------------------
# Evaluation and regret
# ---------------------------------------------------------------------------

def evaluate_policy(policy: Policy, sample: PotentialTable, cfg: DgpConfig,
                    lam: float, bounds: BoundArrays | None = None) -> dict:
    """Out-of-sample metrics of a (binary) policy on a fresh drawn sample."""
    if bounds is None:
        bounds = oracle_bounds(cfg, sample.X, lam)
    p1 = policy.treated_probability(sample.X)
    return {
        "treated_frac": float(p1.mean()),
        "exp_welfare": float((p1 * sample.y1 + (1 - p1) * sample.y0).mean()),
        "worst_welfare": float((bounds.mu_lo[:, 1] * p1
                                + bounds.mu_lo[:, 0] * (1 - p1)).mean()),
        "worst_improvement": float((bounds.tau_lo * p1).mean()),
    }


def _criterion_values(policy: Policy, X, bounds: BoundArrays) -> tuple[float, float]:
    p1 = policy.treated_probability(X)
    w_val = float((bounds.mu_lo[:, 1] * p1 + bounds.mu_lo[:, 0] * (1 - p1)).mean())
    d_val = float((bounds.tau_lo * p1).mean())
    return w_val, d_val


def class_supremum(pspec: PolicySpec, X, bounds: BoundArrays, criterion: str,
                   seed: int = 0, extra_inits=None):
    """Best-in-class criterion value on an oracle-scored sample.

    Exact for the exhaustively optimizable classes (quadrant, tree);
    a flagged lower bound via multi-restart ascent for logistic. Returns
    (value, exact, maximizing policy).
    """
    X = np.asarray(X, dtype=float)
    if criterion == "welfare":
        values = bounds.mu_lo
    elif criterion == "improvement":
        values = np.column_stack([np.zeros(X.shape[0]), bounds.tau_lo])
    else:
        raise ConfigError(f"unknown criterion {criterion!r}")
    if pspec.kind not in ("quadrant", "tree", "constant", "logistic"):
        raise UnsupportedClassError(f"no supremum routine for class {pspec.kind!r}")
    policy, _ = optimize_policy(X, values, pspec, seed=seed, extra_inits=extra_inits)
    exact = pspec.kind != "logistic"
    w_val, d_val = _criterion_values(policy, X, bounds)
    return (w_val if criterion == "welfare" else d_val), exact, policy


def estimate_regret(policy: Policy, pspec: PolicySpec, sample: PotentialTable,
                    cfg: DgpConfig, lam: float, seed: int = 0) -> tuple[float, float]:
    """(CRW, CRI) regret of a policy against its class on a fresh sample.

    Both are best-in-class value minus the policy's value, computed on the
    same oracle-scored sample, clamped at zero (exact classes can only go
    negative by float noise; the logistic supremum is itself a lower bound).
    """
    bounds = oracle_bounds(cfg, sample.X, lam)
    sup_w, _, _ = class_supremum(pspec, sample.X, bounds, "welfare", seed=seed)
    sup_d, _, _ = class_supremum(pspec, sample.X, bounds, "improvement", seed=seed)
    w_val, d_val = _criterion_values(policy, sample.X, bounds)
    return max(0.0, sup_w - w_val), max(0.0, sup_d - d_val)


# ---------------------------------------------------------------------------
# Sweep runner
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepConfig:
    dgp: DgpConfig = field(default_factory=DgpConfig)
    log_lambda_grid: tuple = DEFAULT_GRID
    methods: tuple = METHODS
    reps: int = 100
    n: int = 2000
    eval_n: int = 100000
    seed: int = 0
    nuisance: NuisanceSpec = field(default_factory=lambda: NuisanceSpec(learner="knn"))
    policy: PolicySpec = field(default_factory=lambda: PolicySpec(
        kind="logistic", restarts=4, max_iter=150, tol=1e-4))
    threads: int = 1
    regret_cap: int = 4000

    def __post_init__(self):
        if not self.log_lambda_grid:
            raise ConfigError("sensitivity grid must be nonempty")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ConfigError(f"unknown methods {bad}; choose from {METHODS}")


SWEEP_COLUMNS = ("log_lambda", "rep", "method", "treated_frac", "exp_welfare",
                 "worst_welfare", "worst_improvement", "crw_regret", "cri_regret")


def run_sweep(sc: SweepConfig) -> list[dict]:
    """Learn and evaluate AW/MMW/MMI across the sensitivity grid.

    One fresh evaluation sample (size eval_n) is drawn per call and shared
    by all repetitions; per-rep training draws and learner seeds come from
    the master seed through the documented mixing stream. AW is the
    lam=1 pipeline, evaluated under every analysis lam on the grid.
    """
    cfg = replace(sc.dgp, n=sc.eval_n)
    eval_pt = draw(cfg, mix_seed(sc.seed, 0xEEE))
    lams = [math.exp(ll) for ll in sc.log_lambda_grid]
    per_lam = []
    cap = min(sc.regret_cap, sc.eval_n)
    exhaustive = sc.policy.kind in ("quadrant", "tree", "constant")
    reg_X = eval_pt.X[:cap] if exhaustive else eval_pt.X
    warm_pspec = replace(sc.policy, restarts=max(2, sc.policy.restarts // 3))
    sup_warm: dict[str, np.ndarray] = {}
    for i, lam in enumerate(lams):
        bounds = oracle_bounds(sc.dgp, eval_pt.X, lam)
        reg_bounds = BoundArrays(bounds.mu_lo[:cap], bounds.mu_hi[:cap]) if exhaustive else bounds
        sups = {}
        for crit, salt in (("welfare", 0x5F), ("improvement", 0x5D)):
            pspec_i = sc.policy if crit not in sup_warm else warm_pspec
            val, _, pol = class_supremum(pspec_i, reg_X, reg_bounds, crit,
                                         seed=mix_seed(sc.seed, salt, i),
                                         extra_inits=sup_warm.get(crit))
            if isinstance(pol, LogisticPolicy):
                sup_warm[crit] = np.asarray(pol.beta)[None, :]
            sups[crit] = val
        per_lam.append((lam, bounds, reg_bounds, sups["welfare"], sups["improvement"]))

    def one_rep(rep: int) -> list[dict]:
        from .nuisance import CrossfitModels

        train_cfg = replace(sc.dgp, n=sc.n)
        pt = draw(train_cfg, mix_seed(sc.seed, 0x7E9, rep))
        ds = pt.dataset()
        models = CrossfitModels(ds, sc.nuisance, mix_seed(sc.seed, 0xCF, rep))
        rows: list[dict] = []
        warm: dict[str, np.ndarray] = {}

        def learn(lam: float, criterion: str, method: str) -> Policy:
            need_upper = criterion == "improvement"
            table = build_score_table(ds, models.nuisance_for(lam, need_upper=need_upper),
                                      need_upper=need_upper)
            if criterion == "welfare":
                values = table.lower
            else:
                values = np.column_stack([np.zeros(ds.n),
                                          table.lower[:, 1] - table.upper[:, 0]])
            extra = None
            pspec = sc.policy
            if sc.policy.kind == "logistic" and method in warm:
                extra = warm[method][None, :]
                pspec = warm_pspec
            policy, _ = optimize_policy(ds.X, values, pspec,
                                        seed=mix_seed(sc.seed, 0x01, rep), extra_inits=extra)
            if isinstance(policy, LogisticPolicy):
                warm[method] = np.asarray(policy.beta)
            return policy

        aw_policy = learn(1.0, "welfare", "AW") if "AW" in sc.methods else None
        for j, (lam, bounds, reg_bounds, sup_w, sup_d) in enumerate(per_lam):
            policies = {}
            if aw_policy is not None:
                policies["AW"] = aw_policy
            if "MMW" in sc.methods:
                policies["MMW"] = learn(lam, "welfare", "MMW")
            if "MMI" in sc.methods:
                policies["MMI"] = learn(lam, "improvement", "MMI")
            for method in sc.methods:
                policy = policies[method]
                metrics = evaluate_policy(policy, eval_pt, sc.dgp, lam, bounds=bounds)
                w_val, d_val = _criterion_values(
                    policy, reg_X, reg_bounds)
                rows.append({
                    "log_lambda": sc.log_lambda_grid[j], "rep": rep, "method": method,
                    **metrics,
                    "crw_regret": max(0.0, sup_w - w_val),
                    "cri_regret": max(0.0, sup_d - d_val),
                })
        return rows

    nested = parallel_map(one_rep, range(sc.reps), sc.threads)
    return [row for rows in nested for row in rows]


def summarize_sweep(rows: list[dict]) -> dict:
    """Mean and 1.96*SD bands per (log_lambda, method) for every metric."""
    metrics = SWEEP_COLUMNS[3:]
    out: dict = {}
    keys = sorted({(r["log_lambda"], r["method"]) for r in rows})
    for ll, method in keys:
        vals = {m: [] for m in metrics}
        for r in rows:
            if r["log_lambda"] == ll and r["method"] == method:
                for m in metrics:
                    vals[m].append(r[m])
        entry = {}
        for m in metrics:
            arr = np.asarray(vals[m])
            sd = float(arr.std(ddof=1)) if len(arr) > 1 else 0.0
            entry[m] = {"mean": float(arr.mean()), "band": 1.96 * sd}
        out[(ll, method)] = entry
    return out


# ---------------------------------------------------------------------------
# Bundled synthetic stand-in datasets
# ---------------------------------------------------------------------------

def make_jtpa_like(n: int = 2000, seed: int = 0) -> Dataset:
    """Job-training-style binary dataset: x1 = education years, x2 = prior
    earnings, outcome = post-program earnings.

    Participation is confounded by a latent motivation factor that also
    raises earnings, echoing self-selection into training.
    """
    rng = rng_from(seed, 0x17A)
    edu = np.clip(np.round(rng.normal(11.5, 2.0, n)), 7, 18)
    prior = np.where(rng.random(n) < 0.25, 0.0,
                     np.minimum(np.exp(rng.normal(8.6, 1.1, n)), 60000.0))
    motivation = rng.standard_normal(n)
    p = expit(-0.4 + 0.15 * (edu - 11.5) - prior / 80000.0 + 0.9 * motivation)
    a = (rng.random(n) < p).astype(int)
    effect = 900.0 + 350.0 * (edu - 11.5) - 0.05 * (prior - 9000.0)
    y = (14000.0 + 850.0 * (edu - 11.5) + 0.35 * prior + 2600.0 * motivation
         + a * effect + rng.normal(0.0, 5500.0, n))
    return from_arrays(np.column_stack([edu, prior]), a, y, 2)


def make_headstart_like(n: int = 1200, seed: int = 0) -> Dataset:
    """Preschool-style three-arm dataset (arm 0 none / 1 program / 2 other).

    Covariates: x1 income percentile, x2 maternal aptitude percentile,
    x3 birth weight, x4 preschool-entry weight, x5 maternal education,
    x6 sibling count; outcome is a test score. Enrollment is confounded by
    a latent family-investment factor.
    """
    rng = rng_from(seed, 0x45AD)
    income = rng.uniform(0.0, 100.0, n)
    afqt = np.clip(rng.normal(40.0 + 0.3 * income, 18.0), 1.0, 99.0)
    birth_wt = rng.normal(3300.0, 520.0, n)
    entry_wt = rng.normal(16500.0, 2100.0, n)
    mother_edu = np.clip(np.round(rng.normal(11.5 + income / 40.0, 1.8)), 6, 20)
    siblings = rng.poisson(1.6, n).astype(float)
    invest = rng.standard_normal(n)
    l1 = 0.4 - 0.035 * income + 0.5 * invest
    l2 = -1.0 + 0.028 * income + 0.012 * afqt + 0.4 * invest
    logits = np.column_stack([np.zeros(n), l1, l2])
    probs = np.exp(logits - logits.max(axis=1, keepdims=True))
    probs /= probs.sum(axis=1, keepdims=True)
    cum = np.cumsum(probs, axis=1)
    a = (rng.random(n)[:, None] > cum).sum(axis=1)
    eff1 = 5.0 - 0.06 * income + 0.002 * (3300.0 - birth_wt)
    eff2 = 2.0 + 0.02 * afqt - 0.01 * income
    y = (80.0 + 0.12 * income + 0.2 * afqt + 0.0015 * (birth_wt - 3300.0)
         + 0.5 * mother_edu - 0.6 * siblings + 4.0 * invest
         + (a == 1) * eff1 + (a == 2) * eff2 + rng.normal(0.0, 7.0, n))
    X = np.column_stack([income, afqt, birth_wt, entry_wt, mother_edu, siblings])
    return from_arrays(X, a, y, 3)
