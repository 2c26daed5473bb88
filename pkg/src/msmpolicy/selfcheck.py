"""Built-in verification suites behind the ``selfcheck`` CLI command.

Four suites, each with an independent route to the quantity being checked:

* bounds_vs_lp      - closed-form sharp bounds against the exact sort-based
                      linear-program optimum on discretized continuous laws
                      (includes the analytic Uniform[0,1] anchor).
* lam1_reduction    - at sensitivity 1 the machinery must collapse to the
                      unconfounded case: equal quantiles, scores equal to
                      the AIPW score, equal learned MMW/MMI welfare.
* moment_identity   - on an exactly enumerated finite population with
                      registered nuisances, the mean of the doubly robust
                      score equals the directly summed bound average.
* orthogonality     - Gateaux probes: the orthogonalized score's deviation
                      under nuisance perturbations decays quadratically
                      (log-log slope >= 1.9) or vanishes identically; the
                      plug-in score decays only linearly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri

from .bounds import FiniteLaw, closed_form_bound, lp_sharp_bound, sign_at_least
from .core import from_arrays, make_folds, rng_from
from .errors import ConfigError
from .nuisance import NuisanceModel, NuisanceSpec, fit_crossfit
from .optimize import PolicySpec, optimize_policy
from .policies import ConstantPolicy, QuadrantPolicy
from .scores import build_score_table, estimate_welfare
from . import simlab


# ---------------------------------------------------------------------------
# Discretized continuous laws for the bounds oracle
# ---------------------------------------------------------------------------

def discretize_ppf(ppf, n_atoms: int, propensity: float) -> FiniteLaw:
    """Equal-weight atoms at mid-quantiles of a continuous distribution."""
    grid = (np.arange(n_atoms) + 0.5) / n_atoms
    y = np.asarray([ppf(g) for g in grid], dtype=float)
    return FiniteLaw.from_samples(y, propensity)


def uniform_law(n_atoms: int = 2000, propensity: float = 0.5,
                lo: float = 0.0, hi: float = 1.0) -> FiniteLaw:
    return discretize_ppf(lambda g: lo + (hi - lo) * g, n_atoms, propensity)


def normal_law(mean: float, sd: float, n_atoms: int = 2000,
               propensity: float = 0.5) -> FiniteLaw:
    return discretize_ppf(lambda g: mean + sd * ndtri(g), n_atoms, propensity)


def mixture_law(means, sds, weights, n_atoms: int = 2000,
                propensity: float = 0.5) -> FiniteLaw:
    """Normal mixture discretized by root-finding its CDF at mid-quantiles."""
    means = np.asarray(means, float)
    sds = np.asarray(sds, float)
    weights = np.asarray(weights, float)
    weights = weights / weights.sum()

    def cdf(c):
        return float(np.sum(weights * ndtr((c - means) / sds)))

    lo = float(np.min(means - 14 * sds))
    hi = float(np.max(means + 14 * sds))

    def ppf(g):
        a, b = lo, hi
        for _ in range(80):
            mid = 0.5 * (a + b)
            if cdf(mid) >= g:
                b = mid
            else:
                a = mid
        return b

    return discretize_ppf(ppf, n_atoms, propensity)


def random_laws(count: int, seed: int, n_atoms: int = 2000):
    """A reproducible batch of normal / uniform / two-component mixture laws."""
    rng = rng_from(seed, 0x1A35)
    laws = []
    for i in range(count):
        e = float(rng.uniform(0.4, 0.6))
        kind = i % 3
        if kind == 0:
            laws.append(normal_law(float(rng.uniform(-1, 1)), float(rng.uniform(0.5, 1.2)),
                                   n_atoms, e))
        elif kind == 1:
            a = float(rng.uniform(-1.5, 0.0))
            laws.append(uniform_law(n_atoms, e, a, a + float(rng.uniform(0.8, 2.5))))
        else:
            mu = rng.uniform(-1.0, 1.0, 2)
            laws.append(mixture_law(mu, rng.uniform(0.6, 1.0, 2),
                                    rng.uniform(0.3, 0.7, 2), n_atoms, e))
    return laws


# ---------------------------------------------------------------------------
# Exactly enumerated atomic population (sensitivity fixed at 2)
# ---------------------------------------------------------------------------

ATOMIC_LAM = 2.0


@dataclass(frozen=True)
class AtomicCell:
    x: tuple
    treated: int             # units per outcome atom, arm 1
    control: int             # units per outcome atom, arm 0
    atoms: tuple             # atoms[arm] = three increasing outcomes


ATOMIC_CELLS = (
    AtomicCell(x=(0.0, 0.0), treated=1, control=1,
               atoms=((0.5, 1.0, 2.0), (1.0, 2.0, 4.0))),
    AtomicCell(x=(1.0, -1.0), treated=3, control=1,
               atoms=((0.0, 0.25, 0.75), (-1.0, 0.5, 1.0))),
    AtomicCell(x=(-2.0, 0.5), treated=1, control=3,
               atoms=((1.0, 1.5, 2.5), (2.0, 3.0, 5.0))),
)


def atomic_population():
    """Enumerated dataset + registered exact nuisances for sensitivity 2.

    Each (cell, arm) outcome law has three equally likely atoms, so the
    level-1/3 quantile with P(Y < q) = 1/3 exactly is the middle atom and
    the level-2/3 one is the top atom; arm counts realize the propensity
    exactly, making the score's correction terms average to zero cell by
    cell.
    """
    rows_x, rows_a, rows_y = [], [], []
    n_units = []
    for cell in ATOMIC_CELLS:
        count = 0
        for arm, mult in ((0, cell.control), (1, cell.treated)):
            for y in cell.atoms[arm]:
                for _ in range(mult):
                    rows_x.append(cell.x)
                    rows_a.append(arm)
                    rows_y.append(y)
                    count += 1
        n_units.append(count)
    ds = from_arrays(np.asarray(rows_x), rows_a, rows_y, 2)

    n = ds.n
    e1 = np.empty(n)
    q_lo = np.empty((n, 2))
    q_hi = np.empty((n, 2))
    mb_lo = np.empty((n, 2))
    ma_lo = np.empty((n, 2))
    mb_hi = np.empty((n, 2))
    ma_hi = np.empty((n, 2))
    start = 0
    for cell, count in zip(ATOMIC_CELLS, n_units):
        sl = slice(start, start + count)
        e1[sl] = 3 * cell.treated / (3 * cell.treated + 3 * cell.control)
        for arm in (0, 1):
            lo, mid, hi = cell.atoms[arm]
            q_lo[sl, arm] = mid          # P(Y < mid) = 1/3 = 1/(1+lam)
            q_hi[sl, arm] = hi           # P(Y < hi) = 2/3 = lam/(1+lam)
            mb_lo[sl, arm] = lo / 3.0
            ma_lo[sl, arm] = hi / 3.0    # strict inequalities drop the atom at q
            mb_hi[sl, arm] = (lo + mid) / 3.0
            ma_hi[sl, arm] = 0.0
        start += count
    prop = np.column_stack([1.0 - e1, e1])
    model = NuisanceModel(
        folds=make_folds(n, 2, 0), lam=ATOMIC_LAM, clip_kappa=0.01,
        provenance="oracle", propensity=prop,
        q_low=q_lo, mean_below_low=mb_lo, mean_above_low=ma_lo,
        q_high=q_hi, mean_below_high=mb_hi, mean_above_high=ma_hi)
    return ds, model


def atomic_direct_bound_average(ds, model, probs: np.ndarray) -> float:
    """Direct-summation side of the moment identity.

    Cell-wise empirical average of the closed-form bound integrand,
    policy-weighted; no correction terms involved.
    """
    from .bounds import bound_integrand

    total = 0.0
    X = ds.X
    for cell in ATOMIC_CELLS:
        mask = np.all(X == np.asarray(cell.x), axis=1)
        share = mask.mean()
        cell_val = 0.0
        for t in (0, 1):
            vals = bound_integrand(ds.y[mask], ds.a[mask], t,
                                   model.propensity[mask, t],
                                   model.q_low[mask, t], model.lam, "lower")
            cell_val += float(np.mean(vals * probs[mask, t]))
        total += share * cell_val
    return total


# ---------------------------------------------------------------------------
# Finite-X population with conditionally normal outcomes (Gateaux probes)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NormalCells:
    """Discrete covariate cells; Y | x, a ~ Normal(mean[x, a], sd)."""

    X: np.ndarray
    px: np.ndarray
    e1: np.ndarray
    mean: np.ndarray   # (k, 2)
    sd: float = 1.0

    @property
    def k(self) -> int:
        return self.X.shape[0]


def normal_population() -> NormalCells:
    return NormalCells(
        X=np.array([[0.0, 0.0], [1.0, -1.0], [-1.0, 2.0]]),
        px=np.array([0.3, 0.45, 0.25]),
        e1=np.array([0.5, 0.7, 0.35]),
        mean=np.array([[0.2, 0.9], [-0.3, 0.1], [0.6, -0.4]]),
        sd=1.0)


def _trunc_below(mean, sd, c):
    z = (np.asarray(c, float) - mean) / sd
    pdf = np.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)
    return mean * ndtr(z) - sd * pdf


def true_eta(pop: NormalCells, lam: float) -> dict:
    """Exact nuisance values on the cells at sensitivity lam."""
    eta = {"e1": pop.e1.copy()}
    for tag, tau in (("lo", 1 / (1 + lam)), ("hi", lam / (1 + lam))):
        q = pop.mean + pop.sd * ndtri(tau)
        tb = _trunc_below(pop.mean, pop.sd, q)
        eta[f"q_{tag}"] = q
        eta[f"rho_b_{tag}"] = tb
        eta[f"rho_a_{tag}"] = pop.mean - tb
    return eta


def _exact_phi_mean(pop: NormalCells, eta: dict, lam: float, t: int, side: str,
                    plug_in: bool = False) -> np.ndarray:
    """E[phi_t | x] per cell under the true law with nuisances ``eta``."""
    e_true = pop.e1 if t == 1 else 1.0 - pop.e1
    e_til = eta["e1"] if t == 1 else 1.0 - eta["e1"]
    m = pop.mean[:, t]
    tag = "lo" if side == "lower" else "hi"
    q = eta[f"q_{tag}"][:, t]
    rb = eta[f"rho_b_{tag}"][:, t]
    ra = eta[f"rho_a_{tag}"][:, t]
    tb = _trunc_below(m, pop.sd, q)
    cdf = ndtr((q - m) / pop.sd)
    ct = (1.0 - e_til) / e_til
    if side == "lower":
        term1 = e_true * (m + ct * (lam * tb + (m - tb) / lam))
        term2 = q * ct * (lam - 1.0 / lam) * e_true * (1.0 / (1.0 + lam) - cdf)
        term3 = -(lam * rb + ra / lam) / e_til * (e_true - e_til)
    else:
        term1 = e_true * (m + ct * (tb / lam + lam * (m - tb)))
        term2 = -q * ct * (lam - 1.0 / lam) * e_true * (lam / (1.0 + lam) - cdf)
        term3 = -(rb / lam + lam * ra) / e_til * (e_true - e_til)
    return term1 if plug_in else term1 + term2 + term3


def exact_score_mean(pop: NormalCells, eta: dict, lam: float, pi1: np.ndarray,
                     criterion: str, plug_in: bool = False) -> float:
    """Population mean of the policy-weighted score, in closed form."""
    pi1 = np.asarray(pi1, float)
    if criterion == "welfare":
        phi1 = _exact_phi_mean(pop, eta, lam, 1, "lower", plug_in)
        phi0 = _exact_phi_mean(pop, eta, lam, 0, "lower", plug_in)
        cell = phi1 * pi1 + phi0 * (1.0 - pi1)
    elif criterion == "improvement":
        phi1 = _exact_phi_mean(pop, eta, lam, 1, "lower", plug_in)
        phi0 = _exact_phi_mean(pop, eta, lam, 0, "upper", plug_in)
        cell = pi1 * (phi1 - phi0)
    else:
        raise ConfigError(f"unknown criterion {criterion!r}")
    return float(np.sum(pop.px * cell))


def true_criterion(pop: NormalCells, lam: float, pi1: np.ndarray, criterion: str) -> float:
    """The criterion via the bound formulas directly (no scores)."""
    pi1 = np.asarray(pi1, float)
    mu = {}
    for t in (0, 1):
        e_t = pop.e1 if t == 1 else 1.0 - pop.e1
        m = pop.mean[:, t]
        for tag, tau in (("lo", 1 / (1 + lam)), ("hi", lam / (1 + lam))):
            q = m + pop.sd * ndtri(tau)
            tb = _trunc_below(m, pop.sd, q)
            if tag == "lo":
                mu[(t, "lo")] = e_t * m + (1 - e_t) * (lam * tb + (m - tb) / lam)
            else:
                mu[(t, "hi")] = e_t * m + (1 - e_t) * (tb / lam + lam * (m - tb))
    if criterion == "welfare":
        cell = mu[(1, "lo")] * pi1 + mu[(0, "lo")] * (1 - pi1)
    else:
        cell = pi1 * (mu[(1, "lo")] - mu[(0, "hi")])
    return float(np.sum(pop.px * cell))


PROBE_RADII = (0.1, 0.05, 0.025)

_DIRECTIONS = {
    "e1": np.array([0.2, -0.15, 0.1]),
    "q_lo": np.array([[0.8, 0.4], [-0.5, 0.7], [0.6, -0.9]]),
    "rho_b_lo": np.array([[0.5, -0.3], [0.4, 0.6], [-0.7, 0.2]]),
    "rho_a_lo": np.array([[-0.4, 0.5], [0.3, -0.6], [0.8, 0.3]]),
    "q_hi": np.array([[-0.6, 0.5], [0.7, -0.4], [0.3, 0.8]]),
    "rho_b_hi": np.array([[0.3, 0.7], [-0.5, 0.4], [0.6, -0.2]]),
    "rho_a_hi": np.array([[0.6, -0.5], [0.2, 0.8], [-0.3, 0.4]]),
}

ZERO_DEVIATION = 1e-13


def gateaux_probe(pop: NormalCells, lam: float, criterion: str,
                  plug_in: bool = False, pi1=None) -> dict:
    """log-log decay slopes of |E psi(eta + r*d) - E psi(eta)| per direction.

    Directions whose deviations all vanish below ``ZERO_DEVIATION`` are
    reported with slope = inf ("exactly orthogonal").
    """
    if pi1 is None:
        pi1 = np.array([0.8, 0.4, 0.6])
    eta0 = true_eta(pop, lam)
    base = exact_score_mean(pop, eta0, lam, pi1, criterion, plug_in)
    names = ["e1", "q_lo", "rho_b_lo", "rho_a_lo"]
    if criterion == "improvement":
        names += ["q_hi", "rho_b_hi", "rho_a_hi"]
    out = {}
    for name in names:
        devs = []
        for r in PROBE_RADII:
            eta = dict(eta0)
            eta[name] = eta0[name] + r * _DIRECTIONS[name]
            devs.append(abs(exact_score_mean(pop, eta, lam, pi1, criterion, plug_in) - base))
        if max(devs) < ZERO_DEVIATION:
            slope = math.inf
        else:
            slope = math.log(devs[0] / max(devs[-1], 1e-300)) \
                / math.log(PROBE_RADII[0] / PROBE_RADII[-1])
        out[name] = {"slope": slope, "deviations": devs}
    return out


# ---------------------------------------------------------------------------
# Suites
# ---------------------------------------------------------------------------

def check_bounds_vs_lp(corrupt_sgn: bool = False, n_laws: int = 6,
                       tol: float = 2e-3) -> dict:
    sgn = (lambda t: -sign_at_least(t)) if corrupt_sgn else sign_at_least
    lams = (1.0, 1.5, 2.0, 4.482)
    worst = 0.0
    anchor = uniform_law()
    anchor_dev = max(abs(closed_form_bound(anchor, 2.0, "upper", sgn=sgn) - 7.0 / 12.0),
                     abs(closed_form_bound(anchor, 2.0, "lower", sgn=sgn) - 5.0 / 12.0))
    worst = anchor_dev
    for law in random_laws(n_laws, seed=20, n_atoms=2000):
        for lam in lams:
            for side, direction in (("lower", "min"), ("upper", "max")):
                dev = abs(closed_form_bound(law, lam, side, sgn=sgn)
                          - lp_sharp_bound(law, lam, direction))
                worst = max(worst, dev)
    return {"name": "bounds_vs_lp", "passed": bool(worst <= tol),
            "max_deviation": worst, "tolerance": tol}


def check_lam1_reduction(tol: float = 1e-12) -> dict:
    cfg = simlab.DgpConfig(n=120)
    ds = simlab.draw(cfg, seed=11).dataset()
    spec = NuisanceSpec(learner="knn", lam=1.0, n_folds=4)
    model = fit_crossfit(ds, spec, seed=3, need_upper=True)
    dev_q = float(np.max(np.abs(model.q_high - model.q_low)))
    table = build_score_table(ds, model, need_upper=True)
    dev_scores = float(np.max(np.abs(table.upper - table.lower)))
    m_hat = model.mean_below_low + model.mean_above_low
    ind = (ds.a[:, None] == np.arange(2)[None, :]).astype(float)
    aipw = m_hat + ind * (ds.y[:, None] - m_hat) / model.propensity
    dev_aipw = float(np.max(np.abs(table.lower - aipw)))
    pspec = PolicySpec(kind="tree", depth=1)
    mmw_policy, _ = optimize_policy(ds.X, table.lower, pspec, seed=0)
    gains = table.lower[:, 1] - table.upper[:, 0]
    mmi_policy, _ = optimize_policy(
        ds.X, np.column_stack([np.zeros(ds.n), gains]), pspec, seed=0)
    dev_w = abs(estimate_welfare(table, mmw_policy)[0]
                - estimate_welfare(table, mmi_policy)[0])
    worst = max(dev_q, dev_scores, dev_aipw, dev_w)
    return {"name": "lam1_reduction", "passed": bool(worst <= tol),
            "max_deviation": worst, "tolerance": tol,
            "pieces": {"quantiles": dev_q, "scores": dev_scores,
                       "aipw": dev_aipw, "learned_welfare": dev_w}}


def check_moment_identity(tol: float = 1e-12) -> dict:
    ds, model = atomic_population()
    table = build_score_table(ds, model, need_upper=True)
    policies = [ConstantPolicy(arm=1), ConstantPolicy(arm=0),
                QuadrantPolicy(i=0, j=1, s1=1, s2=-1, t1=-0.5, t2=0.2)]
    worst = 0.0
    for pol in policies:
        probs = pol.prob_matrix(ds.X)
        lhs = estimate_welfare(table, pol)[0]
        rhs = atomic_direct_bound_average(ds, model, probs)
        worst = max(worst, abs(lhs - rhs))
    pop = normal_population()
    pi1 = np.array([0.8, 0.4, 0.6])
    for lam in (1.5, 2.0, 4.482):
        eta = true_eta(pop, lam)
        for criterion in ("welfare", "improvement"):
            dev = abs(exact_score_mean(pop, eta, lam, pi1, criterion)
                      - true_criterion(pop, lam, pi1, criterion))
            worst = max(worst, dev)
    return {"name": "moment_identity", "passed": bool(worst <= tol),
            "max_deviation": worst, "tolerance": tol}


def check_orthogonality(lam: float = 2.0) -> dict:
    pop = normal_population()
    details = {}
    ok = True
    for criterion in ("welfare", "improvement"):
        probes = gateaux_probe(pop, lam, criterion, plug_in=False)
        for name, rec in probes.items():
            passed = rec["slope"] >= 1.9
            ok &= passed
            details[f"{criterion}/{name}"] = {"slope": rec["slope"], "passed": passed}
        plug = gateaux_probe(pop, lam, criterion, plug_in=True)
        for name in ("e1", "q_lo") if criterion == "welfare" else ("e1", "q_lo", "q_hi"):
            passed = plug[name]["slope"] <= 1.2
            ok &= passed
            details[f"{criterion}/plugin-{name}"] = {"slope": plug[name]["slope"],
                                                     "passed": passed}
    return {"name": "orthogonality", "passed": bool(ok), "slopes": details}


def run_selfcheck(corrupt_sgn: bool = False) -> dict:
    suites = [check_bounds_vs_lp(corrupt_sgn=corrupt_sgn),
              check_lam1_reduction(),
              check_moment_identity(),
              check_orthogonality()]
    return {"suites": suites, "all_pass": bool(all(s["passed"] for s in suites))}
