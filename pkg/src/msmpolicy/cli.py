"""Command-line front end.

Subcommands: ``simulate``, ``fit``, ``sweep``, ``bounds``, ``selfcheck``.
Options come from a JSON config file (--config) with flag overrides (flags
win); unknown config keys are rejected. All randomness flows from --seed;
--threads only parallelizes independent tasks and never changes output
bytes. Output files are written atomically (temp file + rename). Exit
codes: 0 ok, 1 config problem, 2 data problem, 3 numeric problem.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import tempfile
from contextlib import contextmanager
from dataclasses import fields

from . import simlab
from .core import Dataset, from_arrays, load_dataset_csv, write_dataset_csv
from .errors import ConfigError, DataError, MsmPolicyError, NumericError
from .nuisance import CrossfitModels, NuisanceSpec
from .optimize import PolicySpec, learn_mmi, learn_mmw
from .scores import plug_in_bounds
from .selfcheck import run_selfcheck
from .svg import render_line_chart

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


@contextmanager
def atomic_output(path: str):
    """Yield a temp path that replaces ``path`` only on success."""
    directory = os.path.dirname(os.path.abspath(path)) or "."
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    os.close(fd)
    try:
        yield tmp
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_text_atomic(path: str, text: str) -> None:
    with atomic_output(path) as tmp:
        with open(tmp, "w", encoding="utf-8") as fh:
            fh.write(text)


_LEARNER_KEYS = {"name", "trees", "depth", "learning_rate", "min_leaf",
                 "neighbors", "clip_kappa"}
_POLICY_KEYS = {"class", "features", "depth", "restarts", "basis", "max_iter"}
_COMMON_KEYS = {"seed", "threads", "out_dir", "smoke"}
_ALLOWED = {
    "simulate": _COMMON_KEYS | {"n", "dgp", "with_truth", "data"},
    "fit": _COMMON_KEYS | {"data", "m", "method", "log_lambda", "learner",
                           "policy", "K", "treatment_cost"},
    "sweep": _COMMON_KEYS | {"n", "reps", "eval_n", "log_lambda_grid", "methods",
                             "learner", "policy", "K", "dgp"},
    "bounds": _COMMON_KEYS | {"data", "m", "log_lambda", "log_lambda_grid",
                              "learner", "K", "treatment_cost"},
    "selfcheck": _COMMON_KEYS,
}
_DGP_KEYS = {f.name for f in fields(simlab.DgpConfig)}


def load_config(args, command: str) -> dict:
    cfg: dict = {}
    if getattr(args, "config", None):
        try:
            with open(args.config, encoding="utf-8") as fh:
                cfg = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        if not isinstance(cfg, dict):
            raise ConfigError("config root must be a JSON object")
        unknown = set(cfg) - _ALLOWED[command]
        if unknown:
            raise ConfigError(f"unknown config keys for {command}: {sorted(unknown)}")
        for sub, allowed in (("learner", _LEARNER_KEYS), ("policy", _POLICY_KEYS),
                             ("dgp", _DGP_KEYS)):
            if sub in cfg:
                if not isinstance(cfg[sub], dict):
                    raise ConfigError(f"config key {sub!r} must be an object")
                bad = set(cfg[sub]) - allowed
                if bad:
                    raise ConfigError(f"unknown {sub} keys: {sorted(bad)}")
    for flag in ("seed", "threads", "out_dir", "smoke", "with_truth"):
        val = getattr(args, flag, None)
        if val not in (None, False):
            cfg[flag] = val
    cfg.setdefault("seed", 0)
    cfg.setdefault("out_dir", "out")
    if "threads" not in cfg:
        cfg["threads"] = int(os.environ.get("MSMPOLICY_THREADS", "1"))
    return cfg


def _nuisance_spec(cfg: dict, lam: float, default_learner: str = "gbt") -> NuisanceSpec:
    lrn = dict(cfg.get("learner", {}))
    kwargs = dict(
        learner=lrn.get("name", default_learner),
        clip_kappa=float(lrn.get("clip_kappa", 0.01)),
        n_folds=int(cfg.get("K", 10)),
        lam=lam,
    )
    if "trees" in lrn:
        kwargs["n_trees"] = int(lrn["trees"])
    if "depth" in lrn:
        kwargs["max_depth"] = int(lrn["depth"])
    if "learning_rate" in lrn:
        kwargs["learning_rate"] = float(lrn["learning_rate"])
    if "min_leaf" in lrn:
        kwargs["min_leaf"] = int(lrn["min_leaf"])
    if "neighbors" in lrn:
        kwargs["n_neighbors"] = int(lrn["neighbors"])
    if kwargs["learner"] == "oracle":
        raise ConfigError("the oracle learner is not available from the CLI")
    return NuisanceSpec(**kwargs)


def _policy_spec(cfg: dict, default_kind: str = "tree") -> PolicySpec:
    pol = dict(cfg.get("policy", {}))
    feats = pol.get("features")
    return PolicySpec(
        kind=pol.get("class", default_kind),
        features=None if feats is None else tuple(int(f) for f in feats),
        depth=int(pol.get("depth", 2)),
        restarts=int(pol.get("restarts", 20)),
        basis=pol.get("basis", "affine"),
        max_iter=int(pol.get("max_iter", 500)),
    )


def _dgp(cfg: dict, n: int | None = None) -> simlab.DgpConfig:
    kwargs = dict(cfg.get("dgp", {}))
    for key in ("mu_x", "theta", "outcome_x", "outcome_x_treat"):
        if key in kwargs:
            kwargs[key] = tuple(kwargs[key])
    if n is not None:
        kwargs["n"] = int(n)
    return simlab.DgpConfig(**kwargs)


def _load_data(cfg: dict) -> Dataset:
    path = cfg.get("data")
    if not path:
        raise ConfigError("config needs a 'data' path")
    ds = load_dataset_csv(path, cfg.get("m"))
    cost = float(cfg.get("treatment_cost", 0.0))
    if cost:
        y = ds.y - cost * (ds.a == 1)
        ds = from_arrays(ds.X, ds.a, y, ds.n_arms, ds.column_names)
    return ds


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_simulate(cfg: dict) -> int:
    dgp = _dgp(cfg, n=cfg.get("n"))
    table = simlab.draw(dgp, int(cfg["seed"]))
    out = cfg.get("data") or os.path.join(cfg["out_dir"], "dataset.csv")
    extra = None
    if cfg.get("with_truth"):
        extra = {"y0": table.y0, "y1": table.y1, "u": table.u}
    with atomic_output(out) as tmp:
        write_dataset_csv(tmp, table.dataset(), extra=extra)
    print(f"wrote {out} ({table.n} rows)")
    return EXIT_OK


def cmd_fit(cfg: dict) -> int:
    method = cfg.get("method", "mmw")
    if method not in ("mmw", "mmi"):
        raise ConfigError(f"method must be 'mmw' or 'mmi', got {method!r}")
    log_lambda = float(cfg.get("log_lambda", 0.0))
    ds = _load_data(cfg)
    nspec = _nuisance_spec(cfg, lam=math.exp(log_lambda))
    pspec = _policy_spec(cfg)
    fitter = learn_mmw if method == "mmw" else learn_mmi
    fit = fitter(ds, nspec, pspec, seed=int(cfg["seed"]), threads=int(cfg["threads"]))
    out_dir = cfg["out_dir"]
    write_text_atomic(os.path.join(out_dir, "policy.json"), fit.policy.to_json() + "\n")
    report = {
        "method": method,
        "log_lambda": log_lambda,
        "reduces_to_aw": log_lambda == 0.0,
        "value": fit.value,
        "se": fit.se,
        "treated_fraction": fit.treated_fraction,
        "arm_shares": list(fit.arm_shares),
        "n": ds.n,
        "n_arms": ds.n_arms,
        "nuisance": {"learner": nspec.learner, "n_folds": nspec.n_folds,
                     "clip_kappa": nspec.clip_kappa},
        "policy_class": pspec.kind,
        "optimizer": fit.optimizer,
        "wall_time_s": fit.wall_time,
    }
    write_text_atomic(os.path.join(out_dir, "report.json"),
                      json.dumps(report, indent=2, sort_keys=True) + "\n")
    with atomic_output(os.path.join(out_dir, "scores.csv")) as tmp:
        fit.table.write_csv(tmp)
    print(f"{method} value {fit.value:.6g} (se {fit.se:.3g}); "
          f"policy -> {os.path.join(out_dir, 'policy.json')}")
    return EXIT_OK


def cmd_sweep(cfg: dict) -> int:
    smoke = bool(cfg.get("smoke"))
    reps = int(cfg.get("reps", 20 if smoke else 100))
    eval_n = int(cfg.get("eval_n", 10000 if smoke else 100000))
    grid = tuple(float(v) for v in cfg.get("log_lambda_grid", simlab.DEFAULT_GRID))
    methods = tuple(cfg.get("methods", simlab.METHODS))
    sc = simlab.SweepConfig(
        dgp=_dgp(cfg), log_lambda_grid=grid, methods=methods, reps=reps,
        n=int(cfg.get("n", 2000)), eval_n=eval_n, seed=int(cfg["seed"]),
        nuisance=_nuisance_spec(cfg, lam=1.0, default_learner="knn"),
        policy=_policy_spec(cfg, default_kind="logistic"),
        threads=int(cfg["threads"]))
    rows = simlab.run_sweep(sc)
    out_dir = cfg["out_dir"]
    csv_path = os.path.join(out_dir, "sweep.csv")
    with atomic_output(csv_path) as tmp:
        with open(tmp, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(simlab.SWEEP_COLUMNS)
            for r in rows:
                writer.writerow([r[c] for c in simlab.SWEEP_COLUMNS])
    summary = simlab.summarize_sweep(rows)
    charts = {
        "treated_frac": ("Average treatment probability", "treated_fraction.svg"),
        "exp_welfare": ("Expected welfare", "expected_welfare.svg"),
        "worst_welfare": ("Worst-case welfare", "worst_welfare.svg"),
        "worst_improvement": ("Worst-case policy improvement", "worst_improvement.svg"),
    }
    lls = sorted({ll for ll, _ in summary})
    for metric, (title, fname) in charts.items():
        series = []
        for method in methods:
            mean = [summary[(ll, method)][metric]["mean"] for ll in lls]
            band = [summary[(ll, method)][metric]["band"] for ll in lls]
            series.append({"name": method, "mean": mean,
                           "lo": [m - b for m, b in zip(mean, band)],
                           "hi": [m + b for m, b in zip(mean, band)]})
        write_text_atomic(os.path.join(out_dir, fname),
                          render_line_chart(title, lls, series,
                                            x_label="log lambda", y_label=metric))
    print(f"wrote {csv_path} ({len(rows)} rows) and {len(charts)} charts")
    return EXIT_OK


def cmd_bounds(cfg: dict) -> int:
    ds = _load_data(cfg)
    if "log_lambda_grid" in cfg:
        grid = [float(v) for v in cfg["log_lambda_grid"]]
    else:
        grid = [float(cfg.get("log_lambda", 0.0))]
    nspec = _nuisance_spec(cfg, lam=1.0)
    models = CrossfitModels(ds, nspec, seed=int(cfg["seed"]),
                            threads=int(cfg["threads"]))
    out_dir = cfg["out_dir"]
    written = []
    for ll in grid:
        model = models.nuisance_for(math.exp(ll), need_upper=True)
        mu_lo, mu_hi = plug_in_bounds(model)
        tau_lo = mu_lo[:, 1] - mu_hi[:, 0]
        tau_hi = mu_hi[:, 1] - mu_lo[:, 0]
        path = os.path.join(out_dir, f"bounds_loglambda_{ll:g}.csv")
        with atomic_output(path) as tmp:
            with open(tmp, "w", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh)
                writer.writerow(["unit", "mu_lo_1", "mu_hi_1", "mu_lo_0", "mu_hi_0",
                                 "tau_lo", "tau_hi"])
                for i in range(ds.n):
                    writer.writerow([i] + [repr(float(v)) for v in
                                           (mu_lo[i, 1], mu_hi[i, 1], mu_lo[i, 0],
                                            mu_hi[i, 0], tau_lo[i], tau_hi[i])])
        written.append(path)
    print("wrote " + ", ".join(written))
    return EXIT_OK


def cmd_selfcheck(cfg: dict, corrupt_sgn: bool = False) -> int:
    report = run_selfcheck(corrupt_sgn=corrupt_sgn)
    text = json.dumps(report, indent=2, sort_keys=True, default=float) + "\n"
    out_dir = cfg.get("out_dir")
    if out_dir:
        write_text_atomic(os.path.join(out_dir, "selfcheck.json"), text)
    sys.stdout.write(text)
    if report["all_pass"]:
        return EXIT_OK
    failing = [s["name"] for s in report["suites"] if not s["passed"]]
    print(f"selfcheck failed: {', '.join(failing)}", file=sys.stderr)
    return EXIT_NUMERIC


def build_parser() -> _Parser:
    parser = _Parser(prog="msmpolicy",
                     description="Confounding-robust policy learning under the "
                                 "marginal sensitivity model")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
            ("simulate", "draw a synthetic confounded dataset"),
            ("fit", "learn a robust policy from a dataset CSV"),
            ("sweep", "sensitivity sweep with repetitions and charts"),
            ("bounds", "export per-unit conditional-mean and CATE bounds"),
            ("selfcheck", "run the built-in verification suites")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--threads", type=int, default=None)
        p.add_argument("--out-dir", dest="out_dir", default=None)
        p.add_argument("--smoke", action="store_true", default=False)
        if name == "simulate":
            p.add_argument("--with-truth", dest="with_truth", action="store_true",
                           default=False)
        if name == "selfcheck":
            p.add_argument("--corrupt-sgn", dest="corrupt_sgn", action="store_true",
                           default=False, help=argparse.SUPPRESS)
    return parser


_HANDLERS = {"simulate": cmd_simulate, "fit": cmd_fit, "sweep": cmd_sweep,
             "bounds": cmd_bounds}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = load_config(args, args.command)
        if args.command == "selfcheck":
            return cmd_selfcheck(cfg, corrupt_sgn=getattr(args, "corrupt_sgn", False))
        return _HANDLERS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, MsmPolicyError, FloatingPointError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
