"""Treatment policies: decision rules mapping covariates to arm probabilities.

Four kinds: constant, quadrant (two signed thresholds), depth<=2 decision
tree, and logistic. Deterministic kinds return one-hot vectors. Every kind
serializes to a JSON object ``{"kind": ..., "m": ..., "params": {...}}``;
quadrant thresholds may be ``Infinity``/``-Infinity`` tokens (the empty /
full region sentinels).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import ConfigError, DataError, DimensionMismatchError


def _as_matrix(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    return X


class Policy:
    """Common interface; subclasses implement ``prob_matrix``."""

    kind: str = ""
    m: int = 2

    def prob_matrix(self, X) -> np.ndarray:
        """Assignment probabilities, shape (n, m), rows on the simplex."""
        raise NotImplementedError

    def assign_probabilities(self, x) -> np.ndarray:
        """Length-m probability vector for a single covariate vector."""
        return self.prob_matrix(np.asarray(x, dtype=float)[None, :])[0]

    def treated_probability(self, X) -> np.ndarray:
        """P(arm 1 | x) for each row; the binary pi(x)."""
        return self.prob_matrix(X)[:, 1]

    def params_dict(self) -> dict:
        raise NotImplementedError

    def to_json(self) -> str:
        return json.dumps({"kind": self.kind, "m": self.m, "params": self.params_dict()},
                          sort_keys=True)


@dataclass(frozen=True)
class ConstantPolicy(Policy):
    arm: int
    m: int = 2
    kind: str = "constant"

    def __post_init__(self):
        if not 0 <= self.arm < self.m:
            raise ConfigError(f"constant arm {self.arm} out of range for m={self.m}")

    def prob_matrix(self, X) -> np.ndarray:
        X = _as_matrix(X)
        out = np.zeros((X.shape[0], self.m))
        out[:, self.arm] = 1.0
        return out

    def params_dict(self) -> dict:
        return {"arm": int(self.arm)}


@dataclass(frozen=True)
class QuadrantPolicy(Policy):
    """Treat (arm 1) iff s1*(x[i] - t1) > 0 and s2*(x[j] - t2) > 0.

    Binary only. Thresholds may be +-inf so the class contains the
    treat-nobody and treat-everybody rules.
    """

    i: int
    j: int
    s1: int
    s2: int
    t1: float
    t2: float
    m: int = 2
    kind: str = "quadrant"

    def __post_init__(self):
        if self.i == self.j:
            raise ConfigError("quadrant features must differ")
        if self.s1 not in (-1, 1) or self.s2 not in (-1, 1):
            raise ConfigError("quadrant signs must be -1 or +1")
        if self.m != 2:
            raise ConfigError("quadrant policies are binary")
        if math.isnan(self.t1) or math.isnan(self.t2):
            raise ConfigError("quadrant thresholds must not be NaN")

    def prob_matrix(self, X) -> np.ndarray:
        X = _as_matrix(X)
        if X.shape[1] <= max(self.i, self.j):
            raise DimensionMismatchError(
                f"policy uses features ({self.i}, {self.j}) but x has {X.shape[1]}")
        with np.errstate(invalid="ignore"):
            treat = (self.s1 * (X[:, self.i] - self.t1) > 0) & \
                    (self.s2 * (X[:, self.j] - self.t2) > 0)
        out = np.zeros((X.shape[0], 2))
        out[:, 1] = treat
        out[:, 0] = 1.0 - out[:, 1]
        return out

    def params_dict(self) -> dict:
        return {"i": int(self.i), "j": int(self.j), "s1": int(self.s1), "s2": int(self.s2),
                "t1": float(self.t1), "t2": float(self.t2)}


@dataclass(frozen=True)
class TreePolicy(Policy):
    """Depth <= 2 binary decision tree over raw features; leaves carry arms.

    ``nodes`` is a tuple of dicts; node 0 is the root. Internal nodes are
    {"feat": f, "thr": t, "left": i, "right": j} with the left branch taken
    when x[feat] <= thr; leaves are {"leaf": arm}.
    """

    nodes: tuple
    m: int = 2
    kind: str = "tree"

    def __post_init__(self):
        if not self.nodes:
            raise ConfigError("tree needs at least one node")
        self._check(0, 0)

    def _check(self, idx: int, depth: int) -> None:
        node = self.nodes[idx]
        if "leaf" in node:
            if not 0 <= node["leaf"] < self.m:
                raise ConfigError(f"leaf arm {node['leaf']} out of range")
            return
        if depth >= 2:
            raise ConfigError("tree depth exceeds 2")
        if not math.isfinite(node["thr"]):
            raise ConfigError("internal thresholds must be finite")
        self._check(node["left"], depth + 1)
        self._check(node["right"], depth + 1)

    def arms(self, X) -> np.ndarray:
        X = _as_matrix(X)
        out = np.empty(X.shape[0], dtype=int)
        self._fill(0, X, np.arange(X.shape[0]), out)
        return out

    def _fill(self, idx, X, rows, out) -> None:
        node = self.nodes[idx]
        if "leaf" in node:
            out[rows] = node["leaf"]
            return
        if X.shape[1] <= node["feat"]:
            raise DimensionMismatchError(
                f"tree uses feature {node['feat']} but x has {X.shape[1]}")
        go_left = X[rows, node["feat"]] <= node["thr"]
        self._fill(node["left"], X, rows[go_left], out)
        self._fill(node["right"], X, rows[~go_left], out)

    def prob_matrix(self, X) -> np.ndarray:
        X = _as_matrix(X)
        arms = self.arms(X)
        out = np.zeros((X.shape[0], self.m))
        out[np.arange(X.shape[0]), arms] = 1.0
        return out

    def params_dict(self) -> dict:
        return {"nodes": [dict(n) for n in self.nodes]}


def feature_map(X, features, basis: str) -> np.ndarray:
    """Transformed features T(x) for logistic policies.

    basis="identity" uses the selected raw features; "affine" appends a
    constant 1 column.
    """
    X = _as_matrix(X)
    if features is not None:
        features = list(features)
        if X.shape[1] <= max(features):
            raise DimensionMismatchError(
                f"policy uses features {features} but x has {X.shape[1]}")
        X = X[:, features]
    if basis == "identity":
        return X
    if basis == "affine":
        return np.column_stack([X, np.ones(X.shape[0])])
    raise ConfigError(f"unknown basis {basis!r}")


@dataclass(frozen=True)
class LogisticPolicy(Policy):
    """Randomized binary policy pi(x) = sigma(T(x)' beta)."""

    beta: tuple
    basis: str = "affine"
    features: tuple | None = None
    m: int = 2
    kind: str = "logistic"

    def __post_init__(self):
        if self.m != 2:
            raise ConfigError("logistic policies are binary")
        if not all(math.isfinite(b) for b in self.beta):
            raise ConfigError("logistic coefficients must be finite")

    def prob_matrix(self, X) -> np.ndarray:
        T = feature_map(X, self.features, self.basis)
        if T.shape[1] != len(self.beta):
            raise DimensionMismatchError(
                f"beta has {len(self.beta)} entries but T(x) has {T.shape[1]}")
        p = expit(T @ np.asarray(self.beta))
        return np.column_stack([1.0 - p, p])

    def params_dict(self) -> dict:
        out = {"beta": [float(b) for b in self.beta], "basis": self.basis}
        if self.features is not None:
            out["features"] = [int(f) for f in self.features]
        return out


def policy_from_dict(obj: dict) -> Policy:
    """Rebuild a policy from its JSON object form."""
    try:
        kind, m, params = obj["kind"], int(obj["m"]), obj["params"]
    except (KeyError, TypeError) as exc:
        raise DataError(f"malformed policy object: {exc}") from None
    if kind == "constant":
        return ConstantPolicy(arm=int(params["arm"]), m=m)
    if kind == "quadrant":
        return QuadrantPolicy(i=int(params["i"]), j=int(params["j"]),
                              s1=int(params["s1"]), s2=int(params["s2"]),
                              t1=float(params["t1"]), t2=float(params["t2"]), m=m)
    if kind == "tree":
        nodes = []
        for node in params["nodes"]:
            if "leaf" in node:
                nodes.append({"leaf": int(node["leaf"])})
            else:
                nodes.append({"feat": int(node["feat"]), "thr": float(node["thr"]),
                              "left": int(node["left"]), "right": int(node["right"])})
        return TreePolicy(nodes=tuple(nodes), m=m)
    if kind == "logistic":
        feats = params.get("features")
        return LogisticPolicy(beta=tuple(float(b) for b in params["beta"]),
                              basis=params.get("basis", "affine"),
                              features=None if feats is None else tuple(int(f) for f in feats),
                              m=m)
    raise DataError(f"unknown policy kind {kind!r}")


def policy_from_json(text: str) -> Policy:
    return policy_from_dict(json.loads(text))
