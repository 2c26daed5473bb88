"""Domain data model: validated datasets, fold assignment, shared utilities.

All containers are frozen and hold read-only numpy arrays, so they are safe
to share across worker threads.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ArmOutOfRangeError,
    BadFoldCountError,
    ConfigError,
    DataError,
    EmptyDataError,
    NonFiniteError,
    RaggedRowsError,
)

_MASK64 = (1 << 64) - 1


def mix_seed(seed: int, *salts: int) -> int:
    """Derive an independent 64-bit seed from ``seed`` and integer salts.

    splitmix64 finalizer applied once per salt; used everywhere a child
    seed is needed (folds, repetitions, restarts) so that parallel tasks
    are reproducible and independent of scheduling.
    """
    z = seed & _MASK64
    for s in salts:
        z = (z + 0x9E3779B97F4A7C15 + (int(s) & _MASK64)) & _MASK64
        z ^= z >> 30
        z = (z * 0xBF58476D1CE4E5B9) & _MASK64
        z ^= z >> 27
        z = (z * 0x94D049BB133111EB) & _MASK64
        z ^= z >> 31
    return z


def rng_from(seed: int, *salts: int) -> np.random.Generator:
    """PCG64 generator on the mixed seed stream (no OS entropy)."""
    return np.random.Generator(np.random.PCG64(mix_seed(seed, *salts)))


def check_lambda(lam: float) -> float:
    lam = float(lam)
    if not np.isfinite(lam) or lam < 1.0:
        raise ConfigError(f"sensitivity parameter must be finite and >= 1, got {lam}")
    return lam


@dataclass(frozen=True)
class Observation:
    """One unit: covariates ``x``, arm index ``a``, outcome ``y``."""

    x: tuple[float, ...]
    a: int
    y: float


@dataclass(frozen=True)
class Dataset:
    """Validated sample of (covariates, arm, outcome).

    Attributes
    ----------
    X : (n, d) float array, read-only
    a : (n,) int array of arm indices in {0, ..., n_arms-1}
    y : (n,) float array of outcomes
    n_arms : number of arms (>= 2)
    column_names : labels in CSV order, ("y", "a", "x1", ..., "xd")
    """

    X: np.ndarray
    a: np.ndarray
    y: np.ndarray
    n_arms: int
    column_names: tuple[str, ...] = field(default=())

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def row(self, i: int) -> Observation:
        return Observation(tuple(self.X[i]), int(self.a[i]), float(self.y[i]))


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


def from_arrays(X, a, y, n_arms: int, column_names=()) -> Dataset:
    """Validate raw arrays and build a :class:`Dataset`."""
    X = np.asarray(X, dtype=float)
    a = np.asarray(a)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise EmptyDataError("need a nonempty 2-d covariate array")
    if a.shape != (X.shape[0],) or y.shape != (X.shape[0],):
        raise RaggedRowsError("X, a, y lengths disagree")
    if int(n_arms) < 2:
        raise ConfigError(f"need at least two arms, got {n_arms}")
    if not np.isfinite(X).all() or not np.isfinite(y).all():
        raise NonFiniteError("covariates and outcomes must be finite")
    a_float = np.asarray(a, dtype=float)
    if not np.isfinite(a_float).all() or np.any(a_float != np.round(a_float)):
        raise ArmOutOfRangeError("arm indices must be integers")
    a_int = a_float.astype(int)
    if a_int.min() < 0 or a_int.max() >= int(n_arms):
        raise ArmOutOfRangeError(
            f"arm indices must lie in [0, {int(n_arms) - 1}], got range "
            f"[{a_int.min()}, {a_int.max()}]"
        )
    if not column_names:
        column_names = ("y", "a") + tuple(f"x{j + 1}" for j in range(X.shape[1]))
    return Dataset(_freeze(X), _freeze(a_int), _freeze(y), int(n_arms), tuple(column_names))


def validate_dataset(rows, n_arms: int) -> Dataset:
    """Validate raw rows ordered (y, a, x1, ..., xd) into a Dataset.

    Raises
    ------
    EmptyDataError, RaggedRowsError, NonFiniteError, ArmOutOfRangeError
    """
    rows = list(rows)
    if not rows:
        raise EmptyDataError("no rows")
    if isinstance(rows[0], Observation):
        rows = [(r.y, r.a) + tuple(r.x) for r in rows]
    width = len(rows[0])
    if width < 3:
        raise RaggedRowsError("rows need at least (y, a, x1)")
    if any(len(r) != width for r in rows):
        raise RaggedRowsError("rows have inconsistent widths")
    try:
        mat = np.asarray(rows, dtype=float)
    except (TypeError, ValueError) as exc:
        raise DataError(f"could not parse rows as numbers: {exc}") from None
    return from_arrays(mat[:, 2:], mat[:, 1], mat[:, 0], n_arms)


def load_dataset_csv(path, n_arms: int | None = None) -> Dataset:
    """Read the dataset CSV schema: header ``y,a,x1,...,xd``, decimal point.

    ``n_arms=None`` infers the arm count as max(a)+1 (at least 2).
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise EmptyDataError(f"{path}: empty file")
        header = [h.strip() for h in header]
        expected = ["y", "a"] + [f"x{j}" for j in range(1, max(len(header) - 1, 1))]
        if header != expected:
            raise DataError(f"{path}: header must be y,a,x1,...,xd, got {header}")
        rows = [r for r in reader if r]
    if not rows:
        raise EmptyDataError(f"{path}: no data rows")
    if any(len(r) != len(header) for r in rows):
        raise RaggedRowsError(f"{path}: ragged rows")
    try:
        mat = np.asarray(rows, dtype=float)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None
    if n_arms is None:
        n_arms = max(2, int(np.max(mat[:, 1])) + 1)
    ds = from_arrays(mat[:, 2:], mat[:, 1], mat[:, 0], n_arms)
    return Dataset(ds.X, ds.a, ds.y, ds.n_arms, tuple(header))


def write_dataset_csv(path, dataset: Dataset, extra: dict[str, np.ndarray] | None = None) -> None:
    """Write the canonical ``y,a,x1,...,xd`` schema (plus optional extras)."""
    names = ["y", "a"] + [f"x{j + 1}" for j in range(dataset.d)]
    cols = [dataset.y, dataset.a] + [dataset.X[:, j] for j in range(dataset.d)]
    for name, col in (extra or {}).items():
        names.append(name)
        cols.append(np.asarray(col))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(names)
        for i in range(dataset.n):
            writer.writerow([_fmt(c[i]) for c in cols])


def _fmt(v) -> str:
    if float(v).is_integer():
        return str(int(v))
    return repr(float(v))


@dataclass(frozen=True)
class FoldAssignment:
    """Balanced random partition of n units into k folds.

    Deterministic given (n, k, seed): units are shuffled with PCG64 on the
    mixed seed and dealt into contiguous blocks whose sizes differ by at
    most one.
    """

    k: int
    fold_of: np.ndarray
    seed: int

    @property
    def n(self) -> int:
        return self.fold_of.shape[0]

    def members(self, fold: int) -> np.ndarray:
        return np.nonzero(self.fold_of == fold)[0]

    def complement(self, fold: int) -> np.ndarray:
        return np.nonzero(self.fold_of != fold)[0]


def make_folds(n: int, k: int, seed: int) -> FoldAssignment:
    """Uniformly random balanced partition; sizes in {floor(n/k), ceil(n/k)}."""
    if k < 2 or k > n:
        raise BadFoldCountError(f"fold count must satisfy 2 <= K <= n, got K={k}, n={n}")
    perm = rng_from(seed, 0xF01D).permutation(n)
    fold_of = np.empty(n, dtype=int)
    base, extra = divmod(n, k)
    start = 0
    for j in range(k):
        size = base + (1 if j < extra else 0)
        fold_of[perm[start:start + size]] = j
        start += size
    return FoldAssignment(k, _freeze(fold_of), int(seed))


def clip_simplex(p: np.ndarray, kappa: float) -> np.ndarray:
    """Project probability rows onto {q : kappa <= q_i <= 1-kappa, sum q = 1}.

    Solves sum_i clip(t * p_i, kappa, 1-kappa) = 1 for the scale t by
    bisection, which is exact (monotone) and keeps the relative ordering
    of the entries.
    """
    p = np.atleast_2d(np.asarray(p, dtype=float))
    m = p.shape[1]
    if not 0 < kappa < 0.5:
        raise ConfigError(f"clip level must lie in (0, 0.5), got {kappa}")
    if m * kappa > 1.0:
        raise ConfigError(f"clip level {kappa} infeasible for {m} arms")
    lo, hi = kappa, 1.0 - kappa
    p = np.clip(p, 0.0, None)
    scale = np.sum(p, axis=1, keepdims=True)
    p = np.where(scale > 0, p / np.maximum(scale, 1e-300), 1.0 / m)
    t_lo = np.zeros(p.shape[0])
    t_hi = np.full(p.shape[0], 4.0)
    # grow upper bracket until the clipped sum reaches 1 everywhere
    for _ in range(60):
        s = np.clip(t_hi[:, None] * p, lo, hi).sum(axis=1)
        if (s >= 1.0).all():
            break
        t_hi = np.where(s < 1.0, t_hi * 2, t_hi)
    for _ in range(100):
        mid = 0.5 * (t_lo + t_hi)
        s = np.clip(mid[:, None] * p, lo, hi).sum(axis=1)
        t_hi = np.where(s >= 1.0, mid, t_hi)
        t_lo = np.where(s >= 1.0, t_lo, mid)
    out = np.clip(t_hi[:, None] * p, lo, hi)
    out /= out.sum(axis=1, keepdims=True)
    return out


def parallel_map(fn, items, threads: int = 1) -> list:
    """Order-preserving map, optionally on a thread pool.

    The reduction order is fixed by the input order, so results are
    byte-identical for any thread count.
    """
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))
