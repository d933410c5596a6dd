"""Simulated reference tables: generation, scaling, noise columns, splits, CSV I/O.

A reference table is the universal substrate of likelihood-free model
choice: N records of (model index, parameter vector, summary-statistic
vector) drawn from the prior predictive. It doubles as the training set
for every classifier in this package.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .rng import generator

MAX_RETRY_ROUNDS = 100

_COMMENT_PREFIX = "# abcmc-table"


class TableFormatError(ValueError):
    """Raised when a table CSV file cannot be parsed."""


@dataclass(frozen=True)
class ReferenceRecord:
    """One simulated record: (model index, parameters, summaries)."""

    model: int
    params: np.ndarray
    stats: np.ndarray


@dataclass(frozen=True, eq=False)
class ReferenceTable:
    """Columnar reference table.

    models : (N,) int array of model indices in 1..M
    params : (N, p) float array; rows of models with fewer than p
        parameters are NaN-padded on the right
    stats  : (N, d) float array of summary statistics, all finite
    """

    models: np.ndarray
    params: np.ndarray
    stats: np.ndarray
    stat_names: tuple[str, ...]
    suite_id: str
    seed: int

    def __post_init__(self):
        models = np.asarray(self.models, dtype=np.int64)
        params = np.atleast_2d(np.asarray(self.params, dtype=np.float64))
        stats = np.atleast_2d(np.asarray(self.stats, dtype=np.float64))
        if stats.shape[0] != models.shape[0] or params.shape[0] != models.shape[0]:
            raise ValueError("models, params and stats must have matching row counts")
        if stats.shape[1] != len(self.stat_names):
            raise ValueError(
                f"{stats.shape[1]} stat columns but {len(self.stat_names)} stat names"
            )
        if models.size and models.min() < 1:
            raise ValueError("model indices must be >= 1")
        if not np.all(np.isfinite(stats)):
            raise ValueError("summary statistics must be finite")
        object.__setattr__(self, "models", models)
        object.__setattr__(self, "params", params)
        object.__setattr__(self, "stats", stats)
        object.__setattr__(self, "stat_names", tuple(self.stat_names))

    @property
    def n_records(self) -> int:
        return self.models.shape[0]

    @property
    def n_stats(self) -> int:
        return self.stats.shape[1]

    def model_counts(self, n_models: int | None = None) -> np.ndarray:
        """Records per model index 1..M."""
        m = int(self.models.max()) if n_models is None else n_models
        return np.bincount(self.models, minlength=m + 1)[1:]

    def record(self, i: int) -> ReferenceRecord:
        return ReferenceRecord(int(self.models[i]), self.params[i], self.stats[i])

    def take(self, rows: np.ndarray) -> "ReferenceTable":
        """Row subset as a new table (provenance fields are inherited)."""
        return ReferenceTable(
            self.models[rows], self.params[rows], self.stats[rows],
            self.stat_names, self.suite_id, self.seed,
        )

    def with_stats(self, stats: np.ndarray, stat_names) -> "ReferenceTable":
        return ReferenceTable(
            self.models, self.params, stats, tuple(stat_names),
            self.suite_id, self.seed,
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, ReferenceTable):
            return NotImplemented
        return (
            self.stat_names == other.stat_names
            and self.suite_id == other.suite_id
            and self.seed == other.seed
            and np.array_equal(self.models, other.models)
            and np.array_equal(self.params, other.params, equal_nan=True)
            and np.array_equal(self.stats, other.stats)
        )


@dataclass(frozen=True)
class ScalingParams:
    """Per-column affine scaling: z = (x - center) / scale."""

    center: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        center = np.asarray(self.center, dtype=np.float64)
        scale = np.asarray(self.scale, dtype=np.float64)
        if np.any(scale <= 0):
            raise ValueError("all scale entries must be strictly positive")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "scale", scale)

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.center) / self.scale

    def inverse(self, z: np.ndarray) -> np.ndarray:
        return np.asarray(z, dtype=np.float64) * self.scale + self.center


def build_reference_table(
    suite,
    n_records: int,
    sample_size: int,
    seed: int,
    model_weights=None,
) -> ReferenceTable:
    """Simulate a reference table of ``n_records`` rows from the prior predictive.

    For each record a model index is drawn from the model prior (uniform
    over 1..M unless ``model_weights`` is given), a parameter from that
    model's prior, a dataset of ``sample_size`` observations from the
    model, and the suite's summary statistics of that dataset.

    Deterministic given ``seed``: records are generated from per-model
    child streams, so the result does not depend on scheduling.
    Records whose simulation yields an invalid dataset (for example a
    non-positive draw where the summaries need positivity) are redrawn,
    up to MAX_RETRY_ROUNDS rounds.
    """
    M = suite.n_models
    if n_records < M:
        raise ValueError(f"n_records={n_records} must be >= number of models ({M})")
    if sample_size < 1:
        raise ValueError("sample_size must be >= 1")

    if model_weights is None:
        models = generator(seed, 0).integers(1, M + 1, size=n_records)
    else:
        w = np.asarray(model_weights, dtype=np.float64)
        if w.shape != (M,) or np.any(w < 0) or w.sum() <= 0:
            raise ValueError("model_weights must be M nonnegative values, not all zero")
        models = generator(seed, 0).choice(np.arange(1, M + 1), size=n_records, p=w / w.sum())

    d = len(suite.stat_names)
    p = suite.param_dim
    params = np.full((n_records, p), np.nan)
    stats = np.empty((n_records, d))

    for m in range(1, M + 1):
        rows = np.flatnonzero(models == m)
        if rows.size == 0:
            continue
        rng = generator(seed, m)
        theta, s = _draw_valid(suite, m, rows.size, sample_size, rng)
        params[rows, : theta.shape[1]] = theta
        stats[rows] = s

    return ReferenceTable(models, params, stats, suite.stat_names, suite.suite_id, seed)


def _draw_valid(suite, m, count, sample_size, rng):
    """Draw ``count`` valid (theta, stats) pairs for model ``m``, with bounded retries."""
    theta = suite.sample_params(m, count, rng)
    y = suite.simulate_batch(m, theta, sample_size, rng)
    bad = ~suite.data_ok(y)
    rounds = 0
    while np.any(bad):
        rounds += 1
        if rounds > MAX_RETRY_ROUNDS:
            raise RuntimeError(
                f"simulator for model {m} produced invalid data in "
                f"{MAX_RETRY_ROUNDS} consecutive retry rounds "
                f"({int(bad.sum())} records still failing); check the prior"
            )
        idx = np.flatnonzero(bad)
        theta[idx] = suite.sample_params(m, idx.size, rng)
        y[idx] = suite.simulate_batch(m, theta[idx], sample_size, rng)
        bad[idx] = ~suite.data_ok(y[idx])
    s = suite.summarize_batch(y)
    if not np.all(np.isfinite(s)):
        raise RuntimeError(f"model {m} produced non-finite summary statistics")
    return theta, s


def standardize(table: ReferenceTable) -> tuple[ReferenceTable, ScalingParams]:
    """Center each summary column at its median and scale by its MAD.

    Robust scaling keeps heavy-tailed summary columns from dominating
    Euclidean distances. Returns the transformed table and the scaling
    parameters, to be applied identically to query points.
    """
    center = np.median(table.stats, axis=0)
    scale = np.median(np.abs(table.stats - center), axis=0)
    dead = np.flatnonzero(scale == 0)
    if dead.size:
        names = ", ".join(table.stat_names[j] for j in dead)
        raise ValueError(f"column(s) with zero dispersion cannot be standardized: {names}")
    sp = ScalingParams(center, scale)
    return table.with_stats(sp.transform(table.stats), table.stat_names), sp


def augment_noise(table: ReferenceTable, count: int, seed: int) -> ReferenceTable:
    """Append ``count`` pure-noise columns of i.i.d. standard normal draws."""
    if count < 0:
        raise ValueError("count must be >= 0")
    if count == 0:
        return table
    noise = generator(seed).standard_normal((table.n_records, count))
    names = table.stat_names + tuple(f"noise_{j + 1}" for j in range(count))
    return table.with_stats(np.hstack([table.stats, noise]), names)


def split(
    table: ReferenceTable,
    sizes: tuple[int, int, int],
    seed: int,
) -> tuple[ReferenceTable, ReferenceTable, ReferenceTable]:
    """Random disjoint (train, calibration, test) partition of the rows.

    Rows beyond ``sum(sizes)`` are dropped. Deterministic given ``seed``.
    """
    n_train, n_calib, n_test = (int(s) for s in sizes)
    if min(n_train, n_calib, n_test) < 0:
        raise ValueError("split sizes must be nonnegative")
    total = n_train + n_calib + n_test
    if total > table.n_records:
        raise ValueError(
            f"split sizes sum to {total} but table has {table.n_records} records"
        )
    perm = generator(seed).permutation(table.n_records)
    a, b = n_train, n_train + n_calib
    return (
        table.take(np.sort(perm[:a])),
        table.take(np.sort(perm[a:b])),
        table.take(np.sort(perm[b:total])),
    )


def save_csv(table: ReferenceTable, path) -> None:
    """Write a table as CSV with round-trip float precision.

    Layout: one metadata comment line, then the header
    ``model,param_1..param_p,stat_<name>...``, then one row per record.
    LF line endings, UTF-8.
    """
    p = table.params.shape[1]
    header = ["model"]
    header += [f"param_{j + 1}" for j in range(p)]
    header += [f"stat_{name}" for name in table.stat_names]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{_COMMENT_PREFIX} suite={table.suite_id} seed={table.seed}\n")
        fh.write(",".join(header) + "\n")
        for i in range(table.n_records):
            cells = [str(int(table.models[i]))]
            cells += [repr(float(v)) for v in table.params[i]]
            cells += [repr(float(v)) for v in table.stats[i]]
            fh.write(",".join(cells) + "\n")


def load_csv(path) -> ReferenceTable:
    """Load a table written by :func:`save_csv`.

    Also accepts plain CSVs without the metadata comment line; those get
    ``suite_id="unknown"`` and ``seed=0``. Malformed files raise
    :class:`TableFormatError` citing the offending physical line.
    """
    with open(path, "r", encoding="utf-8") as fh:
        first = fh.readline().rstrip("\n")
    suite_id, seed, skip = "unknown", 0, 0
    if first.startswith(_COMMENT_PREFIX):
        skip = 1
        for tok in first[len(_COMMENT_PREFIX):].split():
            key, _, val = tok.partition("=")
            if key == "suite":
                suite_id = val
            elif key == "seed":
                seed = int(val)

    try:
        df = pd.read_csv(path, skiprows=skip, dtype=np.float64)
    except Exception:
        raise TableFormatError(_diagnose_csv(path, skip)) from None

    cols = list(df.columns)
    if not cols or cols[0] != "model":
        raise TableFormatError(f"{path}: first column must be 'model', got {cols[:1]}")
    param_cols = [c for c in cols if c.startswith("param_")]
    stat_cols = [c for c in cols if c.startswith("stat_")]
    if 1 + len(param_cols) + len(stat_cols) != len(cols):
        extra = [c for c in cols[1:] if c not in param_cols and c not in stat_cols]
        raise TableFormatError(f"{path}: unrecognized columns {extra}")

    models_f = df["model"].to_numpy()
    if np.any(models_f != np.round(models_f)) or np.any(models_f < 1):
        raise TableFormatError(f"{path}: 'model' column must hold integers >= 1")
    stats = df[stat_cols].to_numpy()
    if not np.all(np.isfinite(stats)):
        bad = int(np.flatnonzero(~np.all(np.isfinite(stats), axis=1))[0])
        raise TableFormatError(
            f"{path}: non-finite summary statistic on line {bad + 2 + skip}"
        )
    names = tuple(c[len("stat_"):] for c in stat_cols)
    return ReferenceTable(
        models_f.astype(np.int64), df[param_cols].to_numpy(), stats,
        names, suite_id, seed,
    )


def _diagnose_csv(path, skip: int) -> str:
    """Slow re-scan after a failed parse, to name the first offending line."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    body = lines[skip:]
    if not body:
        return f"{path}: empty file"
    n_fields = len(body[0].split(","))
    for i, line in enumerate(body[1:], start=skip + 2):
        cells = line.split(",")
        if len(cells) != n_fields:
            return f"{path}: expected {n_fields} columns but found {len(cells)} on line {i}"
        for cell in cells:
            try:
                float(cell)
            except ValueError:
                return f"{path}: non-numeric cell {cell!r} on line {i}"
    return f"{path}: malformed CSV"
