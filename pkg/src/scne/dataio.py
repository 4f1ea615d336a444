"""Dataset ingestion, 0-1 normalization, splitting and feature groups."""
from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .errors import DataError, ParameterError, ShapeError, SpecError

__all__ = [
    "Dataset",
    "FeatureGroupSpec",
    "NormParams",
    "SplitSpec",
    "load_csv",
    "read_table",
    "write_csv",
    "minmax_fit",
    "minmax_fit_apply",
    "split",
    "partition_features",
    "synth_generate",
    "grouped_surrogate",
    "TWITTER_GROUPS",
    "YEAR_GROUPS",
]


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    y: np.ndarray
    column_names: tuple = ()

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        y = np.asarray(self.y, dtype=float).reshape(-1)
        if X.ndim != 2:
            raise ShapeError(f"X must be 2-D, got shape {X.shape}")
        if X.shape[0] != y.shape[0]:
            raise ShapeError(f"X has {X.shape[0]} rows but y has {y.shape[0]} entries")
        names = tuple(self.column_names) or tuple(f"x{j + 1}" for j in range(X.shape[1]))
        if len(names) != X.shape[1]:
            raise ShapeError(f"{len(names)} column names for {X.shape[1]} columns")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "column_names", names)

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def d(self):
        return self.X.shape[1]

    def take(self, rows):
        rows = np.asarray(rows, dtype=int)
        return Dataset(self.X[rows], self.y[rows], self.column_names)

    def with_target(self, y):
        return Dataset(self.X, y, self.column_names)

    @staticmethod
    def concat(parts):
        parts = list(parts)
        return Dataset(
            np.vstack([p.X for p in parts]),
            np.concatenate([p.y for p in parts]),
            parts[0].column_names,
        )


@dataclass(frozen=True)
class FeatureGroupSpec:
    """Partition of columns ``1..d`` into ``M`` groups of 1-based indices."""

    groups: tuple
    names: tuple = ()

    def __post_init__(self):
        groups = tuple(tuple(int(c) for c in g) for g in self.groups)
        if not groups:
            raise SpecError("at least one feature group is required")
        for m, g in enumerate(groups):
            if not g:
                raise SpecError(f"group {m + 1} is empty")
        names = tuple(self.names) or tuple(f"G{m + 1}" for m in range(len(groups)))
        if len(names) != len(groups):
            raise SpecError(f"{len(names)} names for {len(groups)} groups")
        object.__setattr__(self, "groups", groups)
        object.__setattr__(self, "names", names)

    @classmethod
    def from_ranges(cls, ranges, names=()):
        """Build from inclusive 1-based ``(first, last)`` pairs."""
        return cls(tuple(tuple(range(a, b + 1)) for a, b in ranges), tuple(names))

    @classmethod
    def single(cls, d):
        return cls((tuple(range(1, d + 1)),))

    @classmethod
    def from_json(cls, obj):
        if isinstance(obj, (str, os.PathLike)):
            with open(obj, encoding="utf-8") as fh:
                obj = json.load(fh)
        if "groups" not in obj:
            raise SpecError('feature group spec needs a "groups" array')
        return cls(tuple(tuple(g) for g in obj["groups"]), tuple(obj.get("names", ())))

    def to_json(self):
        return {"groups": [list(g) for g in self.groups], "names": list(self.names)}

    @property
    def M(self):
        return len(self.groups)

    @property
    def widths(self):
        return tuple(len(g) for g in self.groups)

    def validate(self, d):
        seen = set()
        for m, g in enumerate(self.groups):
            for c in g:
                if c < 1 or c > d:
                    raise SpecError(f"group {m + 1}: column {c} outside 1..{d}")
                if c in seen:
                    raise SpecError(f"group {m + 1}: column {c} appears in more than one group")
                seen.add(c)
        if len(seen) != d:
            missing = sorted(set(range(1, d + 1)) - seen)
            raise SpecError(f"columns not covered by any group: {missing[:10]}")

    def column_slices(self):
        """Zero-based column index arrays, one per group."""
        return [np.asarray(g, dtype=int) - 1 for g in self.groups]


# Tables of the Twitter (M=11) and YearPredictionMSD (M=7) groupings.
TWITTER_GROUPS = FeatureGroupSpec.from_ranges(
    [(1 + 7 * k, 7 * (k + 1)) for k in range(11)],
    ("NCD", "AI", "AS(NA)", "BL", "NAC", "AS(NAC)", "CS", "AT", "NA", "ADL", "NAD"),
)
YEAR_GROUPS = FeatureGroupSpec.from_ranges(
    [(1, 12)] + [(13 + 13 * k, 25 + 13 * k) for k in range(6)],
    ("TA", "TC-a", "TC-b", "TC-c", "TC-d", "TC-e", "TC-f"),
)


@dataclass(frozen=True)
class NormParams:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float).reshape(-1)
        hi = np.asarray(self.hi, dtype=float).reshape(-1)
        if lo.shape != hi.shape:
            raise ShapeError("min and max vectors differ in length")
        if np.any(lo > hi):
            raise ParameterError("normalization min exceeds max")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    def apply(self, X):
        X = np.asarray(X, dtype=float)
        span = self.hi - self.lo
        safe = np.where(span > 0, span, 1.0)
        # constant columns map to 0
        return np.where(span > 0, (X - self.lo) / safe, 0.0)

    def invert(self, Z):
        return np.asarray(Z, dtype=float) * (self.hi - self.lo) + self.lo

    def to_json(self):
        return {"min": self.lo.tolist(), "max": self.hi.tolist()}

    @classmethod
    def from_json(cls, obj):
        return cls(obj["min"], obj["max"])


@dataclass(frozen=True)
class SplitSpec:
    train_frac: float = 0.70
    val_frac: float = 0.15
    test_frac: float = 0.15
    seed: int = 0

    def __post_init__(self):
        fr = (self.train_frac, self.val_frac, self.test_frac)
        if any(f <= 0 for f in fr):
            raise ParameterError(f"split fractions must be positive, got {fr}")
        if abs(sum(fr) - 1.0) > 1e-9:
            raise ParameterError(f"split fractions must sum to 1, got {sum(fr)!r}")


def _parse_float(text):
    try:
        v = float(text)
    except ValueError:
        return None
    return v


def read_table(path, has_header=None, delimiter=","):
    """Parse a numeric CSV file into ``(header, values)``.

    ``header`` is None for a headerless file.  With ``has_header=None`` a
    header is assumed when the first row does not parse as numbers.  A file
    with no rows gives an empty ``(0, 0)`` array.
    """
    if not os.path.isfile(path):
        raise DataError(f"no such file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [row for row in csv.reader(fh, delimiter=delimiter) if row]
    if not rows:
        return None, np.empty((0, 0))
    width = len(rows[0])
    if has_header is None:
        has_header = any(_parse_float(f) is None for f in rows[0])
    header = [h.strip() for h in rows[0]] if has_header else None
    body = rows[1:] if has_header else rows
    first_line = 2 if has_header else 1
    values = np.empty((len(body), width))
    for i, row in enumerate(body):
        line = first_line + i
        if len(row) != width:
            raise DataError(f"{path}: row {line} has {len(row)} fields, expected {width}")
        for j, field_text in enumerate(row):
            v = _parse_float(field_text)
            if v is None:
                raise DataError(f"{path}: row {line}, column {j + 1}: cannot parse {field_text!r}")
            values[i, j] = v
    return header, values


def load_csv(path, target_column=-1, has_header=None, delimiter=","):
    """Read a numeric CSV file into a :class:`Dataset`.

    ``target_column`` is a header name or a 1-based column index, matching
    feature-group numbering; negative indices count from the end.
    """
    header, values = read_table(path, has_header, delimiter)
    if values.size == 0:
        raise DataError(f"{path}: file has no data rows")
    width = values.shape[1]
    if header is None:
        header = [f"c{j + 1}" for j in range(width)]
    t = resolve_column(target_column, header, path)
    keep = [j for j in range(width) if j != t]
    return Dataset(values[:, keep], values[:, t], tuple(header[j] for j in keep))


def resolve_column(column, header, path="input"):
    """Zero-based position of a column given by name or 1-based index."""
    width = len(header)
    if isinstance(column, str):
        if column not in header:
            raise DataError(f"{path}: target column {column!r} not in header")
        return header.index(column)
    t = int(column)
    if t == 0 or t < -width or t > width:
        raise DataError(f"{path}: target column index {t} out of range for {width} columns")
    return t - 1 if t > 0 else t % width


def write_csv(path, data, target_name="y", delimiter=","):
    """Write a dataset with the target as the last column."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter=delimiter)
        w.writerow(list(data.column_names) + [target_name])
        for xrow, yv in zip(data.X, data.y):
            w.writerow([repr(float(v)) for v in xrow] + [repr(float(yv))])


def minmax_fit(X):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] < 1:
        raise ShapeError("cannot fit normalization on an empty array")
    return NormParams(X.min(axis=0), X.max(axis=0))


def minmax_fit_apply(train, others=(), normalize_target=False):
    """Fit 0-1 normalization on ``train`` and apply it to every dataset.

    Returns ``(normalized, x_params, y_params)`` where ``normalized`` is a
    list starting with the transformed training set.  ``y_params`` is None
    unless ``normalize_target`` is set.
    """
    xp = minmax_fit(train.X)
    yp = minmax_fit(train.y) if normalize_target else None
    out = []
    for ds in [train, *others]:
        y = yp.apply(ds.y[:, None])[:, 0] if yp is not None else ds.y
        out.append(Dataset(xp.apply(ds.X), y, ds.column_names))
    return out, xp, yp


def split_sizes(n, spec):
    # guard against 100 * 0.15 landing just under 15
    n_val = math.floor(n * spec.val_frac + 1e-9)
    n_test = math.floor(n * spec.test_frac + 1e-9)
    return n - n_val - n_test, n_val, n_test


def split(data, spec):
    """Seeded shuffle followed by contiguous train/val/test slices.

    Validation and test sizes are floored; the remainder goes to train.
    """
    if data.n < 3:
        raise ShapeError("need at least 3 rows to split")
    return tuple(data.take(p) for p in split_indices(data.n, spec))


def split_indices(n, spec):
    n_train, n_val, _ = split_sizes(n, spec)
    perm = np.random.default_rng(spec.seed).permutation(n)
    return perm[:n_train], perm[n_train:n_train + n_val], perm[n_train + n_val:]


def partition_features(data, spec):
    spec.validate(data.d)
    out = []
    for cols in spec.column_slices():
        names = tuple(data.column_names[c] for c in cols)
        out.append(Dataset(data.X[:, cols], data.y, names))
    return out


def synth_generate(n, x1_low=-5.0, x1_high=5.0, seed=0):
    """Sample ``y = cos(2 x2) / exp(x1)`` with ``x2 = sin(x1)``.

    ``x1`` is uniform on ``[x1_low, x1_high]``; columns are ``(x1, x2)``.
    """
    if n < 1:
        raise ParameterError("n must be >= 1")
    if not x1_low < x1_high:
        raise ParameterError("x1_low must be below x1_high")
    rng = np.random.default_rng(seed)
    x1 = rng.uniform(x1_low, x1_high, size=n)
    return synth_dataset(x1)


def synth_dataset(x1):
    x1 = np.asarray(x1, dtype=float)
    x2 = np.sin(x1)
    y = np.cos(2.0 * x2) / np.exp(x1)
    return Dataset(np.column_stack([x1, x2]), y, ("x1", "x2"))


def grouped_surrogate(spec, n, seed=0, noise=0.05, structure_seed=0, latent_dim=3):
    """Synthetic stand-in for a wide tabular dataset with feature groups.

    A low-dimensional latent state drives the target.  Every feature group
    observes that state through its own random mixing, a mild nonlinearity
    and its own noise level, so each group predicts the target on its own
    with a different accuracy.  Columns are put on assorted raw scales.
    ``structure_seed`` fixes the mixing and target; ``seed`` draws the rows.
    """
    d = sum(spec.widths)
    spec.validate(d)
    srng = np.random.default_rng(structure_seed)
    scales = 10.0 ** srng.uniform(0.0, 3.0, size=d)
    offsets = srng.uniform(-1.0, 1.0, size=d) * scales
    mixes = [srng.normal(size=(latent_dim, w)) for w in spec.widths]
    view_noise = srng.uniform(0.05, 0.6, size=spec.M)

    rng = np.random.default_rng(seed)
    z = rng.uniform(0.0, 1.0, size=(n, latent_dim))
    y = np.sin(2.0 * np.pi * z[:, 0]) + 2.0 * (z[:, 1] - 0.5) ** 2
    if latent_dim > 2:
        y = y + np.cos(np.pi * z[:, 1] * z[:, 2])
    y = y + rng.normal(0.0, noise, size=n)
    X = np.empty((n, d))
    for m, cols in enumerate(spec.column_slices()):
        v = np.tanh((z - 0.5) @ mixes[m])
        X[:, cols] = v + rng.normal(0.0, view_noise[m], size=v.shape)
    X = X * scales + offsets
    return Dataset(X, y, tuple(f"f{j + 1}" for j in range(d)))
