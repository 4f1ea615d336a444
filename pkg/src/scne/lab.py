"""Experiment configuration and the end-to-end protocols behind the CLI.

Every ``run_*`` function takes a validated :class:`ExperimentConfig`,
writes its CSV/JSON outputs under ``config.out`` and returns the results
as plain Python objects so they can be checked programmatically.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import os
import platform
import time
from dataclasses import dataclass

import numpy as np
import scipy

from . import __version__, dataio, diagnostics, ncl, numkit, scn
from .dataio import Dataset, FeatureGroupSpec, SplitSpec
from .errors import ConfigError, DataError, ScneError
from .ncl import SolverConfig
from .scn import RvflConfig, ScnConfig

log = logging.getLogger(__name__)

__all__ = [
    "DEFAULT_LAMBDAS",
    "DEFAULT_ALPHAS",
    "DEMO_GRID",
    "METHOD_LABELS",
    "ExperimentConfig",
    "load_config",
    "parse_config",
    "load_dataset",
    "box_stats",
    "run_demo",
    "run_bench",
    "run_estimate",
    "run_train",
    "run_sweep",
    "run_predict",
]

DEFAULT_LAMBDAS = (0.08, 0.09, 0.10, 0.11, 0.12)
DEFAULT_ALPHAS = tuple(float(a) for a in np.round(np.arange(0.5, 1.45, 0.1), 10))
DEMO_GRID = (10, 50, 100, 150, 200, 250, 300, 350, 400, 450, 500)
METHOD_LABELS = {
    "naive": "Naive",
    "analytic": "Pseudo-inverse",
    "jacobi": "Block Jacobi",
    "gauss_seidel": "Block Gauss-Seidel",
}
# (groups, 1-based target column, expected column count) of the UCI files
LAYOUTS = {
    "twitter": (dataio.TWITTER_GROUPS, -1, 78),
    "year": (dataio.YEAR_GROUPS, 1, 91),
}

_MISSING = object()


class _Reader:
    """Typed access to one JSON object that reports errors by field path."""

    def __init__(self, obj, path=""):
        if not isinstance(obj, dict):
            raise ConfigError(f"{path or 'config'}: expected a JSON object")
        self.obj = obj
        self.path = path
        self.seen = set()

    def at(self, key):
        return f"{self.path}.{key}" if self.path else key

    def has(self, key):
        return key in self.obj

    def get(self, key, kind, default=_MISSING):
        self.seen.add(key)
        if key not in self.obj or self.obj[key] is None:
            if default is _MISSING:
                raise ConfigError(f"{self.at(key)}: required field is missing")
            return default
        return _coerce(self.obj[key], kind, self.at(key))

    def sub(self, key):
        self.seen.add(key)
        return _Reader(self.obj.get(key) or {}, self.at(key))

    def finish(self):
        extra = sorted(set(self.obj) - self.seen)
        if extra:
            raise ConfigError(f"{self.at(extra[0])}: unknown field")


def _coerce(value, kind, path):
    if isinstance(kind, tuple):
        if not isinstance(value, list):
            raise ConfigError(f"{path}: expected a list")
        return tuple(_coerce(v, kind[0], f"{path}[{i}]") for i, v in enumerate(value))
    if kind is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true or false")
        return value
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer")
        return value
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            raise ConfigError(f"{path}: expected a finite number")
        return float(value)
    if kind is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string")
        return value
    if kind == "column":
        if isinstance(value, bool) or not isinstance(value, (int, str)):
            raise ConfigError(f"{path}: expected a column name or 1-based index")
        return value
    return value


@dataclass(frozen=True)
class DatasetConfig:
    kind: str = "surrogate"
    path: str | None = None
    target: object = -1
    delimiter: str = ","
    has_header: bool | None = None
    layout: str | None = None
    shape: str = "twitter"
    n: int = 10000
    seed: int = 0
    max_rows: int | None = None


@dataclass(frozen=True)
class EstimateConfig:
    mode: str = "scn"
    L_range: tuple = (1, 120)
    repeats: int = 10
    n_train: int = 70000
    n_val: int = 30000
    alphas: tuple = DEFAULT_ALPHAS


@dataclass(frozen=True)
class DemoConfig:
    n: int = 5000
    n_train: int = 4000
    M: int = 10
    grid: tuple = DEMO_GRID
    timing_repeats: int = 3
    ridge: float = 0.1
    lam: float = 0.1
    tol: float = 1e-6
    k_max: int = 5


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetConfig = DatasetConfig()
    groups: FeatureGroupSpec | None = None
    split: SplitSpec = SplitSpec()
    scn: ScnConfig = ScnConfig(L_max=120)
    solver: SolverConfig = SolverConfig(method="jacobi", lam=0.1, k_max=10)
    estimate: EstimateConfig = EstimateConfig()
    nodes: tuple | None = None
    rvfl_alpha: tuple | None = None
    repeats: int = 10
    lambdas: tuple = DEFAULT_LAMBDAS
    normalize_target: bool = False
    seed: int = 0
    out: str = "results"
    demo: DemoConfig = DemoConfig()

    def replace(self, **changes):
        kw = {f: getattr(self, f) for f in self.__dataclass_fields__}
        kw.update(changes)
        return ExperimentConfig(**kw)

    def with_overrides(self, seed=None, out=None, method=None, ridge=None, normalize_target=None):
        """Apply command-line overrides on top of the file configuration."""
        cfg = self
        try:
            if seed is not None:
                cfg = cfg.replace(seed=seed, split=_split_with_seed(cfg.split, seed))
            if out is not None:
                cfg = cfg.replace(out=out)
            if method is not None:
                cfg = cfg.replace(solver=cfg.solver.replace(method=method))
            if ridge is not None:
                cfg = cfg.replace(
                    solver=cfg.solver.replace(ridge=ridge),
                    demo=_replace(cfg.demo, ridge=ridge),
                )
        except ScneError as exc:
            raise ConfigError(f"command line: {exc}") from exc
        if normalize_target:
            cfg = cfg.replace(normalize_target=True)
        return cfg

    def echo(self):
        """JSON-friendly view of the effective configuration."""
        return {
            "dataset": self.dataset.__dict__,
            "groups": self.groups.to_json() if self.groups is not None else None,
            "split": {"train": self.split.train_frac, "val": self.split.val_frac,
                      "test": self.split.test_frac, "seed": self.split.seed},
            "scn": {k: getattr(self.scn, k) for k in self.scn.__dataclass_fields__},
            "solver": {k: getattr(self.solver, k) for k in self.solver.__dataclass_fields__},
            "estimate": self.estimate.__dict__,
            "nodes": self.nodes,
            "rvfl_alpha": self.rvfl_alpha,
            "repeats": self.repeats,
            "lambdas": self.lambdas,
            "normalize_target": self.normalize_target,
            "seed": self.seed,
            "out": self.out,
            "demo": self.demo.__dict__,
        }


def _replace(obj, **changes):
    kw = dict(obj.__dict__)
    kw.update(changes)
    return type(obj)(**kw)


def _split_with_seed(split, seed):
    return SplitSpec(split.train_frac, split.val_frac, split.test_frac, seed)


def _check(cond, path, message):
    if not cond:
        raise ConfigError(f"{path}: {message}")


def load_config(path):
    """Read and validate a JSON configuration file."""
    if not os.path.isfile(path):
        raise ConfigError(f"config: no such file {path}")
    try:
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: {path} is not valid JSON ({exc})") from exc
    return parse_config(obj, base_dir=os.path.dirname(os.path.abspath(path)))


def parse_config(obj, base_dir="."):
    """Validate a configuration mapping; errors name the offending field."""
    top = _Reader(obj)
    seed = top.get("seed", int, 0)
    dataset = _parse_dataset(top.sub("dataset"), base_dir)
    groups = _parse_groups(top, base_dir)
    split = _parse_split(top.sub("split"), seed)
    scn_cfg = _parse_scn(top.sub("scn"))
    solver = _parse_solver(top.sub("solver"))
    estimate = _parse_estimate(top.sub("estimate"))

    nodes = top.get("nodes", (int,), None)
    if nodes is not None:
        _check(all(L >= 1 for L in nodes), "nodes", "every hidden-node count must be >= 1")
    rvfl_alpha = top.get("rvfl_alpha", (float,), None)
    if rvfl_alpha is not None:
        _check(all(a > 0 for a in rvfl_alpha), "rvfl_alpha", "every alpha must be > 0")
    repeats = top.get("repeats", int, 10)
    _check(repeats >= 1, "repeats", "must be >= 1")
    lambdas = top.get("lambdas", (float,), DEFAULT_LAMBDAS)
    _check(len(lambdas) >= 1, "lambdas", "must be nonempty")
    for i, lam in enumerate(lambdas):
        _check(0 < lam < 1, f"lambdas[{i}]", f"lambda must lie in (0, 1), got {lam}")
    normalize_target = top.get("normalize_target", bool, False)
    out = top.get("out", str, "results")
    demo = _parse_demo(top.sub("demo"))
    top.finish()
    return ExperimentConfig(
        dataset=dataset, groups=groups, split=split, scn=scn_cfg, solver=solver,
        estimate=estimate, nodes=nodes, rvfl_alpha=rvfl_alpha, repeats=repeats,
        lambdas=lambdas, normalize_target=normalize_target, seed=seed, out=out,
        demo=demo,
    )


def _parse_dataset(r, base_dir):
    kind = r.get("kind", str, "surrogate")
    _check(kind in ("csv", "surrogate", "demo"), r.at("kind"),
           f"must be one of csv, surrogate, demo; got {kind!r}")
    max_rows = r.get("max_rows", int, None)
    if max_rows is not None:
        _check(max_rows >= 3, r.at("max_rows"), "must be >= 3")
    if kind == "csv":
        path = r.get("path", str)
        if not os.path.isabs(path):
            path = os.path.join(base_dir, path)
        _check(os.path.isfile(path), r.at("path"), f"no such file {path}")
        layout = r.get("layout", str, None)
        if layout is not None:
            _check(layout in LAYOUTS, r.at("layout"), f"must be one of {sorted(LAYOUTS)}")
        default_target = LAYOUTS[layout][1] if layout else -1
        cfg = DatasetConfig(
            kind="csv", path=path, target=r.get("target", "column", default_target),
            delimiter=r.get("delimiter", str, ","), has_header=r.get("has_header", bool, None),
            layout=layout, max_rows=max_rows, seed=r.get("seed", int, 0),
        )
        _check(len(cfg.delimiter) == 1, r.at("delimiter"), "must be a single character")
    elif kind == "surrogate":
        shape = r.get("shape", str, "twitter")
        _check(shape in LAYOUTS, r.at("shape"), f"must be one of {sorted(LAYOUTS)}")
        n = r.get("n", int, 10000)
        _check(n >= 3, r.at("n"), "must be >= 3")
        cfg = DatasetConfig(kind="surrogate", shape=shape, n=n, seed=r.get("seed", int, 0),
                            max_rows=max_rows)
    else:
        n = r.get("n", int, 5000)
        _check(n >= 3, r.at("n"), "must be >= 3")
        cfg = DatasetConfig(kind="demo", n=n, seed=r.get("seed", int, 0), max_rows=max_rows)
    r.finish()
    return cfg


def _parse_groups(top, base_dir):
    if not top.has("groups"):
        top.seen.add("groups")
        return None
    value = top.get("groups", "any")
    path = "groups"
    try:
        if isinstance(value, str):
            if value in LAYOUTS:
                return LAYOUTS[value][0]
            fpath = value if os.path.isabs(value) else os.path.join(base_dir, value)
            _check(os.path.isfile(fpath), path, f"no such file {fpath}")
            spec = FeatureGroupSpec.from_json(fpath)
        elif isinstance(value, dict):
            spec = FeatureGroupSpec.from_json(value)
        else:
            raise ConfigError(f"{path}: expected an object, a file name or a known layout")
    except ConfigError:
        raise
    except (ScneError, ValueError, TypeError, KeyError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    # overlap and index range are checkable before the data width is known
    seen = {}
    for m, g in enumerate(spec.groups):
        for c in g:
            _check(c >= 1, f"groups.groups[{m}]", f"column {c} is not a 1-based index")
            _check(c not in seen, f"groups.groups[{m}]",
                   f"column {c} overlaps group {seen.get(c, 0) + 1}")
            seen[c] = m
    return spec


def _parse_split(r, seed):
    tr = r.get("train", float, 0.70)
    va = r.get("val", float, 0.15)
    te = r.get("test", float, 0.15)
    s = r.get("seed", int, seed)
    r.finish()
    for key, v in (("train", tr), ("val", va), ("test", te)):
        _check(v > 0, r.at(key), "fraction must be positive")
    total = tr + va + te
    _check(abs(total - 1.0) <= 1e-9, r.path or "split", f"fractions sum to {total!r}, not 1")
    return SplitSpec(tr, va, te, s)


def _parse_scn(r):
    kw = {}
    for key, kind in (("L_max", int), ("T_max", int), ("tol", float), ("batch_size", int),
                      ("ridge", float), ("activation", str)):
        if r.has(key):
            kw[key] = r.get(key, kind)
    if r.has("scopes"):
        kw["scopes"] = r.get("scopes", (float,))
    if r.has("r_sequence"):
        kw["r_sequence"] = r.get("r_sequence", (float,))
    r.finish()
    kw.setdefault("L_max", 120)
    try:
        return ScnConfig(**kw)
    except ScneError as exc:
        raise ConfigError(f"{r.path}: {exc}") from exc


def _parse_solver(r):
    method = r.get("method", str, "jacobi")
    _check(method in ncl.METHODS, r.at("method"), f"must be one of {', '.join(ncl.METHODS)}")
    lam = r.get("lambda", float, 0.10)
    _check(0 < lam < 1, r.at("lambda"), f"lambda must lie in (0, 1), got {lam}")
    ridge = r.get("ridge", float, 0.0)
    _check(ridge >= 0, r.at("ridge"), "must be >= 0")
    k_max = r.get("k_max", int, 10)
    _check(k_max >= 1, r.at("k_max"), "must be >= 1")
    tol = r.get("tol", float, 1e-6)
    _check(tol >= 0, r.at("tol"), "must be >= 0")
    step_tol = r.get("step_tol", float, 0.0)
    _check(step_tol >= 0, r.at("step_tol"), "must be >= 0")
    r.finish()
    return SolverConfig(method=method, lam=lam, ridge=ridge, k_max=k_max, tol=tol,
                        step_tol=step_tol)


def _parse_estimate(r):
    mode = r.get("mode", str, "scn")
    _check(mode in ("scn", "rvfl"), r.at("mode"), "must be scn or rvfl")
    L_range = r.get("L_range", (int,), (1, 120))
    _check(len(L_range) == 2 and 1 <= L_range[0] <= L_range[1], r.at("L_range"),
           "must be [lo, hi] with 1 <= lo <= hi")
    repeats = r.get("repeats", int, 10)
    _check(repeats >= 1, r.at("repeats"), "must be >= 1")
    n_train = r.get("n_train", int, 70000)
    n_val = r.get("n_val", int, 30000)
    _check(n_train >= 1, r.at("n_train"), "must be >= 1")
    _check(n_val >= 1, r.at("n_val"), "must be >= 1")
    alphas = r.get("alphas", (float,), DEFAULT_ALPHAS)
    _check(len(alphas) >= 1 and all(a > 0 for a in alphas), r.at("alphas"),
           "must be a nonempty list of positive numbers")
    r.finish()
    return EstimateConfig(mode, tuple(L_range), repeats, n_train, n_val, alphas)


def _parse_demo(r):
    d = DemoConfig()
    kw = {}
    for key, kind in (("n", int), ("n_train", int), ("M", int), ("timing_repeats", int),
                      ("ridge", float), ("lambda", float), ("tol", float), ("k_max", int)):
        if r.has(key):
            kw["lam" if key == "lambda" else key] = r.get(key, kind)
    if r.has("grid"):
        kw["grid"] = r.get("grid", (int,))
    r.finish()
    d = _replace(d, **kw)
    _check(1 <= d.n_train < d.n, r.at("n_train"), "must lie in [1, n)")
    _check(d.M >= 1, r.at("M"), "must be >= 1")
    _check(len(d.grid) >= 1 and all(L >= 1 for L in d.grid), r.at("grid"),
           "must be a nonempty list of positive node counts")
    _check(d.timing_repeats >= 1, r.at("timing_repeats"), "must be >= 1")
    _check(d.ridge > 0, r.at("ridge"), "the regularized run needs ridge > 0")
    _check(0 < d.lam < 1, r.at("lambda"), f"lambda must lie in (0, 1), got {d.lam}")
    _check(d.k_max >= 1, r.at("k_max"), "must be >= 1")
    return d


# ---------------------------------------------------------------- data


def load_dataset(cfg):
    """Materialize the configured dataset.

    Returns ``(data, spec, rows)`` where ``rows`` maps each row of ``data``
    to its position in the source (file data row or generated sample).
    """
    dc = cfg.dataset
    if dc.kind == "csv":
        data = dataio.load_csv(dc.path, dc.target, dc.has_header, dc.delimiter)
        if dc.layout is not None:
            expected = LAYOUTS[dc.layout][2]
            if data.d + 1 != expected:
                raise DataError(
                    f"{dc.path}: the {dc.layout} layout has {expected} columns "
                    f"({expected - 1} features + target), found {data.d + 1}"
                )
        default_spec = LAYOUTS[dc.layout][0] if dc.layout else None
    elif dc.kind == "surrogate":
        spec0 = LAYOUTS[dc.shape][0]
        data = dataio.grouped_surrogate(spec0, dc.n, seed=dc.seed)
        default_spec = spec0
    else:
        data = dataio.synth_generate(dc.n, seed=dc.seed)
        default_spec = FeatureGroupSpec(((1,), (2,)), ("x1", "x2"))

    rows = np.arange(data.n)
    if dc.max_rows is not None and data.n > dc.max_rows:
        rows = np.sort(np.random.default_rng(dc.seed).choice(data.n, dc.max_rows, replace=False))
        data = data.take(rows)

    spec = cfg.groups if cfg.groups is not None else default_spec
    if spec is None:
        raise ConfigError("groups: required for a csv dataset without a known layout")
    try:
        spec.validate(data.d)
    except ScneError as exc:
        raise ConfigError(f"groups: {exc} (dataset has {data.d} feature columns)") from exc
    return data, spec, rows


@dataclass
class _Prepared:
    data: Dataset
    spec: FeatureGroupSpec
    rows: np.ndarray
    idx: tuple

    def part(self, k):
        return self.data.take(self.idx[k])


def _prepare(cfg):
    data, spec, rows = load_dataset(cfg)
    if data.n < 3:
        raise DataError("need at least 3 rows to split")
    idx = dataio.split_indices(data.n, cfg.split)
    if any(len(i) == 0 for i in idx):
        raise DataError(f"{data.n} rows are too few for split fractions "
                        f"{cfg.split.train_frac}/{cfg.split.val_frac}/{cfg.split.test_frac}")
    return _Prepared(data, spec, rows, idx)


def _downsample(ds, n, seed, what):
    if n >= ds.n:
        if n > ds.n:
            log.warning("requested %d %s rows but only %d are available; using all of them",
                        n, what, ds.n)
        return ds
    pick = np.sort(np.random.default_rng(seed).choice(ds.n, n, replace=False))
    return ds.take(pick)


# ---------------------------------------------------------------- output


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.6g}"
    return str(v)


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    return obj


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_jsonable(obj), fh, indent=2)
        fh.write("\n")


def _manifest(cfg, command, wall, files, extra=None):
    obj = {
        "command": command,
        "seed": cfg.seed,
        "config": cfg.echo(),
        "versions": {
            "scne": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
        "wall_seconds": wall,
        "outputs": files,
        "started": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    if extra:
        obj.update(extra)
    _write_json(os.path.join(cfg.out, "manifest.json"), obj)


def box_stats(values):
    """Median, quartiles, inner fences at 1.5 IQR and the points outside them."""
    v = np.asarray(values, dtype=float)
    q1, med, q3 = np.percentile(v, [25, 50, 75])
    iqr = q3 - q1
    lo, hi = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    return {
        "median": float(med),
        "q1": float(q1),
        "q3": float(q3),
        "lower_fence": float(lo),
        "upper_fence": float(hi),
        "outliers": [float(x) for x in v if x < lo or x > hi],
    }


# ---------------------------------------------------------------- commands


def run_demo(cfg):
    """Synthetic-function demonstration: solver timing and weight correlations.

    Writes ``time_plain.csv``, ``time_regularized.csv``,
    ``corr_plain.csv`` and ``corr_regularized.csv``.
    """
    t0 = time.perf_counter()
    d = cfg.demo
    os.makedirs(cfg.out, exist_ok=True)
    data = dataio.synth_generate(d.n, seed=cfg.seed)
    train = data.take(np.arange(d.n_train))
    test = data.take(np.arange(d.n_train, d.n))
    models = diagnostics.grow_base_models([train] * d.M, max(d.grid), cfg.seed)
    grow_time = time.perf_counter() - t0

    files, summary = [], {}
    for tag, ridge in (("plain", 0.0), ("regularized", d.ridge)):
        rows = diagnostics.weight_correlation_study(
            train, d.M, d.grid, d.lam, ridge, d.k_max, cfg.seed, d.tol, models=models
        )
        recs = diagnostics.bench_construction(
            train, d.M, d.grid, repeats=d.timing_repeats, lam=d.lam, ridge=ridge,
            k_max=d.k_max, tol=d.tol, models=models,
        )
        corr_file, time_file = f"corr_{tag}.csv", f"time_{tag}.csv"
        _write_csv(os.path.join(cfg.out, corr_file), ["L_m", "L_total", "A1_A2", "A1_A3", "A2_A3"],
                   [(r.L_m, r.L_total, r.a1_a2, r.a1_a3, r.a2_a3) for r in rows])
        _write_csv(os.path.join(cfg.out, time_file), ["L_m", "L_total", "method", "wall_seconds"],
                   [(r.L_m, r.L_total, r.method, r.wall_seconds) for r in recs])
        files += [corr_file, time_file]
        summary[tag] = {
            "ridge": ridge,
            "correlations": [r.__dict__ for r in rows],
            "timings": [r.__dict__ for r in recs],
        }

    _write_json(os.path.join(cfg.out, "demo.json"), summary)
    files.append("demo.json")
    _manifest(cfg, "demo", {"total": time.perf_counter() - t0, "base_model_growth": grow_time},
              files, {"samples": {"train": train.n, "test": test.n}})
    return summary


def run_bench(cfg, methods=("analytic", "jacobi", "gauss_seidel")):
    """Construction timing on the demonstration data; writes ``bench.csv``."""
    t0 = time.perf_counter()
    d = cfg.demo
    for m in methods:
        if m not in ncl.METHODS:
            raise ConfigError(f"method: must be one of {', '.join(ncl.METHODS)}, got {m!r}")
    os.makedirs(cfg.out, exist_ok=True)
    data = dataio.synth_generate(d.n, seed=cfg.seed)
    train = data.take(np.arange(d.n_train))
    recs = diagnostics.bench_construction(
        train, d.M, d.grid, methods=methods, repeats=d.timing_repeats, lam=d.lam,
        ridge=cfg.solver.ridge, k_max=d.k_max, tol=d.tol, seed=cfg.seed,
    )
    _write_csv(os.path.join(cfg.out, "bench.csv"), ["L_m", "L_total", "method", "wall_seconds"],
               [(r.L_m, r.L_total, r.method, r.wall_seconds) for r in recs])
    _manifest(cfg, "bench", {"total": time.perf_counter() - t0}, ["bench.csv"])
    return recs


def _estimation_sets(cfg, prep):
    est = cfg.estimate
    train = _downsample(prep.part(0), est.n_train, cfg.seed, "training")
    val = _downsample(prep.part(1), est.n_val, cfg.seed + 1, "validation")
    (trn, van), _, _ = dataio.minmax_fit_apply(train, [val], cfg.normalize_target)
    return (dataio.partition_features(trn, prep.spec),
            dataio.partition_features(van, prep.spec), train.n, val.n)


def _estimate_nodes(cfg, ptr, pva):
    out = []
    for m, (a, b) in enumerate(zip(ptr, pva)):
        res = scn.node_search(a, b, cfg.estimate.L_range, cfg.estimate.repeats,
                              cfg.scn.replace(seed=cfg.seed + 1000 * m))
        out.append(res)
        log.info("group %d: L = %d (argmins %s)", m + 1, res.chosen, res.argmins)
    return out


def _estimate_alphas(cfg, ptr, pva, nodes):
    out = []
    for m, (a, b, L) in enumerate(zip(ptr, pva, nodes)):
        res = scn.estimate_alpha(a, b, L, cfg.estimate.alphas, cfg.estimate.repeats,
                                 cfg.seed + 1000 * m, cfg.scn.ridge, cfg.scn.activation)
        out.append(res)
        log.info("group %d: alpha = %g", m + 1, res[0])
    return out


def _check_per_group(values, spec, name):
    if values is not None and len(values) != spec.M:
        raise ConfigError(f"{name}: {len(values)} entries for {spec.M} feature groups")


def run_estimate(cfg, mode=None):
    """Hidden-node (SCN) or scope (RVFL) estimation per feature group.

    Writes ``estimates.csv`` and ``estimates.json``.
    """
    t0 = time.perf_counter()
    mode = mode or cfg.estimate.mode
    prep = _prepare(cfg)
    _check_per_group(cfg.nodes, prep.spec, "nodes")
    ptr, pva, n_tr, n_va = _estimation_sets(cfg, prep)
    os.makedirs(cfg.out, exist_ok=True)
    names = _group_names(prep.spec)
    if mode == "scn":
        res = _estimate_nodes(cfg, ptr, pva)
        R = cfg.estimate.repeats
        header = ["group", "name", "chosen_L"] + [f"argmin_{k + 1}" for k in range(R)]
        rows = [[m + 1, names[m], r.chosen, *r.argmins] for m, r in enumerate(res)]
        result = {"mode": "scn", "chosen": [r.chosen for r in res],
                  "argmins": [r.argmins for r in res]}
    else:
        nodes = cfg.nodes or [r.chosen for r in _estimate_nodes(cfg, ptr, pva)]
        res = _estimate_alphas(cfg, ptr, pva, nodes)
        alphas = cfg.estimate.alphas
        header = ["group", "name", "L", "alpha_star"] + [f"rmse_alpha_{a:g}" for a in alphas]
        rows = [[m + 1, names[m], nodes[m], r[0], *r[2]] for m, r in enumerate(res)]
        result = {"mode": "rvfl", "nodes": list(nodes), "chosen": [r[0] for r in res],
                  "alphas": list(alphas), "scores": [r[2] for r in res]}
    result["rows"] = {"train": n_tr, "val": n_va}
    _write_csv(os.path.join(cfg.out, "estimates.csv"), header, rows)
    _write_json(os.path.join(cfg.out, "estimates.json"), result)
    _manifest(cfg, "estimate", {"total": time.perf_counter() - t0},
              ["estimates.csv", "estimates.json"])
    return result


def _group_names(spec):
    return list(spec.names) if spec.names else [f"G{m + 1}" for m in range(spec.M)]


def _hyperparameters(cfg, prep, need_alpha):
    _check_per_group(cfg.nodes, prep.spec, "nodes")
    _check_per_group(cfg.rvfl_alpha, prep.spec, "rvfl_alpha")
    nodes, alphas = cfg.nodes, cfg.rvfl_alpha
    if nodes is None or (need_alpha and alphas is None):
        ptr, pva, _, _ = _estimation_sets(cfg, prep)
        if nodes is None:
            nodes = [r.chosen for r in _estimate_nodes(cfg, ptr, pva)]
        if need_alpha and alphas is None:
            alphas = [r[0] for r in _estimate_alphas(cfg, ptr, pva, nodes)]
    return list(nodes), (list(alphas) if alphas is not None else None)


def _final_sets(cfg, prep):
    combined = Dataset.concat([prep.part(0), prep.part(1)])
    (cn, tn), xp, yp = dataio.minmax_fit_apply(combined, [prep.part(2)], cfg.normalize_target)
    rows = prep.rows[np.concatenate([prep.idx[0], prep.idx[1]])]
    return cn, tn, xp, yp, rows


def _scn_models(cfg, parts, nodes, base_seed):
    return [
        scn.build_scn(p, cfg.scn.replace(L_max=L, seed=base_seed + m))[0]
        for m, (p, L) in enumerate(zip(parts, nodes))
    ]


def _rvfl_models(cfg, parts, nodes, alphas, base_seed):
    return [
        scn.build_rvfl(p, RvflConfig(L, a, base_seed + m, cfg.scn.ridge, cfg.scn.activation))
        for m, (p, L, a) in enumerate(zip(parts, nodes, alphas))
    ]


def _repeat_seed(cfg, k):
    return cfg.seed + 1000 * (k + 1)


def run_train(cfg):
    """Estimate on train/val, retrain on train+val, evaluate once on test.

    Repeats the final stage ``cfg.repeats`` times for SCN (SCNE) and RVFL
    (DNNE) base models under all four solvers.  Writes ``results.csv``,
    ``results.json``, ``model.json`` and the run manifest.
    """
    t0 = time.perf_counter()
    prep = _prepare(cfg)
    nodes, alphas = _hyperparameters(cfg, prep, need_alpha=True)
    t_est = time.perf_counter() - t0
    cn, tn, xp, yp, train_rows = _final_sets(cfg, prep)
    pc = dataio.partition_features(cn, prep.spec)

    R = cfg.repeats
    families = {"SCNE": None, "DNNE": None}
    scores = {(f, m): {"train": [], "test": [], "seconds": []} for f in families for m in ncl.METHODS}
    saved = None
    for k in range(R):
        seed = _repeat_seed(cfg, k)
        families["SCNE"] = _scn_models(cfg, pc, nodes, seed)
        families["DNNE"] = _rvfl_models(cfg, pc, nodes, alphas, seed)
        for fam, models in families.items():
            for method in ncl.METHODS:
                ens, rep = ncl.fit_ensemble(models, pc, prep.spec, cfg.solver.replace(method=method))
                s = scores[(fam, method)]
                s["train"].append(numkit.rmse(ens.predict(cn.X), cn.y))
                s["test"].append(numkit.rmse(ens.predict(tn.X), tn.y))
                s["seconds"].append(rep.wall_time)
                if k == 0 and fam == "SCNE" and method == cfg.solver.method:
                    saved = ens
    os.makedirs(cfg.out, exist_ok=True)

    saved.x_norm, saved.y_norm = xp, yp
    raw_y = Dataset.concat([prep.part(0), prep.part(1)]).y
    pred = saved.predict(cn.X)
    if yp is not None:
        pred = yp.invert(pred)
    saved.meta = {
        "train_rows": train_rows.tolist(),
        "target_name": _target_name(cfg),
        "normalize_target": cfg.normalize_target,
        "nodes": nodes,
        "seed": _repeat_seed(cfg, 0),
        "train_rmse": numkit.rmse(pred, raw_y),
    }
    _write_json(os.path.join(cfg.out, "model.json"), saved.to_json())

    table = []
    for (fam, method), s in scores.items():
        ddof = 1 if R > 1 else 0
        table.append({
            "family": fam,
            "method": method,
            "label": METHOD_LABELS[method],
            "train_mean": float(np.mean(s["train"])),
            "train_std": float(np.std(s["train"], ddof=ddof)),
            "test_mean": float(np.mean(s["test"])),
            "test_std": float(np.std(s["test"], ddof=ddof)),
        })
    _write_csv(
        os.path.join(cfg.out, "results.csv"),
        ["family", "method", "train_rmse_mean", "train_rmse_std", "test_rmse_mean", "test_rmse_std"],
        [(r["family"], r["label"], r["train_mean"], r["train_std"], r["test_mean"], r["test_std"])
         for r in table],
    )
    result = {
        "nodes": nodes,
        "rvfl_alpha": alphas,
        "repeats": R,
        "rows": {"train": int(prep.idx[0].size), "val": int(prep.idx[1].size),
                 "test": int(prep.idx[2].size)},
        "normalize_target": cfg.normalize_target,
        "table": table,
        "trials": {f"{fam}/{m}": {"train": s["train"], "test": s["test"]}
                   for (fam, m), s in scores.items()},
        "model_train_rmse": saved.meta["train_rmse"],
    }
    _write_json(os.path.join(cfg.out, "results.json"), result)
    solver_seconds = {f"{fam}/{m}": float(np.sum(s["seconds"])) for (fam, m), s in scores.items()}
    _manifest(cfg, "train",
              {"total": time.perf_counter() - t0, "estimation": t_est, "solvers": solver_seconds},
              ["results.csv", "results.json", "model.json"],
              {"normalize_target": cfg.normalize_target,
               "rmse_units": "normalized target" if cfg.normalize_target else "raw target"})
    return result


def _target_name(cfg):
    t = cfg.dataset.target
    return t if isinstance(t, str) else None


def run_sweep(cfg):
    """Test-RMSE distribution of SCNE for each lambda in ``cfg.lambdas``.

    Base models are grown once per repeat and shared across the lambdas.
    Writes ``sweep.csv`` and ``sweep.json``.
    """
    t0 = time.perf_counter()
    prep = _prepare(cfg)
    nodes, _ = _hyperparameters(cfg, prep, need_alpha=False)
    cn, tn, _, _, _ = _final_sets(cfg, prep)
    pc = dataio.partition_features(cn, prep.spec)
    tests = {lam: [] for lam in cfg.lambdas}
    for k in range(cfg.repeats):
        models = _scn_models(cfg, pc, nodes, _repeat_seed(cfg, k))
        for lam in cfg.lambdas:
            ens, _ = ncl.fit_ensemble(models, pc, prep.spec, cfg.solver.replace(lam=lam))
            tests[lam].append(numkit.rmse(ens.predict(tn.X), tn.y))
    stats = []
    for lam, v in tests.items():
        st = box_stats(v)
        st["lambda"] = lam
        st["test_rmse"] = v
        stats.append(st)
    medians = [s["median"] for s in stats]
    spread = (max(medians) - min(medians)) / min(medians)
    os.makedirs(cfg.out, exist_ok=True)
    _write_csv(
        os.path.join(cfg.out, "sweep.csv"),
        ["lambda", "median", "q1", "q3", "lower_fence", "upper_fence", "n_outliers", "outliers"],
        [(s["lambda"], s["median"], s["q1"], s["q3"], s["lower_fence"], s["upper_fence"],
          len(s["outliers"]), ";".join(_fmt(x) for x in s["outliers"])) for s in stats],
    )
    result = {"nodes": nodes, "method": cfg.solver.method, "stats": stats,
              "median_spread": spread}
    _write_json(os.path.join(cfg.out, "sweep.json"), result)
    _manifest(cfg, "sweep", {"total": time.perf_counter() - t0}, ["sweep.csv", "sweep.json"])
    return result


def run_predict(model_path, input_path, out_path, delimiter=","):
    """Predict with a saved ensemble; writes one ``prediction`` per input row.

    The input may hold exactly the model's feature columns or those plus
    the target column, which is dropped.  Returns the predictions.
    """
    if not os.path.isfile(model_path):
        raise DataError(f"no such model file: {model_path}")
    try:
        with open(model_path, encoding="utf-8") as fh:
            model = ncl.EnsembleModel.from_json(json.load(fh))
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise DataError(f"{model_path}: not a saved ensemble model ({exc})") from exc
    header, values = dataio.read_table(input_path, delimiter=delimiter)
    d = model.d
    if os.path.isdir(out_path):
        out_path = os.path.join(out_path, "predictions.csv")
    if values.shape[0] == 0:
        open(out_path, "w").close()
        return np.empty(0)
    width = values.shape[1]
    if width == d + 1:
        target = model.meta.get("target_name")
        if header is not None and target in header:
            t = header.index(target)
        else:
            t = width - 1
        X = np.delete(values, t, axis=1)
    elif width == d:
        X = values
    else:
        raise DataError(
            f"{input_path}: {width} columns, but the model expects {d} feature columns "
            f"(or {d + 1} including the target)"
        )
    if model.x_norm is not None:
        X = model.x_norm.apply(X)
    pred = model.predict(X)
    if model.y_norm is not None:
        pred = model.y_norm.invert(pred)
    with open(out_path, "w", newline="", encoding="utf-8") as fh:
        fh.write("prediction\n")
        for v in pred:
            fh.write(repr(float(v)) + "\n")
    return pred
