"""Solver comparison experiments and the ensemble error decomposition."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import ncl, numkit
from .dataio import Dataset, FeatureGroupSpec, partition_features
from .errors import ParameterError
from .scn import DEFAULT_R_SEQUENCE, ScnConfig, build_scn

log = logging.getLogger(__name__)

__all__ = [
    "DEMO_SCN_CONFIG",
    "grow_base_models",
    "CorrelationRow",
    "weight_correlation_study",
    "TimingRecord",
    "bench_construction",
    "SyntheticProblem",
    "additive_problem",
    "DecompositionConfig",
    "DecompositionReport",
    "decompose_generalization",
]

# r is relaxed far past the default sequence so that models on the smooth
# demo function keep growing once the residual reaches round-off level.
DEMO_SCN_CONFIG = ScnConfig(
    L_max=500,
    tol=1e-12,
    r_sequence=DEFAULT_R_SEQUENCE + tuple(1.0 - 10.0**-k for k in range(6, 13)),
)


def grow_base_models(parts, L_max, seed=0, config=DEMO_SCN_CONFIG):
    """One SCN per dataset in ``parts``, model ``m`` seeded with ``seed + m``."""
    models = []
    for m, part in enumerate(parts):
        model, _ = build_scn(part, config.replace(L_max=L_max, seed=seed + m))
        models.append(model)
    return models


def _systems_on_grid(models, L_grid):
    for L in L_grid:
        if any(m.hidden_count < L for m in models):
            log.warning("skipping L_m=%d: a base model stopped growing before it", L)
            continue
        trunc = [m.truncate(L) for m in models]
        yield L, trunc


@dataclass
class CorrelationRow:
    L_m: int
    L_total: int
    a1_a2: float
    a1_a3: float
    a2_a3: float


def weight_correlation_study(data, M, L_grid, lam=0.1, ridge=0.0, k_max=5, seed=0,
                             tol=1e-6, models=None, scn_config=DEMO_SCN_CONFIG):
    """Pairwise Pearson correlation of the output weights of the three solvers.

    All ``M`` base models see the same inputs.  They are grown once to
    ``max(L_grid)`` nodes and truncated for each grid point, so every
    solver works on the same system.  A1, A2, A3 are the analytic, block
    Jacobi and block Gauss-Seidel solutions.
    """
    if not L_grid:
        raise ParameterError("L_grid must be nonempty")
    parts = [data] * M
    if models is None:
        models = grow_base_models(parts, max(L_grid), seed, scn_config)
    cfg = ncl.SolverConfig(method="jacobi", lam=lam, ridge=ridge, k_max=k_max, tol=tol)
    rows = []
    for L, trunc in _systems_on_grid(models, L_grid):
        system = ncl.build_system(trunc, parts, lam, ridge)
        B1, _ = ncl.solve_analytic(system)
        B2, _ = ncl.solve_jacobi(system, cfg)
        B3, _ = ncl.solve_gauss_seidel(system, cfg)
        if np.array_equal(B1, B2) and np.array_equal(B2, B3):
            c12 = c13 = c23 = 1.0
        else:
            c12 = numkit.pearson_corr(B1, B2)
            c13 = numkit.pearson_corr(B1, B3)
            c23 = numkit.pearson_corr(B2, B3)
        rows.append(CorrelationRow(L, system.L_total, c12, c13, c23))
    return rows


@dataclass
class TimingRecord:
    L_total: int
    method: str
    wall_seconds: float
    L_m: int = 0
    peak_note: str = ""


def bench_construction(data, M, L_grid, methods=("analytic", "jacobi", "gauss_seidel"),
                       repeats=3, lam=0.1, ridge=0.0, k_max=5, tol=1e-6, seed=0,
                       models=None, scn_config=DEMO_SCN_CONFIG):
    """Median wall time of ensemble construction per ``(L_m, method)``.

    The clock covers hidden-output evaluation, system assembly and the
    solve.  Base-model growth happens beforehand and is not timed.
    """
    if repeats < 1:
        raise ParameterError("repeats must be >= 1")
    parts = [data] * M
    if models is None:
        models = grow_base_models(parts, max(L_grid), seed, scn_config)
    records = []
    for L, trunc in _systems_on_grid(models, L_grid):
        for method in methods:
            cfg = ncl.SolverConfig(method=method, lam=lam, ridge=ridge, k_max=k_max, tol=tol)
            times = []
            for _ in range(repeats):
                t0 = time.perf_counter()
                system = ncl.build_system(trunc, parts, lam, ridge)
                ncl.solve(system, cfg)
                times.append(time.perf_counter() - t0)
            records.append(TimingRecord(L * M, method, float(np.median(times)), L))
    return records


@dataclass
class SyntheticProblem:
    """Additive regression problem with a known target per feature group.

    ``y = (1/M) * sum_m g_m(x^(m)) + eps`` with ``eps ~ N(0, sigma2)`` and
    inputs uniform on ``[0, 1]``.
    """

    group_dims: tuple
    funcs: tuple
    sigma2: float = 0.01

    def __post_init__(self):
        if len(self.group_dims) != len(self.funcs):
            raise ParameterError("one target function per feature group is required")

    @property
    def M(self):
        return len(self.group_dims)

    @property
    def group_spec(self):
        bounds = np.cumsum((0,) + tuple(self.group_dims))
        return FeatureGroupSpec.from_ranges(
            [(bounds[m] + 1, bounds[m + 1]) for m in range(self.M)]
        )

    def group_targets(self, X):
        cols = self.group_spec.column_slices()
        return np.stack([g(X[:, c]) for g, c in zip(self.funcs, cols)])

    def g(self, X):
        return self.group_targets(X).mean(axis=0)

    def sample_inputs(self, n, rng):
        return rng.uniform(0.0, 1.0, size=(n, sum(self.group_dims)))

    def sample(self, n, rng):
        X = self.sample_inputs(n, rng)
        y = self.g(X) + rng.normal(0.0, np.sqrt(self.sigma2), size=n)
        return Dataset(X, y)


def additive_problem(M=3, sigma2=0.01):
    """Three smooth nonlinear group targets on 2-D feature groups (cycled for other M)."""
    base = (
        lambda Z: np.sin(2.0 * np.pi * Z[:, 0]) + Z[:, 1],
        lambda Z: np.exp(-4.0 * ((Z[:, 0] - 0.5) ** 2 + (Z[:, 1] - 0.5) ** 2)),
        lambda Z: np.cos(np.pi * Z[:, 0] * Z[:, 1]),
    )
    funcs = tuple(base[m % len(base)] for m in range(M))
    return SyntheticProblem((2,) * M, funcs, sigma2)


@dataclass(frozen=True)
class DecompositionConfig:
    n_train: int = 200
    scn: ScnConfig = ScnConfig(L_max=10, T_max=30)
    solver: ncl.SolverConfig = ncl.SolverConfig(method="analytic", lam=0.1, ridge=1e-3)
    vary_data: bool = True
    vary_seed: bool = True


@dataclass
class DecompositionReport:
    avg_variance: float
    avg_covariance: float
    avg_bias_sq: float
    noise_sigma_sq: float
    weighted_total: float
    direct_generalization_error: float
    noiseless_direct: float
    M: int
    T: int
    cov_matrix: np.ndarray = field(repr=False, default=None)

    @property
    def relative_gap(self):
        return abs(self.weighted_total - self.direct_generalization_error) / self.direct_generalization_error

    def to_json(self):
        return {
            "avg_variance": self.avg_variance,
            "avg_covariance": self.avg_covariance,
            "avg_bias_sq": self.avg_bias_sq,
            "noise_sigma_sq": self.noise_sigma_sq,
            "weighted_total": self.weighted_total,
            "direct_generalization_error": self.direct_generalization_error,
            "noiseless_direct": self.noiseless_direct,
            "M": self.M,
            "T": self.T,
        }


def decompose_generalization(problem, config=DecompositionConfig(), T=200, holdout=None,
                             seed=0, n_holdout=500):
    """Monte-Carlo estimate of the ensemble variance/covariance/bias decomposition.

    Each of the ``T`` trials draws a fresh training set, grows one SCN per
    feature group, solves the NCL weights and predicts every base model at
    the fixed holdout inputs.  Expectations over trials use ``1/T``
    normalization, so the weighted total equals the mean squared deviation
    of the ensemble from ``g`` plus ``sigma2`` exactly; the direct estimate
    scores the ensemble against holdout targets with fresh noise per trial.
    """
    if T < 2:
        raise ParameterError("at least two trials are needed")
    rng = np.random.default_rng(seed)
    if holdout is None:
        holdout = problem.sample(n_holdout, rng)
    X0 = holdout.X
    P = X0.shape[0]
    if P < 1:
        raise ParameterError("holdout must be nonempty")
    M = problem.M
    spec = problem.group_spec
    fixed_train = problem.sample(config.n_train, rng)

    preds = np.empty((T, M, P))
    sq_err = np.empty(T)
    g0 = problem.g(X0)
    for t in range(T):
        train = problem.sample(config.n_train, rng) if config.vary_data else fixed_train
        base_seed = seed + 1000 * (t + 1) if config.vary_seed else seed
        parts = partition_features(train, spec)
        models = [
            build_scn(p, config.scn.replace(seed=base_seed + m))[0] for m, p in enumerate(parts)
        ]
        ens, _ = ncl.fit_ensemble(models, parts, spec, config.solver)
        for m, (base, cols) in enumerate(zip(ens.base_models, spec.column_slices())):
            preds[t, m] = base.predict(X0[:, cols])
        y0 = g0 + rng.normal(0.0, np.sqrt(problem.sigma2), size=P)
        sq_err[t] = np.mean((preds[t].mean(axis=0) - y0) ** 2)

    mean_f = preds.mean(axis=0)
    dev = preds - mean_f
    cov = np.einsum("tmp,tqp->mqp", dev, dev) / T
    var_m = np.einsum("mmp->mp", cov)
    avg_var = var_m.mean(axis=0)
    if M > 1:
        avg_cov = (cov.sum(axis=(0, 1)) - var_m.sum(axis=0)) / (M * (M - 1))
    else:
        avg_cov = np.zeros(P)
    bias = mean_f - problem.group_targets(X0)
    avg_bias = bias.mean(axis=0)

    weighted = (avg_var / M + (1.0 - 1.0 / M) * avg_cov + avg_bias**2).mean() + problem.sigma2
    noiseless = float(np.mean((preds.mean(axis=1) - g0) ** 2))
    if not np.isclose(weighted - problem.sigma2, noiseless, rtol=1e-8, atol=1e-14):
        raise AssertionError(
            f"decomposition identity violated: {weighted - problem.sigma2} vs {noiseless}"
        )
    return DecompositionReport(
        avg_variance=float(avg_var.mean()),
        avg_covariance=float(avg_cov.mean()),
        avg_bias_sq=float((avg_bias**2).mean()),
        noise_sigma_sq=float(problem.sigma2),
        weighted_total=float(weighted),
        direct_generalization_error=float(sq_err.mean()),
        noiseless_direct=noiseless,
        M=M,
        T=T,
        cov_matrix=cov.mean(axis=2),
    )
