"""Negative correlation learning over a fixed set of base models.

With hidden weights frozen, the NCL stationarity conditions for all
output weights form one block linear system

    c1 * H_m^T H_m beta_m + c2 * sum_{q != m} H_m^T H_q beta_q = H_m^T y

(plus ``c1 * r * beta_m`` on the left when ridge-regularized).  This module
assembles that system and solves it by naive averaging, a direct
pseudo-inverse, block Jacobi and block Gauss-Seidel.
"""
from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple

import numpy as np
import scipy.linalg

from . import numkit
from .dataio import FeatureGroupSpec, NormParams
from .errors import ParameterError, RankError, ShapeError
from .scn import ScnModel

log = logging.getLogger(__name__)

__all__ = [
    "METHODS",
    "coefficients",
    "NclSystem",
    "SolverConfig",
    "SolveReport",
    "EnsembleModel",
    "ncl_cost",
    "ncl_gradient",
    "assemble_blockmatrix",
    "block_operators",
    "initial_weights",
    "solve_naive",
    "solve_analytic",
    "solve_jacobi",
    "solve_gauss_seidel",
    "solve",
    "splitting_matrices",
    "convergence_check",
    "build_system",
    "fit_ensemble",
    "predict_ensemble",
]

METHODS = ("naive", "analytic", "jacobi", "gauss_seidel")


def coefficients(M, lam):
    """Return ``(c1, c2)`` for ``M`` models and regularizing factor ``lam``."""
    if M < 1:
        raise ParameterError("M must be >= 1")
    if not 0 <= lam < 1:
        raise ParameterError(f"lambda must lie in [0, 1), got {lam}")
    c1 = 1.0 - lam * (M - 1) ** 2 / M**2
    c2 = lam * (M - 1) / M**2
    assert c1 > 0
    return c1, c2


class NclSystem:
    """Hidden-layer outputs of ``M`` base models on one training set."""

    def __init__(self, H_list, y, lam, ridge=0.0):
        self.H_list = [numkit.as_matrix(H, f"H[{m}]") for m, H in enumerate(H_list)]
        self.y = numkit.as_vector(y, "y")
        if not self.H_list:
            raise ParameterError("at least one base model is required")
        for m, H in enumerate(self.H_list):
            if H.shape[0] != self.y.size:
                raise ShapeError(f"H[{m}] has {H.shape[0]} rows, y has {self.y.size}")
        if ridge < 0:
            raise ParameterError("ridge must be >= 0")
        self.lam = float(lam)
        self.ridge = float(ridge)
        self.c1, self.c2 = coefficients(self.M, self.lam)
        self.sizes = [H.shape[1] for H in self.H_list]
        self.offsets = np.concatenate([[0], np.cumsum(self.sizes)])

    @property
    def M(self):
        return len(self.H_list)

    @property
    def N(self):
        return self.y.size

    @property
    def L_total(self):
        return int(self.offsets[-1])

    @cached_property
    def bigH(self):
        return np.hstack(self.H_list)

    def blocks(self, B):
        B = numkit.as_vector(B, "B")
        if B.size != self.L_total:
            raise ShapeError(f"B has {B.size} entries, system needs {self.L_total}")
        return [B[self.offsets[m]:self.offsets[m + 1]] for m in range(self.M)]

    def fits(self, B):
        """Per-model training predictions ``H_m beta_m``."""
        return [H @ beta for H, beta in zip(self.H_list, self.blocks(B))]

    def ensemble_output(self, B):
        return sum(self.fits(B)) / self.M

    def e_ens(self, B):
        return numkit.rmse(self.ensemble_output(B), self.y)

    def rhs(self):
        return np.concatenate([H.T @ self.y for H in self.H_list])

    def with_lambda(self, lam):
        return NclSystem(self.H_list, self.y, lam, self.ridge)


@dataclass(frozen=True)
class SolverConfig:
    method: str = "jacobi"
    lam: float = 0.1
    ridge: float = 0.0
    k_max: int = 10
    tol: float = 1e-6
    step_tol: float = 0.0
    record_trajectory: bool = False
    divergence_factor: float = 10.0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ParameterError(f"method must be one of {METHODS}, got {self.method!r}")
        if not 0 <= self.lam < 1:
            raise ParameterError("lambda must lie in [0, 1)")
        if self.ridge < 0:
            raise ParameterError("ridge must be >= 0")
        if self.k_max < 1:
            raise ParameterError("k_max must be >= 1")
        if self.tol < 0 or self.step_tol < 0:
            raise ParameterError("tolerances must be >= 0")

    def replace(self, **changes):
        kw = {f: getattr(self, f) for f in self.__dataclass_fields__}
        kw.update(changes)
        return SolverConfig(**kw)


@dataclass
class SolveReport:
    method: str
    B: np.ndarray
    iterations: int = 0
    e_ens: list = field(default_factory=list)
    wall_time: float = 0.0
    converged: bool = True
    diverged: bool = False
    trajectory: list = field(default_factory=list)

    def to_json(self):
        return {
            "method": self.method,
            "iterations": self.iterations,
            "e_ens": list(map(float, self.e_ens)),
            "wall_time": self.wall_time,
            "converged": self.converged,
            "diverged": self.diverged,
        }


def _check_index(system, m):
    if not 0 <= m < system.M:
        raise ShapeError(f"model index {m} outside 0..{system.M - 1}")


def ncl_cost(system, m, B):
    """NCL cost of model ``m``.

    ``0.5 * (|H_m b_m - y|^2 - lam * |H_m b_m - fbar|^2)``, plus
    ``0.5 * c1 * r * |b_m|^2`` when the system carries a ridge term.
    """
    _check_index(system, m)
    fits = system.fits(B)
    f_m = fits[m]
    fbar = sum(fits) / system.M
    cost = 0.5 * (np.sum((f_m - system.y) ** 2) - system.lam * np.sum((f_m - fbar) ** 2))
    if system.ridge > 0:
        beta = system.blocks(B)[m]
        cost += 0.5 * system.c1 * system.ridge * (beta @ beta)
    return float(cost)


def ncl_gradient(system, m, B):
    """Gradient of :func:`ncl_cost` with respect to ``beta_m``."""
    _check_index(system, m)
    fits = system.fits(B)
    H = system.H_list[m]
    beta = system.blocks(B)[m]
    others = sum(fits) - fits[m]
    g = system.c1 * (H.T @ fits[m]) + system.c2 * (H.T @ others) - H.T @ system.y
    if system.ridge > 0:
        g += system.c1 * system.ridge * beta
    return g


def assemble_blockmatrix(system):
    """The ``L_total x L_total`` coefficient matrix of the NCL system."""
    off = system.offsets
    Hs = system.H_list
    A = np.empty((system.L_total, system.L_total))
    for m in range(system.M):
        for q in range(m, system.M):
            G = Hs[m].T @ Hs[q]
            if m == q:
                G *= system.c1
                if system.ridge > 0:
                    G[np.diag_indices_from(G)] += system.c1 * system.ridge
                A[off[m]:off[m + 1], off[m]:off[m + 1]] = G
            else:
                G *= system.c2
                A[off[m]:off[m + 1], off[q]:off[q + 1]] = G
                A[off[q]:off[q + 1], off[m]:off[m + 1]] = G.T
    return A


def block_operators(system):
    """Per-model least-squares operators used by the block iterations.

    ``pinv(H_m)`` without ridge, ``(H_m^T H_m + r I)^{-1} H_m^T`` with it.
    """
    if system.ridge > 0:
        return [numkit.ridge_operator(H, system.ridge) for H in system.H_list]
    ops, deficient = [], []
    for m, H in enumerate(system.H_list):
        P, rank = numkit.pinv(H, return_rank=True)
        if rank < H.shape[1]:
            deficient.append(f"H[{m}] {rank}/{H.shape[1]}")
        ops.append(P)
    if deficient:
        log.warning(
            "rank-deficient hidden outputs (%s); without ridge the block solution is not unique",
            ", ".join(deficient),
        )
    return ops


def initial_weights(system, ops=None):
    """Independent per-model fits, the starting point of every iteration."""
    ops = block_operators(system) if ops is None else ops
    return np.concatenate([P @ system.y for P in ops])


def solve_naive(system, ops=None):
    t0 = time.perf_counter()
    B = initial_weights(system, ops)
    return B, SolveReport("naive", B, 0, [system.e_ens(B)], time.perf_counter() - t0)


def solve_analytic(system):
    """Direct solve: ``pinv(HH) @ H^T y`` or, with ridge, ``HH_r^{-1} H^T y``.

    When ``c2 == 0`` (``lambda = 0`` or ``M = 1``) the system decouples into
    the independent per-model fits, which are returned as such.
    """
    t0 = time.perf_counter()
    if system.c2 == 0.0:
        # c1 == 1 here, so each block is exactly the independent fit
        B = initial_weights(system)
    else:
        A = assemble_blockmatrix(system)
        rhs = system.bigH.T @ system.y
        if system.ridge > 0:
            B = scipy.linalg.solve(A, rhs, assume_a="pos")
        else:
            B = numkit.pinv(A) @ rhs
    return B, SolveReport("analytic", B, 0, [system.e_ens(B)], time.perf_counter() - t0)


def _block_iterate(system, config, gauss_seidel, order=None):
    t0 = time.perf_counter()
    M, y, c1, c2 = system.M, system.y, system.c1, system.c2
    order = list(range(M)) if order is None else list(order)
    if sorted(order) != list(range(M)):
        raise ParameterError("order must be a permutation of the model indices")
    ops = block_operators(system)
    betas = [P @ y for P in ops]
    fits = [H @ b for H, b in zip(system.H_list, betas)]
    total = sum(fits)
    e0 = numkit.rmse(total / M, y)
    report = SolveReport("gauss_seidel" if gauss_seidel else "jacobi", None, 0, [e0])
    report.converged = False
    if config.record_trajectory:
        report.trajectory.append(np.concatenate(betas))
    if e0 < config.tol:
        report.converged = True
    prev = np.concatenate(betas)

    for k in range(1, config.k_max + 1):
        if report.converged:
            break
        if gauss_seidel:
            for m in order:
                betas[m] = ops[m] @ (y - c2 * (total - fits[m])) / c1
                new_fit = system.H_list[m] @ betas[m]
                total = total + (new_fit - fits[m])
                fits[m] = new_fit
        else:
            new = [None] * M
            for m in order:
                new[m] = ops[m] @ (y - c2 * (total - fits[m])) / c1
            betas = new
            fits = [H @ b for H, b in zip(system.H_list, betas)]
            total = sum(fits)
        report.iterations = k
        e = numkit.rmse(total / M, y)
        report.e_ens.append(e)
        cur = np.concatenate(betas)
        if config.record_trajectory:
            report.trajectory.append(cur)
        step = np.linalg.norm(cur - prev) / max(np.linalg.norm(cur), np.finfo(float).tiny)
        prev = cur
        if e < config.tol or (config.step_tol > 0 and step <= config.step_tol):
            report.converged = True
            break
        if e0 > 0 and e > config.divergence_factor * e0:
            report.diverged = True
            warnings.warn(
                f"{report.method}: E_ens grew from {e0:.3g} to {e:.3g} at iteration {k}; halted",
                RuntimeWarning,
                stacklevel=3,
            )
            break

    report.B = np.concatenate(betas)
    report.wall_time = time.perf_counter() - t0
    return report.B, report


def solve_jacobi(system, config=SolverConfig(), order=None):
    """Block Jacobi: every block update reads only the previous iterate."""
    return _block_iterate(system, config, gauss_seidel=False, order=order)


def solve_gauss_seidel(system, config=SolverConfig(), order=None):
    """Block Gauss-Seidel: block ``m`` reads blocks already updated this sweep."""
    return _block_iterate(system, config, gauss_seidel=True, order=order)


def solve(system, config):
    if config.method == "naive":
        return solve_naive(system)
    if config.method == "analytic":
        return solve_analytic(system)
    if config.method == "jacobi":
        return solve_jacobi(system, config)
    return solve_gauss_seidel(system, config)


def splitting_matrices(system):
    """Return ``(D, R, L, U)`` with ``D + R == L + U ==`` the block matrix.

    ``D`` is the block diagonal, ``L`` the block lower triangle including
    the diagonal and ``U`` the strict block upper triangle.
    """
    A = assemble_blockmatrix(system)
    off = system.offsets
    D = np.zeros_like(A)
    L = np.zeros_like(A)
    for m in range(system.M):
        rows = slice(off[m], off[m + 1])
        D[rows, rows] = A[rows, rows]
        L[rows, :off[m + 1]] = A[rows, :off[m + 1]]
    return D, A - D, L, A - L


class ConvergenceReport(NamedTuple):
    rho_jacobi: float
    rho_gs: float
    theta0: float
    lambda_bound: float


def convergence_check(system, max_iters=1000, tol=1e-9):
    """Spectral radii of both iteration matrices and the admissible lambda bound."""
    r = system.ridge
    grams = []
    for m, H in enumerate(system.H_list):
        G = H.T @ H
        if r > 0:
            G[np.diag_indices_from(G)] += r
        elif np.linalg.matrix_rank(G) < G.shape[0]:
            raise RankError(f"H[{m}]^T H[{m}] is singular; use a ridge term")
        grams.append(G)

    D, R, L, U = splitting_matrices(system)
    off = system.offsets
    DinvR = np.empty_like(R)
    for m in range(system.M):
        rows = slice(off[m], off[m + 1])
        DinvR[rows] = np.linalg.solve(D[rows, rows], R[rows])
    rho_j = numkit.spectral_radius(DinvR, max_iters, tol)
    rho_g = numkit.spectral_radius(np.linalg.solve(L, U), max_iters, tol)

    theta0 = 0.0
    for m, H in enumerate(system.H_list):
        s = 0.0
        for q, Hq in enumerate(system.H_list):
            if q != m:
                s += np.linalg.norm(np.linalg.solve(grams[m], H.T @ Hq), 2)
        theta0 = max(theta0, s)
    M = system.M
    bound = np.inf if M == 1 else M**2 / ((M - 1) * (M + theta0 - 1))
    return ConvergenceReport(rho_j, rho_g, float(theta0), float(bound))


@dataclass
class EnsembleModel:
    """Base models (carrying their NCL output weights) plus the feature grouping."""

    base_models: list
    group_spec: FeatureGroupSpec
    lam: float
    ridge: float = 0.0
    method: str = "jacobi"
    x_norm: NormParams | None = None
    y_norm: NormParams | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.base_models) != self.group_spec.M:
            raise ShapeError(
                f"{len(self.base_models)} base models for {self.group_spec.M} feature groups"
            )
        for m, (model, width) in enumerate(zip(self.base_models, self.group_spec.widths)):
            if model.input_dim != width:
                raise ShapeError(f"base model {m} expects {model.input_dim} inputs, group has {width}")

    @property
    def M(self):
        return len(self.base_models)

    @property
    def d(self):
        return sum(self.group_spec.widths)

    @property
    def B(self):
        return np.concatenate([m.beta for m in self.base_models])

    def predict(self, X):
        return predict_ensemble(self, X)

    def to_json(self):
        return {
            "lambda": self.lam,
            "ridge": self.ridge,
            "method": self.method,
            "group_spec": self.group_spec.to_json(),
            "base_models": [m.to_json() for m in self.base_models],
            "B": self.B.tolist(),
            "x_norm": self.x_norm.to_json() if self.x_norm is not None else None,
            "y_norm": self.y_norm.to_json() if self.y_norm is not None else None,
            "meta": self.meta,
        }

    @classmethod
    def from_json(cls, obj):
        spec = FeatureGroupSpec.from_json(obj["group_spec"])
        models = [ScnModel.from_json(m) for m in obj["base_models"]]
        if "B" in obj:
            sizes = np.cumsum([0] + [m.hidden_count for m in models])
            B = np.asarray(obj["B"], dtype=float)
            if B.size != sizes[-1]:
                raise ShapeError(f"B has {B.size} entries, base models hold {sizes[-1]}")
            models = [m.with_beta(B[sizes[i]:sizes[i + 1]]) for i, m in enumerate(models)]
        xn = NormParams.from_json(obj["x_norm"]) if obj.get("x_norm") else None
        yn = NormParams.from_json(obj["y_norm"]) if obj.get("y_norm") else None
        return cls(models, spec, float(obj["lambda"]), float(obj.get("ridge", 0.0)),
                   obj.get("method", "jacobi"), xn, yn, dict(obj.get("meta", {})))


def predict_ensemble(model, X):
    """Uniform average of the base-model outputs on their feature groups."""
    X = numkit.as_matrix(X, "X")
    if X.shape[1] != model.d:
        raise ShapeError(f"X has {X.shape[1]} columns, ensemble expects {model.d}")
    out = np.zeros(X.shape[0])
    for base, cols in zip(model.base_models, model.group_spec.column_slices()):
        out += base.predict(X[:, cols])
    return out / model.M


def build_system(base_models, parts, lam, ridge=0.0):
    """Assemble the NCL system from base models and their per-group datasets."""
    if len(base_models) != len(parts):
        raise ShapeError(f"{len(base_models)} models for {len(parts)} datasets")
    H_list = [m.hidden(p.X) for m, p in zip(base_models, parts)]
    return NclSystem(H_list, parts[0].y, lam, ridge)


def fit_ensemble(base_models, parts, group_spec, config):
    """Solve the NCL weights and wrap everything in an :class:`EnsembleModel`."""
    system = build_system(base_models, parts, config.lam, config.ridge)
    B, report = solve(system, config)
    blocks = system.blocks(B)
    models = [m.with_beta(beta) for m, beta in zip(base_models, blocks)]
    ens = EnsembleModel(models, group_spec, config.lam, config.ridge, config.method)
    return ens, report
