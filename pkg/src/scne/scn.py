"""Stochastic configuration networks and the RVFL baseline.

An SCN grows its hidden layer one node (or a small batch) at a time.  Each
step draws a pool of random candidates and keeps only those satisfying the
supervisory inequality ``xi > 0`` against the current residual; the best
one joins the network and the output weights are refitted by least squares.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.special import expit

from . import numkit
from .errors import (
    ConstructionError,
    DegenerateCandidateError,
    ParameterError,
    ShapeError,
)

__all__ = [
    "ACTIVATIONS",
    "ScnModel",
    "ScnConfig",
    "RvflConfig",
    "xi_score",
    "build_scn",
    "build_rvfl",
    "hidden_matrix",
    "predict_base",
    "fit_output_weights",
    "prefix_rmse_curve",
    "node_search",
    "median_half_up",
    "estimate_nodes",
    "estimate_alpha",
    "select_alpha",
]

ACTIVATIONS = {
    "sigmoid": expit,
    "tanh": np.tanh,
    "relu": lambda z: np.maximum(z, 0.0),
}

DEFAULT_SCOPES = (0.5, 1.0, 5.0, 10.0, 30.0, 50.0, 100.0, 150.0, 200.0)
DEFAULT_R_SEQUENCE = (0.9, 0.99, 0.999, 0.9999, 0.99999)


@dataclass
class ScnModel:
    """Single-hidden-layer network ``f(x) = sum_l beta_l * phi(w_l . x + b_l)``."""

    W: np.ndarray
    b: np.ndarray
    beta: np.ndarray
    activation: str = "sigmoid"

    def __post_init__(self):
        self.W = np.atleast_2d(np.asarray(self.W, dtype=float))
        self.b = np.asarray(self.b, dtype=float).reshape(-1)
        self.beta = np.asarray(self.beta, dtype=float).reshape(-1)
        if self.activation not in ACTIVATIONS:
            raise ParameterError(f"unknown activation {self.activation!r}")
        L = self.W.shape[0]
        if L < 1:
            raise ParameterError("a model needs at least one hidden node")
        if self.b.shape != (L,) or self.beta.shape != (L,):
            raise ShapeError(
                f"W has {L} rows but b has {self.b.size} and beta {self.beta.size} entries"
            )
        for name in ("W", "b", "beta"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ParameterError(f"{name} contains non-finite values")

    @property
    def input_dim(self):
        return self.W.shape[1]

    @property
    def hidden_count(self):
        return self.W.shape[0]

    def hidden(self, X):
        return hidden_matrix(self, X)

    def predict(self, X):
        return predict_base(self, X)

    def truncate(self, L, beta=None):
        """First ``L`` hidden nodes; output weights default to zeros."""
        if not 1 <= L <= self.hidden_count:
            raise ParameterError(f"cannot truncate {self.hidden_count} nodes to {L}")
        beta = np.zeros(L) if beta is None else beta
        return ScnModel(self.W[:L].copy(), self.b[:L].copy(), beta, self.activation)

    def with_beta(self, beta):
        return ScnModel(self.W, self.b, beta, self.activation)

    def to_json(self):
        return {
            "input_dim": self.input_dim,
            "activation": self.activation,
            "W": self.W.ravel().tolist(),
            "b": self.b.tolist(),
            "beta": self.beta.tolist(),
        }

    @classmethod
    def from_json(cls, obj):
        d = int(obj["input_dim"])
        W = np.asarray(obj["W"], dtype=float)
        if d < 1 or W.size % d:
            raise ShapeError(f"W has {W.size} values, not a multiple of input_dim={d}")
        return cls(W.reshape(-1, d), obj["b"], obj["beta"], obj.get("activation", "sigmoid"))


@dataclass(frozen=True)
class ScnConfig:
    L_max: int = 50
    T_max: int = 100
    scopes: tuple = DEFAULT_SCOPES
    r_sequence: tuple = DEFAULT_R_SEQUENCE
    tol: float = 1e-6
    batch_size: int = 1
    ridge: float = 0.0
    seed: int = 0
    activation: str = "sigmoid"

    def __post_init__(self):
        if self.L_max < 1:
            raise ParameterError("L_max must be >= 1")
        if self.T_max < 1:
            raise ParameterError("T_max must be >= 1")
        if not self.scopes or any(s <= 0 for s in self.scopes):
            raise ParameterError("scopes must be a nonempty list of positive reals")
        if list(self.scopes) != sorted(self.scopes):
            raise ParameterError("scopes must be ascending")
        if not self.r_sequence or any(not 0 < r < 1 for r in self.r_sequence):
            raise ParameterError("every r must lie in (0, 1)")
        if list(self.r_sequence) != sorted(self.r_sequence):
            raise ParameterError("r_sequence must be ascending")
        if not self.tol > 0:
            raise ParameterError("tol must be > 0")
        if self.batch_size < 1:
            raise ParameterError("batch_size must be >= 1")
        if self.ridge < 0:
            raise ParameterError("ridge must be >= 0")
        if self.activation not in ACTIVATIONS:
            raise ParameterError(f"unknown activation {self.activation!r}")

    def replace(self, **changes):
        kw = {f: getattr(self, f) for f in self.__dataclass_fields__}
        kw.update(changes)
        return ScnConfig(**kw)


@dataclass(frozen=True)
class RvflConfig:
    L: int
    alpha: float = 1.0
    seed: int = 0
    ridge: float = 0.0
    activation: str = "sigmoid"

    def __post_init__(self):
        if self.L < 1:
            raise ParameterError("an RVFL model needs L >= 1 hidden nodes")
        if not self.alpha > 0:
            raise ParameterError("alpha must be > 0")
        if self.ridge < 0:
            raise ParameterError("ridge must be >= 0")
        if self.activation not in ACTIVATIONS:
            raise ParameterError(f"unknown activation {self.activation!r}")


def xi_score(e_residual, h_candidate, r, mu=0.0):
    """Supervisory score of one candidate node.

    ``xi_q = (e_q . h)^2 / (h . h) - (1 - r - mu) * (e_q . e_q)`` for every
    output column ``q``.  Returns ``(xi_per_output, xi_total)``.
    """
    e = np.asarray(e_residual, dtype=float)
    if e.ndim == 1:
        e = e[:, None]
    h = numkit.as_vector(h_candidate, "h")
    if e.shape[0] != h.shape[0]:
        raise ShapeError(f"residual has {e.shape[0]} rows, candidate {h.shape[0]}")
    if not 0 < r < 1:
        raise ParameterError("r must lie in (0, 1)")
    if not 0 <= mu <= 1 - r:
        raise ParameterError("mu must lie in [0, 1 - r]")
    hh = h @ h
    if hh == 0.0:
        raise DegenerateCandidateError("candidate output vector is identically zero")
    eh = e.T @ h
    xi = eh**2 / hh - (1.0 - r - mu) * np.sum(e * e, axis=0)
    return xi, float(xi.sum())


def _xi_pool(e, Hc, hh, r, mu):
    # scalar-output form of xi_score over a whole candidate pool
    eh = e @ Hc
    with np.errstate(divide="ignore", invalid="ignore"):
        xi = eh**2 / hh - (1.0 - r - mu) * (e @ e)
    return np.where(hh > 0, xi, -np.inf)


def hidden_matrix(model, X):
    X = numkit.as_matrix(X, "X")
    if X.shape[1] != model.input_dim:
        raise ShapeError(f"X has {X.shape[1]} columns, model expects {model.input_dim}")
    return ACTIVATIONS[model.activation](X @ model.W.T + model.b)


def predict_base(model, X):
    return hidden_matrix(model, X) @ model.beta


def fit_output_weights(H, y, ridge=0.0):
    if ridge > 0:
        return numkit.ridge_solve(H, y, ridge)
    return numkit.pinv_solve(H, y)


class _Residual:
    """Residual of the least-squares refit, updated one column at a time.

    Without ridge the residual is the projection of ``y`` off an
    orthonormal basis of the accepted columns, which equals the residual of
    a full pseudo-inverse refit.  With ridge the normal equations are
    accumulated and re-solved; a ridge refit may raise the residual, so
    ``add_monotone`` keeps only columns that do not.
    """

    def __init__(self, y, capacity, ridge):
        self.y = y
        self.ridge = ridge
        self.e = y.copy()
        self.n = 0
        if ridge > 0:
            self.H = np.empty((y.size, capacity))
            self.G = np.empty((capacity, capacity))
            self.Hy = np.empty(capacity)
        else:
            self.Q = np.empty((y.size, capacity))

    def add(self, cols):
        for h in cols.T:
            self._add_one(h)
        if self.ridge > 0:
            k = self.n
            G = self.G[:k, :k].copy()
            G[np.diag_indices_from(G)] += self.ridge
            beta = scipy.linalg.solve(G, self.Hy[:k], assume_a="pos")
            self.e = self.y - self.H[:, :k] @ beta

    def add_monotone(self, Hc, order, k):
        """Greedily add up to ``k`` columns of ``Hc`` in ``order`` (ridge only).

        A column is kept only if the refitted residual norm does not grow.
        Returns the kept column indices.
        """
        kept = []
        for j in order:
            if len(kept) == k:
                break
            e_old, n_old = self.e, self.n
            self.add(Hc[:, j:j + 1])
            if self.e @ self.e <= e_old @ e_old:
                kept.append(j)
            else:
                # the next write overwrites slot n_old
                self.e, self.n = e_old, n_old
        return kept

    def _add_one(self, h):
        k = self.n
        if self.ridge > 0:
            self.H[:, k] = h
            self.G[:k, k] = self.G[k, :k] = self.H[:, :k].T @ h
            self.G[k, k] = h @ h
            self.Hy[k] = h @ self.y
        else:
            Q = self.Q[:, :k]
            q = h - Q @ (Q.T @ h)
            q -= Q @ (Q.T @ q)
            q /= np.linalg.norm(q)
            self.Q[:, k] = q
            self.e -= q * (q @ self.e)
        self.n += 1


def build_scn(data, config=ScnConfig(), history=None):
    """Grow an SCN on ``data``; returns ``(model, residual_trace)``.

    Each step draws ``T_max`` candidates with weights and biases uniform on
    ``[-alpha, alpha]`` for the current scope.  The r sequence is relaxed
    on the same pool before moving to the next scope.  Among candidates
    with ``xi > 0`` the top ``batch_size`` by score are added and the output
    weights refitted.  With ``ridge > 0`` a candidate is also rejected if
    the ridge refit would raise the training residual.  Growth stops when the training RMSE reaches
    ``config.tol``, at ``L_max`` nodes, or when every (scope, r) pair is
    exhausted.  ``residual_trace[k]`` is the training RMSE after the k-th
    accepted batch.  If ``history`` is a list, one ``(node_index, alpha, r,
    mu)`` tuple per accepted node is appended to it.
    """
    X = numkit.as_matrix(data.X, "X")
    y = numkit.as_vector(data.y, "y")
    N, d = X.shape
    act = ACTIVATIONS[config.activation]
    rng = np.random.default_rng(config.seed)

    W = np.empty((config.L_max, d))
    b = np.empty(config.L_max)
    Hfull = np.empty((N, config.L_max))
    res = _Residual(y, config.L_max, config.ridge)
    trace = []
    L = 0
    # the tolerance is checked after each batch, so at least one batch is added
    while L < config.L_max:
        chosen = None
        for alpha in config.scopes:
            Wc = rng.uniform(-alpha, alpha, size=(config.T_max, d))
            bc = rng.uniform(-alpha, alpha, size=config.T_max)
            Hc = act(X @ Wc.T + bc)
            hh = np.einsum("ij,ij->j", Hc, Hc)
            for r in config.r_sequence:
                # mu_L = (1 - r) / (L + 1) for the node about to become number L + 1
                mu = (1.0 - r) / (L + 2)
                xi = _xi_pool(res.e, Hc, hh, r, mu)
                ok = np.flatnonzero(xi > 0)
                if not ok.size:
                    continue
                # stable sort keeps generation order among ties
                rank = ok[np.argsort(-xi[ok], kind="stable")]
                want = min(config.batch_size, config.L_max - L)
                if config.ridge > 0:
                    idx = res.add_monotone(Hc, rank, want)
                else:
                    idx = rank[:want]
                    res.add(Hc[:, idx])
                if len(idx):
                    chosen = (Wc, bc, Hc, np.asarray(idx))
                    if history is not None:
                        history.extend((L + i, alpha, r, mu) for i in range(len(idx)))
                    break
            if chosen is not None:
                break
        if chosen is None:
            if L == 0:
                raise ConstructionError(
                    "no admissible candidate for any (scope, r) pair; no node was added"
                )
            break
        Wc, bc, Hc, idx = chosen
        k = idx.size
        W[L:L + k] = Wc[idx]
        b[L:L + k] = bc[idx]
        Hfull[:, L:L + k] = Hc[:, idx]
        L += k
        trace.append(float(np.sqrt(np.mean(res.e**2))))
        if trace[-1] <= config.tol:
            break

    beta = fit_output_weights(Hfull[:, :L], y, config.ridge)
    model = ScnModel(W[:L].copy(), b[:L].copy(), beta, config.activation)
    return model, np.asarray(trace)


def build_rvfl(data, config):
    """Random vector functional-link network: one-shot random hidden layer."""
    X = numkit.as_matrix(data.X, "X")
    rng = np.random.default_rng(config.seed)
    a = config.alpha
    W = rng.uniform(-a, a, size=(config.L, X.shape[1]))
    b = rng.uniform(-a, a, size=config.L)
    H = ACTIVATIONS[config.activation](X @ W.T + b)
    beta = fit_output_weights(H, data.y, config.ridge)
    return ScnModel(W, b, beta, config.activation)


def prefix_rmse_curve(model, train, val, ridge=0.0, L_range=None):
    """Validation RMSE of the first ``L`` nodes refitted on ``train``.

    Returns ``(Ls, rmses)`` for every ``L`` in ``L_range`` (inclusive pair)
    that the model can supply.
    """
    lo, hi = L_range if L_range is not None else (1, model.hidden_count)
    hi = min(hi, model.hidden_count)
    Ht = hidden_matrix(model, train.X)
    Hv = hidden_matrix(model, val.X)
    Ls = np.arange(max(lo, 1), hi + 1)
    out = np.empty(Ls.size)
    if ridge > 0:
        G = Ht.T @ Ht
        g = Ht.T @ train.y
        for i, L in enumerate(Ls):
            A = G[:L, :L].copy()
            A[np.diag_indices_from(A)] += ridge
            beta = scipy.linalg.solve(A, g[:L], assume_a="pos")
            out[i] = numkit.rmse(Hv[:, :L] @ beta, val.y)
    else:
        # one QR serves every prefix: H[:, :L] = Q[:, :L] R[:L, :L]
        Q, R = np.linalg.qr(Ht)
        qy = Q.T @ train.y
        for i, L in enumerate(Ls):
            beta = scipy.linalg.solve_triangular(R[:L, :L], qy[:L])
            out[i] = numkit.rmse(Hv[:, :L] @ beta, val.y)
    return Ls, out


def median_half_up(values):
    """Median of integers; an even-count midpoint of ``k + 0.5`` rounds up."""
    v = np.sort(np.asarray(values, dtype=float))
    if v.size == 0:
        raise ParameterError("median of an empty sequence")
    mid = v.size // 2
    med = v[mid] if v.size % 2 else 0.5 * (v[mid - 1] + v[mid])
    return int(math.floor(med + 0.5))


@dataclass
class NodeSearch:
    chosen: int
    argmins: list
    curves: list = field(default_factory=list)


def node_search(train, val, L_range=(1, 120), repeats=10, config=ScnConfig()):
    lo, hi = L_range
    if lo > hi:
        raise ParameterError("L_range must satisfy lo <= hi")
    if repeats < 1:
        raise ParameterError("repeats must be >= 1")
    argmins, curves = [], []
    for k in range(repeats):
        cfg = config.replace(L_max=hi, seed=config.seed + k)
        model, _ = build_scn(train, cfg)
        Ls, val_rmse = prefix_rmse_curve(model, train, val, cfg.ridge, (lo, hi))
        if Ls.size == 0:
            # growth stopped below lo
            Ls, val_rmse = prefix_rmse_curve(model, train, val, cfg.ridge)
        # np.argmin returns the first minimum, i.e. the smaller L on ties
        argmins.append(int(Ls[np.argmin(val_rmse)]))
        curves.append((Ls, val_rmse))
    return NodeSearch(median_half_up(argmins), argmins, curves)


def estimate_nodes(train, val, L_range=(1, 120), repeats=10, config=ScnConfig()):
    """Median over repeats of the validation-argmin hidden-node count."""
    return node_search(train, val, L_range, repeats, config).chosen


def estimate_alpha(train, val, L, alphas=None, repeats=10, seed=0, ridge=0.0,
                   activation="sigmoid"):
    """Pick the RVFL scope with the lowest mean validation RMSE.

    Returns ``(alpha_star, alphas, mean_val_rmse)``.
    """
    if alphas is None:
        alphas = np.round(np.arange(0.5, 1.45, 0.1), 10)
    alphas = np.asarray(alphas, dtype=float)
    scores = np.empty(alphas.size)
    for i, a in enumerate(alphas):
        errs = []
        for k in range(repeats):
            m = build_rvfl(train, RvflConfig(L, float(a), seed + k, ridge, activation))
            errs.append(numkit.rmse(m.predict(val.X), val.y))
        scores[i] = np.mean(errs)
    return select_alpha(alphas, scores), alphas, scores


def select_alpha(alphas, scores):
    """Scope with the lowest validation score; the first listed wins ties."""
    alphas = np.asarray(alphas, dtype=float)
    scores = np.asarray(scores, dtype=float)
    if alphas.shape != scores.shape or alphas.size == 0:
        raise ShapeError("alphas and scores must be nonempty and of equal length")
    return float(alphas[int(np.argmin(scores))])
