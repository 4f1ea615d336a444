"""Dense linear-algebra kernel.

Least squares through an SVD based pseudo-inverse, ridge solves, a
power-iteration spectral radius estimate and the scalar metrics used by
the rest of the package.  Everything here is a pure function of its
arguments.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np
import scipy.linalg

from .errors import (
    InvalidInputError,
    ParameterError,
    ShapeError,
    UndefinedCorrelationError,
)

__all__ = [
    "as_matrix",
    "as_vector",
    "pinv",
    "pinv_solve",
    "ridge_operator",
    "ridge_solve",
    "SpectralEstimate",
    "spectral_radius",
    "pearson_corr",
    "rmse",
]


def as_matrix(a, name="matrix"):
    a = np.asarray(a, dtype=float)
    if a.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidInputError(f"{name} contains non-finite entries")
    return a


def as_vector(v, name="vector"):
    v = np.asarray(v, dtype=float)
    if v.ndim != 1:
        raise ShapeError(f"{name} must be 1-D, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise InvalidInputError(f"{name} contains non-finite entries")
    return v


def _rank_cutoff(s, shape, tol):
    if tol > 0:
        return tol
    if s.size == 0:
        return 0.0
    return max(shape) * np.finfo(float).eps * s[0]


def pinv(H, tol=0.0, return_rank=False):
    """Moore-Penrose pseudo-inverse via the thin SVD.

    Singular values at or below the cutoff are treated as zero.  With
    ``tol == 0`` the cutoff is ``max(N, L) * eps * s_max``.  With
    ``return_rank`` the numerical rank is returned as a second value.
    """
    H = as_matrix(H, "H")
    if tol < 0:
        raise ParameterError("tol must be >= 0")
    U, s, Vt = np.linalg.svd(H, full_matrices=False)
    cutoff = _rank_cutoff(s, H.shape, tol)
    keep = s > cutoff
    s_inv = np.zeros_like(s)
    s_inv[keep] = 1.0 / s[keep]
    P = (Vt.T * s_inv) @ U.T
    if return_rank:
        return P, int(keep.sum())
    return P


def pinv_solve(H, y, tol=0.0):
    """Minimum-norm least-squares solution ``pinv(H) @ y``."""
    H = as_matrix(H, "H")
    y = as_vector(y, "y")
    if H.shape[0] != y.shape[0]:
        raise ShapeError(f"H has {H.shape[0]} rows but y has length {y.shape[0]}")
    if H.shape[0] < 1 or H.shape[1] < 1:
        raise ShapeError("H must have at least one row and one column")
    return pinv(H, tol) @ y


def ridge_operator(H, r):
    """The L x N matrix ``(H^T H + r I)^{-1} H^T``."""
    H = as_matrix(H, "H")
    if not r > 0:
        raise ParameterError(f"ridge parameter must be > 0, got {r}")
    G = H.T @ H
    G[np.diag_indices_from(G)] += r
    return scipy.linalg.solve(G, H.T, assume_a="pos")


def ridge_solve(H, y, r):
    """Solve ``(H^T H + r I) beta = H^T y``."""
    H = as_matrix(H, "H")
    y = as_vector(y, "y")
    if H.shape[0] != y.shape[0]:
        raise ShapeError(f"H has {H.shape[0]} rows but y has length {y.shape[0]}")
    if not r > 0:
        raise ParameterError(f"ridge parameter must be > 0, got {r}")
    G = H.T @ H
    G[np.diag_indices_from(G)] += r
    return scipy.linalg.solve(G, H.T @ y, assume_a="pos")


class SpectralEstimate(NamedTuple):
    rho: float
    converged: bool
    iterations: int


def spectral_radius(A, max_iters=1000, tol=1e-9, full_output=False):
    """Estimate the spectral radius of a square matrix by power iteration.

    The iterate starts from the normalized all-ones vector.  Each step
    applies ``A`` twice and takes the square root of the growth factor,
    which settles for real dominant pairs ``+-z`` where the one-step ratio
    would oscillate.

    Parameters
    ----------
    A : (n, n) array_like
    max_iters : int
        Number of double steps allowed.
    tol : float
        Convergence threshold on successive estimates.
    full_output : bool
        Return a :class:`SpectralEstimate` instead of a float.
    """
    A = as_matrix(A, "A")
    n, m = A.shape
    if n != m:
        raise ShapeError(f"A must be square, got {A.shape}")
    v = np.ones(n) / np.sqrt(n)
    rho = 0.0
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        w = A @ (A @ v)
        growth = np.linalg.norm(w)
        if growth == 0.0:
            rho, converged = 0.0, True
            break
        new_rho = float(np.sqrt(growth))
        v = w / growth
        if abs(new_rho - rho) < tol:
            rho, converged = new_rho, True
            break
        rho = new_rho
    if full_output:
        return SpectralEstimate(rho, converged, it)
    return rho


def pearson_corr(u, v):
    u = as_vector(u, "u")
    v = as_vector(v, "v")
    if u.shape != v.shape:
        raise ShapeError(f"length mismatch: {u.shape[0]} vs {v.shape[0]}")
    if u.shape[0] < 2:
        raise ShapeError("need at least two observations")
    du = u - u.mean()
    dv = v - v.mean()
    su = np.sqrt(du @ du)
    sv = np.sqrt(dv @ dv)
    if su == 0.0 or sv == 0.0:
        raise UndefinedCorrelationError("correlation is undefined for a constant vector")
    return float(np.clip((du @ dv) / (su * sv), -1.0, 1.0))


def rmse(pred, target):
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ShapeError(f"shape mismatch: {pred.shape} vs {target.shape}")
    if pred.size < 1:
        raise ShapeError("rmse needs at least one value")
    return float(np.sqrt(np.mean((pred - target) ** 2)))
