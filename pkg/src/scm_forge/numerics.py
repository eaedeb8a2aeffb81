"""Dense linear-algebra kernels: SVD least squares, coordinate-descent LASSO, RMSE.

Matrices are plain 2-D float64 numpy arrays (row-major). All functions are
pure and safe to call concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_LASSO_TOL = 1e-7
DEFAULT_LASSO_MAX_ITER = 10000


class NumericsError(RuntimeError):
    """Raised when a matrix decomposition fails to converge."""


@dataclass(frozen=True)
class LassoSolution:
    """Result of an L1-penalized least-squares fit."""

    coefficients: np.ndarray
    iterations: int
    converged: bool


def as_matrix(a, name="matrix") -> np.ndarray:
    """Coerce to a finite 2-D float64 array, raising ValueError otherwise."""
    out = np.asarray(a, dtype=np.float64)
    if out.ndim == 1:
        out = out.reshape(-1, 1)
    if out.ndim != 2:
        raise ValueError(f"{name} must be 1-D or 2-D, got ndim={out.ndim}")
    if out.size and not np.isfinite(out).all():
        raise ValueError(f"{name} contains non-finite entries")
    return out


def least_squares_pinv(h, y) -> np.ndarray:
    """Minimum-norm least-squares solution of ``h @ beta = y`` via SVD.

    Singular values below ``max(N, T) * eps * sigma_max`` are treated as
    zero, which keeps the solve stable when columns of ``h`` become
    collinear as hidden nodes accumulate.
    """
    h = as_matrix(h, "h")
    y = as_matrix(y, "y")
    n, t = h.shape
    if y.shape[0] != n:
        raise ValueError(f"row mismatch: h is {n}x{t}, y has {y.shape[0]} rows")
    try:
        u, s, vt = np.linalg.svd(h, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericsError(f"SVD did not converge for {n}x{t} matrix") from exc
    if s.size == 0 or s[0] == 0.0:
        return np.zeros((t, y.shape[1]))
    cutoff = max(n, t) * np.finfo(np.float64).eps * s[0]
    keep = s > cutoff
    uty = u[:, keep].T @ y
    return vt[keep].T @ (uty / s[keep, None])


def soft_threshold(z: float, gamma: float) -> float:
    if z > gamma:
        return z - gamma
    if z < -gamma:
        return z + gamma
    return 0.0


def lasso_objective(x, y, p, alpha) -> float:
    """Sum of squared residuals plus alpha times the L1 norm (no 1/2N factor)."""
    r = y - x @ p
    return float(r @ r + alpha * np.abs(p).sum())


def lasso_fit(x, y, alpha, tol=DEFAULT_LASSO_TOL, max_iter=DEFAULT_LASSO_MAX_ITER) -> LassoSolution:
    """Cyclic coordinate descent on ``sum((y - X p)^2) + alpha * sum(|p|)``.

    The objective carries no 1/(2N) normalization, so ``alpha`` acts as the
    raw L1 regularization factor. Coordinates are swept in order 0..d-1;
    iteration stops once the largest coefficient change in a sweep drops
    below ``tol`` or after ``max_iter`` sweeps.
    """
    x = as_matrix(x, "x")
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if y.size and not np.isfinite(y).all():
        raise ValueError("y contains non-finite entries")
    n, d = x.shape
    if y.shape[0] != n:
        raise ValueError(f"row mismatch: x is {n}x{d}, y has {y.shape[0]} rows")
    if not np.isfinite(alpha) or alpha < 0:
        raise ValueError(f"alpha must be finite and >= 0, got {alpha}")

    col_sq = np.einsum("ij,ij->j", x, x)
    p = np.zeros(d)
    resid = y.copy()
    converged = False
    sweeps = 0
    for sweeps in range(1, max_iter + 1):
        max_delta = 0.0
        for k in range(d):
            if col_sq[k] == 0.0:
                continue
            xk = x[:, k]
            old = p[k]
            # rho = 2 * x_k . (residual with coordinate k removed)
            rho = 2.0 * (xk @ resid + col_sq[k] * old)
            new = soft_threshold(rho, alpha) / (2.0 * col_sq[k])
            if new != old:
                resid += xk * (old - new)
                p[k] = new
            delta = abs(new - old)
            if delta > max_delta:
                max_delta = delta
        if max_delta < tol:
            converged = True
            break
    return LassoSolution(coefficients=p, iterations=sweeps, converged=converged)


def rmse(pred, target) -> float:
    """Root mean squared error over all N*m entries."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs target {target.shape}")
    diff = pred - target
    return float(np.sqrt(np.mean(diff * diff)))


def sse(pred, target) -> float:
    """Sum of squared errors over all entries."""
    diff = np.asarray(pred, dtype=np.float64) - np.asarray(target, dtype=np.float64)
    return float(np.sum(diff * diff))
