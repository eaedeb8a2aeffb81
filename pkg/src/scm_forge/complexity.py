"""Numerical estimator of the model-complexity measure MC.

MC is the number of local extrema of a scalar function S over a box times
the integral of the summed absolute partial derivatives. Derivatives come
from central differences (one-sided at the boundary), the integral from
trapezoid rules, and extrema from grid comparisons: sign changes of
successive differences in 1-D (a flat plateau flanked by opposite slopes
counts once), strict axis-neighbor dominance in n-D. Endpoints and box
faces are never counted.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MAX_DIMS = 3
MIN_GRID = 9

# Relative floor used to ignore floating-noise wiggles when classifying
# slopes; measured against the sampled value range so it is invariant under
# adding a constant and scales with the function.
DEFAULT_TOL_FACTOR = 1e-9


class UnsupportedDimensionError(ValueError):
    """Tensor-grid estimation is limited to 3 input dimensions."""


@dataclass(frozen=True)
class Box:
    """Axis-aligned box, one (lower, upper) pair per dimension."""

    bounds: tuple

    def __post_init__(self):
        bounds = tuple((float(a), float(b)) for a, b in self.bounds)
        for a, b in bounds:
            if not b > a:
                raise ValueError(f"box bounds must satisfy upper > lower, got ({a}, {b})")
        object.__setattr__(self, "bounds", bounds)

    @property
    def dims(self) -> int:
        return len(self.bounds)


@dataclass(frozen=True)
class McEstimate:
    extrema_count: int
    variation_integral: float
    mc: float
    grid_points_per_dim: int
    tolerance: float


def count_extrema(values, tol: float) -> int:
    """Count interior local extrema of a sampled 1-D sequence.

    Successive differences with magnitude <= tol are flat; a maximal flat
    plateau flanked by opposite-signed slopes counts as one extremum.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 1 or values.size < 3:
        raise ValueError("count_extrema needs at least 3 samples on a 1-D grid")
    diffs = np.diff(values)
    slopes = np.zeros(diffs.shape, dtype=np.int8)
    slopes[diffs > tol] = 1
    slopes[diffs < -tol] = -1
    count = 0
    last = 0
    for s in slopes:
        if s == 0:
            continue
        if last != 0 and s != last:
            count += 1
        last = s
    return count


def _sample(f, points: np.ndarray) -> np.ndarray:
    """Evaluate f on a stack of points, accepting vectorized or scalar handles."""
    try:
        vals = np.asarray(f(points), dtype=np.float64)
        if vals.shape == (points.shape[0],):
            return vals
        vals = vals.reshape(-1)
        if vals.shape == (points.shape[0],):
            return vals
    except (TypeError, ValueError):
        pass
    return np.array([float(f(p)) for p in points], dtype=np.float64)


def _auto_tol(values: np.ndarray, tol: float | None) -> float:
    if tol is not None:
        return float(tol)
    return DEFAULT_TOL_FACTOR * float(values.max() - values.min())


def estimate_mc_1d(f, box: Box, grid_n: int, tol: float | None = None) -> McEstimate:
    """MC of a scalar function of one variable on a uniform grid."""
    if box.dims != 1:
        raise ValueError(f"estimate_mc_1d requires a 1-D box, got {box.dims} dims")
    if grid_n < MIN_GRID:
        raise ValueError(f"grid_n must be >= {MIN_GRID}")
    a, b = box.bounds[0]
    xs = np.linspace(a, b, grid_n)
    step = (b - a) / (grid_n - 1)
    vals = _sample(f, xs)
    if not np.isfinite(vals).all():
        raise ValueError("function produced non-finite samples")
    tol = _auto_tol(vals, tol)
    z = count_extrema(vals, tol)
    # scalar spacing: the grid is uniform by construction, and this keeps the
    # derivative of a constant exactly zero
    deriv = np.gradient(vals, step)
    integral = float(np.trapezoid(np.abs(deriv), dx=step))
    return McEstimate(z, integral, z * integral, grid_n, tol)


def _count_extrema_nd(vals: np.ndarray, tol: float) -> int:
    """Interior points strictly above (or below) all 2*dims axis neighbors."""
    dims = vals.ndim
    inner = tuple(slice(1, -1) for _ in range(dims))
    center = vals[inner]
    is_max = np.ones(center.shape, dtype=bool)
    is_min = np.ones(center.shape, dtype=bool)
    for axis in range(dims):
        for shift in (-1, 1):
            idx = list(inner)
            idx[axis] = slice(1 + shift, vals.shape[axis] - 1 + shift)
            neighbor = vals[tuple(idx)]
            is_max &= center > neighbor + tol
            is_min &= center < neighbor - tol
    return int(is_max.sum() + is_min.sum())


def estimate_mc_nd(f, box: Box, grid_n: int, tol: float | None = None) -> McEstimate:
    """MC over a tensor grid; limited to 3 dimensions by grid cost."""
    dims = box.dims
    if dims > MAX_DIMS:
        raise UnsupportedDimensionError(f"{dims} dims exceed the {MAX_DIMS}-dim tensor-grid limit")
    if grid_n < MIN_GRID:
        raise ValueError(f"grid_n must be >= {MIN_GRID}")
    if dims == 1:
        return estimate_mc_1d(f, box, grid_n, tol)
    axes = [np.linspace(a, b, grid_n) for a, b in box.bounds]
    steps = [(b - a) / (grid_n - 1) for a, b in box.bounds]
    mesh = np.meshgrid(*axes, indexing="ij")
    points = np.stack([m.reshape(-1) for m in mesh], axis=1)
    vals = _sample(f, points).reshape([grid_n] * dims)
    if not np.isfinite(vals).all():
        raise ValueError("function produced non-finite samples")
    tol = _auto_tol(vals, tol)
    z = _count_extrema_nd(vals, tol)
    partials = np.gradient(vals, *steps)
    total = np.abs(partials[0])
    for p in partials[1:]:
        total = total + np.abs(p)
    integral = total
    for axis in reversed(range(dims)):
        integral = np.trapezoid(integral, dx=steps[axis], axis=axis)
    integral = float(integral)
    return McEstimate(z, integral, z * integral, grid_n, tol)
