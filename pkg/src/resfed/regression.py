"""Robust line fits and residual-based confidence weights.

Single-column kernels used by the aggregation pipeline: repeated-median,
Theil-Sen and median-line fits over rank-indexed values, residual
normalization with a median-based scale, leverage from the rank vector,
clipped confidence weighting and extreme-value correction. Everything here
is pure and operates on float64 arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "IndexedColumn",
    "RegressionLine",
    "ResidualStats",
    "ConfidenceParams",
    "rank_indices",
    "fit_repeated_median",
    "fit_theil_sen",
    "fit_median_line",
    "compute_residuals",
    "hat_diagonal",
    "parameter_confidence",
    "gaussian_confidence",
    "correct_extreme",
]

DEFAULT_GAMMA = 1.48


def rank_indices(y: np.ndarray) -> np.ndarray:
    """Return the 1-based rank of each entry of ``y``.

    Ties are broken by position (stable sort), so equal values get distinct
    consecutive ranks in input order.
    """
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 1 or y.size == 0:
        raise ValueError("rank_indices expects a non-empty 1-d array")
    order = np.argsort(y, kind="stable")
    ranks = np.empty(y.size, dtype=np.float64)
    ranks[order] = np.arange(1, y.size + 1, dtype=np.float64)
    return ranks


@dataclass(frozen=True)
class IndexedColumn:
    """K observations of one parameter, indexed by rank.

    ``x`` is a permutation of 1..K. Columns built with :meth:`from_values`
    use the ranks of ``y`` itself, so ``y`` sorted by ``x`` is non-decreasing;
    the fit functions only need the indices to be distinct, which also admits
    directly constructed columns with arbitrary ``y``.
    """

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self) -> None:
        x = np.asarray(self.x, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.float64)
        if x.ndim != 1 or y.ndim != 1:
            raise ValueError("x and y must be 1-d")
        if x.size != y.size:
            raise ValueError(f"length mismatch: {x.size} indices, {y.size} values")
        if x.size == 0:
            raise ValueError("column must hold at least one point")
        if not np.array_equal(np.sort(x), np.arange(1, x.size + 1)):
            raise ValueError("x must be a permutation of 1..K")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @classmethod
    def from_values(cls, y: np.ndarray) -> "IndexedColumn":
        """Build a column whose indices are the ranks of ``y``."""
        y = np.asarray(y, dtype=np.float64)
        return cls(rank_indices(y), y)

    @property
    def size(self) -> int:
        return self.y.size


@dataclass(frozen=True)
class RegressionLine:
    """A fitted line ``y = intercept + slope * x``."""

    intercept: float
    slope: float

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.intercept + self.slope * np.asarray(x, dtype=np.float64)


@dataclass(frozen=True)
class ResidualStats:
    """Residuals of a column against a line, with their normalized form.

    ``tau`` is the median-absolute-residual scale inflated by the small-sample
    factor 1 + 5/(K-1). When ``tau`` is zero (at least half the points sit on
    the line exactly) ``normalized`` is 0 for points on the line and +/-inf
    for the rest; downstream weighting maps the infinities to zero confidence.
    """

    residuals: np.ndarray
    tau: float
    normalized: np.ndarray
    gamma: float


@dataclass(frozen=True)
class ConfidenceParams:
    """Clipping parameters for confidence weighting of an ensemble of size K.

    ``z`` is the clip level lam * sqrt(2/K); ``delta`` is the threshold below
    which a confidence is treated as an extreme value.
    """

    lam: float
    delta: float
    z: float

    def __post_init__(self) -> None:
        if self.lam <= 0:
            raise ValueError("lam must be positive")
        if not 0 <= self.delta < 1:
            raise ValueError("delta must lie in [0, 1)")
        if self.z <= 0:
            raise ValueError("z must be positive")

    @classmethod
    def for_ensemble(cls, k: int, lam: float = 2.0, delta: float = 0.01) -> "ConfidenceParams":
        if k < 2:
            raise ValueError("ensemble must hold at least 2 models")
        return cls(lam=lam, delta=delta, z=lam * math.sqrt(2.0 / k))


def _median_off_diagonal(values: np.ndarray) -> np.ndarray:
    """Median over the last axis of a (..., K, K) stack, excluding the diagonal."""
    k = values.shape[-1]
    if k < 2:
        raise ValueError("need at least 2 points per row")
    masked = values.copy()
    idx = np.arange(k)
    masked[..., idx, idx] = np.inf  # sorts past every finite entry
    masked.sort(axis=-1)
    m = k - 1
    if m % 2:
        return masked[..., m // 2]
    return 0.5 * (masked[..., m // 2 - 1] + masked[..., m // 2])


def fit_repeated_median(col: IndexedColumn) -> RegressionLine:
    """Fit a line by the repeated-median estimator.

    Slope is the median over points i of the median over j != i of the
    pairwise slopes (y_j - y_i) / (x_j - x_i); the intercept repeats the
    construction with the pairwise intercepts (x_j y_i - x_i y_j) / (x_j - x_i).
    Breaks down only past 50% contamination.
    """
    if col.size < 2:
        raise ValueError("repeated-median fit needs at least 2 points")
    x, y = col.x, col.y
    dx = x[None, :] - x[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        slopes = (y[None, :] - y[:, None]) / dx
        intercepts = (x[None, :] * y[:, None] - x[:, None] * y[None, :]) / dx
    slope = float(np.median(_median_off_diagonal(slopes)))
    intercept = float(np.median(_median_off_diagonal(intercepts)))
    return RegressionLine(intercept=intercept, slope=slope)


def fit_theil_sen(col: IndexedColumn) -> RegressionLine:
    """Fit a line by the Theil-Sen estimator.

    Slope is the median over all unordered pairs; intercept is the median of
    y_i - slope * x_i. Cheaper consensus than the repeated median but breaks
    down near 29% contamination.
    """
    if col.size < 2:
        raise ValueError("Theil-Sen fit needs at least 2 points")
    x, y = col.x, col.y
    i, j = np.triu_indices(col.size, k=1)
    slope = float(np.median((y[j] - y[i]) / (x[j] - x[i])))
    intercept = float(np.median(y - slope * x))
    return RegressionLine(intercept=intercept, slope=slope)


def fit_median_line(col: IndexedColumn) -> RegressionLine:
    """Fit the flat line through the median of ``y`` (slope zero)."""
    return RegressionLine(intercept=float(np.median(col.y)), slope=0.0)


def compute_residuals(
    col: IndexedColumn, line: RegressionLine, gamma: float = DEFAULT_GAMMA
) -> ResidualStats:
    """Normalize the column's residuals against ``line``.

    The scale is tau = gamma * median(|r|) * (1 + 5/(K-1)). A zero tau means
    at least half the values sit exactly on the line; agreeing points then
    get normalized residual 0 and dissenting points +/-inf.
    """
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    if col.size < 2:
        raise ValueError("residual scale needs at least 2 points")
    r = col.y - line.predict(col.x)
    tau = gamma * float(np.median(np.abs(r))) * (1.0 + 5.0 / (col.size - 1))
    if tau > 0:
        normalized = r / tau
    else:
        normalized = np.where(r == 0.0, 0.0, np.copysign(np.inf, r))
    return ResidualStats(residuals=r, tau=tau, normalized=normalized, gamma=gamma)


def hat_diagonal(x: np.ndarray) -> np.ndarray:
    """Leverage of each rank index: h_k = x_k^2 / sum_j x_j^2.

    Computed from the bare rank vector, so every leverage is strictly inside
    (0, 1) and the vector sums to 1.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size < 2:
        raise ValueError("need at least 2 rank indices")
    if not np.array_equal(np.sort(x), np.arange(1, x.size + 1)):
        raise ValueError("x must be a permutation of 1..K")
    return x**2 / np.sum(x**2)


def parameter_confidence(e, h, params: ConfidenceParams):
    """Confidence weight for a normalized residual ``e`` at leverage ``h``.

    w = (sqrt(1-h)/e) * psi(e/sqrt(1-h)) with psi clipping to [-z, z]. Inside
    the clip region the weight is exactly 1; outside it decays as
    z*sqrt(1-h)/|e|. Infinite residuals (zero-tau dissenters) get weight 0.
    Accepts scalars or arrays of matching shape.
    """
    e_arr = np.asarray(e, dtype=np.float64)
    h_arr = np.asarray(h, dtype=np.float64)
    if np.any((h_arr < 0) | (h_arr >= 1)):
        raise ValueError("leverage must lie in [0, 1)")
    root = np.sqrt(1.0 - h_arr)
    abs_e = np.abs(e_arr)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        w = np.where(abs_e <= params.z * root, 1.0, params.z * root / abs_e)
    if np.ndim(e) == 0 and np.ndim(h) == 0:
        return float(w)
    return w


def gaussian_confidence(e, sigma: float):
    """Gaussian alternative to the clipped weight: exp(-e^2 / (2 sigma^2))."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    e_arr = np.asarray(e, dtype=np.float64)
    w = np.exp(-(e_arr**2) / (2.0 * sigma * sigma))
    if np.ndim(e) == 0:
        return float(w)
    return w


def correct_extreme(
    col: IndexedColumn, w: np.ndarray, line: RegressionLine, delta: float
) -> tuple[np.ndarray, np.ndarray]:
    """Zero out low-confidence values and replace them with the fitted line.

    Entries with w <= delta get confidence 0 and value intercept + slope * x;
    everything else passes through unchanged. Returns (values, confidences).
    """
    w = np.asarray(w, dtype=np.float64)
    if w.shape != col.y.shape:
        raise ValueError("confidence vector must match the column length")
    low = w <= delta
    y_corrected = np.where(low, line.predict(col.x), col.y)
    w_corrected = np.where(low, 0.0, w)
    return y_corrected, w_corrected
