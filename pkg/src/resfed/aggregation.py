"""Aggregation of K local models into one global parameter vector.

The robust path fits a consensus line per parameter over rank-indexed
values, converts residuals into clipped confidence weights, replaces
extreme values with their fitted counterparts, and averages rows under
per-model weights accumulated across parameters. Plain baselines (mean,
coordinate medians, trimmed mean) and a scalar-ensemble variant of the
same weighting live here too.

Columns are processed in vectorized chunks; every chunk computes exactly
what the single-column kernels in :mod:`resfed.regression` compute, so the
result never depends on chunk boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .regression import (
    DEFAULT_GAMMA,
    ConfidenceParams,
    _median_off_diagonal,
)

__all__ = [
    "ParamMatrix",
    "ConfidenceReport",
    "AggregatorSpec",
    "ScalarEnsemble",
    "AGGREGATION_METHODS",
    "ESTIMATORS",
    "WEIGHTINGS",
    "aggregate",
    "residual_reweight_aggregate",
    "fedavg",
    "coord_median",
    "trimmed_mean",
    "coord_repeated_median",
    "scalar_confidence",
    "simplified_confidence",
    "scalar_global",
]

AGGREGATION_METHODS = (
    "residual_reweight",
    "fedavg",
    "coord_median",
    "trimmed_mean",
    "coord_repeated_median",
)
ESTIMATORS = ("repeated_median", "theil_sen", "median_line")
WEIGHTINGS = ("irls", "gaussian")

# Column-chunk budget for the (chunk, K, K) pairwise tensors.
_CHUNK_CELLS = 2**21


@dataclass(frozen=True)
class ParamMatrix:
    """K stacked parameter vectors, one row per local model."""

    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError("parameter matrix must be 2-d (models x parameters)")
        if values.shape[0] < 1:
            raise ValueError("need at least 1 model")
        if values.shape[1] < 1:
            raise ValueError("need at least 1 parameter")
        bad = ~np.isfinite(values)
        if bad.any():
            row, col = np.argwhere(bad)[0]
            raise ValueError(f"non-finite value at row {row}, column {col}")
        object.__setattr__(self, "values", values)

    @property
    def num_models(self) -> int:
        return self.values.shape[0]

    @property
    def num_params(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class ConfidenceReport:
    """Per-parameter and per-model weights produced by the robust path.

    ``w`` holds post-correction confidences (zeros where values were moved to
    the fitted line), ``corrected`` the values actually averaged,
    ``col_std`` the population standard deviation of each confidence column,
    ``model_weights`` the per-model accumulations sum_n w[k, n] * col_std[n]
    and ``normalized_weights`` their normalization (uniform when the total
    accumulation is zero).
    """

    w: np.ndarray
    col_std: np.ndarray
    model_weights: np.ndarray
    normalized_weights: np.ndarray
    corrected: np.ndarray


@dataclass(frozen=True)
class AggregatorSpec:
    """Aggregation method plus the knobs of the robust path."""

    method: str = "residual_reweight"
    estimator: str = "repeated_median"
    weighting: str = "irls"
    lam: float = 2.0
    delta: float = 0.01
    gamma: float = DEFAULT_GAMMA
    sigma: float = 1.0
    trim_fraction: float = 0.1

    def __post_init__(self) -> None:
        if self.method not in AGGREGATION_METHODS:
            raise ValueError(f"unknown aggregation method {self.method!r}")
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"unknown estimator {self.estimator!r}")
        if self.weighting not in WEIGHTINGS:
            raise ValueError(f"unknown weighting {self.weighting!r}")
        if self.lam <= 0:
            raise ValueError("lam must be positive")
        if not 0 <= self.delta < 1:
            raise ValueError("delta must lie in [0, 1)")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if not 0 <= self.trim_fraction < 0.5:
            raise ValueError("trim_fraction must lie in [0, 0.5)")


def _as_matrix(m) -> ParamMatrix:
    return m if isinstance(m, ParamMatrix) else ParamMatrix(m)


def _fit_sorted(ys: np.ndarray, estimator: str) -> tuple[np.ndarray, np.ndarray]:
    """Fit every row of ``ys`` (already sorted ascending) against ranks 1..K.

    Returns (intercepts, slopes), one per row. Median bookkeeping matches the
    single-column fit functions exactly: the nested medians only see the same
    value multisets in a different order.
    """
    b, k = ys.shape
    pos = np.arange(1, k + 1, dtype=np.float64)
    if estimator == "median_line":
        return np.median(ys, axis=1), np.zeros(b)
    if estimator == "theil_sen":
        i, j = np.triu_indices(k, k=1)
        slopes = np.median((ys[:, j] - ys[:, i]) / (pos[j] - pos[i]), axis=1)
        intercepts = np.median(ys - slopes[:, None] * pos[None, :], axis=1)
        return intercepts, slopes
    # repeated median
    dx = pos[None, :] - pos[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        slopes = (ys[:, None, :] - ys[:, :, None]) / dx[None, :, :]
        intercepts = (
            pos[None, None, :] * ys[:, :, None] - pos[None, :, None] * ys[:, None, :]
        ) / dx[None, :, :]
    slope = np.median(_median_off_diagonal(slopes), axis=1)
    intercept = np.median(_median_off_diagonal(intercepts), axis=1)
    return intercept, slope


def _sorted_fits(values: np.ndarray, estimator: str):
    """Yield (column slice, order, sorted values, intercepts, slopes) chunks."""
    k, n = values.shape
    chunk = max(1, _CHUNK_CELLS // (k * k))
    for start in range(0, n, chunk):
        cols = slice(start, min(start + chunk, n))
        block = values[:, cols].T  # (B, K)
        order = np.argsort(block, axis=1, kind="stable")
        ys = np.take_along_axis(block, order, axis=1)
        b0, b1 = _fit_sorted(ys, estimator)
        yield cols, order, ys, b0, b1


def residual_reweight_aggregate(
    m, spec: AggregatorSpec | None = None
) -> tuple[np.ndarray, ConfidenceReport]:
    """Aggregate with residual-based confidence reweighting.

    Per column: rank the K values, fit a consensus line, normalize residuals
    by the inflated median absolute residual, weight each value by the
    clipped (or Gaussian) confidence, and move weights at or below ``delta``
    to zero while snapping their values onto the line. Per-model weights then
    accumulate column confidences scaled by the column's confidence spread,
    and the global model is the weighted average of the corrected rows.
    """
    spec = spec or AggregatorSpec()
    matrix = _as_matrix(m)
    values = matrix.values
    k, n = values.shape
    if k < 2:
        raise ValueError("residual reweighting needs at least 2 models")
    params = ConfidenceParams.for_ensemble(k, lam=spec.lam, delta=spec.delta)

    pos = np.arange(1, k + 1, dtype=np.float64)
    hat = pos**2 / np.sum(pos**2)
    root = np.sqrt(1.0 - hat)

    w = np.empty((k, n))
    corrected = np.empty((k, n))
    for cols, order, ys, b0, b1 in _sorted_fits(values, spec.estimator):
        fitted = b0[:, None] + b1[:, None] * pos[None, :]
        r = ys - fitted
        tau = spec.gamma * np.median(np.abs(r), axis=1) * (1.0 + 5.0 / (k - 1))
        with np.errstate(divide="ignore", invalid="ignore"):
            e = r / tau[:, None]
        flat = tau == 0.0
        if flat.any():
            e[flat] = np.where(r[flat] == 0.0, 0.0, np.copysign(np.inf, r[flat]))
        abs_e = np.abs(e)
        if spec.weighting == "irls":
            with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
                conf = np.where(
                    abs_e <= params.z * root[None, :],
                    1.0,
                    params.z * root[None, :] / abs_e,
                )
        else:
            conf = np.exp(-(e**2) / (2.0 * spec.sigma * spec.sigma))
        low = conf <= spec.delta
        y_block = np.where(low, fitted, ys)
        conf = np.where(low, 0.0, conf)
        # scatter from rank order back to model order
        w_block = np.empty_like(conf)
        np.put_along_axis(w_block, order, conf, axis=1)
        c_block = np.empty_like(y_block)
        np.put_along_axis(c_block, order, y_block, axis=1)
        w[:, cols] = w_block.T
        corrected[:, cols] = c_block.T

    col_std = w.std(axis=0)
    model_weights = (w * col_std[None, :]).sum(axis=1)
    total = model_weights.sum()
    if total > 0:
        normalized = model_weights / total
    else:
        normalized = np.full(k, 1.0 / k)
    # a convex combination cannot leave the hull; clamp away rounding drift
    global_params = np.clip(
        normalized @ corrected, corrected.min(axis=0), corrected.max(axis=0)
    )
    report = ConfidenceReport(
        w=w,
        col_std=col_std,
        model_weights=model_weights,
        normalized_weights=normalized,
        corrected=corrected,
    )
    return global_params, report


def fedavg(m, sample_counts=None) -> np.ndarray:
    """Column mean of the rows, optionally weighted by sample counts."""
    values = _as_matrix(m).values
    if sample_counts is None:
        return values.mean(axis=0)
    counts = np.asarray(sample_counts, dtype=np.float64)
    if counts.shape != (values.shape[0],):
        raise ValueError("sample_counts must hold one count per model")
    if np.any(counts <= 0):
        raise ValueError("sample_counts must be positive")
    return (counts / counts.sum()) @ values


def coord_median(m) -> np.ndarray:
    """Coordinate-wise median of the rows."""
    return np.median(_as_matrix(m).values, axis=0)


def trimmed_mean(m, trim_fraction: float = 0.1) -> np.ndarray:
    """Coordinate-wise mean after dropping the floor(f*K) extremes per end."""
    values = _as_matrix(m).values
    if not 0 <= trim_fraction < 0.5:
        raise ValueError("trim_fraction must lie in [0, 0.5)")
    k = values.shape[0]
    cut = int(trim_fraction * k)
    if 2 * cut >= k:
        raise ValueError(f"trimming {cut} per end leaves no values out of {k}")
    ordered = np.sort(values, axis=0)
    return ordered[cut : k - cut].mean(axis=0)


def coord_repeated_median(m) -> np.ndarray:
    """Repeated-median line per column, evaluated at the center rank."""
    values = _as_matrix(m).values
    k = values.shape[0]
    if k < 2:
        raise ValueError("repeated-median aggregation needs at least 2 models")
    center = (k + 1) / 2.0
    out = np.empty(values.shape[1])
    for cols, _, _, b0, b1 in _sorted_fits(values, "repeated_median"):
        out[cols] = b0 + b1 * center
    return out


def aggregate(m, spec: AggregatorSpec, sample_counts=None):
    """Dispatch on ``spec.method``. Returns (global vector, report or None)."""
    matrix = _as_matrix(m)
    if spec.method == "residual_reweight":
        return residual_reweight_aggregate(matrix, spec)
    if spec.method == "fedavg":
        return fedavg(matrix, sample_counts), None
    if spec.method == "coord_median":
        return coord_median(matrix), None
    if spec.method == "trimmed_mean":
        return trimmed_mean(matrix, spec.trim_fraction), None
    return coord_repeated_median(matrix), None


@dataclass(frozen=True)
class ScalarEnsemble:
    """K scalar estimates of one quantity, plus the weighting parameters."""

    estimates: np.ndarray
    params: ConfidenceParams
    gamma: float = DEFAULT_GAMMA

    def __post_init__(self) -> None:
        estimates = np.asarray(self.estimates, dtype=np.float64)
        if estimates.ndim != 1 or estimates.size < 2:
            raise ValueError("ensemble needs at least 2 estimates")
        if not np.all(np.isfinite(estimates)):
            raise ValueError("estimates must be finite")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        object.__setattr__(self, "estimates", estimates)


def scalar_confidence(e, params: ConfidenceParams):
    """Three-branch confidence for a scalar normalized residual.

    1 inside the clip band |e| <= z, z/|e| in the damped band up to z/delta,
    and 0 beyond. Accepts scalars or arrays.
    """
    abs_e = np.abs(np.asarray(e, dtype=np.float64))
    cutoff = params.z / params.delta if params.delta > 0 else np.inf
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        damped = params.z / abs_e
    out = np.where(abs_e <= params.z, 1.0, np.where(abs_e <= cutoff, damped, 0.0))
    if np.ndim(e) == 0:
        return float(out)
    return out


def simplified_confidence(ensemble: ScalarEnsemble) -> np.ndarray:
    """Confidence of each scalar estimate against the ensemble median.

    Residuals are normalized by the same inflated median-absolute-residual
    scale as the per-parameter path; a zero scale gives full confidence to
    estimates equal to the median and none to the rest.
    """
    y = ensemble.estimates
    k = y.size
    r = y - np.median(y)
    tau = ensemble.gamma * float(np.median(np.abs(r))) * (1.0 + 5.0 / (k - 1))
    if tau == 0.0:
        return np.where(r == 0.0, 1.0, 0.0)
    return scalar_confidence(r / tau, ensemble.params)


def scalar_global(ensemble: ScalarEnsemble) -> float:
    """Confidence-weighted combination of the scalar estimates.

    Falls back to the plain mean when every confidence is zero.
    """
    z = simplified_confidence(ensemble)
    total = z.sum()
    if total == 0.0:
        return float(ensemble.estimates.mean())
    return float((z @ ensemble.estimates) / total)
