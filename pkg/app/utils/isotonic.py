"""Isotonic regression by pool-adjacent-violators.

Evaluation between breakpoints is piecewise-linear so the fitted curve has a
usable derivative almost everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

from app.exceptions import DimensionMismatchError, ValidationException

FloatArray = NDArray[np.float64]


@dataclass(frozen=True)
class IsotonicFit:
    """Sorted unique breakpoints with nondecreasing fitted values in [0, 1]."""

    breakpoints: FloatArray
    values: FloatArray

    def predict(self, x: ArrayLike) -> FloatArray:
        points = np.asarray(x, dtype=np.float64)
        if self.breakpoints.size == 0:
            return np.zeros_like(points)
        return np.interp(points, self.breakpoints, self.values)

    def slope(self, x: ArrayLike) -> FloatArray:
        """Derivative of predict(); zero outside the breakpoint range."""
        points = np.asarray(x, dtype=np.float64)
        if self.breakpoints.size < 2:
            return np.zeros_like(points)
        segment = np.searchsorted(self.breakpoints, points, side="right") - 1
        inside = (segment >= 0) & (segment < self.breakpoints.size - 1)
        segment = np.clip(segment, 0, self.breakpoints.size - 2)
        rise = self.values[segment + 1] - self.values[segment]
        run = self.breakpoints[segment + 1] - self.breakpoints[segment]
        return np.where(inside, rise / run, 0.0)


def pool_adjacent_violators(
    ys: ArrayLike, weights: ArrayLike | None = None
) -> FloatArray:
    """Weighted least-squares nondecreasing fit of a sequence."""
    targets = np.asarray(ys, dtype=np.float64)
    w = np.ones_like(targets) if weights is None else np.asarray(weights, dtype=np.float64)
    if w.shape != targets.shape:
        raise DimensionMismatchError("PAVA weights", targets.shape, w.shape)

    # Stack of blocks: (weighted mean, total weight, element count).
    means: list[float] = []
    totals: list[float] = []
    counts: list[int] = []
    for value, weight in zip(targets.tolist(), w.tolist(), strict=True):
        means.append(value)
        totals.append(weight)
        counts.append(1)
        while len(means) > 1 and means[-2] > means[-1]:
            merged_total = totals[-2] + totals[-1]
            merged_mean = (means[-2] * totals[-2] + means[-1] * totals[-1]) / merged_total
            merged_count = counts[-2] + counts[-1]
            del means[-1], totals[-1], counts[-1]
            means[-1] = merged_mean
            totals[-1] = merged_total
            counts[-1] = merged_count
    return np.repeat(np.asarray(means, dtype=np.float64), counts)


def pava_fit(xs: ArrayLike, ys: ArrayLike) -> IsotonicFit:
    """Fit a nondecreasing map from sorted predictors to targets clamped to [0, 1].

    Tied predictor values are pooled first so the fit is a function of x.
    """
    predictors = np.asarray(xs, dtype=np.float64)
    targets = np.clip(np.asarray(ys, dtype=np.float64), 0.0, 1.0)
    if predictors.shape != targets.shape or predictors.ndim != 1:
        raise DimensionMismatchError("isotonic inputs", predictors.shape, targets.shape)
    if predictors.size and np.any(np.diff(predictors) < 0):
        raise ValidationException("isotonic predictors must be sorted ascending")
    if predictors.size == 0:
        return IsotonicFit(breakpoints=np.zeros(0), values=np.zeros(0))

    breakpoints, inverse, tie_counts = np.unique(
        predictors, return_inverse=True, return_counts=True
    )
    tie_sums = np.bincount(inverse, weights=targets)
    tie_means = tie_sums / tie_counts
    fitted = pool_adjacent_violators(tie_means, tie_counts.astype(np.float64))
    return IsotonicFit(breakpoints=breakpoints, values=np.clip(fitted, 0.0, 1.0))
