"""Fitted state of the four nonconformity methods and of a calibrated region."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import StrEnum

import numpy as np
from numpy.typing import NDArray

from app.exceptions import InvalidWeightsError, ValidationException
from app.models.dataset import Labels
from app.models.mlp import Matrix
from app.utils.isotonic import IsotonicFit

WEIGHT_TOLERANCE = 1e-9


class NonconformityMethod(StrEnum):
    """Index i of lambda_i follows this declaration order."""

    ICP = "icp"
    MONDRIAN = "mondrian"
    CROSS_CONFORMAL = "cross_conformal"
    VENN_ABERS = "venn_abers"


METHODS: tuple[NonconformityMethod, ...] = tuple(NonconformityMethod)


@dataclass(frozen=True)
class CrossConformalState:
    k: int
    fold_assignment: NDArray[np.int64]
    complement_means: Matrix


@dataclass(frozen=True)
class ScorerState:
    icp_mean: NDArray[np.float64]
    mondrian_means: dict[int, NDArray[np.float64]]
    cross: CrossConformalState
    venn: IsotonicFit


@dataclass(frozen=True)
class ConformityReference:
    """Scorer states fitted on the real pool and on the generated pool."""

    real: ScorerState
    fake: ScorerState


@dataclass(frozen=True)
class WeightVector:
    values: tuple[float, float, float, float]

    def __post_init__(self) -> None:
        if len(self.values) != len(METHODS):
            raise InvalidWeightsError(f"expected {len(METHODS)} weights, got {len(self.values)}")
        if any(not math.isfinite(v) or v < 0 for v in self.values):
            raise InvalidWeightsError(f"weights must be non-negative: {self.values}")
        if abs(sum(self.values) - 1.0) > WEIGHT_TOLERANCE:
            raise InvalidWeightsError(f"weights must sum to 1: {self.values}")

    @classmethod
    def uniform(cls) -> WeightVector:
        return cls((0.25, 0.25, 0.25, 0.25))

    @classmethod
    def unit(cls, method: NonconformityMethod) -> WeightVector:
        values = [0.0] * len(METHODS)
        values[METHODS.index(method)] = 1.0
        return cls((values[0], values[1], values[2], values[3]))

    @classmethod
    def of(cls, values: list[float] | tuple[float, ...]) -> WeightVector:
        if len(values) != len(METHODS):
            raise InvalidWeightsError(f"expected {len(METHODS)} weights, got {len(values)}")
        return cls((float(values[0]), float(values[1]), float(values[2]), float(values[3])))

    def weight(self, method: NonconformityMethod) -> float:
        return self.values[METHODS.index(method)]

    def active(self) -> list[tuple[NonconformityMethod, float]]:
        return [(method, w) for method, w in zip(METHODS, self.values, strict=True) if w > 0.0]


@dataclass(frozen=True)
class CalibratorState:
    scorer: ScorerState
    weights: WeightVector
    calib_scores: NDArray[np.float64]
    alpha: float
    calib_features: Matrix
    calib_labels: Labels

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha < 1.0:
            raise ValidationException(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.calib_scores.size > 1 and np.any(np.diff(self.calib_scores) < 0):
            raise ValidationException("calibration scores must be sorted")

    @property
    def size(self) -> int:
        return int(self.calib_scores.size)
