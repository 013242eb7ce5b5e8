"""JSON document for a fitted calibrator."""

from __future__ import annotations

import numpy as np
from pydantic import BaseModel, Field, field_validator

from app.models.conformal import CalibratorState, CrossConformalState, ScorerState, WeightVector
from app.utils.isotonic import IsotonicFit


class CrossConformalDocument(BaseModel):
    k: int = Field(ge=2)
    fold_assignment: list[int]
    complement_means: list[list[float]]


class IsotonicDocument(BaseModel):
    breakpoints: list[float]
    values: list[float]

    @field_validator("values")
    @classmethod
    def _nondecreasing(cls, value: list[float]) -> list[float]:
        if any(b < a for a, b in zip(value, value[1:], strict=False)):
            raise ValueError("isotonic values must be nondecreasing")
        return value


class ScorerDocument(BaseModel):
    icp_mean: list[float]
    mondrian_means: dict[int, list[float]]
    cross: CrossConformalDocument
    venn: IsotonicDocument

    @classmethod
    def from_state(cls, state: ScorerState) -> ScorerDocument:
        return cls(
            icp_mean=state.icp_mean.tolist(),
            mondrian_means={label: mean.tolist() for label, mean in state.mondrian_means.items()},
            cross=CrossConformalDocument(
                k=state.cross.k,
                fold_assignment=state.cross.fold_assignment.tolist(),
                complement_means=state.cross.complement_means.tolist(),
            ),
            venn=IsotonicDocument(
                breakpoints=state.venn.breakpoints.tolist(),
                values=state.venn.values.tolist(),
            ),
        )

    def to_state(self) -> ScorerState:
        return ScorerState(
            icp_mean=np.asarray(self.icp_mean, dtype=np.float64),
            mondrian_means={
                label: np.asarray(mean, dtype=np.float64)
                for label, mean in sorted(self.mondrian_means.items())
            },
            cross=CrossConformalState(
                k=self.cross.k,
                fold_assignment=np.asarray(self.cross.fold_assignment, dtype=np.int64),
                complement_means=np.asarray(self.cross.complement_means, dtype=np.float64),
            ),
            venn=IsotonicFit(
                breakpoints=np.asarray(self.venn.breakpoints, dtype=np.float64),
                values=np.asarray(self.venn.values, dtype=np.float64),
            ),
        )


class CalibratorDocument(BaseModel):
    """Fitted method states, weights, sorted calibration scores and alpha."""

    scorer: ScorerDocument
    weights: list[float]
    alpha: float = Field(gt=0, lt=1)
    calib_scores: list[float]
    calib_features: list[list[float]]
    calib_labels: list[int]

    @field_validator("calib_scores")
    @classmethod
    def _sorted(cls, value: list[float]) -> list[float]:
        if any(b < a for a, b in zip(value, value[1:], strict=False)):
            raise ValueError("calibration scores must be sorted ascending")
        return value

    @classmethod
    def from_state(cls, state: CalibratorState) -> CalibratorDocument:
        return cls(
            scorer=ScorerDocument.from_state(state.scorer),
            weights=list(state.weights.values),
            alpha=state.alpha,
            calib_scores=state.calib_scores.tolist(),
            calib_features=state.calib_features.tolist(),
            calib_labels=state.calib_labels.tolist(),
        )

    def to_state(self) -> CalibratorState:
        scorer = self.scorer.to_state()
        features = np.asarray(self.calib_features, dtype=np.float64)
        if features.size == 0:
            features = features.reshape(0, scorer.icp_mean.shape[0])
        return CalibratorState(
            scorer=scorer,
            weights=WeightVector.of(self.weights),
            calib_scores=np.asarray(self.calib_scores, dtype=np.float64),
            alpha=self.alpha,
            calib_features=features,
            calib_labels=np.asarray(self.calib_labels, dtype=np.int64),
        )
