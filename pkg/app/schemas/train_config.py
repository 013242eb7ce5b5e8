"""Pydantic models describing the training and run configuration contract.

Every field is required in a configuration file so a run directory's
``resolved_config.json`` documents the complete experiment. Use
``default_run_config()`` for a fully populated starting point.
"""

from __future__ import annotations

import math
from enum import StrEnum

from pydantic import AliasChoices, BaseModel, ConfigDict, Field, field_validator, model_validator

from app.consts import DEFAULT_METRIC_LEVELS
from app.exceptions import InvalidWeightsError
from app.models.conformal import WEIGHT_TOLERANCE, WeightVector


class WeightSelectionMode(StrEnum):
    FIXED = "fixed"
    GRID = "grid"
    ECE = "ece"


class TrainConfig(BaseModel):
    """Hyperparameters of one adversarial training run."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    d_z: int = Field(ge=1)
    num_classes: int = Field(
        validation_alias=AliasChoices("K", "num_classes"), serialization_alias="K", ge=1
    )
    batch_size: int = Field(
        validation_alias=AliasChoices("B", "batch_size"), serialization_alias="B", ge=1
    )
    iterations: int = Field(
        validation_alias=AliasChoices("T", "iterations"), serialization_alias="T", ge=0
    )
    eta_g: float = Field(gt=0)
    eta_d: float = Field(gt=0)
    lambda_reg: float = Field(ge=0)
    mu_conform: float = Field(ge=0)
    weights: list[float]
    k_folds: int = Field(ge=2)
    hidden: list[int]
    seed: int = Field(ge=0)
    refit_period: int = Field(ge=1)
    penalty_eps: float = Field(gt=0)

    @field_validator("weights")
    @classmethod
    def _weights_on_simplex(cls, value: list[float]) -> list[float]:
        try:
            WeightVector.of(value)
        except InvalidWeightsError as exc:
            raise ValueError(exc.message) from exc
        return value

    @field_validator("hidden")
    @classmethod
    def _positive_widths(cls, value: list[int]) -> list[int]:
        if any(width < 1 for width in value):
            raise ValueError("hidden layer widths must be at least 1")
        return value

    def weight_vector(self) -> WeightVector:
        return WeightVector.of(self.weights)

    def baseline(self) -> TrainConfig:
        """The same run with both regularizers disabled (a standard conditional GAN)."""
        return self.model_copy(update={"mu_conform": 0.0, "lambda_reg": 0.0})


class RunConfig(TrainConfig):
    """Training hyperparameters plus calibration, evaluation and path settings."""

    alpha: float = Field(gt=0, lt=1)
    metric_levels: list[float]
    split_fractions: list[float]
    weight_selection: WeightSelectionMode
    selection_finetune_iterations: int = Field(ge=0)
    fit_pool_size: int = Field(ge=1)
    monitor_alpha: float = Field(gt=0, lt=1)
    data_path: str | None = None
    run_dir: str | None = None

    @field_validator("metric_levels")
    @classmethod
    def _increasing_levels(cls, value: list[float]) -> list[float]:
        if not value:
            raise ValueError("at least one metric level is required")
        if any(not 0.0 < level < 1.0 for level in value):
            raise ValueError("metric levels must lie in (0, 1)")
        if any(b <= a for a, b in zip(value, value[1:], strict=False)):
            raise ValueError("metric levels must be strictly increasing")
        return value

    @field_validator("split_fractions")
    @classmethod
    def _fractions_sum_to_one(cls, value: list[float]) -> list[float]:
        if len(value) != 4:
            raise ValueError("expected four fractions (train, calib, val, test)")
        if any(not math.isfinite(f) or f < 0 for f in value):
            raise ValueError("fractions must be non-negative")
        if abs(sum(value) - 1.0) > WEIGHT_TOLERANCE:
            raise ValueError(f"fractions must sum to 1, got {sum(value)}")
        return value

    @field_validator("data_path", "run_dir")
    @classmethod
    def _strip_optional(cls, value: str | None) -> str | None:
        if value is None:
            return None
        trimmed = value.strip()
        if not trimmed:
            raise ValueError("must not be empty")
        return trimmed

    @model_validator(mode="after")
    def _pool_covers_folds(self) -> RunConfig:
        if self.fit_pool_size < max(self.k_folds, self.num_classes):
            raise ValueError("fit_pool_size must be at least max(k_folds, K)")
        return self

    def train_config(self) -> TrainConfig:
        return TrainConfig.model_validate(
            self.model_dump(include=set(TrainConfig.model_fields))
        )


def default_run_config() -> RunConfig:
    return RunConfig(
        d_z=8,
        num_classes=3,
        batch_size=64,
        iterations=3000,
        eta_g=2e-4,
        eta_d=2e-4,
        lambda_reg=0.1,
        mu_conform=1.0,
        weights=[0.25, 0.25, 0.25, 0.25],
        k_folds=5,
        hidden=[64, 64],
        seed=0,
        refit_period=50,
        penalty_eps=1e-2,
        alpha=0.1,
        metric_levels=list(DEFAULT_METRIC_LEVELS),
        split_fractions=[0.5, 0.1, 0.1, 0.3],
        weight_selection=WeightSelectionMode.FIXED,
        selection_finetune_iterations=100,
        fit_pool_size=512,
        monitor_alpha=0.1,
    )
