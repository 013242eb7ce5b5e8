"""Dataset synthesis spec and the standardizer document."""

from __future__ import annotations

import math

import numpy as np
from numpy.typing import NDArray
from pydantic import BaseModel, Field, field_validator, model_validator

from app.models.dataset import Standardizer

DEFAULT_RADIUS = 4.0


class MixtureSpec(BaseModel):
    """Isotropic Gaussian mixture with uniformly drawn classes.

    Without explicit means, class k is centred at radius 4 and angle 2*pi*k/K
    in the first two dimensions.
    """

    num_classes: int = Field(ge=1)
    dim: int = Field(ge=1)
    n: int = Field(ge=0)
    std: float = Field(default=1.0, gt=0)
    seed: int = Field(default=0, ge=0)
    means: list[list[float]] | None = None

    @field_validator("std")
    @classmethod
    def _finite_std(cls, value: float) -> float:
        if not math.isfinite(value):
            raise ValueError("std must be finite")
        return value

    @model_validator(mode="after")
    def _means_match(self) -> MixtureSpec:
        if self.means is None:
            return self
        if len(self.means) != self.num_classes:
            raise ValueError(f"expected {self.num_classes} class means, got {len(self.means)}")
        if any(len(mean) != self.dim for mean in self.means):
            raise ValueError(f"every class mean needs {self.dim} coordinates")
        return self

    def class_means(self) -> NDArray[np.float64]:
        if self.means is not None:
            return np.asarray(self.means, dtype=np.float64)
        means = np.zeros((self.num_classes, self.dim))
        angles = 2.0 * np.pi * np.arange(self.num_classes) / self.num_classes
        means[:, 0] = DEFAULT_RADIUS * np.cos(angles)
        if self.dim > 1:
            means[:, 1] = DEFAULT_RADIUS * np.sin(angles)
        return means


class StandardizerDocument(BaseModel):
    mean: list[float]
    std: list[float]

    @field_validator("std")
    @classmethod
    def _positive(cls, value: list[float]) -> list[float]:
        if any(not s > 0 for s in value):
            raise ValueError("std entries must be positive")
        return value

    @classmethod
    def from_standardizer(cls, standardizer: Standardizer) -> StandardizerDocument:
        return cls(mean=standardizer.mean.tolist(), std=standardizer.std.tolist())

    def to_standardizer(self) -> Standardizer:
        return Standardizer(
            mean=np.asarray(self.mean, dtype=np.float64),
            std=np.asarray(self.std, dtype=np.float64),
        )
