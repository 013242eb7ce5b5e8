"""Labeled feature matrices and their standardization state."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from app.exceptions import DimensionMismatchError, ValidationException
from app.models.mlp import Matrix

Labels = NDArray[np.int64]


@dataclass(frozen=True)
class Standardizer:
    """Per-feature (mean, std); constant features carry std 1."""

    mean: NDArray[np.float64]
    std: NDArray[np.float64]

    def apply(self, features: Matrix) -> Matrix:
        return (features - self.mean) / self.std

    def invert(self, features: Matrix) -> Matrix:
        return features * self.std + self.mean


@dataclass(frozen=True)
class LabeledDataset:
    features: Matrix
    labels: Labels
    num_classes: int
    standardizer: Standardizer | None = None

    def __post_init__(self) -> None:
        if self.features.ndim != 2:
            raise DimensionMismatchError("feature matrix rank", 2, self.features.ndim)
        if self.labels.shape != (self.features.shape[0],):
            raise DimensionMismatchError(
                "label vector length", self.features.shape[0], self.labels.shape
            )
        if self.num_classes < 0:
            raise ValidationException("class count must be non-negative")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValidationException(
                f"labels must lie in 0..{self.num_classes - 1}"
            )

    @classmethod
    def empty(cls, dim: int, num_classes: int) -> LabeledDataset:
        return cls(
            features=np.zeros((0, dim)),
            labels=np.zeros(0, dtype=np.int64),
            num_classes=num_classes,
        )

    @property
    def size(self) -> int:
        return int(self.features.shape[0])

    @property
    def dim(self) -> int:
        return int(self.features.shape[1])

    def class_counts(self) -> NDArray[np.int64]:
        return np.bincount(self.labels, minlength=self.num_classes).astype(np.int64)

    def subset(self, indices: NDArray[np.int64]) -> LabeledDataset:
        return LabeledDataset(
            features=self.features[indices],
            labels=self.labels[indices],
            num_classes=self.num_classes,
            standardizer=self.standardizer,
        )


def one_hot(labels: Labels, num_classes: int) -> Matrix:
    """Row-wise one-hot encoding."""
    encoded = np.zeros((labels.shape[0], num_classes))
    if labels.size:
        encoded[np.arange(labels.shape[0]), labels] = 1.0
    return encoded


def with_labels(features: Matrix, labels: Labels, num_classes: int) -> Matrix:
    """Concatenate features with one-hot labels, the conditional network input."""
    return np.hstack([features, one_hot(labels, num_classes)])
