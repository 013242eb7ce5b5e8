"""JSON checkpoint document for an MlpModel and its optimizer state."""

from __future__ import annotations

from typing import Any

import numpy as np
from pydantic import BaseModel, Field, model_validator

from app.models.mlp import Activation, AdamState, Matrix, MlpModel


class AdamDocument(BaseModel):
    m_weights: list[list[float]]
    v_weights: list[list[float]]
    m_biases: list[list[float]]
    v_biases: list[list[float]]
    step: int = Field(ge=0)


class ModelCheckpoint(BaseModel):
    """Weights and biases stored as flat row-major arrays, one per layer."""

    layer_dims: list[int]
    weights: list[list[float]]
    biases: list[list[float]]
    hidden_activation: Activation
    output_activation: Activation
    adam: AdamDocument
    rng_seed: int
    rng_state: dict[str, Any] | None = None

    @model_validator(mode="after")
    def _layer_sizes_match(self) -> ModelCheckpoint:
        layers = len(self.layer_dims) - 1
        if layers < 1:
            raise ValueError("layer_dims needs at least an input and an output size")
        flat_groups = {
            "weights": self.weights,
            "adam.m_weights": self.adam.m_weights,
            "adam.v_weights": self.adam.v_weights,
        }
        bias_groups = {
            "biases": self.biases,
            "adam.m_biases": self.adam.m_biases,
            "adam.v_biases": self.adam.v_biases,
        }
        for name, group in flat_groups.items():
            if len(group) != layers:
                raise ValueError(f"{name} must have {layers} layers")
            for idx, values in enumerate(group):
                expected = self.layer_dims[idx] * self.layer_dims[idx + 1]
                if len(values) != expected:
                    raise ValueError(f"{name}[{idx}] must hold {expected} values")
        for name, group in bias_groups.items():
            if len(group) != layers:
                raise ValueError(f"{name} must have {layers} layers")
            for idx, values in enumerate(group):
                if len(values) != self.layer_dims[idx + 1]:
                    raise ValueError(f"{name}[{idx}] must hold {self.layer_dims[idx + 1]} values")
        return self

    @classmethod
    def from_model(
        cls, model: MlpModel, rng_state: dict[str, Any] | None = None
    ) -> ModelCheckpoint:
        return cls(
            layer_dims=list(model.layer_dims),
            weights=[_flatten(w) for w in model.weights],
            biases=[_flatten(b) for b in model.biases],
            hidden_activation=model.hidden_activation,
            output_activation=model.output_activation,
            adam=AdamDocument(
                m_weights=[_flatten(m) for m in model.adam.m_weights],
                v_weights=[_flatten(v) for v in model.adam.v_weights],
                m_biases=[_flatten(m) for m in model.adam.m_biases],
                v_biases=[_flatten(v) for v in model.adam.v_biases],
                step=model.adam.step,
            ),
            rng_seed=model.rng_seed,
            rng_state=rng_state,
        )

    def to_model(self) -> MlpModel:
        dims = self.layer_dims
        weight_shapes = [(dims[i], dims[i + 1]) for i in range(len(dims) - 1)]
        bias_shapes = [(1, dims[i + 1]) for i in range(len(dims) - 1)]
        return MlpModel(
            layer_dims=list(dims),
            weights=_unflatten(self.weights, weight_shapes),
            biases=_unflatten(self.biases, bias_shapes),
            output_activation=self.output_activation,
            adam=AdamState(
                m_weights=_unflatten(self.adam.m_weights, weight_shapes),
                v_weights=_unflatten(self.adam.v_weights, weight_shapes),
                m_biases=_unflatten(self.adam.m_biases, bias_shapes),
                v_biases=_unflatten(self.adam.v_biases, bias_shapes),
                step=self.adam.step,
            ),
            rng_seed=self.rng_seed,
            hidden_activation=self.hidden_activation,
        )


def _flatten(matrix: Matrix) -> list[float]:
    return [float(v) for v in matrix.ravel(order="C").tolist()]


def _unflatten(groups: list[list[float]], shapes: list[tuple[int, int]]) -> list[Matrix]:
    return [
        np.asarray(values, dtype=np.float64).reshape(shape)
        for values, shape in zip(groups, shapes, strict=True)
    ]
