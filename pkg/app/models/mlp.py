"""Minimal dense feedforward network with reverse-mode gradients and Adam.

Parameters are stored per layer as a (fan_in, fan_out) weight matrix and a
(1, fan_out) bias row. Hidden layers use leaky-relu(0.2); the output layer is
linear (generator) or sigmoid (discriminator). All operations are value
semantic: updates return a new model.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import StrEnum

import numpy as np
from numpy.typing import NDArray

from app.consts import ADAM_BETA1, ADAM_BETA2, ADAM_EPS, LEAKY_RELU_SLOPE
from app.exceptions import DimensionMismatchError, NonFiniteGradientError
from app.utils.rng import make_rng, random_unit_rows

Matrix = NDArray[np.float64]

_SIGMOID_FLOOR = float(np.finfo(np.float64).tiny)
_SIGMOID_CEIL = 1.0 - 2.0**-53


class Activation(StrEnum):
    LEAKY_RELU = "leaky_relu"
    LINEAR = "linear"
    SIGMOID = "sigmoid"


@dataclass
class AdamState:
    """First/second moment estimates mirroring the model parameters."""

    m_weights: list[Matrix]
    v_weights: list[Matrix]
    m_biases: list[Matrix]
    v_biases: list[Matrix]
    step: int = 0


@dataclass
class MlpModel:
    layer_dims: list[int]
    weights: list[Matrix]
    biases: list[Matrix]
    output_activation: Activation
    adam: AdamState
    rng_seed: int = 0
    hidden_activation: Activation = Activation.LEAKY_RELU

    @classmethod
    def create(
        cls,
        layer_dims: list[int],
        output_activation: Activation,
        seed: int,
    ) -> MlpModel:
        """Initialise weights with scaled normal draws and zero biases."""
        if len(layer_dims) < 2 or any(dim < 1 for dim in layer_dims):
            raise DimensionMismatchError("layer dims", "at least two positive sizes", layer_dims)
        rng = make_rng(seed)
        weights: list[Matrix] = []
        biases: list[Matrix] = []
        for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:], strict=True):
            scale = np.sqrt(2.0 / ((1.0 + LEAKY_RELU_SLOPE**2) * fan_in))
            weights.append(rng.normal(0.0, scale, size=(fan_in, fan_out)))
            biases.append(np.zeros((1, fan_out)))
        return cls(
            layer_dims=list(layer_dims),
            weights=weights,
            biases=biases,
            output_activation=output_activation,
            adam=_fresh_adam(weights, biases),
            rng_seed=seed,
        )

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def num_layers(self) -> int:
        return len(self.weights)

    def copy(self) -> MlpModel:
        return MlpModel(
            layer_dims=list(self.layer_dims),
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            output_activation=self.output_activation,
            adam=AdamState(
                m_weights=[m.copy() for m in self.adam.m_weights],
                v_weights=[v.copy() for v in self.adam.v_weights],
                m_biases=[m.copy() for m in self.adam.m_biases],
                v_biases=[v.copy() for v in self.adam.v_biases],
                step=self.adam.step,
            ),
            rng_seed=self.rng_seed,
            hidden_activation=self.hidden_activation,
        )


@dataclass
class GradientBundle:
    """Parameter gradients mirroring an MlpModel, plus the input gradient."""

    weights: list[Matrix]
    biases: list[Matrix]
    input_grad: Matrix | None = None

    @classmethod
    def zeros_like(cls, model: MlpModel) -> GradientBundle:
        return cls(
            weights=[np.zeros_like(w) for w in model.weights],
            biases=[np.zeros_like(b) for b in model.biases],
        )

    def add(self, other: GradientBundle, scale: float = 1.0) -> GradientBundle:
        """Elementwise sum; the input gradient is dropped since inputs differ."""
        return GradientBundle(
            weights=[a + scale * b for a, b in zip(self.weights, other.weights, strict=True)],
            biases=[a + scale * b for a, b in zip(self.biases, other.biases, strict=True)],
        )


@dataclass
class _ForwardCache:
    inputs: list[Matrix] = field(default_factory=list)
    pre_activations: list[Matrix] = field(default_factory=list)
    output: Matrix = field(default_factory=lambda: np.zeros((0, 0)))


def forward(model: MlpModel, inputs: Matrix) -> Matrix:
    """Evaluate the network on a batch of rows."""
    return _forward_cached(model, inputs).output


def backward(model: MlpModel, inputs: Matrix, output_grad: Matrix) -> GradientBundle:
    """Gradients of sum(output_grad * forward(inputs)) w.r.t. parameters and input."""
    cache = _forward_cached(model, inputs)
    if output_grad.shape != cache.output.shape:
        raise DimensionMismatchError("output gradient shape", cache.output.shape, output_grad.shape)

    weight_grads: list[Matrix] = [np.zeros(0)] * model.num_layers
    bias_grads: list[Matrix] = [np.zeros(0)] * model.num_layers
    delta = output_grad * _activation_grad(
        _layer_activation(model, model.num_layers - 1),
        cache.pre_activations[-1],
        cache.output,
    )
    for layer in reversed(range(model.num_layers)):
        weight_grads[layer] = cache.inputs[layer].T @ delta
        bias_grads[layer] = delta.sum(axis=0, keepdims=True)
        upstream = delta @ model.weights[layer].T
        if layer > 0:
            previous = cache.pre_activations[layer - 1]
            delta = upstream * _activation_grad(
                _layer_activation(model, layer - 1), previous, None
            )
        else:
            delta = upstream
    return GradientBundle(weights=weight_grads, biases=bias_grads, input_grad=delta)


def adam_step(model: MlpModel, grads: GradientBundle, lr: float) -> MlpModel:
    """One bias-corrected Adam update; returns the updated copy."""
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    _check_mirrors(model, grads)
    for idx, (gw, gb) in enumerate(zip(grads.weights, grads.biases, strict=True)):
        if not np.all(np.isfinite(gw)):
            raise NonFiniteGradientError(f"weights[{idx}]")
        if not np.all(np.isfinite(gb)):
            raise NonFiniteGradientError(f"biases[{idx}]")

    updated = model.copy()
    state = updated.adam
    state.step += 1
    correction1 = 1.0 - ADAM_BETA1**state.step
    correction2 = 1.0 - ADAM_BETA2**state.step

    def _update(param: Matrix, grad: Matrix, m: Matrix, v: Matrix) -> None:
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * grad
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * grad * grad
        param -= lr * (m / correction1) / (np.sqrt(v / correction2) + ADAM_EPS)

    for idx in range(updated.num_layers):
        _update(updated.weights[idx], grads.weights[idx], state.m_weights[idx], state.v_weights[idx])
        _update(updated.biases[idx], grads.biases[idx], state.m_biases[idx], state.v_biases[idx])
    return updated


def grad_penalty_surrogate(
    model: MlpModel,
    x: Matrix,
    eps: float,
    rng: np.random.Generator | None,
    *,
    perturb_cols: int | None = None,
    directions: Matrix | None = None,
) -> tuple[float, GradientBundle]:
    """Directional finite-difference surrogate for the mean squared input-gradient norm.

    Computes (1/B) sum_i ((D(x_i + eps u_i) - D(x_i)) / eps)^2 with a fresh
    random unit vector u_i per row, restricted to the first ``perturb_cols``
    columns (the feature block; label one-hots are left untouched). The
    parameter gradient is exact backprop through both forward passes.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    batch = x.shape[0]
    cols = x.shape[1] if perturb_cols is None else perturb_cols
    if directions is None:
        if rng is None:
            raise ValueError("either rng or explicit directions are required")
        directions = random_unit_rows(rng, batch, cols)
    if directions.shape != (batch, cols):
        raise DimensionMismatchError("penalty directions", (batch, cols), directions.shape)
    if batch == 0:
        return 0.0, GradientBundle.zeros_like(model)

    shifted = x.copy()
    shifted[:, :cols] += eps * directions
    base_out = forward(model, x)
    shifted_out = forward(model, shifted)
    ratio = (shifted_out - base_out) / eps
    penalty = float(np.mean(np.sum(ratio**2, axis=1)))

    coeff = 2.0 * ratio / (batch * eps)
    plus = backward(model, shifted, coeff)
    minus = backward(model, x, coeff)
    return penalty, plus.add(minus, scale=-1.0)


def _forward_cached(model: MlpModel, inputs: Matrix) -> _ForwardCache:
    if inputs.ndim != 2 or inputs.shape[1] != model.input_dim:
        raise DimensionMismatchError(
            "model input", f"(*, {model.input_dim})", inputs.shape
        )
    cache = _ForwardCache()
    activation = inputs
    for layer in range(model.num_layers):
        cache.inputs.append(activation)
        pre = activation @ model.weights[layer] + model.biases[layer]
        cache.pre_activations.append(pre)
        activation = _apply_activation(_layer_activation(model, layer), pre)
    cache.output = activation
    return cache


def _layer_activation(model: MlpModel, layer: int) -> Activation:
    if layer == model.num_layers - 1:
        return model.output_activation
    return model.hidden_activation


def _apply_activation(kind: Activation, pre: Matrix) -> Matrix:
    match kind:
        case Activation.LEAKY_RELU:
            return np.where(pre > 0.0, pre, LEAKY_RELU_SLOPE * pre)
        case Activation.SIGMOID:
            return _sigmoid(pre)
        case _:
            return pre


def _activation_grad(kind: Activation, pre: Matrix, post: Matrix | None) -> Matrix:
    match kind:
        case Activation.LEAKY_RELU:
            # Subgradient at 0 is the negative-side slope.
            return np.where(pre > 0.0, 1.0, LEAKY_RELU_SLOPE)
        case Activation.SIGMOID:
            out = _sigmoid(pre) if post is None else post
            return out * (1.0 - out)
        case _:
            return np.ones_like(pre)


def _sigmoid(pre: Matrix) -> Matrix:
    # Split by sign so exp never overflows.
    out = np.empty_like(pre)
    positive = pre >= 0.0
    out[positive] = 1.0 / (1.0 + np.exp(-pre[positive]))
    exp_neg = np.exp(pre[~positive])
    out[~positive] = exp_neg / (1.0 + exp_neg)
    # Keep outputs strictly inside (0, 1) even where exp saturates.
    return np.clip(out, _SIGMOID_FLOOR, _SIGMOID_CEIL)


def _fresh_adam(weights: list[Matrix], biases: list[Matrix]) -> AdamState:
    return AdamState(
        m_weights=[np.zeros_like(w) for w in weights],
        v_weights=[np.zeros_like(w) for w in weights],
        m_biases=[np.zeros_like(b) for b in biases],
        v_biases=[np.zeros_like(b) for b in biases],
    )


def _check_mirrors(model: MlpModel, grads: GradientBundle) -> None:
    if len(grads.weights) != model.num_layers or len(grads.biases) != model.num_layers:
        raise DimensionMismatchError("gradient layer count", model.num_layers, len(grads.weights))
    for idx in range(model.num_layers):
        if grads.weights[idx].shape != model.weights[idx].shape:
            raise DimensionMismatchError(
                f"weights[{idx}] gradient", model.weights[idx].shape, grads.weights[idx].shape
            )
        if grads.biases[idx].shape != model.biases[idx].shape:
            raise DimensionMismatchError(
                f"biases[{idx}] gradient", model.biases[idx].shape, grads.biases[idx].shape
            )
