"""Tests for the MLP engine: forward/backward, Adam and the gradient-penalty surrogate."""

from __future__ import annotations

from collections.abc import Callable

import numpy as np
import pytest

from app.exceptions import DimensionMismatchError, NonFiniteGradientError
from app.models.mlp import (
    Activation,
    GradientBundle,
    MlpModel,
    adam_step,
    backward,
    forward,
    grad_penalty_surrogate,
)

# The first seeds run by default; the rest only in the slow suite.
GRADIENT_SEEDS = [*range(5), *(pytest.param(seed, marks=pytest.mark.slow) for seed in range(5, 100))]


def _numeric_grads(model: MlpModel, loss: Callable[[MlpModel], float], h: float = 1e-6) -> GradientBundle:
    """Central finite differences over every parameter."""
    weights = []
    biases = []
    for params, out in ((model.weights, weights), (model.biases, biases)):
        for param in params:
            grad = np.zeros_like(param)
            for pos in np.ndindex(param.shape):
                original = param[pos]
                param[pos] = original + h
                upper = loss(model)
                param[pos] = original - h
                lower = loss(model)
                param[pos] = original
                grad[pos] = (upper - lower) / (2.0 * h)
            out.append(grad)
    return GradientBundle(weights=weights, biases=biases)


def _assert_close(analytic: GradientBundle, numeric: GradientBundle) -> None:
    for a, n in zip(analytic.weights + analytic.biases, numeric.weights + numeric.biases, strict=True):
        np.testing.assert_allclose(a, n, rtol=1e-4, atol=1e-7)


@pytest.mark.parametrize("output", [Activation.LINEAR, Activation.SIGMOID])
@pytest.mark.parametrize("seed", GRADIENT_SEEDS)
def test_backward_matches_finite_differences(output, seed):
    model = MlpModel.create([3, 6, 5, 2], output, seed=seed)
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(4, 3))
    upstream = rng.normal(size=(4, 2))

    def loss(m: MlpModel) -> float:
        return float(np.sum(upstream * forward(m, x)))

    analytic = backward(model, x, upstream)
    _assert_close(analytic, _numeric_grads(model, loss))


def test_backward_input_gradient_matches_finite_differences():
    model = MlpModel.create([3, 6, 1], Activation.SIGMOID, seed=2)
    rng = np.random.default_rng(2)
    x = rng.normal(size=(5, 3))
    upstream = rng.normal(size=(5, 1))
    analytic = backward(model, x, upstream).input_grad

    numeric = np.zeros_like(x)
    h = 1e-6
    for pos in np.ndindex(x.shape):
        shifted = x.copy()
        shifted[pos] += h
        upper = float(np.sum(upstream * forward(model, shifted)))
        shifted[pos] -= 2 * h
        lower = float(np.sum(upstream * forward(model, shifted)))
        numeric[pos] = (upper - lower) / (2 * h)
    np.testing.assert_allclose(analytic, numeric, rtol=1e-4, atol=1e-8)


def test_create_rejects_degenerate_layers():
    with pytest.raises(DimensionMismatchError):
        MlpModel.create([3], Activation.LINEAR, seed=0)
    with pytest.raises(DimensionMismatchError):
        MlpModel.create([3, 0, 1], Activation.LINEAR, seed=0)


def test_create_is_deterministic():
    a = MlpModel.create([4, 8, 2], Activation.LINEAR, seed=11)
    b = MlpModel.create([4, 8, 2], Activation.LINEAR, seed=11)
    for wa, wb in zip(a.weights, b.weights, strict=True):
        np.testing.assert_array_equal(wa, wb)
    assert all(np.all(bias == 0.0) for bias in a.biases)


def test_forward_rejects_wrong_input_width():
    model = MlpModel.create([3, 4, 1], Activation.LINEAR, seed=0)
    with pytest.raises(DimensionMismatchError):
        forward(model, np.zeros((2, 4)))


def test_sigmoid_output_stays_strictly_inside_unit_interval():
    model = MlpModel.create([1, 1], Activation.SIGMOID, seed=0)
    model.weights[0][:] = 1.0
    out = forward(model, np.array([[-1e4], [-40.0], [0.0], [40.0], [1e4]]))
    assert np.all(out > 0.0)
    assert np.all(out < 1.0)
    assert out[2, 0] == pytest.approx(0.5)


def test_adam_first_step_moves_by_learning_rate():
    model = MlpModel.create([2, 3, 1], Activation.LINEAR, seed=0)
    grads = GradientBundle(
        weights=[np.full_like(w, 0.5) for w in model.weights],
        biases=[np.full_like(b, -2.0) for b in model.biases],
    )
    updated = adam_step(model, grads, lr=1e-3)

    for before, after in zip(model.weights, updated.weights, strict=True):
        np.testing.assert_allclose(after - before, -1e-3, rtol=1e-6)
    for before, after in zip(model.biases, updated.biases, strict=True):
        np.testing.assert_allclose(after - before, 1e-3, rtol=1e-6)
    assert updated.adam.step == 1
    assert model.adam.step == 0


def test_adam_rejects_non_finite_gradients():
    model = MlpModel.create([2, 1], Activation.LINEAR, seed=0)
    grads = GradientBundle.zeros_like(model)
    grads.weights[0][0, 0] = np.nan
    with pytest.raises(NonFiniteGradientError):
        adam_step(model, grads, lr=1e-3)


def test_adam_rejects_mismatched_gradients():
    model = MlpModel.create([2, 1], Activation.LINEAR, seed=0)
    other = MlpModel.create([3, 1], Activation.LINEAR, seed=0)
    with pytest.raises(DimensionMismatchError):
        adam_step(model, GradientBundle.zeros_like(other), lr=1e-3)


def test_penalty_of_linear_model_is_squared_directional_slope():
    model = MlpModel.create([2, 1], Activation.LINEAR, seed=0)
    model.weights[0][:] = np.array([[3.0], [-4.0]])
    x = np.zeros((2, 2))
    directions = np.array([[1.0, 0.0], [0.0, 1.0]])

    penalty, _ = grad_penalty_surrogate(model, x, 1e-2, None, directions=directions)

    assert penalty == pytest.approx((9.0 + 16.0) / 2.0, rel=1e-9)


def test_penalty_leaves_unperturbed_columns_alone():
    model = MlpModel.create([3, 1], Activation.LINEAR, seed=0)
    model.weights[0][:] = np.array([[1.0], [0.0], [100.0]])
    x = np.zeros((1, 3))

    penalty, _ = grad_penalty_surrogate(
        model, x, 1e-2, None, perturb_cols=2, directions=np.array([[1.0, 0.0]])
    )

    assert penalty == pytest.approx(1.0, rel=1e-9)


@pytest.mark.parametrize("seed", GRADIENT_SEEDS)
def test_penalty_gradient_matches_finite_differences(seed):
    model = MlpModel.create([4, 6, 1], Activation.SIGMOID, seed=seed)
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(3, 4))
    directions = rng.normal(size=(3, 2))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)

    def loss(m: MlpModel) -> float:
        return grad_penalty_surrogate(m, x, 1e-2, None, perturb_cols=2, directions=directions)[0]

    _, analytic = grad_penalty_surrogate(model, x, 1e-2, None, perturb_cols=2, directions=directions)
    _assert_close(analytic, _numeric_grads(model, loss))


def test_penalty_empty_batch_is_zero():
    model = MlpModel.create([2, 1], Activation.SIGMOID, seed=0)
    penalty, grads = grad_penalty_surrogate(model, np.zeros((0, 2)), 1e-2, np.random.default_rng(0))
    assert penalty == 0.0
    assert all(np.all(w == 0.0) for w in grads.weights)


def test_penalty_requires_rng_or_directions():
    model = MlpModel.create([2, 1], Activation.SIGMOID, seed=0)
    with pytest.raises(ValueError):
        grad_penalty_surrogate(model, np.zeros((1, 2)), 1e-2, None)
    with pytest.raises(ValueError):
        grad_penalty_surrogate(model, np.zeros((1, 2)), 0.0, np.random.default_rng(0))
