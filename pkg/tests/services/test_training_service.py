"""Tests for TrainingService losses, steps, the training loop and sampling."""

from __future__ import annotations

import math
from unittest.mock import MagicMock

import numpy as np
import pytest

from app.exceptions import DimensionMismatchError, InsufficientDataError, TrainingDivergedError
from app.models.cgan import build_discriminator, build_generator
from app.models.conformal import ConformityReference, WeightVector
from app.models.mlp import adam_step
from app.services.training_service import _check_finite
from app.utils.isotonic import IsotonicFit
from app.utils.rng import make_rng, random_unit_rows
from tests.conftest import make_mixture, make_run_config


def _constant_disc():
    disc = build_discriminator(dim=2, num_classes=3, hidden=[4], seed=0)
    for weights in disc.weights:
        weights[:] = 0.0
    return disc


def _reference(conformal_service, training_service, data, disc, gen):
    pool = training_service.generate_balanced(gen, 48, 3, make_rng(2))
    real = conformal_service.fit_scorer(data, disc, k=3, generated=pool)
    fake = conformal_service.fit_scorer(pool, disc, k=3, venn_fit=real.venn)
    return ConformityReference(real=real, fake=fake)


# ── discriminator ──────────────────────────────────────────────────────


def test_constant_discriminator_bce_is_two_log_two(training_service, mixture):
    disc = _constant_disc()
    batch = mixture.subset(np.arange(8))
    fake = make_mixture(n=8, seed=9)
    directions = random_unit_rows(make_rng(0), 8, 2)

    for lambda_reg in (0.0, 0.5):
        loss = training_service.discriminator_loss(
            disc, batch.features, batch.labels, fake.features, fake.labels, 3, lambda_reg, 1e-2, directions
        )
        assert loss.bce == pytest.approx(2 * math.log(2))
        assert loss.grad_penalty == 0.0
        assert loss.value == pytest.approx(2 * math.log(2))


def test_discriminator_loss_rejects_uneven_batches(training_service, mixture, small_disc):
    batch = mixture.subset(np.arange(8))
    with pytest.raises(DimensionMismatchError):
        training_service.discriminator_loss(
            small_disc, batch.features, batch.labels, batch.features[:4], batch.labels[:4],
            3, 0.0, 1e-2, random_unit_rows(make_rng(0), 8, 2),
        )


def test_discriminator_update_descends(training_service, mixture, small_disc, small_gen):
    batch = mixture.subset(np.arange(16))
    fake = training_service.generate(small_gen, 16, 3, seed=1)
    directions = random_unit_rows(make_rng(0), 16, 2)

    def loss_of(disc):
        return training_service.discriminator_loss(
            disc, batch.features, batch.labels, fake.features, fake.labels, 3, 0.1, 1e-2, directions
        )

    before = loss_of(small_disc)
    after = loss_of(adam_step(small_disc, before.grads, 1e-4))
    assert after.value < before.value


def test_discriminator_step_returns_finite_record(training_service, mixture, small_disc, small_gen):
    config = make_run_config().train_config()
    disc, result = training_service.discriminator_step(
        small_gen, small_disc, mixture.subset(np.arange(16)), config, make_rng(0)
    )
    assert math.isfinite(result.loss_d)
    assert result.grad_penalty >= 0.0
    assert disc is not small_disc


# ── generator ──────────────────────────────────────────────────────────


def test_generator_loss_without_conformal_weight_is_adversarial(
    conformal_service, training_service, mixture, small_disc, small_gen
):
    reference = _reference(conformal_service, training_service, mixture, small_disc, small_gen)
    z, labels = training_service.sample_latent(12, 2, 3, make_rng(0))
    real = mixture.subset(np.arange(12))

    loss = training_service.generator_loss(
        small_gen, small_disc, z, labels, real.features, real.labels,
        reference, WeightVector.uniform(), 0.0, 3,
    )
    assert loss.value == pytest.approx(loss.adversarial)
    assert loss.c_g > 0.0


def test_generator_gradient_matches_finite_differences(
    conformal_service, training_service, mixture, small_disc, small_gen
):
    reference = _reference(conformal_service, training_service, mixture, small_disc, small_gen)
    z, labels = training_service.sample_latent(6, 2, 3, make_rng(3))
    real = mixture.subset(np.arange(6))

    def loss_of(gen):
        return training_service.generator_loss(
            gen, small_disc, z, labels, real.features, real.labels,
            reference, WeightVector.uniform(), 1.0, 3,
        )

    analytic = loss_of(small_gen).grads
    h = 1e-6
    for layer, param in enumerate(small_gen.weights):
        numeric = np.zeros_like(param)
        for pos in np.ndindex(param.shape):
            original = param[pos]
            param[pos] = original + h
            upper = loss_of(small_gen).value
            param[pos] = original - h
            lower = loss_of(small_gen).value
            param[pos] = original
            numeric[pos] = (upper - lower) / (2 * h)
        np.testing.assert_allclose(analytic.weights[layer], numeric, rtol=1e-4, atol=1e-6)


def test_generator_update_descends(conformal_service, training_service, mixture, small_disc, small_gen):
    reference = _reference(conformal_service, training_service, mixture, small_disc, small_gen)
    z, labels = training_service.sample_latent(16, 2, 3, make_rng(5))
    real = mixture.subset(np.arange(16))
    eta = make_run_config().eta_g / 100

    def loss_of(gen):
        return training_service.generator_loss(
            gen, small_disc, z, labels, real.features, real.labels,
            reference, WeightVector.uniform(), 1.0, 3,
        )

    before = loss_of(small_gen)
    after = loss_of(adam_step(small_gen, before.grads, eta))
    assert after.value < before.value
    assert before.c_g > 0.0


def _smooth_reference(conformal_service, training_service, data, disc, gen):
    # Few Venn-Abers breakpoints keep finite differences away from its kinks.
    venn = IsotonicFit(breakpoints=np.linspace(0.0, 1.0, 5), values=np.array([0.05, 0.2, 0.5, 0.7, 0.95]))
    pool = training_service.generate_balanced(gen, 48, 3, make_rng(2))
    real = conformal_service.fit_scorer(data, disc, k=3, venn_fit=venn)
    fake = conformal_service.fit_scorer(pool, disc, k=3, venn_fit=venn)
    return ConformityReference(real=real, fake=fake)


def _numeric_grads(model, loss, h=1e-6):
    grads = []
    for param in [*model.weights, *model.biases]:
        grad = np.zeros_like(param)
        for pos in np.ndindex(param.shape):
            original = param[pos]
            param[pos] = original + h
            upper = loss(model)
            param[pos] = original - h
            lower = loss(model)
            param[pos] = original
            grad[pos] = (upper - lower) / (2 * h)
        grads.append(grad)
    return grads


@pytest.mark.slow
@pytest.mark.parametrize("seed", range(100))
def test_loss_gradients_match_finite_differences_across_seeds(conformal_service, training_service, seed):
    data = make_mixture(n=60, seed=seed)
    gen = build_generator(d_z=2, num_classes=3, dim=2, hidden=[6], seed=seed)
    disc = build_discriminator(dim=2, num_classes=3, hidden=[6], seed=seed + 500)
    reference = _smooth_reference(conformal_service, training_service, data, disc, gen)
    rng = make_rng(seed)
    z, labels = training_service.sample_latent(6, 2, 3, rng)
    real = data.subset(np.arange(6))
    fake = training_service.generate(gen, 6, 3, seed=seed)
    directions = random_unit_rows(rng, 6, 2)

    def generator_loss(model):
        return training_service.generator_loss(
            model, disc, z, labels, real.features, real.labels,
            reference, WeightVector.uniform(), 1.0, 3,
        )

    def discriminator_loss(model):
        return training_service.discriminator_loss(
            model, real.features, real.labels, fake.features, fake.labels, 3, 0.5, 1e-2, directions
        )

    for loss, model in ((generator_loss, gen), (discriminator_loss, disc)):
        analytic = loss(model).grads
        numeric = _numeric_grads(model, lambda m, loss=loss: loss(m).value)
        for a, n in zip([*analytic.weights, *analytic.biases], numeric, strict=True):
            np.testing.assert_allclose(a, n, rtol=1e-4, atol=1e-6)


def test_generator_step_reports_coverage(conformal_service, training_service, mixture, small_disc, small_gen):
    config = make_run_config().train_config()
    reference = _reference(conformal_service, training_service, mixture, small_disc, small_gen)
    monitor = conformal_service.calibrate(reference.real, WeightVector.uniform(), mixture, small_disc, 0.1)

    _, result = training_service.generator_step(
        small_gen, small_disc, mixture.subset(np.arange(16)), reference, config, make_rng(0), monitor=monitor
    )
    assert 0.0 <= result.coverage <= 1.0
    assert result.r_icp >= 0.0


# ── training loop ──────────────────────────────────────────────────────


def test_zero_iterations_returns_initial_models(training_service, mixture):
    config = make_run_config(iterations=0).train_config()
    result = training_service.train(mixture, config, fit_pool_size=48)
    gen, disc = training_service.init_models(config, mixture.dim)

    assert result.log == []
    for a, b in zip(result.gen.weights + result.disc.weights, gen.weights + disc.weights, strict=True):
        np.testing.assert_array_equal(a, b)


def test_training_is_deterministic(training_service, mixture):
    config = make_run_config(iterations=12).train_config()
    first = training_service.train(mixture, config, fit_pool_size=48)
    second = training_service.train(mixture, config, fit_pool_size=48)

    assert [r.model_dump() for r in first.log] == [r.model_dump() for r in second.log]
    assert first.rng_state == second.rng_state
    for a, b in zip(first.gen.weights, second.gen.weights, strict=True):
        np.testing.assert_array_equal(a, b)


def test_training_log_records(training_service, mixture):
    config = make_run_config(iterations=12).train_config()
    result = training_service.train(mixture, config, fit_pool_size=48)

    assert [r.t for r in result.log] == list(range(1, 13))
    for record in result.log:
        assert math.isfinite(record.loss_d) and math.isfinite(record.loss_g)
        assert 0.0 <= record.coverage <= 1.0


def test_baseline_logs_no_penalty(training_service, mixture):
    config = make_run_config(iterations=5).train_config().baseline()
    result = training_service.train(mixture, config, fit_pool_size=48)
    assert all(record.grad_penalty == 0.0 for record in result.log)
    assert all(record.loss_d > 0.0 for record in result.log)


def test_training_reports_progress(training_service, mixture):
    progress = MagicMock()
    config = make_run_config(iterations=20).train_config()
    training_service.train(mixture, config, fit_pool_size=48, progress=progress)
    # progress_interval is 10 in the test settings
    assert progress.send_progress.call_count == 2


def test_training_rejects_small_data(training_service):
    config = make_run_config(batch_size=64).train_config()
    with pytest.raises(InsufficientDataError):
        training_service.train(make_mixture(n=30), config, fit_pool_size=48)


def test_training_rejects_class_mismatch(training_service):
    config = make_run_config().train_config()
    with pytest.raises(DimensionMismatchError):
        training_service.train(make_mixture(num_classes=2), config, fit_pool_size=48)


def test_non_finite_loss_aborts():
    _check_finite(3, "loss_d", 1.0)
    with pytest.raises(TrainingDivergedError) as excinfo:
        _check_finite(3, "loss_d", float("nan"))
    assert "loss_d" in str(excinfo.value)


# ── sampling ───────────────────────────────────────────────────────────


def test_generate_empty(training_service, small_gen):
    assert training_service.generate(small_gen, 0, 3, seed=0).size == 0


def test_generate_is_seeded(training_service, small_gen):
    a = training_service.generate(small_gen, 20, 3, seed=7)
    b = training_service.generate(small_gen, 20, 3, seed=7)
    np.testing.assert_array_equal(a.features, b.features)
    np.testing.assert_array_equal(a.labels, b.labels)


def test_generate_honours_requested_labels(training_service, small_gen):
    samples = training_service.generate(small_gen, 10, 3, seed=1, labels=np.zeros(10, dtype=np.int64))
    assert np.all(samples.labels == 0)


def test_generate_balanced_covers_classes(training_service, small_gen):
    pool = training_service.generate_balanced(small_gen, 30, 3, make_rng(0))
    np.testing.assert_array_equal(pool.class_counts(), [10, 10, 10])


def test_latent_draws(training_service):
    z, labels = training_service.sample_latent(0, 4, 3, make_rng(0))
    assert z.shape == (0, 4) and labels.shape == (0,)
    z, labels = training_service.sample_latent(20000, 2, 3, make_rng(1))
    assert abs(float(z.mean())) < 3 * 1 / math.sqrt(z.size)
    assert abs(float(z.var()) - 1.0) < 3 * math.sqrt(2 / z.size)
    assert set(labels.tolist()) == {0, 1, 2}


def test_fine_tune_leaves_inputs_untouched(training_service, mixture, small_gen, small_disc):
    config = make_run_config().train_config()
    before = [w.copy() for w in small_gen.weights]
    tuned = training_service.fine_tune(
        small_gen, small_disc, mixture, config, WeightVector.uniform(), 3, fit_pool_size=48, rng=make_rng(0)
    )
    for original, kept in zip(before, small_gen.weights, strict=True):
        np.testing.assert_array_equal(original, kept)
    assert not np.array_equal(tuned.weights[0], small_gen.weights[0])
