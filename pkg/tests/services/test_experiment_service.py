"""Tests for ExperimentService pipelines."""

from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest

from app.config import Settings
from app.exceptions import InsufficientDataError
from app.models.cgan import build_discriminator, build_generator
from app.models.conformal import METHODS, NonconformityMethod, WeightVector
from app.schemas.data import MixtureSpec
from app.schemas.report import ComparisonReport
from app.schemas.train_config import WeightSelectionMode, default_run_config
from app.schemas.training import TrainRecord
from app.services.conformal_service import ConformalService
from app.services.container import ServiceContainer
from app.services.experiment_service import TrainedRun, r_icp_trend
from tests.conftest import make_mixture, make_run_config


def _record(t: int, r_icp: float) -> TrainRecord:
    return TrainRecord(t=t, loss_d=1.0, loss_g=1.0, r_icp=r_icp, c_g=r_icp, grad_penalty=0.0, coverage=0.5)


def test_r_icp_trend_compares_first_and_last_tenth():
    log = [_record(t, float(100 - t)) for t in range(1, 101)]
    early, late = r_icp_trend(log)
    assert early == pytest.approx(np.mean(range(90, 100)))
    assert late == pytest.approx(np.mean(range(0, 10)))


def test_r_icp_trend_of_empty_log():
    assert r_icp_trend([]) == (0.0, 0.0)


def test_prepare_splits_standardizes_before_splitting(experiment_service):
    data = make_mixture(n=400)
    splits = experiment_service.prepare_splits(data, make_run_config())
    pooled = np.vstack([piece.features for piece in splits])
    np.testing.assert_allclose(pooled.mean(axis=0), 0.0, atol=1e-12)
    assert splits.train.standardizer is not None
    assert sum(piece.size for piece in splits) == 400


def test_prepare_splits_adopts_configured_class_count(experiment_service):
    data = make_mixture(n=200, num_classes=2)
    splits = experiment_service.prepare_splits(data, make_run_config())
    assert splits.train.num_classes == 3


def test_train_run_and_calibrate(experiment_service):
    config = make_run_config(iterations=10)
    trained = experiment_service.train_run(make_mixture(n=400), config)
    assert len(trained.result.log) == 10

    calibrator = experiment_service.fit_calibrator(
        trained.result.gen,
        trained.result.disc,
        trained.splits.train,
        trained.splits.calib,
        config,
        config.weight_vector(),
    )
    assert calibrator.size == trained.splits.calib.size
    assert calibrator.alpha == config.alpha


def test_baseline_run_disables_regularizers(experiment_service):
    trained = experiment_service.train_run(make_mixture(n=400), make_run_config(iterations=5), baseline=True)
    assert all(record.grad_penalty == 0.0 for record in trained.result.log)


@pytest.mark.parametrize("mode", list(WeightSelectionMode))
def test_choose_weights_modes(experiment_service, mode):
    config = make_run_config(iterations=5, selection_finetune_iterations=2, weights=[1.0, 0.0, 0.0, 0.0])
    trained = experiment_service.train_run(make_mixture(n=400), config)

    chosen = experiment_service.choose_weights(
        mode, trained.result.gen, trained.result.disc, trained.splits, config, rng_state=trained.result.rng_state
    )

    if mode is WeightSelectionMode.FIXED:
        assert chosen == WeightVector((1.0, 0.0, 0.0, 0.0))
    else:
        assert chosen in ConformalService.simplex_grid(0.25)


def test_compare_over_two_seeds(experiment_service):
    report = experiment_service.compare(make_mixture(n=400), make_run_config(iterations=10), [0, 1])
    assert [row.seed for row in report.rows] == [0, 1]
    assert report.summary.seeds == 2
    assert 0 <= report.summary.ece_improved <= 2


def test_compare_needs_seeds(experiment_service):
    with pytest.raises(InsufficientDataError):
        experiment_service.compare(make_mixture(n=400), make_run_config(), [])


@pytest.mark.slow
def test_default_budget_produces_usable_generator(experiment_service, data_service):
    data = data_service.make_gaussian_mixture(MixtureSpec(num_classes=3, dim=2, n=6000, seed=1))
    config = default_run_config()
    trained = experiment_service.train_run(data, config)
    synth = experiment_service.generate_like(trained.result.gen, trained.splits.test, seed=3)

    fidelity = experiment_service.metrics_service.fidelity(trained.splits.test, synth)
    assert fidelity.downstream_accuracy >= 0.6
    assert len(trained.result.log) == config.iterations


def test_compare_scores_both_models_against_one_calibrator(experiment_service):
    config = make_run_config(iterations=10)
    baseline = experiment_service.train_run(make_mixture(n=400), config, baseline=True)
    other_disc = build_discriminator(dim=2, num_classes=3, hidden=[8], seed=99)
    # Same generator, different discriminator: only a per-model calibrator could tell them apart.
    twin = TrainedRun(splits=baseline.splits, result=replace(baseline.result, disc=other_disc))

    row = experiment_service._compare_seed(0, config, baseline, twin)

    assert row.ece_conformal == row.ece_baseline
    assert row.conformal == row.baseline


def _seeded_models(seed: int):
    gen = build_generator(d_z=2, num_classes=3, dim=2, hidden=[8], seed=seed)
    disc = build_discriminator(dim=2, num_classes=3, hidden=[8], seed=seed + 1000)
    return gen, disc


def _coverage_over_seeds(experiment_service, models, weights, alphas, seeds):
    """Mean real-data coverage per alpha: fit on 300, calibrate on 500, test on 2000 points."""
    coverage = {alpha: [] for alpha in alphas}
    for seed in seeds:
        config = make_run_config(seed=seed)
        train = make_mixture(n=300, seed=1000 + seed)
        calib = make_mixture(n=500, seed=2000 + seed)
        test = make_mixture(n=2000, seed=3000 + seed)
        gen, disc = models(seed, config, train)
        for alpha in alphas:
            calibrator = experiment_service.fit_calibrator(gen, disc, train, calib, config, weights, alpha)
            inside = experiment_service.conformal_service.contains(
                calibrator, test.features, test.labels, disc
            )
            coverage[alpha].append(float(np.mean(inside)))
    return {alpha: float(np.mean(values)) for alpha, values in coverage.items()}


def test_venn_abers_coverage_stays_in_window(experiment_service):
    alphas = (0.05, 0.1, 0.2)
    coverage = _coverage_over_seeds(
        experiment_service,
        lambda seed, config, train: _seeded_models(seed),
        WeightVector.unit(NonconformityMethod.VENN_ABERS),
        alphas,
        range(20),
    )
    for alpha in alphas:
        assert 1 - alpha - 0.02 <= coverage[alpha] <= 1 - alpha + 0.03, (alpha, coverage[alpha])


@pytest.mark.slow
@pytest.mark.parametrize(
    "weights",
    [*(WeightVector.unit(m) for m in METHODS), WeightVector.uniform()],
)
def test_trained_coverage_stays_in_window(experiment_service, weights):
    trained: dict[int, tuple] = {}

    def models(seed, config, train):
        if seed not in trained:
            result = experiment_service.training_service.train(
                train,
                make_run_config(seed=seed, iterations=100).train_config(),
                fit_pool_size=config.fit_pool_size,
                monitor_alpha=config.monitor_alpha,
            )
            trained[seed] = (result.gen, result.disc)
        return trained[seed]

    alphas = (0.05, 0.1, 0.2)
    coverage = _coverage_over_seeds(experiment_service, models, weights, alphas, range(20))
    for alpha in alphas:
        assert 1 - alpha - 0.02 <= coverage[alpha] <= 1 - alpha + 0.03, (alpha, coverage[alpha])


@pytest.fixture(scope="module")
def default_comparison() -> ComparisonReport:
    """Baseline and conformal runs at the default budget over ten seeds."""
    container = ServiceContainer()
    container.config.override(Settings(log_level="WARNING", progress_interval=1000, default_seed=0))
    data = container.data_service().make_gaussian_mixture(
        MixtureSpec(num_classes=3, dim=2, n=6000, seed=1)
    )
    return container.experiment_service().compare(data, default_run_config(), list(range(10)))


@pytest.mark.slow
def test_conformal_model_keeps_downstream_utility(default_comparison):
    summary = default_comparison.summary
    assert summary.seeds == 10
    assert summary.accuracy_not_worse >= 7
    assert summary.median_accuracy_conformal >= 0.90
    assert summary.ks_not_worse >= 7


@pytest.mark.slow
def test_conformal_model_improves_calibration(default_comparison):
    improved = sum(row.ece_conformal < row.ece_baseline for row in default_comparison.rows)
    assert improved >= 7


@pytest.mark.slow
def test_r_icp_decreases_during_training(default_comparison):
    decreased = sum(row.r_icp_late < row.r_icp_early for row in default_comparison.rows)
    assert decreased >= 8
