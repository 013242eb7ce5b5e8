"""Pytest configuration and fixtures.

Services are wired through the real ServiceContainer with test settings;
datasets are small seeded Gaussian mixtures so every test is deterministic.
"""

from __future__ import annotations

from typing import Any

import numpy as np
import pytest

from app.config import Settings
from app.models.cgan import build_discriminator, build_generator
from app.models.dataset import LabeledDataset
from app.models.mlp import MlpModel
from app.schemas.data import MixtureSpec
from app.schemas.train_config import RunConfig, default_run_config
from app.services.conformal_service import ConformalService
from app.services.container import ServiceContainer
from app.services.data_service import DataService
from app.services.experiment_service import ExperimentService
from app.services.metrics_service import MetricsService
from app.services.training_service import TrainingService


def make_run_config(**overrides: Any) -> RunConfig:
    """A tiny, fast run configuration; keyword arguments override fields."""
    base = default_run_config().model_dump()
    base.update(
        d_z=2,
        batch_size=16,
        iterations=20,
        eta_g=1e-3,
        eta_d=1e-3,
        k_folds=3,
        hidden=[8],
        refit_period=10,
        fit_pool_size=48,
        selection_finetune_iterations=0,
        split_fractions=[0.4, 0.2, 0.2, 0.2],
    )
    base.update(overrides)
    return RunConfig.model_validate(base)


def make_mixture(n: int = 300, num_classes: int = 3, dim: int = 2, seed: int = 1) -> LabeledDataset:
    return DataService().make_gaussian_mixture(
        MixtureSpec(num_classes=num_classes, dim=dim, n=n, seed=seed)
    )


@pytest.fixture
def test_settings() -> Settings:
    return Settings(log_level="WARNING", progress_interval=10, default_seed=0)


@pytest.fixture
def container(test_settings: Settings) -> ServiceContainer:
    container = ServiceContainer()
    container.config.override(test_settings)
    return container


@pytest.fixture
def data_service(container: ServiceContainer) -> DataService:
    return container.data_service()


@pytest.fixture
def conformal_service(container: ServiceContainer) -> ConformalService:
    return container.conformal_service()


@pytest.fixture
def training_service(container: ServiceContainer) -> TrainingService:
    return container.training_service()


@pytest.fixture
def metrics_service(container: ServiceContainer) -> MetricsService:
    return container.metrics_service()


@pytest.fixture
def experiment_service(container: ServiceContainer) -> ExperimentService:
    return container.experiment_service()


@pytest.fixture
def mixture() -> LabeledDataset:
    """300 points, three classes, two features."""
    return make_mixture()


@pytest.fixture
def small_disc() -> MlpModel:
    return build_discriminator(dim=2, num_classes=3, hidden=[8], seed=3)


@pytest.fixture
def small_gen() -> MlpModel:
    return build_generator(d_z=2, num_classes=3, dim=2, hidden=[8], seed=4)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
