"""Dependency injection container for services."""

from dependency_injector import containers, providers

from app.config import Settings
from app.services.conformal_service import ConformalService
from app.services.data_service import DataService
from app.services.experiment_service import ExperimentService
from app.services.metrics_service import MetricsService
from app.services.training_service import TrainingService
from app.utils.run_store import RunStore


class ServiceContainer(containers.DeclarativeContainer):
    """Container for service dependency injection."""

    # Configuration providers
    config = providers.Dependency(instance_of=Settings)

    # Stateless domain services
    data_service = providers.Singleton(DataService)
    conformal_service = providers.Singleton(ConformalService)

    # Training loop - progress cadence comes from settings
    training_service = providers.Singleton(
        TrainingService,
        config=config,
        conformal_service=conformal_service,
    )

    metrics_service = providers.Singleton(
        MetricsService,
        conformal_service=conformal_service,
    )

    experiment_service = providers.Singleton(
        ExperimentService,
        config=config,
        data_service=data_service,
        conformal_service=conformal_service,
        training_service=training_service,
        metrics_service=metrics_service,
    )

    # One store per run directory; callers pass run_dir
    run_store = providers.Factory(RunStore)
