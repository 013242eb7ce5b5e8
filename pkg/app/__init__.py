"""Conditional GAN with conformal regularization, calibration and validity metrics."""

import logging
import sys

from app.config import Settings
from app.services.container import ServiceContainer

_LOG_FORMAT = "%(name)s %(levelname)s: %(message)s"


def create_container(settings: Settings | None = None) -> ServiceContainer:
    """Create the service container.

    Settings are loaded from the environment unless given, validated, and
    used to configure stderr logging.
    """
    if settings is None:
        settings = Settings.load()

    # Validate configuration before proceeding
    settings.validate_config()

    configure_logging(settings)

    container = ServiceContainer()
    container.config.override(settings)
    return container


def configure_logging(settings: Settings) -> None:
    """Install a single stderr handler on the root logger."""
    root_logger = logging.getLogger()
    if not any(
        isinstance(h, logging.StreamHandler) and getattr(h, "stream", None) is sys.stderr
        for h in root_logger.handlers
    ):
        stderr_handler = logging.StreamHandler(sys.stderr)
        stderr_handler.setFormatter(logging.Formatter(_LOG_FORMAT))
        root_logger.addHandler(stderr_handler)
    root_logger.setLevel(settings.log_level_number)
