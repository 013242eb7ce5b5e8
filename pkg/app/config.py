"""Configuration management using Pydantic settings.

This module implements a two-layer configuration system:
1. Environment: Loads raw values from environment variables (UPPER_CASE)
2. Settings: Clean process settings with lowercase fields and derived values

Usage:
    # Production: Load from environment
    settings = Settings.load()

    # Tests: Construct directly with test values
    settings = Settings(log_level="DEBUG", progress_interval=10)

Experiment hyperparameters do not live here; they come from the run
configuration file (see app/schemas/train_config.py).
"""

import logging
from pathlib import Path

from pydantic import BaseModel, ConfigDict, Field
from pydantic_settings import BaseSettings, SettingsConfigDict

# Project root directory (parent of app/)
_PROJECT_ROOT = Path(__file__).resolve().parent.parent

_LOG_LEVELS = {"CRITICAL", "ERROR", "WARNING", "INFO", "DEBUG"}


class Environment(BaseSettings):
    """Raw environment variable loading.

    This class loads values directly from environment variables with UPPER_CASE names.
    It should not contain any derived values or transformation logic.
    """

    model_config = SettingsConfigDict(
        env_file=_PROJECT_ROOT / ".env",
        env_file_encoding="utf-8",
        case_sensitive=True,
        extra="ignore",
    )

    CGAN_LOG_LEVEL: str = Field(default="INFO", description="Root log level")
    CGAN_PROGRESS_INTERVAL: int = Field(
        default=250,
        description="Training iterations between progress log lines",
    )
    CGAN_DEFAULT_SEED: int = Field(
        default=0,
        description="Seed used by commands when none is given on the command line",
    )


class Settings(BaseModel):
    """Process settings with lowercase fields and derived values.

    For production, use Settings.load() to load from environment.
    For tests, construct directly with test values (defaults provided for convenience).
    """

    model_config = ConfigDict(from_attributes=True)

    log_level: str = "INFO"
    progress_interval: int = 250
    default_seed: int = 0

    @property
    def log_level_number(self) -> int:
        """Numeric logging level for the configured name."""
        return logging.getLevelNamesMapping()[self.log_level]

    def validate_config(self) -> None:
        """Validate that settings are usable.

        Raises:
            ConfigurationError: If a setting is out of range
        """
        from app.exceptions import ConfigurationError

        errors: list[str] = []

        if self.log_level not in _LOG_LEVELS:
            errors.append(
                f"CGAN_LOG_LEVEL must be one of {sorted(_LOG_LEVELS)} (got {self.log_level!r})"
            )
        if self.progress_interval < 1:
            errors.append("CGAN_PROGRESS_INTERVAL must be at least 1")
        if self.default_seed < 0:
            errors.append("CGAN_DEFAULT_SEED must be non-negative")

        if errors:
            raise ConfigurationError(
                "Configuration validation failed:\n  - " + "\n  - ".join(errors)
            )

    @classmethod
    def load(cls, env: Environment | None = None) -> "Settings":
        """Load settings from environment variables.

        Args:
            env: Optional Environment instance (for testing). If None, loads from environment.

        Returns:
            Settings instance with all values resolved
        """
        if env is None:
            env = Environment()

        return cls(
            log_level=env.CGAN_LOG_LEVEL.strip().upper(),
            progress_interval=env.CGAN_PROGRESS_INTERVAL,
            default_seed=env.CGAN_DEFAULT_SEED,
        )
