"""Tests for process settings."""

from __future__ import annotations

import logging

import pytest

from app.config import Environment, Settings
from app.exceptions import ConfigurationError


def test_load_from_environment(monkeypatch):
    monkeypatch.setenv("CGAN_LOG_LEVEL", " debug ")
    monkeypatch.setenv("CGAN_PROGRESS_INTERVAL", "5")
    monkeypatch.setenv("CGAN_DEFAULT_SEED", "9")

    settings = Settings.load(Environment(_env_file=None))

    assert settings.log_level == "DEBUG"
    assert settings.log_level_number == logging.DEBUG
    assert settings.progress_interval == 5
    assert settings.default_seed == 9


def test_defaults_validate():
    Settings().validate_config()


@pytest.mark.parametrize(
    "settings",
    [Settings(log_level="LOUD"), Settings(progress_interval=0), Settings(default_seed=-1)],
)
def test_invalid_settings_are_reported(settings):
    with pytest.raises(ConfigurationError):
        settings.validate_config()
