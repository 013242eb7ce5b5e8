"""Tests for reading run configuration files."""

from __future__ import annotations

import json

import pytest

from app.exceptions import ConfigLoadFailed
from app.schemas.train_config import default_run_config
from app.utils.config_loader import load_run_config


def _write(tmp_path, payload, name="config.json"):
    path = tmp_path / name
    path.write_text(payload if isinstance(payload, str) else json.dumps(payload))
    return path


def _payload():
    return json.loads(default_run_config().model_dump_json(by_alias=True, exclude_none=True))


def test_loads_json(tmp_path):
    assert load_run_config(_write(tmp_path, _payload())) == default_run_config()


def test_loads_yaml(tmp_path):
    lines = [f"{key}: {json.dumps(value)}" for key, value in _payload().items()]
    config = load_run_config(_write(tmp_path, "\n".join(lines), name="config.yaml"))
    assert config == default_run_config()


def test_missing_field_is_named(tmp_path):
    payload = _payload()
    del payload["eta_g"]
    with pytest.raises(ConfigLoadFailed) as excinfo:
        load_run_config(_write(tmp_path, payload))
    assert "eta_g" in str(excinfo.value)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigLoadFailed) as excinfo:
        load_run_config(tmp_path / "absent.json")
    assert excinfo.value.path == str(tmp_path / "absent.json")


def test_malformed_document(tmp_path):
    with pytest.raises(ConfigLoadFailed):
        load_run_config(_write(tmp_path, "{not: [valid"))


def test_non_mapping_root(tmp_path):
    with pytest.raises(ConfigLoadFailed):
        load_run_config(_write(tmp_path, "[1, 2, 3]"))
