"""Run configuration loader that reads JSON (or YAML) and validates via Pydantic."""

from __future__ import annotations

from pathlib import Path

import yaml
from pydantic import ValidationError

from app.exceptions import ConfigLoadFailed
from app.schemas.train_config import RunConfig


def load_run_config(path: str | Path) -> RunConfig:
    """Read and validate a run configuration file.

    JSON is the documented format; since YAML is a superset of JSON the
    parser also accepts YAML documents.
    """
    candidate = Path(path)
    if not candidate.exists():
        raise ConfigLoadFailed("configuration file not found", path=str(path))
    if not candidate.is_file():
        raise ConfigLoadFailed("configuration path is not a file", path=str(path))

    try:
        raw = candidate.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigLoadFailed(
            f"failed to read configuration: {exc.strerror}", path=str(path)
        ) from exc

    try:
        payload = yaml.safe_load(raw) or {}
    except yaml.YAMLError as exc:
        message = getattr(exc, "problem_mark", None)
        detail = f"malformed configuration: {exc}"
        if message:
            detail = f"malformed configuration at {message}"
        raise ConfigLoadFailed(detail, path=str(path)) from exc

    if not isinstance(payload, dict):
        raise ConfigLoadFailed("configuration root must be a mapping", path=str(path))

    try:
        return RunConfig.model_validate(payload)
    except ValidationError as exc:
        raise ConfigLoadFailed(
            f"configuration validation failed: {describe_validation_error(exc)}", path=str(path)
        ) from exc


def describe_validation_error(exc: ValidationError) -> str:
    """One 'field: message' entry per error, joined by semicolons."""
    parts = []
    for error in exc.errors():
        location = ".".join(str(item) for item in error["loc"]) or "<root>"
        parts.append(f"{location}: {error['msg']}")
    return "; ".join(parts)
