"""Run directory storage: checkpoints, calibrator, training log, reports and curves."""

from __future__ import annotations

import csv
import logging
from collections.abc import Iterable, Sequence
from pathlib import Path
from typing import Any, TypeVar

from pydantic import BaseModel, ValidationError

from app.consts import (
    CALIBRATOR,
    DISC_CHECKPOINT,
    GEN_CHECKPOINT,
    REPORT,
    RESOLVED_CONFIG,
    STANDARDIZER,
    TRAIN_LOG,
)
from app.exceptions import ConfigLoadFailed, RunArtifactMissing
from app.models.conformal import CalibratorState
from app.models.dataset import Standardizer
from app.models.mlp import MlpModel
from app.schemas.calibrator import CalibratorDocument
from app.schemas.checkpoint import ModelCheckpoint
from app.schemas.data import StandardizerDocument
from app.schemas.report import CurveRow
from app.schemas.train_config import RunConfig
from app.schemas.training import TrainRecord
from app.utils.config_loader import describe_validation_error

logger = logging.getLogger(__name__)

DocumentT = TypeVar("DocumentT", bound=BaseModel)


class RunStore:
    """Reads and writes the files of one run directory.

    Every writer overwrites; identical inputs produce byte-identical files.
    """

    def __init__(self, run_dir: str | Path) -> None:
        self.run_dir = Path(run_dir)

    def ensure(self) -> Path:
        self.run_dir.mkdir(parents=True, exist_ok=True)
        return self.run_dir

    def path(self, name: str) -> Path:
        return self.run_dir / name

    # ── models ─────────────────────────────────────────────────────────

    def save_models(
        self, gen: MlpModel, disc: MlpModel, rng_state: dict[str, Any] | None = None
    ) -> None:
        self._write_document(GEN_CHECKPOINT, ModelCheckpoint.from_model(gen, rng_state))
        self._write_document(DISC_CHECKPOINT, ModelCheckpoint.from_model(disc))

    def load_generator(self) -> tuple[MlpModel, dict[str, Any] | None]:
        checkpoint = self._read_document(GEN_CHECKPOINT, ModelCheckpoint, hint="run `cgan train` first")
        return checkpoint.to_model(), checkpoint.rng_state

    def load_discriminator(self) -> MlpModel:
        checkpoint = self._read_document(DISC_CHECKPOINT, ModelCheckpoint, hint="run `cgan train` first")
        return checkpoint.to_model()

    # ── calibration ────────────────────────────────────────────────────

    def save_calibrator(
        self, calibrator: CalibratorState, path: str | Path | None = None
    ) -> Path:
        return self._write_document(
            CALIBRATOR, CalibratorDocument.from_state(calibrator), path=path
        )

    def load_calibrator(self, path: str | Path | None = None) -> CalibratorState:
        document = self._read_document(
            CALIBRATOR, CalibratorDocument, path=path, hint="run `cgan calibrate` first"
        )
        return document.to_state()

    # ── run metadata ───────────────────────────────────────────────────

    def save_config(self, config: RunConfig) -> Path:
        return self._write_document(RESOLVED_CONFIG, config)

    def load_config(self) -> RunConfig:
        return self._read_document(RESOLVED_CONFIG, RunConfig, hint="run `cgan train` first")

    def save_standardizer(self, standardizer: Standardizer) -> Path:
        return self._write_document(
            STANDARDIZER, StandardizerDocument.from_standardizer(standardizer)
        )

    def load_standardizer(self) -> Standardizer | None:
        if not self.path(STANDARDIZER).is_file():
            return None
        return self._read_document(STANDARDIZER, StandardizerDocument).to_standardizer()

    def save_train_log(self, records: Iterable[TrainRecord]) -> Path:
        target = self.ensure() / TRAIN_LOG
        with target.open("w", encoding="utf-8", newline="\n") as handle:
            for record in records:
                handle.write(record.model_dump_json())
                handle.write("\n")
        return target

    def load_train_log(self) -> list[TrainRecord]:
        source = self.path(TRAIN_LOG)
        if not source.is_file():
            raise RunArtifactMissing(str(source), hint="run `cgan train` first")
        records = []
        with source.open(encoding="utf-8") as handle:
            for line in handle:
                if line.strip():
                    records.append(TrainRecord.model_validate_json(line))
        return records

    def save_report(self, report: BaseModel, name: str = REPORT) -> Path:
        return self._write_document(name, report)

    def save_curve(self, name: str, header: Sequence[str], rows: Sequence[CurveRow]) -> Path:
        target = self.ensure() / name
        with target.open("w", encoding="utf-8", newline="") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(list(header))
            for row in rows:
                writer.writerow([repr(row.x), repr(row.y)])
        logger.debug("Wrote %d curve rows to %s", len(rows), target)
        return target

    def save_table(self, name: str, header: Sequence[str], rows: Sequence[Sequence[object]]) -> Path:
        target = self.ensure() / name
        with target.open("w", encoding="utf-8", newline="") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(list(header))
            for row in rows:
                writer.writerow([repr(cell) if isinstance(cell, float) else cell for cell in row])
        return target

    # ── helpers ────────────────────────────────────────────────────────

    def _write_document(
        self, name: str, document: BaseModel, *, path: str | Path | None = None
    ) -> Path:
        if path is None:
            target = self.ensure() / name
        else:
            target = Path(path)
            target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(document.model_dump_json(indent=2, by_alias=True) + "\n", encoding="utf-8")
        logger.debug("Wrote %s", target)
        return target

    def _read_document(
        self,
        name: str,
        model: type[DocumentT],
        *,
        path: str | Path | None = None,
        hint: str | None = None,
    ) -> DocumentT:
        source = Path(path) if path is not None else self.path(name)
        if not source.is_file():
            raise RunArtifactMissing(str(source), hint=hint)
        try:
            return model.model_validate_json(source.read_text(encoding="utf-8"))
        except ValidationError as exc:
            raise ConfigLoadFailed(
                f"invalid {name}: {describe_validation_error(exc)}", path=str(source)
            ) from exc
