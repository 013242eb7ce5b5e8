"""Dataset synthesis, CSV interchange, standardization and splitting."""

from __future__ import annotations

import csv
import logging
import math
from collections.abc import Sequence
from pathlib import Path
from typing import NamedTuple

import numpy as np

from app.exceptions import (
    DatasetFormatError,
    EmptyClassError,
    InsufficientDataError,
    ValidationException,
)
from app.models.conformal import WEIGHT_TOLERANCE
from app.models.dataset import LabeledDataset, Standardizer
from app.schemas.data import MixtureSpec
from app.utils.rng import box_muller, make_rng

logger = logging.getLogger(__name__)

LABEL_COLUMN = "label"


class DataSplits(NamedTuple):
    """The four disjoint pieces of a dataset."""

    train: LabeledDataset
    calib: LabeledDataset
    val: LabeledDataset
    test: LabeledDataset


class DataService:
    """Creates, reads, writes and partitions labeled datasets."""

    def make_gaussian_mixture(self, spec: MixtureSpec) -> LabeledDataset:
        rng = make_rng(spec.seed)
        labels = rng.integers(0, spec.num_classes, size=spec.n).astype(np.int64)
        noise = box_muller(rng, spec.n, spec.dim)
        features = spec.class_means()[labels] + spec.std * noise
        logger.info(
            "Generated mixture with %d points, %d classes, %d features",
            spec.n,
            spec.num_classes,
            spec.dim,
        )
        return LabeledDataset(features=features, labels=labels, num_classes=spec.num_classes)

    # ── standardization ────────────────────────────────────────────────

    def fit_standardizer(self, data: LabeledDataset) -> Standardizer:
        if data.size == 0:
            raise InsufficientDataError("cannot standardize an empty dataset")
        mean = data.features.mean(axis=0)
        std = data.features.std(axis=0)
        # Constant columns keep std 1 so they map to zeros.
        std = np.where(std > 0.0, std, 1.0)
        return Standardizer(mean=mean, std=std)

    def standardize(
        self, data: LabeledDataset, standardizer: Standardizer | None = None
    ) -> LabeledDataset:
        """Scale features to zero mean and unit variance (fitting the scaler if not given)."""
        if standardizer is None:
            standardizer = self.fit_standardizer(data)
        if standardizer.mean.shape != (data.dim,):
            raise ValidationException(
                f"standardizer covers {standardizer.mean.shape[0]} features, data has {data.dim}"
            )
        return LabeledDataset(
            features=standardizer.apply(data.features),
            labels=data.labels,
            num_classes=data.num_classes,
            standardizer=standardizer,
        )

    def destandardize(self, data: LabeledDataset) -> LabeledDataset:
        """Inverse of standardize(); a dataset without a standardizer is returned as-is."""
        if data.standardizer is None:
            return data
        return LabeledDataset(
            features=data.standardizer.invert(data.features),
            labels=data.labels,
            num_classes=data.num_classes,
        )

    # ── splitting ──────────────────────────────────────────────────────

    def split(
        self, data: LabeledDataset, fractions: Sequence[float], seed: int
    ) -> DataSplits:
        """Stratified seeded split into train/calib/val/test.

        Each class is shuffled and apportioned by largest remainder. A class
        that would otherwise miss the train split donates one point from the
        largest other piece.
        """
        shares = [float(f) for f in fractions]
        if len(shares) != 4:
            raise ValidationException("split needs four fractions (train, calib, val, test)")
        if any(not math.isfinite(f) or f < 0 for f in shares):
            raise ValidationException(f"split fractions must be non-negative: {shares}")
        if abs(sum(shares) - 1.0) > WEIGHT_TOLERANCE:
            raise ValidationException(f"split fractions must sum to 1, got {sum(shares)}")

        rng = make_rng(seed)
        pieces: list[list[int]] = [[], [], [], []]
        for label in range(data.num_classes):
            members = np.flatnonzero(data.labels == label)
            if members.size == 0:
                continue
            members = rng.permutation(members)
            counts = _apportion(members.size, shares)
            if counts[0] == 0 and shares[0] > 0:
                donor = int(np.argmax(counts))
                counts[donor] -= 1
                counts[0] += 1
            if counts[0] == 0:
                raise EmptyClassError(
                    label, message=f"split leaves class {label} without training points"
                )
            start = 0
            for piece, count in enumerate(counts):
                pieces[piece].extend(members[start : start + count].tolist())
                start += count

        subsets = [data.subset(np.sort(np.asarray(p, dtype=np.int64))) for p in pieces]
        logger.info(
            "Split %d points into train=%d calib=%d val=%d test=%d",
            data.size,
            *[s.size for s in subsets],
        )
        return DataSplits(*subsets)

    # ── CSV interchange ────────────────────────────────────────────────

    def load_csv(self, path: str | Path, num_classes: int | None = None) -> LabeledDataset:
        """Read columns f0..f{d-1} and label; rows are numbered by file line."""
        source = Path(path)
        if not source.is_file():
            raise DatasetFormatError("dataset file not found", path=str(source))
        try:
            handle = source.open(encoding="utf-8", newline="")
        except OSError as exc:
            raise DatasetFormatError(f"cannot read dataset: {exc.strerror}", path=str(source)) from exc

        with handle:
            reader = csv.reader(handle)
            header = next(reader, None)
            if header is None:
                raise DatasetFormatError("missing header", path=str(source), row=1)
            header = [name.strip() for name in header]
            if LABEL_COLUMN not in header:
                raise DatasetFormatError(
                    "missing label column", path=str(source), row=1, column=LABEL_COLUMN
                )
            label_idx = header.index(LABEL_COLUMN)
            feature_names = [name for name in header if name != LABEL_COLUMN]
            for position, name in enumerate(feature_names):
                if name != f"f{position}":
                    raise DatasetFormatError(
                        f"expected feature column f{position}, found {name!r}",
                        path=str(source),
                        row=1,
                        column=name,
                    )

            rows: list[list[float]] = []
            labels: list[int] = []
            for line_no, record in enumerate(reader, start=2):
                if not record:
                    continue
                if len(record) != len(header):
                    raise DatasetFormatError(
                        f"ragged row with {len(record)} cells, expected {len(header)}",
                        path=str(source),
                        row=line_no,
                    )
                values: list[float] = []
                for col, cell in enumerate(record):
                    if col == label_idx:
                        labels.append(_parse_label(cell, source, line_no))
                        continue
                    try:
                        value = float(cell)
                    except ValueError:
                        raise DatasetFormatError(
                            f"non-numeric cell {cell!r}",
                            path=str(source),
                            row=line_no,
                            column=header[col],
                        ) from None
                    if not math.isfinite(value):
                        raise DatasetFormatError(
                            f"non-finite cell {cell!r}",
                            path=str(source),
                            row=line_no,
                            column=header[col],
                        )
                    values.append(value)
                rows.append(values)

        dim = len(feature_names)
        features = np.asarray(rows, dtype=np.float64).reshape(len(rows), dim)
        label_array = np.asarray(labels, dtype=np.int64)
        inferred = int(label_array.max()) + 1 if label_array.size else 0
        classes = inferred if num_classes is None else num_classes
        if inferred > classes:
            raise DatasetFormatError(
                f"label {inferred - 1} exceeds the configured class count {classes}",
                path=str(source),
            )
        logger.debug("Loaded %d rows with %d features from %s", len(rows), dim, source)
        return LabeledDataset(features=features, labels=label_array, num_classes=classes)

    def save_csv(self, data: LabeledDataset, path: str | Path) -> Path:
        target = Path(path)
        target.parent.mkdir(parents=True, exist_ok=True)
        with target.open("w", encoding="utf-8", newline="") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow([*(f"f{j}" for j in range(data.dim)), LABEL_COLUMN])
            for row, label in zip(data.features.tolist(), data.labels.tolist(), strict=True):
                writer.writerow([*(repr(float(v)) for v in row), str(int(label))])
        logger.info("Wrote %d rows to %s", data.size, target)
        return target


def _apportion(total: int, shares: list[float]) -> list[int]:
    """Largest-remainder integer counts summing to total; ties go to the earlier piece."""
    raw = [total * share for share in shares]
    counts = [math.floor(value) for value in raw]
    remaining = total - sum(counts)
    order = sorted(range(len(shares)), key=lambda idx: (-(raw[idx] - counts[idx]), idx))
    for idx in order[:remaining]:
        counts[idx] += 1
    return counts


def _parse_label(cell: str, source: Path, line_no: int) -> int:
    try:
        value = int(cell.strip())
    except ValueError:
        raise DatasetFormatError(
            f"label {cell!r} is not an integer", path=str(source), row=line_no, column=LABEL_COLUMN
        ) from None
    if value < 0:
        raise DatasetFormatError(
            f"label {value} is negative", path=str(source), row=line_no, column=LABEL_COLUMN
        )
    return value
