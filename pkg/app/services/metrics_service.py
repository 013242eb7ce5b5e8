"""Validity and fidelity metrics: coverage, efficiency, ECE, KS, Wasserstein, downstream accuracy."""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence

import numpy as np
from scipy.spatial import cKDTree
from scipy.stats import ks_2samp, spearmanr, wasserstein_distance
from sklearn.neighbors import KNeighborsClassifier

from app.consts import DEFAULT_KNN, DOWNSTREAM_NEIGHBORS
from app.exceptions import DimensionMismatchError, InsufficientDataError, ValidationException
from app.models.conformal import (
    METHODS,
    CalibratorState,
    ScorerState,
    WeightVector,
)
from app.models.dataset import LabeledDataset
from app.models.mlp import Matrix, MlpModel
from app.schemas.report import (
    CoverageRow,
    CurveRow,
    FidelityMetrics,
    MethodComparisonRow,
    MetricsReport,
)
from app.services.conformal_service import ConformalService

logger = logging.getLogger(__name__)

DENSITY_BINS = 10
ENSEMBLE_ROW = "ensemble"
_TINY = np.finfo(np.float64).tiny


class MetricsService:
    """Pure metric computations over calibrators and datasets."""

    def __init__(self, conformal_service: ConformalService) -> None:
        self.conformal_service = conformal_service

    # ── conformal validity ─────────────────────────────────────────────

    def coverage_report(
        self,
        calibrator: CalibratorState,
        samples: LabeledDataset,
        disc: MlpModel,
        levels: Sequence[float],
    ) -> list[CoverageRow]:
        """Fraction of samples inside the region at each nominal level 1 - alpha."""
        if samples.size == 0:
            raise InsufficientDataError("coverage needs at least one sample")
        _check_levels(levels)
        rows = self.conformal_service.coverage_at_levels(
            calibrator, samples.features, samples.labels, disc, levels
        )
        return [CoverageRow(level=level, coverage=coverage) for level, coverage in rows]

    def efficiency(self, calibrator: CalibratorState, alpha: float | None = None) -> float:
        """1 / (1 + q); zero for an unbounded region."""
        level = calibrator.alpha if alpha is None else alpha
        quantile = self.conformal_service.conformal_quantile(calibrator.calib_scores, level)
        if math.isinf(quantile):
            return 0.0
        return 1.0 / (1.0 + quantile)

    @staticmethod
    def ece(grid: Sequence[CoverageRow]) -> float:
        if not grid:
            raise ValidationException("ECE needs at least one coverage row")
        return float(np.mean([abs(row.coverage - row.level) for row in grid]))

    def calibration_curve(
        self,
        calibrator: CalibratorState,
        samples: LabeledDataset,
        disc: MlpModel,
        levels: Sequence[float],
    ) -> list[CurveRow]:
        return [
            CurveRow(x=row.level, y=row.coverage)
            for row in self.coverage_report(calibrator, samples, disc, levels)
        ]

    def coverage_efficiency_curve(
        self,
        calibrator: CalibratorState,
        samples: LabeledDataset,
        disc: MlpModel,
        alphas: Sequence[float],
    ) -> list[CurveRow]:
        """Rows of (1 - efficiency, empirical coverage), one per alpha."""
        if not alphas:
            raise ValidationException("coverage/efficiency curve needs at least one alpha")
        if samples.size == 0:
            raise InsufficientDataError("coverage needs at least one sample")
        scores = self.conformal_service.weighted_scores(
            calibrator.scorer, calibrator.weights, samples.features, samples.labels, disc
        )
        rows = []
        for alpha in alphas:
            inside = self.conformal_service.scores_inside(calibrator, scores, alpha)
            rows.append(
                CurveRow(x=1.0 - self.efficiency(calibrator, alpha), y=float(np.mean(inside)))
            )
        return rows

    def width_vs_density(
        self,
        calibrator: CalibratorState,
        samples: LabeledDataset,
        disc: MlpModel,
        k_nn: int = DEFAULT_KNN,
    ) -> tuple[list[CurveRow], float]:
        """Mean local region radius per density bin, and their Spearman correlation.

        rho(x) is the mean distance to the k_nn nearest calibration points
        (a calibration point skips itself and uses up to k_nn of the others).
        The region at x has radius q * rho(x), where q is the conformal
        quantile of the density-normalized calibration scores s / rho.
        Density is read off the samples themselves, as the inverse mean
        distance to their own nearest neighbours, so the two columns are
        separate estimates. It is min-max scaled and cut into equal-width
        bins; empty bins are omitted.
        """
        calib_x = calibrator.calib_features
        n = calib_x.shape[0]
        if k_nn < 1:
            raise ValidationException("k_nn must be at least 1")
        if n < max(k_nn, 2):
            raise InsufficientDataError(
                f"width/density needs at least {max(k_nn, 2)} calibration points, got {n}"
            )
        if samples.size < 2:
            raise InsufficientDataError("width/density needs at least two samples")
        if samples.dim != calib_x.shape[1]:
            raise DimensionMismatchError("sample features", calib_x.shape[1], samples.dim)

        tree = cKDTree(calib_x)
        calib_rho = _mean_neighbour_distance(tree, calib_x, min(k_nn, n - 1), skip_self=True)
        sample_rho = _mean_neighbour_distance(tree, samples.features, k_nn, skip_self=False)
        own_rho = _mean_neighbour_distance(
            cKDTree(samples.features),
            samples.features,
            min(k_nn, samples.size - 1),
            skip_self=True,
        )

        calib_scores = self.conformal_service.weighted_scores(
            calibrator.scorer, calibrator.weights, calib_x, calibrator.calib_labels, disc
        )
        normalized = np.sort(calib_scores / np.maximum(calib_rho, _TINY))
        q_norm = self.conformal_service.conformal_quantile(normalized, calibrator.alpha)
        if math.isinf(q_norm):
            raise InsufficientDataError("calibration set too small for a finite local radius")
        radius = q_norm * sample_rho

        density = 1.0 / np.maximum(own_rho, _TINY)
        low, high = float(density.min()), float(density.max())
        span = high - low
        scaled = np.zeros_like(density) if span == 0.0 else (density - low) / span
        bins = np.minimum((scaled * DENSITY_BINS).astype(np.int64), DENSITY_BINS - 1)

        rows = []
        for b in range(DENSITY_BINS):
            members = bins == b
            if not np.any(members):
                continue
            rows.append(CurveRow(x=(b + 0.5) / DENSITY_BINS, y=float(radius[members].mean())))

        correlation = 0.0
        if len(rows) > 1:
            result = spearmanr([r.x for r in rows], [r.y for r in rows])
            value = float(result.statistic)
            correlation = value if math.isfinite(value) else 0.0
        return rows, correlation

    def method_comparison(
        self,
        scorer: ScorerState,
        calib_data: LabeledDataset,
        test: LabeledDataset,
        disc: MlpModel,
        alpha: float,
        ensemble: WeightVector | None = None,
    ) -> list[MethodComparisonRow]:
        """Coverage and efficiency of each single method and of the weighted ensemble."""
        if test.size == 0:
            raise InsufficientDataError("method comparison needs test points")
        candidates: list[tuple[str, WeightVector]] = [
            (method.value, WeightVector.unit(method)) for method in METHODS
        ]
        candidates.append((ENSEMBLE_ROW, ensemble or WeightVector.uniform()))
        rows = []
        for name, weights in candidates:
            calibrator = self.conformal_service.calibrate(scorer, weights, calib_data, disc, alpha)
            inside = self.conformal_service.contains(calibrator, test.features, test.labels, disc)
            quantile = self.conformal_service.conformal_quantile(calibrator.calib_scores, alpha)
            rows.append(
                MethodComparisonRow(
                    method=name,
                    coverage=float(np.mean(inside)),
                    efficiency=self.efficiency(calibrator, alpha),
                    quantile=None if math.isinf(quantile) else quantile,
                )
            )
        return rows

    # ── fidelity ───────────────────────────────────────────────────────

    @staticmethod
    def ks_mean(real: Matrix, synth: Matrix) -> float:
        """Per-feature two-sample KS statistic, averaged over features."""
        _check_pair(real, synth)
        stats = [
            float(ks_2samp(real[:, j], synth[:, j]).statistic) for j in range(real.shape[1])
        ]
        return float(np.mean(stats))

    @staticmethod
    def wasserstein_mean(real: Matrix, synth: Matrix) -> float:
        """Per-feature Wasserstein-1 distance, averaged over features."""
        _check_pair(real, synth)
        distances = [
            float(wasserstein_distance(real[:, j], synth[:, j])) for j in range(real.shape[1])
        ]
        return float(np.mean(distances))

    @staticmethod
    def downstream_accuracy(synth_train: LabeledDataset, real_test: LabeledDataset) -> float:
        """Accuracy on real test points of a 5-NN classifier fitted on synthetic data."""
        if synth_train.size < DOWNSTREAM_NEIGHBORS:
            raise InsufficientDataError(
                f"downstream classifier needs at least {DOWNSTREAM_NEIGHBORS} training points"
            )
        if real_test.size == 0:
            raise InsufficientDataError("downstream accuracy needs test points")
        if synth_train.dim != real_test.dim:
            raise DimensionMismatchError("test features", synth_train.dim, real_test.dim)
        classifier = KNeighborsClassifier(
            n_neighbors=DOWNSTREAM_NEIGHBORS, algorithm="brute", metric="euclidean"
        )
        classifier.fit(synth_train.features, synth_train.labels)
        predicted = classifier.predict(real_test.features)
        return float(np.mean(predicted == real_test.labels))

    def fidelity(self, real_test: LabeledDataset, synth: LabeledDataset) -> FidelityMetrics:
        return FidelityMetrics(
            ks_mean=self.ks_mean(real_test.features, synth.features),
            wasserstein_mean=self.wasserstein_mean(real_test.features, synth.features),
            downstream_accuracy=self.downstream_accuracy(synth, real_test),
        )

    # ── report assembly ────────────────────────────────────────────────

    def build_report(
        self,
        real_test: LabeledDataset,
        synth: LabeledDataset,
        *,
        calibrator: CalibratorState | None = None,
        disc: MlpModel | None = None,
        levels: Sequence[float] = (),
        curves: bool = False,
        k_nn: int = DEFAULT_KNN,
        calib_data: LabeledDataset | None = None,
    ) -> MetricsReport:
        """Fidelity metrics always; coverage metrics and curves when a calibrator is given."""
        fidelity = self.fidelity(real_test, synth)
        report = MetricsReport(**fidelity.model_dump())
        if calibrator is None or disc is None:
            if curves:
                raise ValidationException("curves need a calibrator and discriminator")
            return report

        # Coverage and curves describe the synthetic samples; validity rows use real data.
        grid = self.coverage_report(calibrator, synth, disc, levels)
        report.coverage_at_alpha = {_level_key(row.level): row.coverage for row in grid}
        report.efficiency = self.efficiency(calibrator)
        report.ece = self.ece(grid)
        inside = self.conformal_service.contains(
            calibrator, real_test.features, real_test.labels, disc
        )
        report.real_coverage = float(np.mean(inside))
        if calib_data is not None:
            report.method_comparison = self.method_comparison(
                calibrator.scorer, calib_data, real_test, disc, calibrator.alpha, calibrator.weights
            )
        if curves:
            alphas = sorted((1.0 - level for level in levels), reverse=True)
            width_rows, correlation = self.width_vs_density(calibrator, synth, disc, k_nn)
            report.curves = {
                "coverage_efficiency": self.coverage_efficiency_curve(
                    calibrator, synth, disc, alphas
                ),
                "calibration": [CurveRow(x=row.level, y=row.coverage) for row in grid],
                "width_density": width_rows,
            }
            report.width_density_spearman = correlation
        logger.info(
            "Evaluated ks_mean=%.4f wasserstein_mean=%.4f downstream_accuracy=%.4f",
            report.ks_mean,
            report.wasserstein_mean,
            report.downstream_accuracy,
        )
        return report


def _check_pair(real: Matrix, synth: Matrix) -> None:
    if real.ndim != 2 or synth.ndim != 2 or real.shape[1] != synth.shape[1]:
        raise DimensionMismatchError("feature count", real.shape[-1], synth.shape[-1])
    if real.shape[0] == 0 or synth.shape[0] == 0:
        raise InsufficientDataError("distribution metrics need nonempty samples")


def _check_levels(levels: Sequence[float]) -> None:
    if not levels:
        raise ValidationException("at least one nominal level is required")
    if any(not 0.0 < level < 1.0 for level in levels):
        raise ValidationException("nominal levels must lie in (0, 1)")
    if any(b <= a for a, b in zip(levels, levels[1:], strict=False)):
        raise ValidationException("nominal levels must be strictly increasing")


def _level_key(level: float) -> str:
    return repr(float(level))


def _mean_neighbour_distance(tree: cKDTree, points: Matrix, k: int, *, skip_self: bool) -> Matrix:
    """Mean distance from each point to its k nearest tree points; ``skip_self`` drops the first hit."""
    offset = 1 if skip_self else 0
    distances, _ = tree.query(points, k=k + offset)
    distances = np.asarray(distances, dtype=np.float64).reshape(points.shape[0], -1)
    return distances[:, offset:].mean(axis=1)
