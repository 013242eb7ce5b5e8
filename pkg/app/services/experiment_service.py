"""End-to-end pipelines: train, calibrate, evaluate, and the baseline comparison."""

from __future__ import annotations

import logging
import statistics
from collections.abc import Callable, Sequence
from dataclasses import dataclass
from typing import Any

import numpy as np

from app.config import Settings
from app.exceptions import InsufficientDataError
from app.models.conformal import CalibratorState, WeightVector
from app.models.dataset import LabeledDataset
from app.models.mlp import MlpModel
from app.schemas.report import ComparisonReport, ComparisonSummary, FidelityMetrics, SeedComparison
from app.schemas.train_config import RunConfig, TrainConfig, WeightSelectionMode
from app.schemas.training import TrainRecord
from app.services.conformal_service import ConformalService, SelectionCriterion
from app.services.data_service import DataService, DataSplits
from app.services.metrics_service import MetricsService
from app.services.training_service import TrainingService, TrainResult
from app.utils.progress import LoggingProgressHandle, ProgressHandle, SubProgressHandle
from app.utils.rng import child_rngs, make_rng, rng_from_json

logger = logging.getLogger(__name__)

# Share of the log compared at each end of a run for the R_ICP trend.
TREND_FRACTION = 0.1
# Tolerances for the per-seed "not worse" tallies.
ACCURACY_TOLERANCE = 0.01
KS_TOLERANCE = 0.05

_SELECTION_STREAM = 3
_SCORER_STREAM = 4
_COMPARE_STREAM = 5


@dataclass
class TrainedRun:
    splits: DataSplits
    result: TrainResult


class ExperimentService:
    """Composes the data, training, conformal and metric services into pipelines."""

    def __init__(
        self,
        config: Settings,
        data_service: DataService,
        conformal_service: ConformalService,
        training_service: TrainingService,
        metrics_service: MetricsService,
    ) -> None:
        self.config = config
        self.data_service = data_service
        self.conformal_service = conformal_service
        self.training_service = training_service
        self.metrics_service = metrics_service

    def prepare_splits(self, data: LabeledDataset, run_config: RunConfig) -> DataSplits:
        """Standardize the full dataset, then split it with the run seed."""
        if data.num_classes != run_config.num_classes:
            logger.info(
                "Dataset declares %d classes, configuration %d; using the configuration",
                data.num_classes,
                run_config.num_classes,
            )
            data = LabeledDataset(
                features=data.features,
                labels=data.labels,
                num_classes=run_config.num_classes,
            )
        standardized = self.data_service.standardize(data)
        return self.data_service.split(standardized, run_config.split_fractions, run_config.seed)

    def train_run(
        self,
        data: LabeledDataset,
        run_config: RunConfig,
        *,
        baseline: bool = False,
        progress: ProgressHandle | None = None,
    ) -> TrainedRun:
        splits = self.prepare_splits(data, run_config)
        train_config: TrainConfig = run_config.train_config()
        if baseline:
            train_config = train_config.baseline()
        result = self.training_service.train(
            splits.train,
            train_config,
            fit_pool_size=run_config.fit_pool_size,
            monitor_alpha=run_config.monitor_alpha,
            progress=progress or LoggingProgressHandle("train"),
        )
        return TrainedRun(splits=splits, result=result)

    def fit_calibrator(
        self,
        gen: MlpModel,
        disc: MlpModel,
        train: LabeledDataset,
        calib: LabeledDataset,
        run_config: RunConfig,
        weights: WeightVector,
        alpha: float | None = None,
    ) -> CalibratorState:
        """Scorer on the training split (Venn fit against a generated pool), calibrated on calib."""
        rng = child_rngs(run_config.seed, _SCORER_STREAM + 1)[_SCORER_STREAM]
        pool = self.training_service.generate_balanced(
            gen, run_config.fit_pool_size, run_config.num_classes, rng
        )
        scorer = self.conformal_service.fit_scorer(
            train, disc, run_config.k_folds, generated=pool, fold_seed=run_config.seed
        )
        level = run_config.alpha if alpha is None else alpha
        return self.conformal_service.calibrate(scorer, weights, calib, disc, level)

    def choose_weights(
        self,
        mode: WeightSelectionMode,
        gen: MlpModel,
        disc: MlpModel,
        splits: DataSplits,
        run_config: RunConfig,
        *,
        rng_state: dict[str, Any] | None = None,
        progress: ProgressHandle | None = None,
    ) -> WeightVector:
        """The configured weights, or the grid candidate minimizing the selection criterion."""
        if mode is WeightSelectionMode.FIXED:
            return run_config.weight_vector()
        if splits.val.size == 0:
            raise InsufficientDataError("weight selection needs a nonempty validation split")

        train_config = run_config.train_config()
        iterations = run_config.selection_finetune_iterations

        def _fine_tune(weights: WeightVector) -> MlpModel:
            stream = None if rng_state is None else rng_from_json(rng_state)
            return self.training_service.fine_tune(
                gen,
                disc,
                splits.train,
                train_config,
                weights,
                iterations,
                fit_pool_size=run_config.fit_pool_size,
                rng=stream,
            )

        fine_tune: Callable[[WeightVector], MlpModel] | None = (
            _fine_tune if iterations > 0 else None
        )

        criterion = SelectionCriterion.GENERALIZATION
        reference = None
        if mode is WeightSelectionMode.ECE:
            criterion = SelectionCriterion.ECE
            reference = self.fit_calibrator(
                gen, disc, splits.train, splits.calib, run_config, run_config.weight_vector()
            )

        rng = child_rngs(run_config.seed, _SELECTION_STREAM + 1)[_SELECTION_STREAM]
        return self.conformal_service.select_weights(
            self.conformal_service.simplex_grid(0.25),
            splits.val,
            gen,
            rng,
            fine_tune=fine_tune,
            criterion=criterion,
            calibrator=reference,
            disc=disc,
            levels=run_config.metric_levels,
            progress=progress or LoggingProgressHandle("select-weights"),
        )

    def generate_like(
        self, gen: MlpModel, reference: LabeledDataset, seed: int
    ) -> LabeledDataset:
        """Synthetic samples conditioned on the labels of ``reference``."""
        return self.training_service.generate(
            gen, reference.size, reference.num_classes, seed, labels=reference.labels
        )

    # ── baseline comparison ────────────────────────────────────────────

    def compare(
        self,
        data: LabeledDataset,
        run_config: RunConfig,
        seeds: Sequence[int],
        *,
        progress: ProgressHandle | None = None,
    ) -> ComparisonReport:
        """Train the baseline and the conformalized model per seed and compare them.

        Both runs of a seed share the split, initialization and latent
        streams; only the regularizer weights differ. Each model is
        evaluated on the real test split. The ECE of both models' generated
        test samples is measured against one calibrator fitted on the real
        train and calib splits with the baseline's discriminator.
        """
        if not seeds:
            raise InsufficientDataError("comparison needs at least one seed")
        handle = progress or LoggingProgressHandle("compare")
        rows: list[SeedComparison] = []
        for idx, seed in enumerate(seeds):
            seeded = run_config.model_copy(update={"seed": seed})
            sub = SubProgressHandle(handle, idx / len(seeds), (idx + 1) / len(seeds))
            sub.send_progress_text(f"seed {seed}")
            baseline = self.train_run(data, seeded, baseline=True, progress=SubProgressHandle(sub, 0.0, 0.5))
            conformal = self.train_run(data, seeded, progress=SubProgressHandle(sub, 0.5, 1.0))
            rows.append(self._compare_seed(seed, seeded, baseline, conformal))

        summary = self._summarize(rows)
        logger.info(
            "Comparison over %d seeds: accuracy not worse in %d, ECE improved in %d, R_ICP decreased in %d",
            summary.seeds,
            summary.accuracy_not_worse,
            summary.ece_improved,
            summary.r_icp_decreased,
        )
        return ComparisonReport(rows=rows, summary=summary)

    def _compare_seed(
        self, seed: int, run_config: RunConfig, baseline: TrainedRun, conformal: TrainedRun
    ) -> SeedComparison:
        splits = conformal.splits
        sample_seed = int(child_rngs(seed, _COMPARE_STREAM + 1)[_COMPARE_STREAM].integers(0, 2**62))
        weights = run_config.weight_vector()
        reference_disc = baseline.result.disc
        reference = self.fit_calibrator(
            baseline.result.gen, reference_disc, splits.train, splits.calib, run_config, weights
        )

        fidelity: dict[str, FidelityMetrics] = {}
        ece: dict[str, float] = {}
        generalization: dict[str, float] = {}
        for name, run in (("baseline", baseline), ("conformal", conformal)):
            gen = run.result.gen
            synth = self.generate_like(gen, splits.test, sample_seed)
            fidelity[name] = self.metrics_service.fidelity(splits.test, synth)
            grid = self.metrics_service.coverage_report(
                reference, synth, reference_disc, run_config.metric_levels
            )
            ece[name] = self.metrics_service.ece(grid)
            generalization[name] = self.training_service.generalization_error(
                gen, splits.val if splits.val.size else splits.test, make_rng(sample_seed)
            )

        early, late = r_icp_trend(conformal.result.log)
        return SeedComparison(
            seed=seed,
            baseline=fidelity["baseline"],
            conformal=fidelity["conformal"],
            ece_baseline=ece["baseline"],
            ece_conformal=ece["conformal"],
            r_icp_early=early,
            r_icp_late=late,
            generalization_baseline=generalization["baseline"],
            generalization_conformal=generalization["conformal"],
        )

    @staticmethod
    def _summarize(rows: list[SeedComparison]) -> ComparisonSummary:
        return ComparisonSummary(
            seeds=len(rows),
            accuracy_not_worse=sum(
                r.conformal.downstream_accuracy >= r.baseline.downstream_accuracy - ACCURACY_TOLERANCE
                for r in rows
            ),
            ks_not_worse=sum(r.conformal.ks_mean <= r.baseline.ks_mean + KS_TOLERANCE for r in rows),
            ece_improved=sum(r.ece_conformal < r.ece_baseline for r in rows),
            r_icp_decreased=sum(r.r_icp_late < r.r_icp_early for r in rows),
            median_accuracy_conformal=statistics.median(r.conformal.downstream_accuracy for r in rows),
            median_accuracy_baseline=statistics.median(r.baseline.downstream_accuracy for r in rows),
        )


def r_icp_trend(log: Sequence[TrainRecord]) -> tuple[float, float]:
    """Mean R_ICP over the first and the last tenth of a training log."""
    if not log:
        return 0.0, 0.0
    window = max(1, int(len(log) * TREND_FRACTION))
    early = float(np.mean([record.r_icp for record in log[:window]]))
    late = float(np.mean([record.r_icp for record in log[-window:]]))
    return early, late
