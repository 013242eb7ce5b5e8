"""Nonconformity scores, split-conformal calibration and conformity penalties."""

from __future__ import annotations

import hashlib
import itertools
import logging
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass
from enum import StrEnum
from fractions import Fraction

import numpy as np
from numpy.typing import NDArray

from app.exceptions import (
    DimensionMismatchError,
    EmptyCalibrationSetError,
    EmptyClassError,
    InsufficientDataError,
    InvalidWeightsError,
    UnknownClassError,
    ValidationException,
)
from app.models.cgan import discriminate, discriminator_input, generate_features, latent_dim
from app.models.conformal import (
    METHODS,
    CalibratorState,
    ConformityReference,
    CrossConformalState,
    NonconformityMethod,
    ScorerState,
    WeightVector,
)
from app.models.dataset import LabeledDataset, Labels
from app.models.mlp import Matrix, MlpModel, backward
from app.utils.isotonic import IsotonicFit, pava_fit
from app.utils.progress import ProgressHandle, SubProgressHandle
from app.utils.rng import box_muller, child_rngs, make_rng

logger = logging.getLogger(__name__)

FloatArray = NDArray[np.float64]

# Slack when turning (n + 1)(1 - alpha) into an integer rank.
_RANK_SLACK = 1e-9


class SelectionCriterion(StrEnum):
    GENERALIZATION = "generalization"
    ECE = "ece"


@dataclass(frozen=True)
class ConformityPenalty:
    """Weighted conformity gap C_G with its gradient w.r.t. the fake features."""

    value: float
    gaps: dict[NonconformityMethod, float]
    fake_grad: Matrix


class ConformalService:
    """Fits, evaluates and calibrates the weighted nonconformity score."""

    # ── fitting ────────────────────────────────────────────────────────

    def fit_scorer(
        self,
        data: LabeledDataset,
        disc: MlpModel,
        k: int,
        *,
        generated: LabeledDataset | None = None,
        venn_fit: IsotonicFit | None = None,
        fold_seed: int = 0,
    ) -> ScorerState:
        """Fit all four method states on ``data``.

        The Venn-Abers isotonic model regresses the real/fake indicator on
        discriminator output over ``data`` (target 1) plus ``generated``
        (target 0). Passing ``venn_fit`` reuses an existing fit instead.
        Cross-conformal folds are balanced blocks of a permutation drawn
        from ``fold_seed``.
        """
        n = data.size
        if n == 0:
            raise InsufficientDataError("cannot fit scores on an empty dataset")
        if k < 2:
            raise InsufficientDataError(f"cross-conformal needs at least 2 folds, got {k}")
        if k > n:
            raise InsufficientDataError(f"cross-conformal fold count {k} exceeds {n} points")
        if data.num_classes < 2:
            raise EmptyClassError(
                message="Mondrian scores need at least two classes; single-class data is rejected"
            )
        counts = data.class_counts()
        for label, count in enumerate(counts.tolist()):
            if count == 0:
                raise EmptyClassError(label)

        icp_mean = data.features.mean(axis=0)
        mondrian_means = {
            label: data.features[data.labels == label].mean(axis=0)
            for label in range(data.num_classes)
        }
        cross = self._fit_cross(data.features, k, fold_seed)
        if venn_fit is None:
            venn_fit = self._fit_venn(data, disc, generated)

        return ScorerState(
            icp_mean=icp_mean,
            mondrian_means=mondrian_means,
            cross=cross,
            venn=venn_fit,
        )

    @staticmethod
    def _fit_cross(features: Matrix, k: int, fold_seed: int) -> CrossConformalState:
        n = features.shape[0]
        assignment = np.empty(n, dtype=np.int64)
        shuffled = make_rng(fold_seed).permutation(n)
        for fold, block in enumerate(np.array_split(shuffled, k)):
            assignment[block] = fold
        return cross_state(features, assignment, k)

    @staticmethod
    def _fit_venn(
        data: LabeledDataset, disc: MlpModel, generated: LabeledDataset | None
    ) -> IsotonicFit:
        predictors = [discriminate(disc, data.features, data.labels, data.num_classes)[:, 0]]
        targets = [np.ones(data.size)]
        if generated is not None and generated.size:
            predictors.append(
                discriminate(disc, generated.features, generated.labels, data.num_classes)[:, 0]
            )
            targets.append(np.zeros(generated.size))
        xs = np.concatenate(predictors)
        ys = np.concatenate(targets)
        order = np.argsort(xs, kind="stable")
        return pava_fit(xs[order], ys[order])

    # ── scoring ────────────────────────────────────────────────────────

    def score(
        self,
        method: NonconformityMethod,
        state: ScorerState,
        x: Sequence[float] | FloatArray,
        y: int,
        disc: MlpModel,
        *,
        fold: int | None = None,
        target: float = 1.0,
    ) -> float:
        """Score a single point; ``fold`` selects the literal in-sample cross-conformal rule."""
        row = np.asarray(x, dtype=np.float64).reshape(1, -1)
        folds = None if fold is None else np.array([fold], dtype=np.int64)
        scores = self.score_batch(
            method, state, row, np.array([y], dtype=np.int64), disc, folds=folds, target=target
        )
        return float(scores[0])

    def score_batch(
        self,
        method: NonconformityMethod,
        state: ScorerState,
        features: Matrix,
        labels: Labels,
        disc: MlpModel,
        *,
        folds: NDArray[np.int64] | None = None,
        target: float = 1.0,
    ) -> FloatArray:
        """Score every row; fold index -1 (or ``folds=None``) means out-of-sample."""
        if features.ndim != 2 or features.shape[1] != state.icp_mean.shape[0]:
            raise DimensionMismatchError(
                "scored features", f"(*, {state.icp_mean.shape[0]})", features.shape
            )
        match method:
            case NonconformityMethod.ICP:
                return np.linalg.norm(features - state.icp_mean, axis=1)
            case NonconformityMethod.MONDRIAN:
                return np.linalg.norm(features - self._class_means(state, labels), axis=1)
            case NonconformityMethod.CROSS_CONFORMAL:
                return self._cross_scores(state.cross, features, folds)
            case NonconformityMethod.VENN_ABERS:
                probs = discriminate(disc, features, labels, len(state.mondrian_means))[:, 0]
                return np.abs(target - state.venn.predict(probs))
        raise ValidationException(f"unknown nonconformity method {method!r}")

    @staticmethod
    def _class_means(state: ScorerState, labels: Labels) -> Matrix:
        means = np.empty((labels.shape[0], state.icp_mean.shape[0]))
        for label in np.unique(labels).tolist():
            if label not in state.mondrian_means:
                raise UnknownClassError(int(label))
            means[labels == label] = state.mondrian_means[label]
        return means

    @staticmethod
    def _cross_scores(
        cross: CrossConformalState, features: Matrix, folds: NDArray[np.int64] | None
    ) -> FloatArray:
        # (rows, k) distances to every complement mean.
        distances = np.linalg.norm(
            features[:, None, :] - cross.complement_means[None, :, :], axis=2
        )
        scores = distances.mean(axis=1) / cross.k
        if folds is not None:
            in_sample = folds >= 0
            rows = np.flatnonzero(in_sample)
            scores[rows] = distances[rows, folds[rows]] / cross.k
        return scores

    def weighted_score(
        self,
        state: ScorerState,
        weights: WeightVector,
        x: Sequence[float] | FloatArray,
        y: int,
        disc: MlpModel,
    ) -> float:
        row = np.asarray(x, dtype=np.float64).reshape(1, -1)
        return float(
            self.weighted_scores(state, weights, row, np.array([y], dtype=np.int64), disc)[0]
        )

    def weighted_scores(
        self,
        state: ScorerState,
        weights: WeightVector,
        features: Matrix,
        labels: Labels,
        disc: MlpModel,
        *,
        folds: NDArray[np.int64] | None = None,
    ) -> FloatArray:
        """Sum of lambda_i * s_i over the methods with nonzero weight."""
        total = np.zeros(features.shape[0])
        for method, weight in weights.active():
            total = total + weight * self.score_batch(
                method, state, features, labels, disc, folds=folds
            )
        return total

    # ── calibration ────────────────────────────────────────────────────

    @staticmethod
    def conformal_quantile(calib_scores: Sequence[float] | FloatArray, alpha: float) -> float:
        """The ceil((n + 1)(1 - alpha))-th smallest score, or +inf past n."""
        scores = np.asarray(calib_scores, dtype=np.float64)
        if scores.size == 0:
            raise EmptyCalibrationSetError()
        if not 0.0 < alpha < 1.0:
            raise ValidationException(f"alpha must lie in (0, 1), got {alpha}")
        rank = _quantile_rank(scores.size, alpha)
        if rank > scores.size:
            return math.inf
        return float(scores[rank - 1])

    def calibrate(
        self,
        scorer: ScorerState,
        weights: WeightVector,
        calib_data: LabeledDataset,
        disc: MlpModel,
        alpha: float,
    ) -> CalibratorState:
        if calib_data.size == 0:
            raise EmptyCalibrationSetError()
        scores = self.weighted_scores(scorer, weights, calib_data.features, calib_data.labels, disc)
        order = np.argsort(scores, kind="stable")
        logger.debug(
            "Calibrated %d points at alpha=%s (quantile %.6g)",
            calib_data.size,
            alpha,
            self.conformal_quantile(scores[order], alpha),
        )
        return CalibratorState(
            scorer=scorer,
            weights=weights,
            calib_scores=scores[order],
            alpha=alpha,
            calib_features=calib_data.features.copy(),
            calib_labels=calib_data.labels.copy(),
        )

    def p_values(
        self, calibrator: CalibratorState, features: Matrix, labels: Labels, disc: MlpModel
    ) -> FloatArray:
        """(1 + #{calibration scores >= s}) / (n + 1) per row.

        Calibration scores equal to s count only when their tie key is at
        least the row's key.
        """
        scores = self.weighted_scores(calibrator.scorer, calibrator.weights, features, labels, disc)
        keys = self._row_keys(calibrator, scores.shape[0])
        ranked, ranked_keys = self._ranked_calibration(calibrator)
        low = np.searchsorted(ranked, scores, side="left")
        high = np.searchsorted(ranked, scores, side="right")
        below = low.copy()
        for row in np.flatnonzero(high > low).tolist():
            tied = ranked_keys[low[row] : high[row]]
            below[row] += int(np.searchsorted(tied, keys[row], side="left"))
        return (1.0 + (ranked.size - below)) / (ranked.size + 1.0)

    def p_value(
        self,
        calibrator: CalibratorState,
        x: Sequence[float] | FloatArray,
        y: int,
        disc: MlpModel,
    ) -> float:
        row = np.asarray(x, dtype=np.float64).reshape(1, -1)
        return float(self.p_values(calibrator, row, np.array([y], dtype=np.int64), disc)[0])

    def contains(
        self,
        calibrator: CalibratorState,
        features: Matrix,
        labels: Labels,
        disc: MlpModel,
        alpha: float | None = None,
    ) -> NDArray[np.bool_]:
        level = calibrator.alpha if alpha is None else alpha
        scores = self.weighted_scores(calibrator.scorer, calibrator.weights, features, labels, disc)
        return self.scores_inside(calibrator, scores, level)

    def scores_inside(
        self,
        calibrator: CalibratorState,
        scores: FloatArray,
        alpha: float,
        keys: FloatArray | None = None,
    ) -> NDArray[np.bool_]:
        """Rows whose score is at most the conformal quantile.

        A score equal to the quantile is inside when its tie key is at most
        the key of the calibration point holding the quantile rank. Keys are
        uniform draws seeded by the calibration scores, so plateaus of tied
        scores (as the isotonic Venn-Abers map produces) keep exact coverage
        and repeated calls agree.
        """
        threshold = self.conformal_quantile(calibrator.calib_scores, alpha)
        if math.isinf(threshold):
            return np.ones(scores.shape[0], dtype=np.bool_)
        if keys is None:
            keys = self._row_keys(calibrator, scores.shape[0])
        _, ranked_keys = self._ranked_calibration(calibrator)
        threshold_key = ranked_keys[_quantile_rank(calibrator.size, alpha) - 1]
        return (scores < threshold) | ((scores == threshold) & (keys <= threshold_key))

    @staticmethod
    def _ranked_calibration(calibrator: CalibratorState) -> tuple[FloatArray, FloatArray]:
        """Calibration scores and their tie keys, ordered by (score, key)."""
        keys = _tie_streams(calibrator)[0].random(calibrator.size)
        order = np.lexsort((keys, calibrator.calib_scores))
        return calibrator.calib_scores[order], keys[order]

    @staticmethod
    def _row_keys(calibrator: CalibratorState, count: int) -> FloatArray:
        return _tie_streams(calibrator)[1].random(count)

    def region_contains(
        self,
        calibrator: CalibratorState,
        x: Sequence[float] | FloatArray,
        y: int,
        disc: MlpModel,
    ) -> bool:
        row = np.asarray(x, dtype=np.float64).reshape(1, -1)
        return bool(self.contains(calibrator, row, np.array([y], dtype=np.int64), disc)[0])

    def coverage_at_levels(
        self,
        calibrator: CalibratorState,
        features: Matrix,
        labels: Labels,
        disc: MlpModel,
        levels: Sequence[float],
    ) -> list[tuple[float, float]]:
        """(nominal level, fraction of rows inside the level's region) pairs."""
        if features.shape[0] == 0:
            raise InsufficientDataError("coverage needs at least one sample")
        scores = self.weighted_scores(calibrator.scorer, calibrator.weights, features, labels, disc)
        keys = self._row_keys(calibrator, scores.shape[0])
        rows = []
        for level in levels:
            inside = self.scores_inside(calibrator, scores, 1.0 - level, keys)
            rows.append((float(level), float(np.mean(inside))))
        return rows

    # ── training regularizers ──────────────────────────────────────────

    def batch_conformity_gap(
        self,
        method: NonconformityMethod,
        reference: ConformityReference,
        real_x: Matrix,
        real_y: Labels,
        fake_x: Matrix,
        fake_y: Labels,
        disc: MlpModel,
        *,
        real_folds: NDArray[np.int64] | None = None,
    ) -> float:
        """(1/B) sum_i |s(x_i, real state) - s(fake_i, fake state)|, paired by index."""
        if real_x.shape != fake_x.shape:
            raise DimensionMismatchError("conformity gap batches", real_x.shape, fake_x.shape)
        if real_x.shape[0] == 0:
            return 0.0
        real_scores = self.score_batch(method, reference.real, real_x, real_y, disc, folds=real_folds)
        fake_scores = self.score_batch(method, reference.fake, fake_x, fake_y, disc)
        return float(np.mean(np.abs(real_scores - fake_scores)))

    def conformity_penalty(
        self,
        reference: ConformityReference,
        weights: WeightVector,
        real_x: Matrix,
        real_y: Labels,
        fake_x: Matrix,
        fake_y: Labels,
        disc: MlpModel,
        *,
        real_folds: NDArray[np.int64] | None = None,
    ) -> ConformityPenalty:
        """C_G = sum_j lambda_j * gap_j and its analytic gradient w.r.t. fake_x.

        Every method's gap is reported (for monitoring) even when its weight is zero.
        """
        if real_x.shape != fake_x.shape:
            raise DimensionMismatchError("conformity gap batches", real_x.shape, fake_x.shape)
        batch, dim = fake_x.shape
        grad = np.zeros((batch, dim))
        gaps: dict[NonconformityMethod, float] = {}
        if batch == 0:
            return ConformityPenalty(value=0.0, gaps={m: 0.0 for m in METHODS}, fake_grad=grad)

        fake_state = reference.fake
        num_classes = len(fake_state.mondrian_means)
        venn_coeff = np.zeros(batch)
        value = 0.0
        for method in METHODS:
            real_scores = self.score_batch(
                method, reference.real, real_x, real_y, disc, folds=real_folds
            )
            fake_scores = self.score_batch(method, fake_state, fake_x, fake_y, disc)
            residual = real_scores - fake_scores
            gap = float(np.mean(np.abs(residual)))
            gaps[method] = gap
            weight = weights.weight(method)
            if weight == 0.0:
                continue
            value += weight * gap
            # d|a - b| / db = -sign(a - b)
            outer = -np.sign(residual) * weight / batch
            match method:
                case NonconformityMethod.ICP:
                    grad += outer[:, None] * _unit_rows(fake_x - fake_state.icp_mean)
                case NonconformityMethod.MONDRIAN:
                    centred = fake_x - self._class_means(fake_state, fake_y)
                    grad += outer[:, None] * _unit_rows(centred)
                case NonconformityMethod.CROSS_CONFORMAL:
                    cross = fake_state.cross
                    diffs = fake_x[:, None, :] - cross.complement_means[None, :, :]
                    norms = np.linalg.norm(diffs, axis=2, keepdims=True)
                    units = np.divide(diffs, norms, out=np.zeros_like(diffs), where=norms > 0)
                    grad += outer[:, None] * units.sum(axis=1) / (cross.k * cross.k)
                case NonconformityMethod.VENN_ABERS:
                    probs = discriminate(disc, fake_x, fake_y, num_classes)[:, 0]
                    # s = |1 - f(p)| = 1 - f(p) on [0, 1].
                    venn_coeff += outer * -fake_state.venn.slope(probs)

        if np.any(venn_coeff != 0.0):
            inputs = discriminator_input(fake_x, fake_y, num_classes)
            bundle = backward(disc, inputs, venn_coeff[:, None])
            assert bundle.input_grad is not None
            grad += bundle.input_grad[:, :dim]
        return ConformityPenalty(value=value, gaps=gaps, fake_grad=grad)

    # ── weight selection ───────────────────────────────────────────────

    @staticmethod
    def simplex_grid(step: float = 0.25) -> list[WeightVector]:
        """All weight vectors on the simplex with the given spacing, lexicographic order."""
        divisions = round(1.0 / step)
        if divisions < 1 or not math.isclose(divisions * step, 1.0):
            raise InvalidWeightsError(f"grid step must divide 1, got {step}")
        grid = []
        for combo in itertools.product(range(divisions + 1), repeat=len(METHODS)):
            if sum(combo) == divisions:
                grid.append(WeightVector.of([Fraction(c, divisions) for c in combo]))
        return grid

    def select_weights(
        self,
        candidates: Sequence[WeightVector],
        val_real: LabeledDataset,
        gen: MlpModel,
        rng: np.random.Generator,
        *,
        fine_tune: Callable[[WeightVector], MlpModel] | None = None,
        criterion: SelectionCriterion = SelectionCriterion.GENERALIZATION,
        calibrator: CalibratorState | None = None,
        disc: MlpModel | None = None,
        levels: Sequence[float] = (),
        progress: ProgressHandle | None = None,
    ) -> WeightVector:
        """Pick the candidate minimizing the validation criterion.

        ``fine_tune`` trains (or continues training) a generator with a given
        weight vector; without it the criterion is evaluated on ``gen`` as-is.
        The ECE criterion recalibrates ``calibrator`` (its scorer and retained
        calibration points) with each candidate before measuring coverage of
        generated validation samples.
        Ties go to the lexicographically smallest weight vector.
        """
        if not candidates:
            raise InvalidWeightsError("weight candidate grid is empty")
        if val_real.size == 0:
            raise InsufficientDataError("weight selection needs validation points")
        if criterion is SelectionCriterion.ECE and (calibrator is None or disc is None or not levels):
            raise ValidationException("ECE weight selection needs a calibrator, discriminator and levels")

        # Common random numbers: every candidate sees the same latent draws.
        seed = int(rng.integers(0, 2**63 - 1))
        best: tuple[float, tuple[float, ...]] | None = None
        chosen = candidates[0]
        for idx, candidate in enumerate(candidates):
            handle = None
            if progress is not None:
                handle = SubProgressHandle(
                    progress, idx / len(candidates), (idx + 1) / len(candidates)
                )
                handle.send_progress_text(f"evaluating weights {candidate.values}")
            model = gen if fine_tune is None else fine_tune(candidate)
            if criterion is SelectionCriterion.GENERALIZATION:
                value = self.generalization_error(model, val_real, make_rng(seed))
            else:
                assert calibrator is not None and disc is not None
                recalibrated = self._recalibrate(calibrator, candidate, disc)
                value = self._generated_ece(
                    model, val_real, make_rng(seed), recalibrated, disc, levels
                )
            logger.debug("Weight candidate %s scored %.6g", candidate.values, value)
            key = (value, candidate.values)
            if best is None or key < best:
                best = key
                chosen = candidate
            if handle is not None:
                handle.send_progress_value(1.0)
        logger.info("Selected conformal weights %s by %s", chosen.values, criterion.value)
        return chosen

    @staticmethod
    def generalization_error(
        gen: MlpModel, val_real: LabeledDataset, rng: np.random.Generator
    ) -> float:
        """Monte-Carlo estimate of E||x - G(z, y')||^2 with independent z, y'."""
        num_classes = val_real.num_classes
        d_z = latent_dim(gen, num_classes)
        z = box_muller(rng, val_real.size, d_z)
        labels = rng.integers(0, num_classes, size=val_real.size).astype(np.int64)
        fakes = generate_features(gen, z, labels, num_classes)
        return float(np.mean(np.sum((val_real.features - fakes) ** 2, axis=1)))

    def _recalibrate(
        self, calibrator: CalibratorState, weights: WeightVector, disc: MlpModel
    ) -> CalibratorState:
        calib_data = LabeledDataset(
            features=calibrator.calib_features,
            labels=calibrator.calib_labels,
            num_classes=len(calibrator.scorer.mondrian_means),
        )
        return self.calibrate(calibrator.scorer, weights, calib_data, disc, calibrator.alpha)

    def _generated_ece(
        self,
        gen: MlpModel,
        val_real: LabeledDataset,
        rng: np.random.Generator,
        calibrator: CalibratorState,
        disc: MlpModel,
        levels: Sequence[float],
    ) -> float:
        num_classes = val_real.num_classes
        z = box_muller(rng, val_real.size, latent_dim(gen, num_classes))
        fakes = generate_features(gen, z, val_real.labels, num_classes)
        rows = self.coverage_at_levels(calibrator, fakes, val_real.labels, disc, levels)
        return float(np.mean([abs(empirical - nominal) for nominal, empirical in rows]))


def _quantile_rank(n: int, alpha: float) -> int:
    return max(math.ceil((n + 1) * (1.0 - alpha) - _RANK_SLACK), 1)


def _tie_streams(calibrator: CalibratorState) -> list[np.random.Generator]:
    """Calibration and row key streams, seeded by the calibration scores."""
    scores = np.ascontiguousarray(calibrator.calib_scores, dtype=np.float64)
    digest = hashlib.blake2b(scores.tobytes(), digest_size=8).digest()
    return child_rngs(int.from_bytes(digest, "little"), 2)


def cross_state(features: Matrix, assignment: NDArray[np.int64], k: int) -> CrossConformalState:
    """Complement means for a given point-to-fold assignment; every fold must be nonempty."""
    n = features.shape[0]
    if assignment.shape != (n,):
        raise DimensionMismatchError("fold assignment", (n,), assignment.shape)
    total = features.sum(axis=0)
    complement_means = np.empty((k, features.shape[1]))
    for fold in range(k):
        members = assignment == fold
        rest = n - int(members.sum())
        if rest == 0 or not np.any(members):
            raise InsufficientDataError(f"fold {fold} leaves no points on one side")
        complement_means[fold] = (total - features[members].sum(axis=0)) / rest
    return CrossConformalState(k=k, fold_assignment=assignment, complement_means=complement_means)


def _unit_rows(diffs: Matrix) -> Matrix:
    norms = np.linalg.norm(diffs, axis=1, keepdims=True)
    return np.divide(diffs, norms, out=np.zeros_like(diffs), where=norms > 0)
