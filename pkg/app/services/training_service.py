"""Adversarial training loop with gradient penalty and conformal regularization."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Any

import numpy as np
from numpy.typing import NDArray

from app.config import Settings
from app.consts import LOG_EPS
from app.exceptions import (
    DimensionMismatchError,
    EmptyClassError,
    InsufficientDataError,
    TrainingDivergedError,
)
from app.models.cgan import (
    build_discriminator,
    build_generator,
    discriminator_input,
    generate_features,
    generator_input,
    latent_dim,
)
from app.models.cgan import sample_latent as draw_latent
from app.models.conformal import (
    CalibratorState,
    ConformityReference,
    NonconformityMethod,
    WeightVector,
)
from app.models.dataset import LabeledDataset, Labels
from app.models.mlp import GradientBundle, Matrix, MlpModel, adam_step, backward, forward
from app.models.mlp import grad_penalty_surrogate as penalty_surrogate
from app.schemas.train_config import TrainConfig
from app.schemas.training import TrainRecord
from app.services.conformal_service import ConformalService
from app.utils.progress import NullProgressHandle, ProgressHandle
from app.utils.rng import box_muller, child_rngs, random_unit_rows, rng_state_to_json

logger = logging.getLogger(__name__)

DEFAULT_FIT_POOL_SIZE = 512
DEFAULT_MONITOR_ALPHA = 0.1


@dataclass(frozen=True)
class DiscriminatorLoss:
    value: float
    bce: float
    grad_penalty: float
    grads: GradientBundle


@dataclass(frozen=True)
class GeneratorLoss:
    value: float
    adversarial: float
    c_g: float
    r_icp: float
    grads: GradientBundle
    fake_x: Matrix


@dataclass(frozen=True)
class DiscriminatorStepResult:
    loss_d: float
    grad_penalty: float


@dataclass(frozen=True)
class GeneratorStepResult:
    loss_g: float
    c_g: float
    r_icp: float
    coverage: float


@dataclass
class TrainResult:
    gen: MlpModel
    disc: MlpModel
    log: list[TrainRecord]
    rng_state: dict[str, Any]


@dataclass
class _RefitState:
    reference: ConformityReference
    monitor: CalibratorState


class TrainingService:
    """Runs the alternating discriminator/generator updates."""

    def __init__(self, config: Settings, conformal_service: ConformalService) -> None:
        self.config = config
        self.conformal_service = conformal_service

    def sample_latent(
        self, batch: int, d_z: int, num_classes: int, rng: np.random.Generator
    ) -> tuple[Matrix, Labels]:
        return draw_latent(batch, d_z, num_classes, rng)

    # ── discriminator ──────────────────────────────────────────────────

    def discriminator_loss(
        self,
        disc: MlpModel,
        real_x: Matrix,
        real_y: Labels,
        fake_x: Matrix,
        fake_y: Labels,
        num_classes: int,
        lambda_reg: float,
        eps: float,
        directions: Matrix,
    ) -> DiscriminatorLoss:
        """-(1/B) sum[log D(x, y) + log(1 - D(x~, y'))] + lambda_reg * penalty."""
        batch = real_x.shape[0]
        if fake_x.shape[0] != batch:
            raise DimensionMismatchError("fake batch size", batch, fake_x.shape[0])
        real_in = discriminator_input(real_x, real_y, num_classes)
        fake_in = discriminator_input(fake_x, fake_y, num_classes)
        d_real = forward(disc, real_in)
        d_fake = forward(disc, fake_in)
        one_minus = 1.0 - d_fake
        bce = -float(
            np.mean(np.log(np.maximum(d_real, LOG_EPS)) + np.log(np.maximum(one_minus, LOG_EPS)))
        )

        # Clamped logs have zero slope below the floor.
        grad_real = np.where(d_real > LOG_EPS, -1.0 / (batch * d_real), 0.0)
        grad_fake = np.where(one_minus > LOG_EPS, 1.0 / (batch * one_minus), 0.0)
        grads = backward(disc, real_in, grad_real).add(backward(disc, fake_in, grad_fake))

        penalty = 0.0
        if lambda_reg > 0.0:
            penalty, penalty_grads = penalty_surrogate(
                disc,
                real_in,
                eps,
                None,
                perturb_cols=real_x.shape[1],
                directions=directions,
            )
            grads = grads.add(penalty_grads, scale=lambda_reg)
        return DiscriminatorLoss(
            value=bce + lambda_reg * penalty, bce=bce, grad_penalty=penalty, grads=grads
        )

    def discriminator_step(
        self,
        gen: MlpModel,
        disc: MlpModel,
        real_batch: LabeledDataset,
        config: TrainConfig,
        rng: np.random.Generator,
    ) -> tuple[MlpModel, DiscriminatorStepResult]:
        batch = real_batch.size
        num_classes = config.num_classes
        z, fake_y = self.sample_latent(batch, config.d_z, num_classes, rng)
        fake_x = generate_features(gen, z, fake_y, num_classes)
        directions = random_unit_rows(rng, batch, real_batch.dim)
        loss = self.discriminator_loss(
            disc,
            real_batch.features,
            real_batch.labels,
            fake_x,
            fake_y,
            num_classes,
            config.lambda_reg,
            config.penalty_eps,
            directions,
        )
        return adam_step(disc, loss.grads, config.eta_d), DiscriminatorStepResult(
            loss_d=loss.value, grad_penalty=loss.grad_penalty
        )

    # ── generator ──────────────────────────────────────────────────────

    def generator_loss(
        self,
        gen: MlpModel,
        disc: MlpModel,
        z: Matrix,
        fake_y: Labels,
        real_x: Matrix,
        real_y: Labels,
        reference: ConformityReference,
        weights: WeightVector,
        mu_conform: float,
        num_classes: int,
        *,
        real_folds: NDArray[np.int64] | None = None,
    ) -> GeneratorLoss:
        """-(1/B) sum log D(G(z, y'), y') + mu_conform * C_G."""
        batch = z.shape[0]
        gen_in = generator_input(z, fake_y, num_classes)
        fake_x = forward(gen, gen_in)
        dim = fake_x.shape[1]
        disc_in = discriminator_input(fake_x, fake_y, num_classes)
        d_fake = forward(disc, disc_in)
        adversarial = -float(np.mean(np.log(np.maximum(d_fake, LOG_EPS))))

        grad_d = np.where(d_fake > LOG_EPS, -1.0 / (batch * d_fake), 0.0)
        disc_grads = backward(disc, disc_in, grad_d)
        assert disc_grads.input_grad is not None
        fake_grad = disc_grads.input_grad[:, :dim]

        penalty = self.conformal_service.conformity_penalty(
            reference, weights, real_x, real_y, fake_x, fake_y, disc, real_folds=real_folds
        )
        if mu_conform > 0.0:
            fake_grad = fake_grad + mu_conform * penalty.fake_grad

        gen_grads = backward(gen, gen_in, fake_grad)
        return GeneratorLoss(
            value=adversarial + mu_conform * penalty.value,
            adversarial=adversarial,
            c_g=penalty.value,
            r_icp=penalty.gaps[NonconformityMethod.ICP],
            grads=gen_grads,
            fake_x=fake_x,
        )

    def generator_step(
        self,
        gen: MlpModel,
        disc: MlpModel,
        real_batch: LabeledDataset,
        reference: ConformityReference,
        config: TrainConfig,
        rng: np.random.Generator,
        *,
        real_folds: NDArray[np.int64] | None = None,
        monitor: CalibratorState | None = None,
    ) -> tuple[MlpModel, GeneratorStepResult]:
        batch = real_batch.size
        num_classes = config.num_classes
        z, fake_y = self.sample_latent(batch, config.d_z, num_classes, rng)
        loss = self.generator_loss(
            gen,
            disc,
            z,
            fake_y,
            real_batch.features,
            real_batch.labels,
            reference,
            config.weight_vector(),
            config.mu_conform,
            num_classes,
            real_folds=real_folds,
        )
        coverage = 0.0
        if monitor is not None and batch:
            inside = self.conformal_service.contains(monitor, loss.fake_x, fake_y, disc)
            coverage = float(np.mean(inside))
        return adam_step(gen, loss.grads, config.eta_g), GeneratorStepResult(
            loss_g=loss.value, c_g=loss.c_g, r_icp=loss.r_icp, coverage=coverage
        )

    # ── full loop ──────────────────────────────────────────────────────

    def init_models(self, config: TrainConfig, dim: int) -> tuple[MlpModel, MlpModel]:
        init_rng = child_rngs(config.seed, 1)[0]
        gen_seed, disc_seed = (int(s) for s in init_rng.integers(0, 2**63 - 1, size=2))
        gen = build_generator(config.d_z, config.num_classes, dim, list(config.hidden), gen_seed)
        disc = build_discriminator(dim, config.num_classes, list(config.hidden), disc_seed)
        return gen, disc

    def train(
        self,
        data: LabeledDataset,
        config: TrainConfig,
        *,
        fit_pool_size: int = DEFAULT_FIT_POOL_SIZE,
        monitor_alpha: float = DEFAULT_MONITOR_ALPHA,
        initial: tuple[MlpModel, MlpModel] | None = None,
        rng: np.random.Generator | None = None,
        progress: ProgressHandle | None = None,
    ) -> TrainResult:
        """Run ``config.iterations`` alternating updates.

        Scorer states are refit every ``refit_period`` iterations: the real
        state from the training data, the fake state from a fresh
        class-balanced generated pool. All draws come from ``rng`` (by
        default a stream derived from ``config.seed``).
        """
        self._check_data(data, config, fit_pool_size)
        if initial is None:
            gen, disc = self.init_models(config, data.dim)
        else:
            gen, disc = initial
        if rng is None:
            rng = child_rngs(config.seed, 2)[1]
        handle = progress if progress is not None else NullProgressHandle()

        log: list[TrainRecord] = []
        refit: _RefitState | None = None
        total = config.iterations
        for step in range(total):
            t = step + 1
            if refit is None or step % config.refit_period == 0:
                refit = self._refit(gen, disc, data, config, fit_pool_size, monitor_alpha, rng)

            indices = rng.choice(data.size, size=config.batch_size, replace=False)
            real_batch = data.subset(indices)
            folds = refit.reference.real.cross.fold_assignment[indices]

            disc, d_result = self.discriminator_step(gen, disc, real_batch, config, rng)
            _check_finite(t, "loss_d", d_result.loss_d)
            gen, g_result = self.generator_step(
                gen,
                disc,
                real_batch,
                refit.reference,
                config,
                rng,
                real_folds=folds,
                monitor=refit.monitor,
            )
            _check_finite(t, "loss_g", g_result.loss_g)

            log.append(
                TrainRecord(
                    t=t,
                    loss_d=d_result.loss_d,
                    loss_g=g_result.loss_g,
                    r_icp=g_result.r_icp,
                    c_g=g_result.c_g,
                    grad_penalty=d_result.grad_penalty,
                    coverage=g_result.coverage,
                )
            )
            if t % self.config.progress_interval == 0 or t == total:
                handle.send_progress(
                    f"iteration {t}/{total} loss_d={d_result.loss_d:.4f} "
                    f"loss_g={g_result.loss_g:.4f} r_icp={g_result.r_icp:.4f}",
                    t / total,
                )

        logger.info("Training finished after %d iterations", total)
        return TrainResult(gen=gen, disc=disc, log=log, rng_state=rng_state_to_json(rng))

    def _check_data(self, data: LabeledDataset, config: TrainConfig, fit_pool_size: int) -> None:
        if data.num_classes != config.num_classes:
            raise DimensionMismatchError("class count", config.num_classes, data.num_classes)
        if data.size < config.batch_size:
            raise InsufficientDataError(
                f"training data has {data.size} points, batch size is {config.batch_size}"
            )
        if data.size < config.k_folds:
            raise InsufficientDataError(
                f"training data has {data.size} points, fewer than k_folds={config.k_folds}"
            )
        for label, count in enumerate(data.class_counts().tolist()):
            if count == 0:
                raise EmptyClassError(label)
        if fit_pool_size < max(config.k_folds, config.num_classes):
            raise InsufficientDataError("generated fit pool must cover every fold and class")

    def _refit(
        self,
        gen: MlpModel,
        disc: MlpModel,
        data: LabeledDataset,
        config: TrainConfig,
        fit_pool_size: int,
        monitor_alpha: float,
        rng: np.random.Generator,
    ) -> _RefitState:
        pool = self.generate_balanced(gen, fit_pool_size, config.num_classes, rng)
        real = self.conformal_service.fit_scorer(
            data, disc, config.k_folds, generated=pool, fold_seed=config.seed
        )
        fake = self.conformal_service.fit_scorer(
            pool, disc, config.k_folds, venn_fit=real.venn, fold_seed=config.seed
        )
        monitor = self.conformal_service.calibrate(
            real, config.weight_vector(), data, disc, monitor_alpha
        )
        return _RefitState(reference=ConformityReference(real=real, fake=fake), monitor=monitor)

    # ── sampling ───────────────────────────────────────────────────────

    def generate_balanced(
        self, gen: MlpModel, n: int, num_classes: int, rng: np.random.Generator
    ) -> LabeledDataset:
        """n generated points with labels as even across classes as possible."""
        labels = rng.permutation(np.arange(n, dtype=np.int64) % num_classes)
        z = box_muller(rng, n, latent_dim(gen, num_classes))
        return LabeledDataset(
            features=generate_features(gen, z, labels, num_classes),
            labels=labels,
            num_classes=num_classes,
        )

    def generate(
        self,
        gen: MlpModel,
        n: int,
        num_classes: int,
        seed: int,
        labels: Labels | None = None,
    ) -> LabeledDataset:
        """n samples G(z, y); labels are uniform unless given explicitly."""
        if n < 0:
            raise InsufficientDataError(f"sample count must be non-negative, got {n}")
        rng = child_rngs(seed, 1)[0]
        d_z = latent_dim(gen, num_classes)
        if labels is None:
            z, chosen = self.sample_latent(n, d_z, num_classes, rng)
        else:
            if labels.shape != (n,):
                raise DimensionMismatchError("requested labels", (n,), labels.shape)
            chosen = labels.astype(np.int64)
            z = box_muller(rng, n, d_z)
        features = generate_features(gen, z, chosen, num_classes)
        return LabeledDataset(features=features, labels=chosen, num_classes=num_classes)

    # ── weight selection support ───────────────────────────────────────

    def fine_tune(
        self,
        gen: MlpModel,
        disc: MlpModel,
        data: LabeledDataset,
        config: TrainConfig,
        weights: WeightVector,
        iterations: int,
        *,
        fit_pool_size: int = DEFAULT_FIT_POOL_SIZE,
        rng: np.random.Generator | None = None,
    ) -> MlpModel:
        """Continue training from (gen, disc) for a few iterations with the given weights."""
        tuned = config.model_copy(
            update={"weights": list(weights.values), "iterations": iterations}
        )
        result = self.train(
            data,
            tuned,
            fit_pool_size=fit_pool_size,
            initial=(gen.copy(), disc.copy()),
            rng=rng,
        )
        return result.gen

    def generalization_error(
        self, gen: MlpModel, val_real: LabeledDataset, rng: np.random.Generator
    ) -> float:
        return self.conformal_service.generalization_error(gen, val_real, rng)


def _check_finite(t: int, quantity: str, value: float) -> None:
    if not math.isfinite(value):
        logger.error("Training diverged at iteration %d: %s=%s", t, quantity, value)
        raise TrainingDivergedError(t=t, quantity=quantity, value=value)
