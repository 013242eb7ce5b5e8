"""Command-line interface: data synthesis, training, calibration, generation and evaluation."""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Any

import click
import numpy as np
from dotenv import load_dotenv
from pydantic import ValidationError

from app import create_container
from app.consts import (
    CALIBRATION_CURVE_CSV,
    CALIBRATOR,
    COVERAGE_EFFICIENCY_CSV,
    EXIT_RUNTIME,
    EXIT_VALIDATION,
    METHOD_COMPARISON_CSV,
    SPLIT_FILES,
    WIDTH_DENSITY_CSV,
)
from app.exceptions import (
    BusinessLogicException,
    ConfigError,
    ConfigurationError,
    DatasetFormatError,
    RunArtifactMissing,
    TrainingError,
)
from app.models.dataset import LabeledDataset
from app.schemas.data import MixtureSpec
from app.schemas.train_config import RunConfig, WeightSelectionMode, default_run_config
from app.services.container import ServiceContainer
from app.services.data_service import DataSplits
from app.utils.config_loader import load_run_config
from app.utils.run_store import RunStore

logger = logging.getLogger(__name__)

_VALIDATION_ERRORS: tuple[type[Exception], ...] = (
    BusinessLogicException,
    ConfigError,
    ConfigurationError,
    DatasetFormatError,
    RunArtifactMissing,
    ValidationError,
)
_RUNTIME_ERRORS: tuple[type[Exception], ...] = (TrainingError, OSError)

_SPLIT_NAMES = ("train", "calib", "val", "test")


class ExitCodeGroup(click.Group):
    """Maps domain exceptions onto the stable exit codes 2 (validation) and 3 (runtime)."""

    def invoke(self, ctx: click.Context) -> Any:
        try:
            return super().invoke(ctx)
        except (click.ClickException, click.exceptions.Exit, click.Abort):
            raise
        except _VALIDATION_ERRORS as exc:
            logger.debug("Command failed validation", exc_info=True)
            click.echo(f"Error: {exc}", err=True)
            ctx.exit(EXIT_VALIDATION)
        except _RUNTIME_ERRORS as exc:
            logger.debug("Command failed at runtime", exc_info=True)
            click.echo(f"Error: {exc}", err=True)
            ctx.exit(EXIT_RUNTIME)


@click.group(cls=ExitCodeGroup)
@click.pass_context
def cli(ctx: click.Context) -> None:
    """Conformalized conditional GAN toolkit."""
    ctx.ensure_object(dict)
    if "container" not in ctx.obj:
        ctx.obj["container"] = create_container()


def _container(ctx: click.Context) -> ServiceContainer:
    container: ServiceContainer = ctx.obj["container"]
    return container


def _default_seed(ctx: click.Context, seed: int | None) -> int:
    if seed is not None:
        return seed
    return int(_container(ctx).config().default_seed)


def _split_path(run_dir: Path, name: str) -> Path:
    return run_dir / SPLIT_FILES[_SPLIT_NAMES.index(name)]


def _load_split(
    ctx: click.Context, run_dir: Path, name: str, config: RunConfig, override: str | None = None
) -> LabeledDataset:
    path = Path(override) if override else _split_path(run_dir, name)
    if not path.is_file():
        raise RunArtifactMissing(str(path), hint="run `cgan train` first or pass the file explicitly")
    return _container(ctx).data_service().load_csv(path, num_classes=config.num_classes)


# ── make-data ──────────────────────────────────────────────────────────


@cli.command("make-data")
@click.option("--classes", "num_classes", type=click.IntRange(min=1), default=3, show_default=True)
@click.option("--dim", type=click.IntRange(min=1), default=2, show_default=True)
@click.option("--n", "n", type=click.IntRange(min=0), default=6000, show_default=True)
@click.option("--std", type=click.FloatRange(min=0, min_open=True), default=1.0, show_default=True)
@click.option("--seed", type=click.IntRange(min=0), default=None)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@click.pass_context
def make_data(
    ctx: click.Context, num_classes: int, dim: int, n: int, std: float, seed: int | None, out: str
) -> None:
    """Write a Gaussian mixture dataset as CSV."""
    spec = MixtureSpec(
        num_classes=num_classes, dim=dim, n=n, std=std, seed=_default_seed(ctx, seed)
    )
    data_service = _container(ctx).data_service()
    path = data_service.save_csv(data_service.make_gaussian_mixture(spec), out)
    click.echo(str(path))


# ── init-config ────────────────────────────────────────────────────────


@cli.command("init-config")
@click.option("--out", type=click.Path(dir_okay=False), required=True)
def init_config(out: str) -> None:
    """Write a complete default run configuration."""
    target = Path(out)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(
        default_run_config().model_dump_json(indent=2, by_alias=True, exclude_none=True) + "\n",
        encoding="utf-8",
    )
    click.echo(str(target))


# ── train ──────────────────────────────────────────────────────────────


@cli.command("train")
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None)
@click.option("--data", "data_path", type=click.Path(dir_okay=False), default=None)
@click.option("--run-dir", type=click.Path(file_okay=False), default=None)
@click.option("--baseline", is_flag=True, help="Disable both regularizers (standard conditional GAN).")
@click.pass_context
def train(
    ctx: click.Context,
    config_path: str | None,
    data_path: str | None,
    run_dir: str | None,
    baseline: bool,
) -> None:
    """Train a generator/discriminator pair into a run directory."""
    run_config = load_run_config(config_path) if config_path else default_run_config()
    data_file = data_path or run_config.data_path
    target_dir = run_dir or run_config.run_dir
    if not data_file:
        raise click.UsageError("a dataset is required (--data or data_path in the config)")
    if not target_dir:
        raise click.UsageError("a run directory is required (--run-dir or run_dir in the config)")

    update: dict[str, Any] = {"data_path": data_file, "run_dir": target_dir}
    if baseline:
        update.update(mu_conform=0.0, lambda_reg=0.0)
    run_config = RunConfig.model_validate(run_config.model_dump() | update)

    container = _container(ctx)
    data_service = container.data_service()
    data = data_service.load_csv(data_file)
    trained = container.experiment_service().train_run(data, run_config)

    store: RunStore = container.run_store(run_dir=target_dir)
    store.ensure()
    for name, split in zip(_SPLIT_NAMES, trained.splits, strict=True):
        data_service.save_csv(split, _split_path(store.run_dir, name))
    standardizer = trained.splits.train.standardizer
    if standardizer is not None:
        store.save_standardizer(standardizer)
    store.save_models(trained.result.gen, trained.result.disc, trained.result.rng_state)
    store.save_train_log(trained.result.log)
    store.save_config(run_config)
    click.echo(str(store.run_dir))


# ── calibrate ──────────────────────────────────────────────────────────


@cli.command("calibrate")
@click.option("--run-dir", type=click.Path(file_okay=False), required=True)
@click.option("--calib", "calib_path", type=click.Path(dir_okay=False), default=None)
@click.option(
    "--alpha",
    type=click.FloatRange(min=0, max=1, min_open=True, max_open=True),
    default=None,
)
@click.option(
    "--select-weights",
    "selection",
    type=click.Choice([mode.value for mode in WeightSelectionMode]),
    default=None,
)
@click.option("--out", type=click.Path(dir_okay=False), default=None)
@click.pass_context
def calibrate(
    ctx: click.Context,
    run_dir: str,
    calib_path: str | None,
    alpha: float | None,
    selection: str | None,
    out: str | None,
) -> None:
    """Fit the conformal scorer and calibrate it on held-out real data."""
    container = _container(ctx)
    store: RunStore = container.run_store(run_dir=run_dir)
    run_config = store.load_config()
    gen, rng_state = store.load_generator()
    disc = store.load_discriminator()

    base = Path(run_dir)
    train_data = _load_split(ctx, base, "train", run_config)
    calib_data = _load_split(ctx, base, "calib", run_config, calib_path)
    val_data = _load_split(ctx, base, "val", run_config)
    test_data = _load_split(ctx, base, "test", run_config)

    mode = WeightSelectionMode(selection) if selection else run_config.weight_selection
    experiments = container.experiment_service()
    weights = experiments.choose_weights(
        mode,
        gen,
        disc,
        DataSplits(train_data, calib_data, val_data, test_data),
        run_config,
        rng_state=rng_state,
    )
    calibrator = experiments.fit_calibrator(
        gen, disc, train_data, calib_data, run_config, weights, alpha
    )
    target = store.save_calibrator(calibrator, out)
    logger.info(
        "Calibrated %d points with weights %s at alpha=%s",
        calibrator.size,
        calibrator.weights.values,
        calibrator.alpha,
    )
    click.echo(str(target))


# ── generate ───────────────────────────────────────────────────────────


@cli.command("generate")
@click.option("--run-dir", type=click.Path(file_okay=False), required=True)
@click.option("--n", "n", type=click.IntRange(min=0), required=True)
@click.option("--seed", type=click.IntRange(min=0), default=None)
@click.option("--label", type=click.IntRange(min=0), default=None, help="Condition every sample on this class.")
@click.option("--filter-region", is_flag=True, help="Keep only samples inside the calibrated region.")
@click.option(
    "--alpha",
    type=click.FloatRange(min=0, max=1, min_open=True, max_open=True),
    default=None,
    help="Region level for --filter-region (defaults to the calibrator's alpha).",
)
@click.option("--original-scale", is_flag=True, help="Undo the run's feature standardization.")
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@click.pass_context
def generate(
    ctx: click.Context,
    run_dir: str,
    n: int,
    seed: int | None,
    label: int | None,
    filter_region: bool,
    alpha: float | None,
    original_scale: bool,
    out: str,
) -> None:
    """Sample synthetic rows from a trained generator."""
    container = _container(ctx)
    store: RunStore = container.run_store(run_dir=run_dir)
    run_config = store.load_config()
    gen, _ = store.load_generator()
    num_classes = run_config.num_classes

    labels = None
    if label is not None:
        if label >= num_classes:
            raise click.BadParameter(f"label must be below {num_classes}", param_hint="--label")
        labels = np.full(n, label, dtype=np.int64)
    samples = container.training_service().generate(
        gen, n, num_classes, _default_seed(ctx, seed), labels=labels
    )

    if filter_region:
        calibrator = store.load_calibrator()
        disc = store.load_discriminator()
        inside = container.conformal_service().contains(
            calibrator, samples.features, samples.labels, disc, alpha
        )
        logger.info("Region filter kept %d of %d samples", int(inside.sum()), samples.size)
        samples = samples.subset(np.flatnonzero(inside))

    if original_scale:
        standardizer = store.load_standardizer()
        if standardizer is not None:
            samples = LabeledDataset(
                features=standardizer.invert(samples.features),
                labels=samples.labels,
                num_classes=num_classes,
            )
    path = container.data_service().save_csv(samples, out)
    click.echo(str(path))


# ── evaluate ───────────────────────────────────────────────────────────


@cli.command("evaluate")
@click.option("--run-dir", type=click.Path(file_okay=False), required=True)
@click.option("--synth", "synth_path", type=click.Path(dir_okay=False), required=True)
@click.option("--real", "real_path", type=click.Path(dir_okay=False), default=None)
@click.option("--calibrator", "calibrator_path", type=click.Path(dir_okay=False), default=None)
@click.option("--curves", is_flag=True, help="Also emit the coverage/efficiency, calibration and width/density curves.")
@click.option("--out-dir", type=click.Path(file_okay=False), default=None)
@click.pass_context
def evaluate(
    ctx: click.Context,
    run_dir: str,
    synth_path: str,
    real_path: str | None,
    calibrator_path: str | None,
    curves: bool,
    out_dir: str | None,
) -> None:
    """Score synthetic data against the real test split."""
    container = _container(ctx)
    store: RunStore = container.run_store(run_dir=run_dir)
    run_config = store.load_config()
    base = Path(run_dir)
    real = _load_split(ctx, base, "test", run_config, real_path)
    synth = container.data_service().load_csv(synth_path, num_classes=run_config.num_classes)

    calibrator_file = Path(calibrator_path) if calibrator_path else store.path(CALIBRATOR)
    calibrator = None
    disc = None
    calib_data = None
    if calibrator_file.is_file() or curves:
        calibrator = store.load_calibrator(calibrator_file)
        disc = store.load_discriminator()
        calib_file = _split_path(base, "calib")
        if calib_file.is_file():
            calib_data = container.data_service().load_csv(
                calib_file, num_classes=run_config.num_classes
            )

    report = container.metrics_service().build_report(
        real,
        synth,
        calibrator=calibrator,
        disc=disc,
        levels=run_config.metric_levels,
        curves=curves,
        calib_data=calib_data,
    )

    output: RunStore = container.run_store(run_dir=out_dir or run_dir)
    output.save_report(report)
    if report.curves:
        output.save_curve(COVERAGE_EFFICIENCY_CSV, ("set_size", "coverage"), report.curves["coverage_efficiency"])
        output.save_curve(CALIBRATION_CURVE_CSV, ("nominal", "empirical"), report.curves["calibration"])
        output.save_curve(WIDTH_DENSITY_CSV, ("density", "mean_radius"), report.curves["width_density"])
    if report.method_comparison:
        output.save_table(
            METHOD_COMPARISON_CSV,
            ("method", "coverage", "efficiency"),
            [(row.method, row.coverage, row.efficiency) for row in report.method_comparison],
        )

    click.echo("ks_mean,wasserstein_mean,downstream_accuracy")
    click.echo(f"{report.ks_mean!r},{report.wasserstein_mean!r},{report.downstream_accuracy!r}")


# ── compare ────────────────────────────────────────────────────────────


@cli.command("compare")
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None)
@click.option("--data", "data_path", type=click.Path(dir_okay=False), required=True)
@click.option("--seeds", type=click.IntRange(min=1), default=10, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@click.pass_context
def compare(
    ctx: click.Context, config_path: str | None, data_path: str, seeds: int, out: str
) -> None:
    """Train baseline and conformalized models over several seeds and compare them."""
    run_config = load_run_config(config_path) if config_path else default_run_config()
    container = _container(ctx)
    data = container.data_service().load_csv(data_path)
    seed_list = [run_config.seed + offset for offset in range(seeds)]
    report = container.experiment_service().compare(data, run_config, seed_list)

    target = Path(out)
    RunStore(target.parent).save_report(report, name=target.name)
    summary = report.summary
    click.echo(
        f"seeds={summary.seeds} accuracy_not_worse={summary.accuracy_not_worse} "
        f"ks_not_worse={summary.ks_not_worse} ece_improved={summary.ece_improved} "
        f"r_icp_decreased={summary.r_icp_decreased}"
    )


def main() -> None:
    """Main CLI entry point."""
    # Load environment variables from .env file if present
    load_dotenv()

    cli()


if __name__ == "__main__":
    main()
