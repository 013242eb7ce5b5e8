"""Tests for run directory storage."""

from __future__ import annotations

import numpy as np
import pytest

from app.consts import CALIBRATOR, DISC_CHECKPOINT, GEN_CHECKPOINT, TRAIN_LOG
from app.exceptions import ConfigLoadFailed, RunArtifactMissing
from app.models.conformal import WeightVector
from app.schemas.report import CurveRow
from app.schemas.training import TrainRecord
from app.utils.run_store import RunStore
from tests.conftest import make_run_config


def _records():
    return [
        TrainRecord(t=t, loss_d=1.3, loss_g=0.7, r_icp=0.1, c_g=0.05, grad_penalty=0.01, coverage=0.9)
        for t in (1, 2, 3)
    ]


def test_models_round_trip(tmp_path, small_gen, small_disc):
    store = RunStore(tmp_path / "run")
    store.save_models(small_gen, small_disc, rng_state={"k": 1})

    gen, rng_state = store.load_generator()
    disc = store.load_discriminator()

    assert rng_state == {"k": 1}
    np.testing.assert_array_equal(gen.weights[0], small_gen.weights[0])
    np.testing.assert_array_equal(disc.weights[-1], small_disc.weights[-1])


def test_writes_are_byte_identical(tmp_path, small_gen, small_disc):
    first = RunStore(tmp_path / "a")
    second = RunStore(tmp_path / "b")
    first.save_models(small_gen, small_disc)
    second.save_models(small_gen, small_disc)
    first.save_train_log(_records())
    second.save_train_log(_records())

    for name in (GEN_CHECKPOINT, DISC_CHECKPOINT, TRAIN_LOG):
        assert first.path(name).read_bytes() == second.path(name).read_bytes()


def test_train_log_round_trip(tmp_path):
    store = RunStore(tmp_path)
    store.save_train_log(_records())
    assert store.load_train_log() == _records()


def test_config_round_trip(tmp_path):
    store = RunStore(tmp_path)
    config = make_run_config(seed=7)
    store.save_config(config)
    assert store.load_config() == config


def test_calibrator_round_trip_to_explicit_path(tmp_path, experiment_service, small_gen, small_disc, mixture):
    calibrator = experiment_service.fit_calibrator(
        small_gen, small_disc, mixture, mixture, make_run_config(), WeightVector.uniform()
    )
    store = RunStore(tmp_path / "run")
    target = store.save_calibrator(calibrator, tmp_path / "elsewhere" / "cal.json")

    assert target.is_file()
    assert not store.path(CALIBRATOR).exists()
    loaded = store.load_calibrator(target)
    np.testing.assert_array_equal(loaded.calib_scores, calibrator.calib_scores)


def test_missing_artifacts_are_reported(tmp_path):
    store = RunStore(tmp_path)
    with pytest.raises(RunArtifactMissing):
        store.load_generator()
    with pytest.raises(RunArtifactMissing):
        store.load_calibrator()
    with pytest.raises(RunArtifactMissing):
        store.load_train_log()
    assert store.load_standardizer() is None


def test_invalid_document_is_a_load_failure(tmp_path):
    store = RunStore(tmp_path)
    store.path(GEN_CHECKPOINT).write_text('{"layer_dims": [2]}')
    with pytest.raises(ConfigLoadFailed):
        store.load_generator()


def test_curve_uses_exact_float_text(tmp_path):
    store = RunStore(tmp_path)
    target = store.save_curve("curve.csv", ["x", "y"], [CurveRow(x=0.1, y=1 / 3)])
    assert target.read_text().splitlines() == ["x,y", "0.1,0.3333333333333333"]
