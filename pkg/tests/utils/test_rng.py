"""Tests for seeded random streams."""

from __future__ import annotations

import json

import numpy as np

from app.utils.rng import (
    box_muller,
    child_rngs,
    make_rng,
    random_unit_rows,
    rng_from_json,
    rng_state_to_json,
)


def test_same_seed_same_stream():
    np.testing.assert_array_equal(make_rng(7).random(5), make_rng(7).random(5))


def test_child_streams_differ_and_repeat():
    first = [rng.random(3) for rng in child_rngs(3, 3)]
    again = [rng.random(3) for rng in child_rngs(3, 3)]
    for a, b in zip(first, again, strict=True):
        np.testing.assert_array_equal(a, b)
    assert not np.array_equal(first[0], first[1])


def test_box_muller_shape_and_moments():
    draws = box_muller(make_rng(0), 5001, 3)
    assert draws.shape == (5001, 3)
    assert abs(float(draws.mean())) < 0.05
    assert abs(float(draws.std()) - 1.0) < 0.05


def test_box_muller_empty():
    assert box_muller(make_rng(0), 0, 4).shape == (0, 4)


def test_random_unit_rows_have_unit_norm():
    rows = random_unit_rows(make_rng(1), 50, 4)
    np.testing.assert_allclose(np.linalg.norm(rows, axis=1), 1.0)


def test_state_round_trips_through_json():
    rng = make_rng(9)
    rng.random(17)
    state = json.loads(json.dumps(rng_state_to_json(rng)))
    restored = rng_from_json(state)
    np.testing.assert_array_equal(rng.random(8), restored.random(8))
