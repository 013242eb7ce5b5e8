"""Seeded randomness.

Every random draw in the package comes from a counter-based Philox generator
derived from a single 64-bit seed; there is no global random state.
"""

from __future__ import annotations

from typing import Any

import numpy as np
from numpy.typing import NDArray

_SEED_MASK = (1 << 64) - 1


def make_rng(seed: int) -> np.random.Generator:
    """Create a Philox generator for a 64-bit seed."""
    return np.random.Generator(np.random.Philox(seed & _SEED_MASK))


def child_rngs(seed: int, count: int) -> list[np.random.Generator]:
    """Derive independent, reproducible streams from one seed."""
    children = np.random.SeedSequence(seed & _SEED_MASK).spawn(count)
    return [np.random.Generator(np.random.Philox(child)) for child in children]


def box_muller(rng: np.random.Generator, rows: int, cols: int) -> NDArray[np.float64]:
    """Standard normal draws of shape (rows, cols) via the Box-Muller transform."""
    size = rows * cols
    if size == 0:
        return np.zeros((rows, cols))
    pairs = (size + 1) // 2
    # 1 - U keeps the radius argument in (0, 1].
    u1 = 1.0 - rng.random(pairs)
    u2 = rng.random(pairs)
    radius = np.sqrt(-2.0 * np.log(u1))
    angle = 2.0 * np.pi * u2
    normals = np.concatenate([radius * np.cos(angle), radius * np.sin(angle)])
    return normals[:size].reshape(rows, cols)


def random_unit_rows(rng: np.random.Generator, rows: int, cols: int) -> NDArray[np.float64]:
    """One uniformly distributed unit vector per row."""
    draws = box_muller(rng, rows, cols)
    norms = np.linalg.norm(draws, axis=1, keepdims=True)
    # A zero draw has probability zero; fall back to the first axis.
    zero = norms[:, 0] == 0.0
    if np.any(zero):
        draws[zero] = 0.0
        draws[zero, 0] = 1.0
        norms[zero] = 1.0
    return draws / norms


def rng_state_to_json(rng: np.random.Generator) -> dict[str, Any]:
    """Bit generator state as plain JSON-compatible values."""
    return _to_plain(rng.bit_generator.state)


def rng_from_json(state: dict[str, Any]) -> np.random.Generator:
    """Rebuild a Philox generator from rng_state_to_json() output."""
    bit_generator = np.random.Philox()
    restored = dict(state)
    inner = dict(restored["state"])
    inner["counter"] = np.asarray(inner["counter"], dtype=np.uint64)
    inner["key"] = np.asarray(inner["key"], dtype=np.uint64)
    restored["state"] = inner
    restored["buffer"] = np.asarray(restored["buffer"], dtype=np.uint64)
    bit_generator.state = restored
    return np.random.Generator(bit_generator)


def _to_plain(value: Any) -> Any:
    if isinstance(value, dict):
        return {key: _to_plain(item) for key, item in value.items()}
    if isinstance(value, np.ndarray):
        return [int(item) for item in value.tolist()]
    if isinstance(value, np.integer):
        return int(value)
    return value
