"""Conditional generator/discriminator plumbing around the MLP engine.

Labels enter both networks as one-hot columns appended to the input:
G(z, y) sees [z | onehot(y)], D(x, y) sees [x | onehot(y)].
"""

from __future__ import annotations

import numpy as np

from app.models.dataset import Labels, with_labels
from app.models.mlp import Activation, Matrix, MlpModel, forward
from app.utils.rng import box_muller


def build_generator(d_z: int, num_classes: int, dim: int, hidden: list[int], seed: int) -> MlpModel:
    return MlpModel.create([d_z + num_classes, *hidden, dim], Activation.LINEAR, seed)


def build_discriminator(dim: int, num_classes: int, hidden: list[int], seed: int) -> MlpModel:
    return MlpModel.create([dim + num_classes, *hidden, 1], Activation.SIGMOID, seed)


def latent_dim(gen: MlpModel, num_classes: int) -> int:
    return gen.input_dim - num_classes


def sample_latent(
    batch: int, d_z: int, num_classes: int, rng: np.random.Generator
) -> tuple[Matrix, Labels]:
    """Standard normal latents (Box-Muller) and uniform class labels."""
    if batch <= 0:
        return np.zeros((0, d_z)), np.zeros(0, dtype=np.int64)
    z = box_muller(rng, batch, d_z)
    labels = rng.integers(0, num_classes, size=batch).astype(np.int64)
    return z, labels


def generator_input(z: Matrix, labels: Labels, num_classes: int) -> Matrix:
    return with_labels(z, labels, num_classes)


def discriminator_input(x: Matrix, labels: Labels, num_classes: int) -> Matrix:
    return with_labels(x, labels, num_classes)


def generate_features(gen: MlpModel, z: Matrix, labels: Labels, num_classes: int) -> Matrix:
    return forward(gen, generator_input(z, labels, num_classes))


def discriminate(disc: MlpModel, x: Matrix, labels: Labels, num_classes: int) -> Matrix:
    """D(x, y) as a column of probabilities."""
    return forward(disc, discriminator_input(x, labels, num_classes))
