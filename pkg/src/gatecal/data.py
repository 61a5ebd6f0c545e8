"""Procedural 8x8 grayscale dataset.

Four shape classes, each a binary template plus Gaussian pixel noise.
Analytic templates keep the reward functions closed-form: sample quality
is simply agreement with the class template.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .rng import Rng

IMAGE_SIZE = 8

CLASS_NAMES = ("disk", "cross", "bar-h", "bar-v")


def class_template(name: str) -> np.ndarray:
    """Noise-free 8x8 template of one class, values in {0, 1}."""
    grid = np.zeros((IMAGE_SIZE, IMAGE_SIZE))
    rows, cols = np.mgrid[0:IMAGE_SIZE, 0:IMAGE_SIZE]
    if name == "disk":
        grid[(rows - 3.5) ** 2 + (cols - 3.5) ** 2 <= 2.5**2] = 1.0
    elif name == "cross":
        grid[(np.abs(rows - 3.5) < 1.0) | (np.abs(cols - 3.5) < 1.0)] = 1.0
    elif name == "bar-h":
        grid[np.abs(rows - 3.5) < 1.0] = 1.0
    elif name == "bar-v":
        grid[np.abs(cols - 3.5) < 1.0] = 1.0
    else:
        raise ContractError(f"unknown class name {name!r}; expected one of {CLASS_NAMES}")
    return grid


@dataclass(frozen=True)
class DatasetSpec:
    classes: tuple[str, ...] = CLASS_NAMES
    noise_std: float = 0.05

    def __post_init__(self):
        for name in self.classes:
            class_template(name)

    @property
    def class_count(self) -> int:
        return len(self.classes)

    def templates(self) -> np.ndarray:
        """Stacked templates, indexed by class id."""
        return np.stack([class_template(n) for n in self.classes])


def sample_batch(spec: DatasetSpec, rng: Rng, batch: int) -> tuple[np.ndarray, np.ndarray]:
    """Draw (class_ids, images): uniform classes, template + pixel noise."""
    class_ids = rng.integers(0, spec.class_count, batch).astype(np.int64)
    templates = spec.templates()
    images = templates[class_ids] + spec.noise_std * rng.normal((batch, IMAGE_SIZE, IMAGE_SIZE))
    return class_ids, images
