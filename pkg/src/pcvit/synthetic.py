"""Synthetic four-class grayscale images for smoke tests and benchmarks.

Each class has its own base intensity and spatial pattern; per-image
brightness jitter and pixel noise keep the task from being trivial.
"""

from __future__ import annotations

import os

import numpy as np
from PIL import Image

from pcvit.dataset import CLASS_NAMES

_BASE_LEVEL = (50, 110, 160, 210)


def _pattern(label: int, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    if label == 0:
        return np.zeros((size, size))
    if label == 1:
        return 30.0 * (xx - 0.5)
    if label == 2:
        return 25.0 * np.sign(np.sin(2 * np.pi * 3 * yy))
    return 25.0 * np.where((np.floor(xx * 4) + np.floor(yy * 4)) % 2 == 0, 1.0, -1.0)


def toy_images(n_per_class: int, size: int = 32, seed: int = 0, noise: float = 12.0):
    """Return ``(gray[N, size, size] uint8, labels[N])``, grouped by class."""
    rng = np.random.default_rng(seed)
    images, labels = [], []
    for label in range(len(CLASS_NAMES)):
        for _ in range(n_per_class):
            img = _BASE_LEVEL[label] + _pattern(label, size) + rng.uniform(-10, 10)
            img = img + rng.normal(0.0, noise, size=(size, size))
            images.append(np.clip(np.rint(img), 0, 255).astype(np.uint8))
            labels.append(label)
    return np.stack(images), np.array(labels, dtype=np.int64)


def write_toy_tree(root, n_per_class: int, size: int = 32, seed: int = 0) -> list[str]:
    """Write PNGs into ``root/<class name>/`` and return the class directories."""
    gray, labels = toy_images(n_per_class, size, seed)
    dirs = []
    for label, name in enumerate(CLASS_NAMES):
        d = os.path.join(os.fspath(root), name.replace(" ", "_"))
        os.makedirs(d, exist_ok=True)
        dirs.append(d)
    counters = [0] * len(CLASS_NAMES)
    for img, label in zip(gray, labels):
        Image.fromarray(img, mode="L").save(os.path.join(dirs[label], f"img_{counters[label]:04d}.png"))
        counters[label] += 1
    return dirs
