"""Seeded synthetic test images (smooth blobs plus a faint oriented texture)."""
from __future__ import annotations

import numpy as np


def _blobs(rng, yy, xx, count):
    out = np.zeros_like(yy)
    for _ in range(count):
        cy, cx = rng.uniform(0.1, 0.9, size=2)
        width = rng.uniform(0.04, 0.18)
        amp = rng.uniform(0.3, 1.0)
        out += amp * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * width**2))
    return out


def real_test_image(shape, seed=None, blobs: int = 7, texture: float = 0.15) -> np.ndarray:
    """Nonnegative real image in ``[0, 1]``."""
    rng = np.random.default_rng(seed)
    n1, n2 = shape
    yy, xx = np.meshgrid(np.linspace(0, 1, n1, endpoint=False),
                         np.linspace(0, 1, n2, endpoint=False), indexing="ij")
    img = _blobs(rng, yy, xx, blobs)
    fy, fx = rng.uniform(4, 12, size=2)
    img = img / img.max()
    img += texture * (0.5 + 0.5 * np.sin(2 * np.pi * (fy * yy + fx * xx) + rng.uniform(0, 2 * np.pi)))
    img -= img.min()
    return img / img.max()


def complex_test_image(shape, seed=None) -> np.ndarray:
    """Complex image: test-image magnitude times a smooth phase field spanning ``(-pi, pi)``."""
    rng = np.random.default_rng(seed)
    mag = real_test_image(shape, rng)
    phase = real_test_image(shape, rng, blobs=4, texture=0.0)
    return mag * np.exp(1j * np.pi * (2 * phase - 1))
