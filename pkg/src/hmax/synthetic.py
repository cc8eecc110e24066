"""Procedural oriented-texture dataset for desk-scale experiments.

Three classes of sinusoidal gratings with dominant orientations of 0,
45 and 90 degrees, written as 8-bit PNG files in the usual
category-per-directory layout.  The classes share their frequency and
contrast distributions, so orientation is the only separating cue.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
from PIL import Image

CLASS_ORIENTATIONS = {
    "grating000": 0.0,
    "grating045": math.pi / 4,
    "grating090": math.pi / 2,
}


def grating_image(side: int, orientation: float, period: float,
                  phase: float, contrast: float, noise: float,
                  rng: np.random.Generator) -> np.ndarray:
    """One oriented grating with additive Gaussian pixel noise, in [0, 1]."""
    coords = np.arange(side, dtype=np.float64)
    x = coords[None, :]
    y = coords[:, None]
    carrier = np.sin(
        2.0 * math.pi * (x * math.cos(orientation) + y * math.sin(orientation))
        / period + phase)
    img = 0.5 + contrast * carrier
    if noise > 0:
        img = img + rng.normal(0.0, noise, size=img.shape)
    return np.clip(img, 0.0, 1.0)


def generate_synthetic_dataset(root, images_per_class: int = 20, seed: int = 0,
                               side_range=(64, 160)) -> Path:
    """Write the 3-class grating dataset under `root` and return the path."""
    root = Path(root)
    lo, hi = side_range
    if lo < 48:
        raise ValueError("sides below 48 px leave no room for the filter bank")
    rng = np.random.default_rng(seed)
    for name, theta in CLASS_ORIENTATIONS.items():
        cat_dir = root / name
        cat_dir.mkdir(parents=True, exist_ok=True)
        for i in range(images_per_class):
            side = int(rng.integers(lo, hi + 1))
            period = float(rng.uniform(8.0, 16.0))
            phase = float(rng.uniform(0.0, 2.0 * math.pi))
            contrast = float(rng.uniform(0.3, 0.45))
            jitter = float(rng.normal(0.0, math.pi / 60))
            img = grating_image(side, theta + jitter, period, phase,
                                contrast, noise=0.02, rng=rng)
            pixels = np.round(img * 255.0).astype(np.uint8)
            Image.fromarray(pixels, mode="L").save(cat_dir / f"img_{i:03d}.png")
    return root
