"""Confetti-noise anomaly synthesis: seeded small colored rectangles
pasted onto a normal image, with the pasted pixels as the ground truth."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ConfettiConfig:
    count: int = 8
    min_size: int = 4
    max_size: int = 16
    color_mode: str = "solid"  # solid rectangles or per-pixel "speckle"

    def __post_init__(self):
        if self.count < 0 or self.min_size < 1 or self.max_size < self.min_size:
            raise ValueError(f"bad confetti parameters {self}")
        if self.color_mode not in ("solid", "speckle"):
            raise ValueError(f"unknown color_mode {self.color_mode!r}")


def synthesize(image: np.ndarray, config: ConfettiConfig,
               rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Returns (image with confetti, uint8 pixel mask of pasted area)."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3 or image.dtype != np.uint8:
        raise ValueError(f"expected H x W x 3 uint8 image, got {image.shape} {image.dtype}")
    h, w = image.shape[:2]
    out = image.copy()
    mask = np.zeros((h, w), dtype=np.uint8)
    for _ in range(config.count):
        rh = int(rng.integers(config.min_size, config.max_size + 1))
        rw = int(rng.integers(config.min_size, config.max_size + 1))
        top = int(rng.integers(0, max(h - rh, 0) + 1))
        left = int(rng.integers(0, max(w - rw, 0) + 1))
        if config.color_mode == "solid":
            color = rng.integers(0, 256, size=3, dtype=np.uint8)
            out[top:top + rh, left:left + rw] = color
        else:
            out[top:top + rh, left:left + rw] = rng.integers(
                0, 256, size=(rh, rw, 3), dtype=np.uint8)
        mask[top:top + rh, left:left + rw] = 1
    return out, mask
