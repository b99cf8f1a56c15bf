"""Dataset export: images -> frozen-backbone features -> ADTRFT01 files.

Per image: forward through the frozen backbone, resize each layer's
features to the grid, concatenate in layer order, and write one sample.
Ground-truth masks are downsampled to the feature grid by the
any-anomalous-pixel-in-cell rule. File ordering is the sorted input
listing, so two exports of the same tree are identical.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from adtr_exporter.backbone import Backbone
from adtr_exporter.confetti import ConfettiConfig, synthesize
from adtr_exporter.format import save_manifest, save_sample

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp")


@dataclass(frozen=True)
class ExportConfig:
    backbone: str = "efficientnet_b4"
    weights: str = "pretrained"  # pretrained | random | path to a state dict
    image_size: int = 256
    grid_h: int = 16
    grid_w: int = 16
    expected_channels: int = 720
    image_dir: str = ""
    mask_dir: str | None = None
    out_dir: str = ""
    split: str = "test"
    confetti: bool = False
    confetti_params: ConfettiConfig = field(default_factory=ConfettiConfig)
    seed: int = 0

    def __post_init__(self):
        if self.image_size % self.grid_h or self.image_size % self.grid_w:
            raise ValueError("image_size must be divisible by the feature grid")
        if self.split not in ("train", "test"):
            raise ValueError(f"split must be train or test, got {self.split!r}")


def load_image(path: str, size: int) -> np.ndarray:
    with Image.open(path) as img:
        rgb = img.convert("RGB")
        if rgb.size != (size, size):
            rgb = rgb.resize((size, size), Image.BILINEAR)
        return np.asarray(rgb, dtype=np.uint8)


def load_mask(path: str, size: int) -> np.ndarray:
    with Image.open(path) as img:
        gray = img.convert("L")
        if gray.size != (size, size):
            gray = gray.resize((size, size), Image.NEAREST)
        return (np.asarray(gray) > 0).astype(np.uint8)


def downsample_mask(mask: np.ndarray, grid_h: int, grid_w: int) -> np.ndarray:
    """Any anomalous pixel inside a cell marks the cell anomalous."""
    h, w = mask.shape
    cells = mask.reshape(grid_h, h // grid_h, grid_w, w // grid_w)
    return cells.any(axis=(1, 3)).astype(np.uint8)


def list_images(image_dir: str) -> list[str]:
    names = [n for n in sorted(os.listdir(image_dir))
             if n.lower().endswith(IMAGE_EXTENSIONS)]
    if not names:
        raise ValueError(f"no images found under {image_dir}")
    return names


def export_dataset(config: ExportConfig) -> list[tuple[str, str, str]]:
    """Exports every image; returns the manifest entries written."""
    backbone = Backbone(config.backbone, weights=config.weights, seed=config.seed)
    total = sum(backbone.channels)
    if total != config.expected_channels:
        raise ValueError(f"backbone layers sum to {total} channels, "
                         f"config expects {config.expected_channels}; nothing written")

    names = list_images(config.image_dir)
    os.makedirs(config.out_dir, exist_ok=True)
    entries: list[tuple[str, str, str]] = []
    for index, name in enumerate(names):
        image = load_image(os.path.join(config.image_dir, name), config.image_size)
        stem = os.path.splitext(name)[0]

        mask = None
        if config.mask_dir is not None:
            mask_path = os.path.join(config.mask_dir, stem + ".png")
            if os.path.exists(mask_path):
                mask = load_mask(mask_path, config.image_size)
        if config.confetti:
            rng = np.random.default_rng([config.seed, index])
            image, confetti_mask = synthesize(image, config.confetti_params, rng)
            mask = confetti_mask if mask is None else np.maximum(mask, confetti_mask)

        features = backbone.multiscale_features(image, config.grid_h, config.grid_w)
        if features.shape[0] != config.expected_channels:
            raise ValueError(f"extracted {features.shape[0]} channels, "
                             f"expected {config.expected_channels}")

        grid_mask = None
        label = 0
        if mask is not None:
            grid_mask = downsample_mask(mask, config.grid_h, config.grid_w)
            label = int(grid_mask.any())

        rel = f"{stem}.adtrft"
        save_sample(os.path.join(config.out_dir, rel), features, grid_mask, label)
        entries.append((rel, config.split, "anomalous" if label else "normal"))

    save_manifest(os.path.join(config.out_dir, "manifest.tsv"), entries)
    return entries
