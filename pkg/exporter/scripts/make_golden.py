"""Regenerate the golden fixture consumed by the detection test suite.

One procedurally generated 256x256 image, confetti anomalies on, seeded
random backbone weights (the sandbox cannot download the ImageNet
checkpoint; header layout and validation behavior do not depend on the
weight values). Output: ../tests/fixtures/golden_720.adtrft relative to
the detection package root.

Usage: python3 scripts/make_golden.py [dest]
"""

import os
import shutil
import sys
import tempfile

import numpy as np
from PIL import Image

from adtr_exporter.confetti import ConfettiConfig
from adtr_exporter.export import ExportConfig, export_dataset


def procedural_image(size: int = 256) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / size
    base = np.stack([
        0.5 + 0.35 * np.sin(2 * np.pi * 3 * xx),
        0.5 + 0.35 * np.cos(2 * np.pi * 2 * yy),
        0.5 + 0.25 * np.sin(2 * np.pi * (xx + yy)),
    ], axis=2)
    return np.clip(base * 255, 0, 255).astype(np.uint8)


def main() -> None:
    dest = sys.argv[1] if len(sys.argv) > 1 else os.path.join(
        os.path.dirname(__file__), "..", "..", "tests", "fixtures", "golden_720.adtrft")
    with tempfile.TemporaryDirectory() as tmp:
        image_dir = os.path.join(tmp, "images")
        os.makedirs(image_dir)
        Image.fromarray(procedural_image()).save(os.path.join(image_dir, "golden.png"))
        out_dir = os.path.join(tmp, "out")
        export_dataset(ExportConfig(
            weights="random", image_dir=image_dir, out_dir=out_dir,
            confetti=True, confetti_params=ConfettiConfig(count=6, min_size=8, max_size=24),
            seed=720))
        shutil.copyfile(os.path.join(out_dir, "golden.adtrft"), dest)
    print(f"wrote {os.path.abspath(dest)}")


if __name__ == "__main__":
    main()
