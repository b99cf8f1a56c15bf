"""Command-line mirror of ExportConfig."""

from __future__ import annotations

import argparse
import sys

from adtr_exporter.confetti import ConfettiConfig
from adtr_exporter.export import ExportConfig, export_dataset


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="adtr-export", description=__doc__)
    parser.add_argument("--images", required=True, help="input image directory")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--masks", help="optional ground-truth mask directory")
    parser.add_argument("--backbone", default="efficientnet_b4")
    parser.add_argument("--weights", default="pretrained",
                        help="pretrained | random | path to a torch state dict")
    parser.add_argument("--image-size", type=int, default=256)
    parser.add_argument("--grid", type=int, default=16, help="feature grid side")
    parser.add_argument("--channels", type=int, default=720,
                        help="expected concatenated channel count")
    parser.add_argument("--split", choices=["train", "test"], default="test")
    parser.add_argument("--confetti", action="store_true",
                        help="paste synthetic confetti anomalies")
    parser.add_argument("--confetti-count", type=int, default=8)
    parser.add_argument("--confetti-min", type=int, default=4)
    parser.add_argument("--confetti-max", type=int, default=16)
    parser.add_argument("--confetti-color", choices=["solid", "speckle"], default="solid")
    parser.add_argument("--seed", type=int, default=0)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    config = ExportConfig(
        backbone=args.backbone,
        weights=args.weights,
        image_size=args.image_size,
        grid_h=args.grid,
        grid_w=args.grid,
        expected_channels=args.channels,
        image_dir=args.images,
        mask_dir=args.masks,
        out_dir=args.out,
        split=args.split,
        confetti=args.confetti,
        confetti_params=ConfettiConfig(count=args.confetti_count,
                                       min_size=args.confetti_min,
                                       max_size=args.confetti_max,
                                       color_mode=args.confetti_color),
        seed=args.seed,
    )
    try:
        entries = export_dataset(config)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"exported {len(entries)} samples to {config.out_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
