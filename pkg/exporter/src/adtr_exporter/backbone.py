"""Frozen backbone wrapper: multi-scale feature extraction.

The stage-to-layer grouping ships as data (layers.json): a layer is the
run of consecutive stages producing one feature size, identified by its
final stage. Weights come from torchvision's ImageNet checkpoints when
reachable, a local state-dict file, or a seeded random initialization
for offline runs (deterministic, but obviously not semantically
meaningful).
"""

from __future__ import annotations

import json
from importlib import resources

import numpy as np
import torch
import torch.nn.functional as F
import torchvision


def layer_table() -> dict:
    with resources.files("adtr_exporter").joinpath("layers.json").open("r") as fh:
        return json.load(fh)


def _efficientnet_stages(model):
    return list(model.features)


def _resnet_stages(model):
    stem = torch.nn.Sequential(model.conv1, model.bn1, model.relu, model.maxpool)
    return [stem, model.layer1, model.layer2, model.layer3, model.layer4]


_BUILDERS = {
    "efficientnet_b4": (torchvision.models.efficientnet_b4,
                        torchvision.models.EfficientNet_B4_Weights.IMAGENET1K_V1,
                        _efficientnet_stages),
    "resnet18": (torchvision.models.resnet18,
                 torchvision.models.ResNet18_Weights.IMAGENET1K_V1,
                 _resnet_stages),
}


class Backbone:
    def __init__(self, name: str, weights: str = "pretrained", seed: int = 0):
        if name not in _BUILDERS:
            raise ValueError(f"unknown backbone {name!r}, expected one of {sorted(_BUILDERS)}")
        table = layer_table()[name]
        self.name = name
        self.stage_indices = table["stage_indices"]
        self.channels = table["channels"]
        self.mean = table["preprocess"]["mean"]
        self.std = table["preprocess"]["std"]

        builder, pretrained, to_stages = _BUILDERS[name]
        if weights == "pretrained":
            model = builder(weights=pretrained)
        elif weights == "random":
            torch.manual_seed(seed)
            model = builder(weights=None)
        else:
            model = builder(weights=None)
            state = torch.load(weights, map_location="cpu", weights_only=True)
            model.load_state_dict(state)
        model.eval()
        for p in model.parameters():
            p.requires_grad_(False)
        self._stages = to_stages(model)

    def preprocess(self, image: np.ndarray) -> torch.Tensor:
        """H x W x 3 uint8 to a normalized 1 x 3 x H x W tensor."""
        x = torch.tensor(image).permute(2, 0, 1).float() / 255.0
        mean = torch.tensor(self.mean).view(3, 1, 1)
        std = torch.tensor(self.std).view(3, 1, 1)
        return ((x - mean) / std).unsqueeze(0)

    @torch.no_grad()
    def multiscale_features(self, image: np.ndarray, grid_h: int, grid_w: int) -> np.ndarray:
        """Concatenated layer features resized to the grid; C x H x W float32."""
        x = self.preprocess(image)
        wanted = set(self.stage_indices)
        collected = []
        for i, stage in enumerate(self._stages):
            x = stage(x)
            if i in wanted:
                resized = F.interpolate(x, size=(grid_h, grid_w), mode="bilinear",
                                        align_corners=False)
                collected.append(resized)
            if i >= max(wanted):
                break
        features = torch.cat(collected, dim=1).squeeze(0)
        return features.numpy().astype(np.float32)
