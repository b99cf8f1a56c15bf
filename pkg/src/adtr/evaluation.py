"""AUROC metrics, run reports, and score-map export.

AUROC uses the rank statistic with average ranks for ties, which equals
the probability that a random positive outscores a random negative with
ties counted one half. Pixel-level AUROC is computed at feature
resolution, over the score maps of every mask-bearing test sample; the
report flags this resolution explicitly.

The JSON report contains only deterministic fields (timing is kept
in memory and never serialized), so a rerun with the same seed and
config is byte-identical.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from adtr import model as adtr_model
from adtr.errors import AdtrError, ShapeError
from adtr.features import LABEL_ANOMALOUS, LABEL_NORMAL, SPLIT_TEST, DatasetManifest, load_sample
from adtr.losses import LossConfig, image_score, score_map

PIXEL_RESOLUTION_NOTE = "feature-resolution"


def _average_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks; tied values share the mean of their rank range."""
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(len(values), dtype=np.float64)
    sorted_vals = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def auroc(scores, labels) -> float:
    """Probability a random positive outscores a random negative, ties at 1/2."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ShapeError(f"scores {scores.shape} and labels {labels.shape} must be equal-length vectors")
    if not np.isin(labels, (0, 1)).all():
        raise AdtrError("labels must be 0 or 1")
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise AdtrError(f"auroc needs both classes, got {n_pos} positives / {n_neg} negatives")
    ranks = _average_ranks(scores)
    return float((ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


@dataclass
class RunReport:
    config_echo: dict
    seed: int
    image_auroc: float
    pixel_auroc: float | None
    pixel_auroc_note: str
    per_sample: list[dict] = field(default_factory=list)
    timing_seconds: float | None = None  # in-memory only, never serialized

    def to_json(self) -> str:
        doc = {
            "config_echo": self.config_echo,
            "seed": self.seed,
            "image_auroc": self.image_auroc,
            "pixel_auroc": self.pixel_auroc,
            "pixel_auroc_note": self.pixel_auroc_note,
            "per_sample": self.per_sample,
        }
        return json.dumps(doc, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RunReport":
        doc = json.loads(text)
        return cls(config_echo=doc["config_echo"], seed=doc["seed"],
                   image_auroc=doc["image_auroc"], pixel_auroc=doc["pixel_auroc"],
                   pixel_auroc_note=doc["pixel_auroc_note"], per_sample=doc["per_sample"])

    def save(self, path: str | os.PathLike) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.to_json())


def _entry_label(entry, record) -> int:
    if record.image_label is not None:
        return record.image_label
    if entry.label == LABEL_ANOMALOUS:
        return 1
    if entry.label == LABEL_NORMAL:
        return 0
    raise AdtrError(f"sample {entry.path} is unlabeled at image level")


def evaluate(manifest: DatasetManifest, data_root: str, params: adtr_model.ModelParams,
             model_config: adtr_model.ModelConfig, loss_config: LossConfig,
             seed: int = 0, config_echo: dict | None = None) -> RunReport:
    """Score every test sample and aggregate image- and pixel-level AUROC."""
    entries = manifest.split(SPLIT_TEST)
    if not entries:
        raise AdtrError("manifest test split is empty")
    started = time.perf_counter()
    image_scores, image_labels, per_sample = [], [], []
    pixel_scores, pixel_labels = [], []
    for entry in entries:
        record = load_sample(os.path.join(data_root, entry.path))
        reconstruction = adtr_model.forward(record.features, params, model_config)
        d = record.features.values - reconstruction.values
        s = score_map(d)
        score = image_score(s, loss_config.pool_window)
        label = _entry_label(entry, record)
        image_scores.append(score)
        image_labels.append(label)
        per_sample.append({"id": record.sample_id, "score": score, "label": label})
        if record.pixel_mask is not None:
            pixel_scores.append(s.reshape(-1))
            pixel_labels.append(record.pixel_mask.reshape(-1))

    image_auroc = auroc(image_scores, image_labels)
    pixel_auroc = None
    note = PIXEL_RESOLUTION_NOTE
    if not pixel_scores:
        note = "omitted: no test sample carries a pixel mask"
    else:
        flat_scores = np.concatenate(pixel_scores)
        flat_labels = np.concatenate(pixel_labels)
        if flat_labels.min() == flat_labels.max():
            note = "omitted: pixel masks contain a single class"
        else:
            pixel_auroc = auroc(flat_scores, flat_labels)

    return RunReport(config_echo=config_echo or {}, seed=seed,
                     image_auroc=image_auroc, pixel_auroc=pixel_auroc,
                     pixel_auroc_note=note, per_sample=per_sample,
                     timing_seconds=time.perf_counter() - started)


def export_score_map(s: np.ndarray, path: str | os.PathLike) -> None:
    """Write a score map as binary 8-bit PGM, min-max normalized per map;
    constant maps export as all zeros."""
    s = np.asarray(s, dtype=np.float64)
    if s.ndim != 2:
        raise ShapeError(f"score map must be H x W, got {s.shape}")
    lo, hi = float(s.min()), float(s.max())
    if hi > lo:
        pixels = np.rint((s - lo) / (hi - lo) * 255.0).astype(np.uint8)
    else:
        pixels = np.zeros(s.shape, dtype=np.uint8)
    header = f"P5\n{s.shape[1]} {s.shape[0]}\n255\n".encode("ascii")
    try:
        with open(path, "wb") as fh:
            fh.write(header + pixels.tobytes())
    except OSError as exc:
        raise AdtrError(f"cannot write score map {path}: {exc}") from exc
