"""Seeded feature-space benchmark with localized, orthogonal anomalies.

Normal samples live near a fixed low-rank channel subspace, mixed by
smooth low-frequency spatial coefficient fields plus isotropic noise.
Anomalous samples displace one rectangular patch along a direction
orthogonal to that subspace, so a detector that models the normal
structure can separate them while the displacement stays invisible to
any per-channel statistic.

All draws are deterministic in (seed, index); generation is a pure
function of the config and may run in parallel.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from adtr.errors import AdtrError
from adtr.features import (
    LABEL_ANOMALOUS,
    LABEL_NORMAL,
    SPLIT_TEST,
    SPLIT_TRAIN,
    DatasetManifest,
    FeatureMap,
    ManifestEntry,
    SampleRecord,
    save_sample,
)

# substream tags so every draw category has its own deterministic stream
_STREAM_BASIS = 0
_STREAM_NORMAL = 1
_STREAM_ANOM_BASE = 2
_STREAM_ANOM_GEO = 3
_STREAM_FT_BASE = 4
_STREAM_FT_GEO = 5

_N_FREQ = 3  # low-frequency separable profiles per spatial axis


@dataclass(frozen=True)
class GeneratorConfig:
    channels: int = 32
    height: int = 16
    width: int = 16
    n_train: int = 200
    n_test_normal: int = 50
    n_test_anomalous: int = 50
    basis_rank: int = 4
    noise_std: float = 0.15
    anomaly_patch: tuple[int, int] = (3, 6)
    anomaly_shift: float = 1.0
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.anomaly_patch
        if not 1 <= lo <= hi or hi > min(self.height, self.width):
            raise AdtrError(f"anomaly_patch {self.anomaly_patch} does not fit a {self.height}x{self.width} grid")
        if self.noise_std < 0:
            raise AdtrError("noise_std must be >= 0")
        if not 1 <= self.basis_rank <= self.channels:
            raise AdtrError("basis_rank must lie in [1, channels]")


def normal_basis(config: GeneratorConfig) -> np.ndarray:
    """Orthonormal channel basis (C x rank), fixed for a given seed."""
    rng = np.random.default_rng([config.seed, _STREAM_BASIS])
    q, _ = np.linalg.qr(rng.standard_normal((config.channels, config.channels)))
    return q[:, : config.basis_rank]


def _coefficient_fields(rng: np.random.Generator, rank: int, h: int, w: int) -> np.ndarray:
    """Smooth per-basis spatial mixing fields from separable cosine profiles."""
    ph = np.cos(np.pi * np.arange(_N_FREQ)[:, None] * (np.arange(h) + 0.5) / h)
    pw = np.cos(np.pi * np.arange(_N_FREQ)[:, None] * (np.arange(w) + 0.5) / w)
    amp = 1.0 / (1.0 + np.add.outer(np.arange(_N_FREQ), np.arange(_N_FREQ)))
    coeffs = rng.standard_normal((rank, _N_FREQ, _N_FREQ)) * amp
    return np.einsum("jpq,ph,qw->jhw", coeffs, ph, pw)


def _normal_values(config: GeneratorConfig, rng: np.random.Generator) -> np.ndarray:
    basis = normal_basis(config)
    fields = _coefficient_fields(rng, config.basis_rank, config.height, config.width)
    values = np.einsum("cj,jhw->chw", basis, fields)
    if config.noise_std > 0:
        values = values + config.noise_std * rng.standard_normal(values.shape)
    return values.astype(np.float32)


def gen_normal(config: GeneratorConfig, index: int) -> SampleRecord:
    """Deterministic normal sample: zero mask, label 0."""
    if index >= config.n_train + config.n_test_normal:
        raise AdtrError(f"normal index {index} out of range")
    rng = np.random.default_rng([config.seed, _STREAM_NORMAL, index])
    return SampleRecord(
        features=FeatureMap(_normal_values(config, rng)),
        pixel_mask=np.zeros((config.height, config.width), dtype=np.uint8),
        image_label=0,
        sample_id=f"normal_{index:04d}",
    )


def _off_basis_direction(basis: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    c, rank = basis.shape
    if rank >= c:
        raise AdtrError("anomaly direction needs basis_rank < channels")
    while True:
        g = rng.standard_normal(c)
        v = g - basis @ (basis.T @ g)
        norm = np.linalg.norm(v)
        if norm > 1e-6:
            return v / norm


def _gen_anomalous_streams(config: GeneratorConfig, index: int,
                           base_stream: int, geo_stream: int, sample_id: str) -> SampleRecord:
    base_rng = np.random.default_rng([config.seed, base_stream, index])
    values = _normal_values(config, base_rng)

    geo_rng = np.random.default_rng([config.seed, geo_stream, index])
    lo, hi = config.anomaly_patch
    side_h = int(geo_rng.integers(lo, hi + 1))
    side_w = int(geo_rng.integers(lo, hi + 1))
    top = int(geo_rng.integers(0, config.height - side_h + 1))
    left = int(geo_rng.integers(0, config.width - side_w + 1))
    direction = _off_basis_direction(normal_basis(config), geo_rng)

    values = values.astype(np.float64)
    values[:, top:top + side_h, left:left + side_w] += config.anomaly_shift * direction[:, None, None]
    mask = np.zeros((config.height, config.width), dtype=np.uint8)
    mask[top:top + side_h, left:left + side_w] = 1
    return SampleRecord(features=FeatureMap(values.astype(np.float32)),
                        pixel_mask=mask, image_label=1, sample_id=sample_id)


def gen_anomalous(config: GeneratorConfig, index: int) -> SampleRecord:
    """Normal draw with one patch displaced off the normal subspace; label 1."""
    if index >= config.n_test_anomalous:
        raise AdtrError(f"anomalous index {index} out of range")
    return _gen_anomalous_streams(config, index, _STREAM_ANOM_BASE, _STREAM_ANOM_GEO,
                                  f"anomalous_{index:04d}")


def subspace_scores(values: np.ndarray, basis: np.ndarray) -> np.ndarray:
    """Distance of each position's feature vector to the normal subspace.

    Serves as the benchmark solvability oracle: any model failure below
    this detector's accuracy is a model bug, not a data artifact.
    """
    c = values.shape[0]
    flat = values.reshape(c, -1)
    residual = flat - basis @ (basis.T @ flat)
    return np.linalg.norm(residual, axis=0).reshape(values.shape[1:])


def build_benchmark(config: GeneratorConfig, out_dir: str | os.PathLike) -> DatasetManifest:
    """Write the full benchmark; train carries only normal samples."""
    out = os.fspath(out_dir)
    os.makedirs(out, exist_ok=True)
    entries = []

    def emit(record: SampleRecord, split: str, label: str) -> None:
        path = f"{record.sample_id}.adtrft"
        save_sample(record, os.path.join(out, path))
        entries.append(ManifestEntry(path=path, split=split, label=label))

    for i in range(config.n_train):
        emit(gen_normal(config, i), SPLIT_TRAIN, LABEL_NORMAL)
    for i in range(config.n_train, config.n_train + config.n_test_normal):
        emit(gen_normal(config, i), SPLIT_TEST, LABEL_NORMAL)
    for i in range(config.n_test_anomalous):
        emit(gen_anomalous(config, i), SPLIT_TEST, LABEL_ANOMALOUS)

    manifest = DatasetManifest(entries=entries, seed=config.seed, notes="synthetic benchmark")
    manifest.save(os.path.join(out, "manifest.tsv"))
    return manifest


def build_finetune_set(config: GeneratorConfig, out_dir: str | os.PathLike,
                       n_anomalous: int = 25) -> DatasetManifest:
    """Anomaly-available training split: the train normals plus fresh
    synthesized anomalies (masks included), mirroring the protocol of
    augmenting the normal train set with synthetic defects."""
    out = os.fspath(out_dir)
    os.makedirs(out, exist_ok=True)
    entries = []
    for i in range(config.n_train):
        record = gen_normal(config, i)
        path = f"{record.sample_id}.adtrft"
        save_sample(record, os.path.join(out, path))
        entries.append(ManifestEntry(path=path, split=SPLIT_TRAIN, label=LABEL_NORMAL))
    for i in range(n_anomalous):
        record = _gen_anomalous_streams(config, i, _STREAM_FT_BASE, _STREAM_FT_GEO,
                                        f"ft_anomalous_{i:04d}")
        path = f"{record.sample_id}.adtrft"
        save_sample(record, os.path.join(out, path))
        entries.append(ManifestEntry(path=path, split=SPLIT_TRAIN, label=LABEL_ANOMALOUS))
    manifest = DatasetManifest(entries=entries, seed=config.seed, notes="finetune split")
    manifest.save(os.path.join(out, "manifest.tsv"))
    return manifest
