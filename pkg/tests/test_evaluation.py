"""AUROC against the O(n^2) pairwise oracle, report round-trips, PGM export."""

import os

import numpy as np
import pytest

from adtr.errors import AdtrError, ShapeError
from adtr.evaluation import RunReport, auroc, export_score_map


def pairwise_auroc(scores, labels):
    """Brute-force oracle: all positive/negative pairs, ties worth 1/2."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    wins = 0.0
    for p in pos:
        for n in neg:
            if p > n:
                wins += 1.0
            elif p == n:
                wins += 0.5
    return wins / (len(pos) * len(neg))


def test_perfect_separation():
    assert auroc([0.9, 0.8, 0.1], [1, 1, 0]) == 1.0


def test_all_ties_is_half():
    assert auroc([0.5, 0.5, 0.5, 0.5], [1, 0, 1, 0]) == 0.5


def test_matches_pairwise_oracle_on_seeded_inputs():
    rng = np.random.default_rng(123)
    for trial in range(50):
        n = int(rng.integers(4, 40))
        # quantized scores so ties actually occur
        scores = np.round(rng.standard_normal(n), 1)
        labels = rng.integers(0, 2, n)
        if labels.min() == labels.max():
            labels[0] = 1 - labels[0]
        expected = pairwise_auroc(scores, labels)
        assert abs(auroc(scores, labels) - expected) <= 1e-12


def test_monotone_transform_invariance():
    rng = np.random.default_rng(7)
    scores = np.round(rng.standard_normal(30), 1)
    labels = rng.integers(0, 2, 30)
    labels[0], labels[1] = 0, 1
    base = auroc(scores, labels)
    assert auroc(np.exp(scores), labels) == base
    assert auroc(scores * 10.0 + 1.0, labels) == base


def test_flipped_labels_complement():
    rng = np.random.default_rng(8)
    scores = np.round(rng.standard_normal(25), 1)
    labels = rng.integers(0, 2, 25)
    labels[0], labels[1] = 0, 1
    assert auroc(scores, labels) + auroc(scores, 1 - labels) == 1.0


def test_single_class_rejected():
    with pytest.raises(AdtrError, match="both classes"):
        auroc([0.1, 0.2], [1, 1])


def test_length_mismatch_rejected():
    with pytest.raises(ShapeError):
        auroc([0.1, 0.2], [1])


# ---------------------------------------------------------------------------
# reports


def test_report_round_trip():
    report = RunReport(config_echo={"epochs": "5"}, seed=3, image_auroc=0.9375,
                       pixel_auroc=0.875, pixel_auroc_note="feature-resolution",
                       per_sample=[{"id": "a", "score": 1.25, "label": 1}],
                       timing_seconds=1.0)
    back = RunReport.from_json(report.to_json())
    assert back.config_echo == report.config_echo
    assert back.seed == report.seed
    assert back.image_auroc == report.image_auroc
    assert back.pixel_auroc == report.pixel_auroc
    assert back.per_sample == report.per_sample
    assert back.to_json() == report.to_json()


def test_report_json_deterministic():
    def build():
        return RunReport(config_echo={"a": "1", "b": "2"}, seed=0, image_auroc=0.5,
                         pixel_auroc=None, pixel_auroc_note="omitted: no masks",
                         per_sample=[], timing_seconds=123.4)
    assert build().to_json() == build().to_json()
    assert "timing" not in build().to_json()


# ---------------------------------------------------------------------------
# score map export


def test_export_linear_normalization(tmp_path):
    path = tmp_path / "map.pgm"
    export_score_map(np.array([[0.0, 1.0], [2.0, 3.0]]), path)
    blob = path.read_bytes()
    assert blob.startswith(b"P5\n2 2\n255\n")
    assert list(blob[-4:]) == [0, 85, 170, 255]


def test_export_constant_map_is_zero(tmp_path):
    path = tmp_path / "flat.pgm"
    export_score_map(np.full((3, 3), 7.5), path)
    assert path.read_bytes().endswith(b"\x00" * 9)


def test_export_header_dimensions(tmp_path):
    path = tmp_path / "wide.pgm"
    export_score_map(np.zeros((2, 5)), path)
    assert path.read_bytes().startswith(b"P5\n5 2\n255\n")


# ---------------------------------------------------------------------------
# evaluate() over a real manifest


@pytest.fixture(scope="module")
def tiny_eval_setup(tmp_path_factory):
    from adtr import synthetic
    from adtr.model import ModelConfig, init_params

    root = tmp_path_factory.mktemp("eval_bench")
    gen = synthetic.GeneratorConfig(n_train=4, n_test_normal=4, n_test_anomalous=4)
    manifest = synthetic.build_benchmark(gen, root)
    config = ModelConfig(in_channels=32, token_dim=8, n_heads=2, ffn_hidden=16)
    params = init_params(config, seed=0)
    return manifest, str(root), params, config


def test_untrained_model_produces_complete_report(tiny_eval_setup):
    from adtr.evaluation import evaluate
    from adtr.losses import LossConfig

    manifest, root, params, config = tiny_eval_setup
    report = evaluate(manifest, root, params, config, LossConfig(), seed=5)
    assert 0.0 <= report.image_auroc <= 1.0
    assert report.pixel_auroc is not None
    assert len(report.per_sample) == 8
    assert report.seed == 5
    assert report.timing_seconds is not None
    assert report.pixel_auroc_note == "feature-resolution"


def test_evaluate_order_independent(tiny_eval_setup):
    from adtr.evaluation import evaluate
    from adtr.features import DatasetManifest
    from adtr.losses import LossConfig

    manifest, root, params, config = tiny_eval_setup
    forward_report = evaluate(manifest, root, params, config, LossConfig())
    reversed_manifest = DatasetManifest(entries=list(reversed(manifest.entries)))
    backward_report = evaluate(reversed_manifest, root, params, config, LossConfig())
    assert forward_report.image_auroc == backward_report.image_auroc
    assert forward_report.pixel_auroc == backward_report.pixel_auroc


def test_evaluate_without_masks_flags_omission(tiny_eval_setup, tmp_path):
    from adtr.evaluation import evaluate
    from adtr.features import (DatasetManifest, ManifestEntry, SampleRecord,
                               load_sample, save_sample)
    from adtr.losses import LossConfig

    manifest, root, params, config = tiny_eval_setup
    entries = []
    for i, entry in enumerate(manifest.split("test")):
        record = load_sample(os.path.join(root, entry.path))
        bare = SampleRecord(features=record.features, pixel_mask=None,
                            image_label=record.image_label, sample_id=record.sample_id)
        name = f"bare_{i}.adtrft"
        save_sample(bare, tmp_path / name)
        entries.append(ManifestEntry(name, "test", entry.label))
    report = evaluate(DatasetManifest(entries=entries), str(tmp_path), params, config,
                      LossConfig())
    assert report.pixel_auroc is None
    assert "omitted" in report.pixel_auroc_note
    assert 0.0 <= report.image_auroc <= 1.0
