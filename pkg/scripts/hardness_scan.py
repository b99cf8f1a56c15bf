"""Dev-only: find a benchmark hardness where the variant ordering is visible."""
import json
import sys
import tempfile

from adtr import synthetic, training, evaluation
from adtr.losses import LossConfig
from adtr.model import ModelConfig
from adtr.synthetic import GeneratorConfig
from adtr.training import TrainConfig

EPOCHS = int(sys.argv[1]) if len(sys.argv) > 1 else 100
VARIANTS = sys.argv[2].split(",") if len(sys.argv) > 2 else ["cnn_baseline", "no_attn", "attn_query"]

SCAN = [
    {"noise_std": 0.10, "anomaly_shift": 1.0},
    {"noise_std": 0.15, "anomaly_shift": 1.0},
    {"noise_std": 0.10, "anomaly_shift": 0.7},
    {"noise_std": 0.15, "anomaly_shift": 0.7},
]

for knobs in SCAN:
    tmp = tempfile.mkdtemp()
    gen = GeneratorConfig(**knobs)
    manifest = synthetic.build_benchmark(gen, tmp)
    row = dict(knobs)
    for variant in VARIANTS:
        mc = ModelConfig(variant=variant)
        tc = TrainConfig(epochs=EPOCHS, lr_drop_epoch=EPOCHS * 4 // 5, seed=0)
        params, trace = training.fit(manifest, tmp, mc, tc)
        report = evaluation.evaluate(manifest, tmp, params, mc, LossConfig())
        row[variant] = {"px": round(report.pixel_auroc, 4), "img": round(report.image_auroc, 4),
                        "loss": round(trace[-1][2], 5)}
    print(json.dumps(row), flush=True)
