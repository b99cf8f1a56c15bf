"""Dev-only: the decisive 200-epoch 4-variant run on a candidate default."""
import json
import sys
import tempfile
import time

from adtr import synthetic, training, evaluation
from adtr.losses import LossConfig
from adtr.model import ModelConfig, VARIANTS
from adtr.synthetic import GeneratorConfig
from adtr.training import TrainConfig

noise, shift = float(sys.argv[1]), float(sys.argv[2])
tmp = tempfile.mkdtemp()
manifest = synthetic.build_benchmark(GeneratorConfig(noise_std=noise, anomaly_shift=shift), tmp)
print(json.dumps({"noise": noise, "shift": shift}), flush=True)

for variant in VARIANTS:
    mc = ModelConfig(variant=variant)
    tc = TrainConfig(seed=0)  # 200 epochs, drop 160, lr 3e-3
    t0 = time.time()
    params, trace = training.fit(manifest, tmp, mc, tc)
    report = evaluation.evaluate(manifest, tmp, params, mc, LossConfig())
    print(json.dumps({
        "variant": variant, "train_s": round(time.time() - t0, 1),
        "first_loss": round(trace[0][2], 4), "last_loss": round(trace[-1][2], 5),
        "image_auroc": round(report.image_auroc, 4),
        "pixel_auroc": round(report.pixel_auroc, 4),
    }), flush=True)
