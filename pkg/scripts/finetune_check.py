"""Dev-only: verify the anomaly-available fine-tuning protocol end to end."""
import json
import os
import tempfile
import time

import numpy as np

from adtr import autograd as ag
from adtr import synthetic, training, evaluation, losses
from adtr.features import load_sample
from adtr.losses import LossConfig
from adtr.model import ModelConfig, forward_tokens, tokenize
from adtr.training import TrainConfig, fit

tmp = tempfile.mkdtemp()
gen = synthetic.GeneratorConfig()
manifest = synthetic.build_benchmark(gen, tmp)
ft_dir = os.path.join(tmp, "ft")
ft_manifest = synthetic.build_finetune_set(gen, ft_dir, n_anomalous=25)

mc = ModelConfig()


def mean_phi_on_anomalous_pixels(params):
    total, count = 0.0, 0
    for entry in ft_manifest.split("train"):
        record = load_sample(os.path.join(ft_dir, entry.path))
        if not record.pixel_mask.any():
            continue
        tokens = ag.Tensor(tokenize(record.features, mc).astype(np.float32))
        f_hat = forward_tokens(tokens, params, mc)
        phi = losses.pseudo_huber_tokens(ag.sub(tokens, f_hat)).numpy()
        mask = record.pixel_mask.reshape(-1).astype(bool)
        total += float(phi[mask].sum())
        count += int(mask.sum())
    return total / count


t0 = time.time()
params, _ = fit(manifest, tmp, mc, TrainConfig(seed=0))
base_report = evaluation.evaluate(manifest, tmp, params, mc, LossConfig())
phi_before = mean_phi_on_anomalous_pixels(params)
print(json.dumps({"stage": "normal-only", "train_s": round(time.time() - t0, 1),
                  "pixel_auroc": round(base_report.pixel_auroc, 4),
                  "image_auroc": round(base_report.image_auroc, 4),
                  "phi_anom": round(phi_before, 5)}), flush=True)

for epochs, lr in [(60, 1e-3)]:
    t0 = time.time()
    ft_config = TrainConfig(epochs=epochs, lr_drop_epoch=epochs * 2 // 3, lr_initial=lr,
                            loss_kind="px", seed=0)
    # fit mutates params in place via the optimizer; give it a fresh copy
    from adtr.model import load_checkpoint, save_checkpoint
    ck = os.path.join(tmp, "base.adtrck")
    save_checkpoint(params, mc, ck)
    loaded, _ = load_checkpoint(ck)
    tuned, trace = fit(ft_manifest, ft_dir, mc, ft_config, initial_params=loaded)
    tuned_report = evaluation.evaluate(manifest, tmp, tuned, mc, LossConfig())
    phi_after = mean_phi_on_anomalous_pixels(tuned)
    print(json.dumps({"stage": f"finetune-px-{epochs}ep-lr{lr}",
                      "train_s": round(time.time() - t0, 1),
                      "pixel_auroc": round(tuned_report.pixel_auroc, 4),
                      "image_auroc": round(tuned_report.image_auroc, 4),
                      "phi_anom_before": round(phi_before, 5),
                      "phi_anom_after": round(phi_after, 5),
                      "phi_increased": phi_after > phi_before,
                      "auroc_retained": tuned_report.pixel_auroc >= base_report.pixel_auroc - 0.01,
                      }), flush=True)
