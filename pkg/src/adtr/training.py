"""AdamW optimization and the two training protocols.

Normal-only fitting minimizes the reconstruction loss; anomaly-available
fine-tuning starts from a loaded checkpoint and minimizes the pixel-level
or image-level push-pull loss. Batch gradients are the arithmetic mean of
per-sample gradients, accumulated in a fixed order so a fixed seed gives
a bit-identical run.

Weight decay is decoupled (applied directly to the parameter, not through
the moments) and skipped for layer-norm parameters and both embeddings.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from adtr import autograd as ag
from adtr import losses
from adtr.errors import AdtrError
from adtr.features import SPLIT_TRAIN, DatasetManifest, load_sample
from adtr.losses import LossConfig
from adtr.model import ModelConfig, ModelParams, forward_tokens, init_params, save_checkpoint, tokenize

LOSS_KINDS = ("norm", "px", "img")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    lr_initial: float = 3e-3
    lr_drop_epoch: int = 160
    lr_drop_factor: float = 0.1
    weight_decay: float = 1e-4
    batch_size: int = 16
    beta1: float = 0.9
    beta2: float = 0.999
    adam_epsilon: float = 1e-8
    loss_kind: str = "norm"
    loss: LossConfig = field(default_factory=LossConfig)
    seed: int = 0

    def __post_init__(self):
        if self.loss_kind not in LOSS_KINDS:
            raise AdtrError(f"loss_kind must be one of {LOSS_KINDS}")
        if self.lr_drop_epoch > self.epochs:
            raise AdtrError("lr_drop_epoch must be <= epochs")
        for name in ("lr_initial", "lr_drop_factor", "beta1", "beta2", "adam_epsilon"):
            if getattr(self, name) <= 0:
                raise AdtrError(f"{name} must be positive")
        if self.weight_decay < 0 or self.batch_size < 1 or self.epochs < 0:
            raise AdtrError("invalid weight_decay, batch_size, or epochs")


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, params: ModelParams) -> "OptimizerState":
        return cls(m={n: np.zeros_like(t.data) for n, t in params.tensors.items()},
                   v={n: np.zeros_like(t.data) for n, t in params.tensors.items()})


def adamw_step(params: ModelParams, grads: dict[str, np.ndarray], state: OptimizerState,
               lr: float, config: TrainConfig) -> tuple[ModelParams, OptimizerState]:
    """One decoupled-weight-decay update, in place on params and state."""
    for name in params.tensors:
        if name not in grads or grads[name] is None:
            raise AdtrError(f"missing gradient for parameter {name!r}")
    state.step += 1
    t = state.step
    b1, b2 = config.beta1, config.beta2
    bias1 = 1.0 - b1 ** t
    bias2 = 1.0 - b2 ** t
    for name, tensor in params.tensors.items():
        g = grads[name]
        state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        state.v[name] = b2 * state.v[name] + (1.0 - b2) * np.square(g)
        m_hat = state.m[name] / bias1
        v_hat = state.v[name] / bias2
        update = m_hat / (np.sqrt(v_hat) + config.adam_epsilon)
        if config.weight_decay > 0 and name not in params.no_decay:
            update = update + config.weight_decay * tensor.data
        tensor.data = (tensor.data - lr * update).astype(tensor.data.dtype)
    return params, state


def lr_at(epoch: int, config: TrainConfig) -> float:
    """Initial rate before the drop epoch, decayed at and after it."""
    if not 0 <= epoch < max(config.epochs, 1):
        raise AdtrError(f"epoch {epoch} outside [0, {config.epochs})")
    if epoch >= config.lr_drop_epoch:
        return config.lr_initial * config.lr_drop_factor
    return config.lr_initial


@dataclass
class TrainSample:
    tokens: np.ndarray
    mask_flat: np.ndarray | None
    label: int | None
    sample_id: str


def load_train_samples(manifest: DatasetManifest, data_root: str,
                       model_config: ModelConfig, loss_kind: str) -> list[TrainSample]:
    entries = manifest.split(SPLIT_TRAIN)
    if not entries:
        raise AdtrError("manifest train split is empty")
    samples = []
    for entry in entries:
        record = load_sample(os.path.join(data_root, entry.path))
        if loss_kind == "px" and record.pixel_mask is None:
            raise AdtrError(f"pixel-level loss needs a mask on every train sample; {entry.path} has none")
        if loss_kind == "img" and record.image_label is None:
            raise AdtrError(f"image-level loss needs a label on every train sample; {entry.path} has none")
        samples.append(TrainSample(
            tokens=tokenize(record.features, model_config).astype(np.float32),
            mask_flat=None if record.pixel_mask is None else record.pixel_mask.reshape(-1),
            label=record.image_label,
            sample_id=record.sample_id,
        ))
    return samples


def sample_loss(sample: TrainSample, params: ModelParams, model_config: ModelConfig,
                train_config: TrainConfig) -> ag.Tensor:
    f = ag.Tensor(sample.tokens)
    f_hat = forward_tokens(f, params, model_config)
    if train_config.loss_kind == "norm":
        return losses.loss_norm_tokens(f, f_hat)
    phi = losses.pseudo_huber_tokens(ag.sub(f, f_hat))
    cfg = train_config.loss
    if train_config.loss_kind == "px":
        return losses.loss_px(phi, sample.mask_flat, cfg.alpha, cfg.epsilon)
    q = losses.topk_score(phi, cfg.k)
    return losses.loss_img(q, sample.label, cfg.alpha, cfg.epsilon)


def fit(manifest: DatasetManifest, data_root: str, model_config: ModelConfig,
        train_config: TrainConfig, checkpoint_path: str | None = None,
        trace_path: str | None = None,
        initial_params: ModelParams | None = None) -> tuple[ModelParams, list[tuple[int, float, float]]]:
    """Train on the manifest's train split; returns params and the
    per-epoch (epoch, lr, mean_loss) trace."""
    samples = load_train_samples(manifest, data_root, model_config, train_config.loss_kind)
    params = initial_params if initial_params is not None else init_params(
        model_config, seed=train_config.seed)
    state = OptimizerState.zeros_like(params)
    rng = np.random.default_rng(train_config.seed)
    trace: list[tuple[int, float, float]] = []

    trace_fh = open(trace_path, "a", encoding="utf-8") if trace_path else None
    try:
        for epoch in range(train_config.epochs):
            lr = lr_at(epoch, train_config)
            order = rng.permutation(len(samples))
            epoch_loss = 0.0
            for start in range(0, len(order), train_config.batch_size):
                batch = [samples[i] for i in order[start:start + train_config.batch_size]]
                for tensor in params.tensors.values():
                    tensor.zero_grad()
                total = None
                for sample in batch:
                    term = sample_loss(sample, params, model_config, train_config)
                    total = term if total is None else ag.add(total, term)
                batch_mean = ag.scale(total, 1.0 / len(batch))
                ag.backward(batch_mean)
                epoch_loss += batch_mean.item() * len(batch)
                grads = {n: t.grad for n, t in params.tensors.items()}
                adamw_step(params, grads, state, lr, train_config)
            mean_loss = epoch_loss / len(samples)
            trace.append((epoch, lr, mean_loss))
            if trace_fh is not None:
                trace_fh.write(f"{epoch}\t{lr:.10g}\t{mean_loss:.10g}\n")
    finally:
        if trace_fh is not None:
            trace_fh.close()

    if checkpoint_path is not None:
        save_checkpoint(params, model_config, checkpoint_path)
    return params, trace
