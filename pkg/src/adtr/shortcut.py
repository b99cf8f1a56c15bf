"""Runnable head-to-head of two 1-layer reconstructors on normal tokens.

The affine model x_hat = x w + b can satisfy its training objective by
regressing w toward the identity, after which it reconstructs anomalies
just as well and the detection signal dies. The attention model
x_hat = softmax(q x^T / sqrt(C)) x routes reconstruction through a
learned query that is tied to normal-sample statistics, so anomalous
tokens reconstruct worse. The experiment trains both on the same normal
data and compares their anomalous/normal error ratios.

Normal tokens live in a rank C/4 subspace: position u carries a fixed
mean vector (its identity, which is what a learned query can lock onto),
plus within-subspace variation and isotropic noise. Positions come in
twin pairs (u, u + K/2) sharing a mean, so attention can reconstruct a
token from redundant context instead of copying it, while the per-token
affine map cannot see context at all. The noise makes the pooled token
covariance full rank, which is exactly what lets the affine shortcut
converge to the identity. Anomalies displace a contiguous block of at
most K/4 tokens (never both twins) orthogonally to the subspace. All
draws are deterministic in the config seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from adtr import autograd as ag
from adtr.errors import AdtrError
from adtr.training import OptimizerState, TrainConfig, adamw_step
from adtr.model import ModelParams

MEAN_SCALE = 2.0     # spread of the fixed per-position token means
WITHIN_STD = 0.1     # per-sample variation inside the subspace
NOISE_STD = 0.1      # isotropic full-space noise
ANOMALY_SHIFT = 2.0

_STREAM_BASIS = 0
_STREAM_NORMAL = 1
_STREAM_ANOMALY = 2
_STREAM_MEANS = 3


@dataclass(frozen=True)
class ShortcutConfig:
    n_tokens: int = 16          # K
    channels: int = 16          # C
    n_normal_train: int = 64
    n_normal_test: int = 32
    n_anomalous_test: int = 32
    steps: int = 4000
    lr: float = 0.02
    seed: int = 0

    def __post_init__(self):
        for name in ("n_tokens", "channels", "n_normal_train", "n_normal_test",
                     "n_anomalous_test", "steps", "lr"):
            if getattr(self, name) <= 0:
                raise AdtrError(f"{name} must be positive")


def _basis(config: ShortcutConfig, rank: int) -> np.ndarray:
    rng = np.random.default_rng([config.seed, _STREAM_BASIS])
    q, _ = np.linalg.qr(rng.standard_normal((config.channels, config.channels)))
    return q[:, :rank]


def _token_means(config: ShortcutConfig, rank: int) -> np.ndarray:
    """Fixed K x rank coordinates; positions u and u + K/2 are twins."""
    rng = np.random.default_rng([config.seed, _STREAM_MEANS])
    half = (config.n_tokens + 1) // 2
    base = MEAN_SCALE * rng.standard_normal((half, rank))
    return np.concatenate([base, base], axis=0)[: config.n_tokens]


def make_normal_batch(config: ShortcutConfig, n: int, rank: int | None = None,
                      stream: int = _STREAM_NORMAL, offset: int = 0) -> np.ndarray:
    """n samples of K x C tokens from the rank-limited normal distribution."""
    rank = rank if rank is not None else max(config.channels // 4, 1)
    basis = _basis(config, rank)
    means = _token_means(config, rank)
    rng = np.random.default_rng([config.seed, stream, offset])
    coeffs = means[None, :, :] + WITHIN_STD * rng.standard_normal((n, config.n_tokens, rank))
    tokens = coeffs @ basis.T
    return tokens + NOISE_STD * rng.standard_normal(tokens.shape)


def make_anomalous_batch(config: ShortcutConfig, n: int, rank: int | None = None) -> np.ndarray:
    """Normal draws with a block of tokens displaced off the normal subspace."""
    rank = rank if rank is not None else max(config.channels // 4, 1)
    if rank >= config.channels:
        raise AdtrError("anomalies need rank < channels")
    tokens = make_normal_batch(config, n, rank=rank, stream=_STREAM_ANOMALY)
    basis = _basis(config, rank)
    rng = np.random.default_rng([config.seed, _STREAM_ANOMALY, 1])
    n_displaced = max(config.n_tokens // 4, 1)
    for i in range(n):
        g = rng.standard_normal(config.channels)
        v = g - basis @ (basis.T @ g)
        v /= np.linalg.norm(v)
        start = int(rng.integers(0, config.n_tokens - n_displaced + 1))
        tokens[i, start:start + n_displaced, :] += ANOMALY_SHIFT * v
    return tokens


def _stack_queries(q: ag.Tensor, n: int) -> ag.Tensor:
    one = ag.reshape(q, (1,) + tuple(q.shape))
    return ag.concat_axis([one] * n, axis=0)


def reconstruct_affine(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    return x @ w + b


def reconstruct_attention(x: np.ndarray, q: np.ndarray) -> np.ndarray:
    c = x.shape[-1]
    scores = q @ np.swapaxes(x, -1, -2) / np.sqrt(c)
    scores = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(scores)
    return (e / e.sum(axis=-1, keepdims=True)) @ x


def attention_rows(x: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Attention maps (one K x K matrix per sample) for analysis."""
    c = x.shape[-1]
    scores = q @ np.swapaxes(x, -1, -2) / np.sqrt(c)
    scores = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(scores)
    return e / e.sum(axis=-1, keepdims=True)


def mean_row_entropy(attn: np.ndarray) -> float:
    safe = np.clip(attn, 1e-12, 1.0)
    return float(-(safe * np.log(safe)).sum(axis=-1).mean())


def _adam_minimize(tensors: dict[str, ag.Tensor], loss_fn, steps: int, lr: float) -> list[float]:
    params = ModelParams(tensors=tensors, no_decay=frozenset(tensors))
    opt = TrainConfig(epochs=1, lr_initial=lr, lr_drop_epoch=1, weight_decay=0.0)
    state = OptimizerState.zeros_like(params)
    trace = []
    for _ in range(steps):
        for t in tensors.values():
            t.zero_grad()
        loss = loss_fn()
        ag.backward(loss)
        trace.append(loss.item())
        adamw_step(params, {n: t.grad for n, t in tensors.items()}, state, lr, opt)
    return trace


def train_affine(data: np.ndarray, config: ShortcutConfig) -> tuple[np.ndarray, np.ndarray, list[float]]:
    """Fit x_hat = x w + b to the normal batch by MSE; returns (w, b, trace)."""
    n, k, c = data.shape
    rng = np.random.default_rng([config.seed, 10])
    w = ag.Tensor((rng.uniform(-1, 1, (c, c)) / np.sqrt(c)).astype(np.float64), requires_grad=True)
    b = ag.Tensor(np.zeros(c), requires_grad=True)
    flat = ag.constant(data.reshape(n * k, c).astype(np.float64), dtype=np.float64)

    def loss_fn():
        return ag.mean_all(ag.square(ag.sub(ag.linear(flat, w, b), flat)))

    trace = _adam_minimize({"w": w, "b": b}, loss_fn, config.steps, config.lr)
    return w.numpy(), b.numpy(), trace


def train_query_attention(data: np.ndarray, config: ShortcutConfig) -> tuple[np.ndarray, list[float]]:
    """Fit the learned query of x_hat = softmax(q x^T / sqrt(C)) x by MSE.

    At test time the frozen query attends over the test sample's own
    tokens as keys and values.
    """
    n, k, c = data.shape
    rng = np.random.default_rng([config.seed, 11])
    q = ag.Tensor(rng.normal(0.0, 1.0, (k, c)), requires_grad=True)
    x = ag.constant(data.astype(np.float64), dtype=np.float64)
    xt = ag.transpose(x, (0, 2, 1))

    def loss_fn():
        scores = ag.scale(ag.matmul(_stack_queries(q, n), xt), 1.0 / np.sqrt(c))
        x_hat = ag.matmul(ag.softmax_rows(scores), x)
        return ag.mean_all(ag.square(ag.sub(x_hat, x)))

    trace = _adam_minimize({"q": q}, loss_fn, config.steps, config.lr)
    return q.numpy(), trace


@dataclass
class GapResult:
    mse_normal: float
    mse_anomalous: float
    infinite: bool

    @property
    def ratio(self) -> float | None:
        return None if self.infinite else self.mse_anomalous / self.mse_normal


def generalization_gap(reconstruct, normal_test: np.ndarray, anomalous_test: np.ndarray) -> GapResult:
    """Anomalous-over-normal mean reconstruction MSE; larger separates better."""
    if len(normal_test) == 0 or len(anomalous_test) == 0:
        raise AdtrError("both test sets must be non-empty")
    mse_n = float(np.mean(np.square(reconstruct(normal_test) - normal_test)))
    mse_a = float(np.mean(np.square(reconstruct(anomalous_test) - anomalous_test)))
    return GapResult(mse_normal=mse_n, mse_anomalous=mse_a, infinite=(mse_n == 0.0))


@dataclass
class ShortcutReport:
    config_echo: dict
    affine_ratio: float | None
    affine_ratio_infinite: bool
    attention_ratio: float | None
    attention_ratio_infinite: bool
    affine_identity_distance: float
    attention_mean_row_entropy: float
    affine_trace: list[float] = field(default_factory=list)
    attention_trace: list[float] = field(default_factory=list)

    def to_json(self) -> str:
        doc = {
            "config_echo": self.config_echo,
            "affine": {"ratio": self.affine_ratio, "ratio_infinite": self.affine_ratio_infinite,
                       "identity_distance": self.affine_identity_distance,
                       "trace": self.affine_trace},
            "attention": {"ratio": self.attention_ratio,
                          "ratio_infinite": self.attention_ratio_infinite,
                          "mean_row_entropy": self.attention_mean_row_entropy,
                          "trace": self.attention_trace},
        }
        return json.dumps(doc, indent=2) + "\n"


def run_experiment(config: ShortcutConfig, trace_stride: int = 50) -> ShortcutReport:
    """Train both reconstructors on the same normal data and compare gaps."""
    train = make_normal_batch(config, config.n_normal_train)
    normal_test = make_normal_batch(config, config.n_normal_test, offset=1)
    anomalous_test = make_anomalous_batch(config, config.n_anomalous_test)

    w, b, affine_trace = train_affine(train, config)
    q, attn_trace = train_query_attention(train, config)

    affine_gap = generalization_gap(lambda x: reconstruct_affine(x, w, b),
                                    normal_test, anomalous_test)
    attn_gap = generalization_gap(lambda x: reconstruct_attention(x, q),
                                  normal_test, anomalous_test)
    entropy = mean_row_entropy(attention_rows(normal_test, q))
    identity_distance = float(np.linalg.norm(w - np.eye(config.channels)))

    echo = {k: getattr(config, k) for k in ("n_tokens", "channels", "n_normal_train",
                                            "n_normal_test", "n_anomalous_test",
                                            "steps", "lr", "seed")}
    return ShortcutReport(
        config_echo=echo,
        affine_ratio=affine_gap.ratio, affine_ratio_infinite=affine_gap.infinite,
        attention_ratio=attn_gap.ratio, attention_ratio_infinite=attn_gap.infinite,
        affine_identity_distance=identity_distance,
        attention_mean_row_entropy=entropy,
        affine_trace=affine_trace[::trace_stride],
        attention_trace=attn_trace[::trace_stride],
    )
