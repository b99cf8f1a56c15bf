"""Objectives and anomaly scores for feature reconstruction.

Conventions, pinned deliberately:
  * the reconstruction loss normalizes by H*W only, never by the channel
    count, so duplicating channels doubles the loss;
  * both means inside the pixel-level push-pull loss run over all H*W
    positions (the anomalous-weighted mean is not renormalized by the
    anomalous count);
  * log(1 - exp(-x)) arguments are clamped to [epsilon, 1) so a perfectly
    reconstructed anomalous region yields a large finite penalty instead
    of a divergence.

Loss functions operate on autograd tensors so they can drive training;
``score_map`` and ``image_score`` are inference-only and work on plain
arrays. All functions are pure.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from adtr import autograd as ag
from adtr.errors import AdtrError, ShapeError

# H x W (or flattened K) nonnegative arrays of per-position anomaly evidence
ScoreMap = np.ndarray
HuberMap = np.ndarray


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 0.003
    k: int = 20
    pool_window: int = 3
    epsilon: float = 1e-6

    def __post_init__(self):
        if self.alpha <= 0:
            raise AdtrError("alpha must be positive")
        if self.k < 1:
            raise AdtrError("k must be >= 1")
        if self.pool_window < 1 or self.pool_window % 2 == 0:
            raise AdtrError("pool_window must be odd and >= 1")
        if not 0 < self.epsilon < 1e-3:
            raise AdtrError("epsilon must lie in (0, 1e-3)")


def _as_tensor(x) -> ag.Tensor:
    # plain Tensor construction preserves an incoming float64 dtype
    return x if isinstance(x, ag.Tensor) else ag.Tensor(np.asarray(x))


def _check_same_shape(a: ag.Tensor, b: ag.Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{what} requires equal shapes, got {a.shape} and {b.shape}")


def loss_norm(f, f_hat) -> ag.Tensor:
    """Squared reconstruction error of a C x H x W map, divided by H*W."""
    f, f_hat = _as_tensor(f), _as_tensor(f_hat)
    _check_same_shape(f, f_hat, "loss_norm")
    if len(f.shape) != 3:
        raise ShapeError(f"loss_norm expects C x H x W, got {f.shape}")
    c = f.shape[0]
    return ag.scale(ag.mean_all(ag.square(ag.sub(f, f_hat))), float(c))


def loss_norm_tokens(f_tokens, f_hat_tokens) -> ag.Tensor:
    """Same objective on K x C token matrices (sum of squares over K)."""
    f, f_hat = _as_tensor(f_tokens), _as_tensor(f_hat_tokens)
    _check_same_shape(f, f_hat, "loss_norm_tokens")
    c = f.shape[1]
    return ag.scale(ag.mean_all(ag.square(ag.sub(f, f_hat))), float(c))


def diff_map(f, f_hat) -> ag.Tensor:
    """Signed elementwise difference between extracted and reconstructed features."""
    f, f_hat = _as_tensor(f), _as_tensor(f_hat)
    _check_same_shape(f, f_hat, "diff_map")
    return ag.sub(f, f_hat)


def score_map(d) -> ScoreMap:
    """Per-position Euclidean norm over channels of a C x H x W difference."""
    values = d.numpy() if isinstance(d, ag.Tensor) else np.asarray(d)
    if values.ndim != 3:
        raise ShapeError(f"score_map expects C x H x W, got {values.shape}")
    return np.sqrt(np.square(values).sum(axis=0))


def image_score(s: ScoreMap, pool_window: int) -> float:
    """Maximum of the mean-pooled score map (odd window, stride 1,
    edge-inclusive reflect padding)."""
    s = np.asarray(s)
    if s.ndim != 2:
        raise ShapeError(f"image_score expects H x W, got {s.shape}")
    if pool_window < 1 or pool_window % 2 == 0:
        raise AdtrError("pool_window must be odd and >= 1")
    if pool_window > 2 * min(s.shape):
        raise AdtrError(f"pool_window {pool_window} too large for map {s.shape}")
    if pool_window == 1:
        return float(s.max())
    pad = pool_window // 2
    padded = np.pad(s, pad, mode="symmetric")
    windows = np.lib.stride_tricks.sliding_window_view(padded, (pool_window, pool_window))
    return float(windows.mean(axis=(2, 3)).max())


def _pseudo_huber_from_mean_abs(m: ag.Tensor) -> ag.Tensor:
    return ag.add_scalar(ag.sqrt(ag.add_scalar(ag.square(m), 1.0)), -1.0)


def pseudo_huber(d) -> ag.Tensor:
    """Smooth per-position penalty sqrt(m^2 + 1) - 1 of the mean absolute
    channel difference m, for a C x H x W difference map."""
    d = _as_tensor(d)
    if len(d.shape) != 3:
        raise ShapeError(f"pseudo_huber expects C x H x W, got {d.shape}")
    return _pseudo_huber_from_mean_abs(ag.mean_axis(ag.absolute(d), 0))


def pseudo_huber_tokens(d_tokens) -> ag.Tensor:
    """Token-major variant: K x C difference map to a length-K penalty vector."""
    d = _as_tensor(d_tokens)
    if len(d.shape) != 2:
        raise ShapeError(f"pseudo_huber_tokens expects K x C, got {d.shape}")
    return _pseudo_huber_from_mean_abs(ag.mean_axis(ag.absolute(d), 1))


def _clamped_log_one_minus_exp_neg(t: ag.Tensor, epsilon: float) -> ag.Tensor:
    # 1 - exp(-t) lies in [0, 1) for t >= 0; only the lower clamp can bind
    arg = ag.add_scalar(ag.scale(ag.exp(ag.scale(t, -1.0)), -1.0), 1.0)
    clamped = ag.add_scalar(ag.relu(ag.add_scalar(arg, -epsilon)), epsilon)
    return ag.log(clamped)


def loss_px(phi: ag.Tensor, mask: np.ndarray, alpha: float, epsilon: float = 1e-6) -> ag.Tensor:
    """Push-pull objective over a penalty map and a same-shape binary mask.

    Pull: mean over all positions of (1 - y) * phi. Push: -alpha * log of
    (1 - exp(-mean over all positions of y * phi)), clamped before the log.
    With an all-zero mask the push term is the constant -alpha * log(epsilon),
    which moves no gradients.
    """
    phi = _as_tensor(phi)
    mask = np.asarray(mask)
    if tuple(mask.shape) != tuple(phi.shape):
        raise ShapeError(f"mask {mask.shape} does not match penalty map {phi.shape}")
    y = ag.Tensor(mask.astype(phi.dtype))
    inv_y = ag.Tensor((1 - mask).astype(phi.dtype))
    pull = ag.mean_all(ag.mul(phi, inv_y))
    anomalous_mean = ag.mean_all(ag.mul(phi, y))
    push = ag.scale(_clamped_log_one_minus_exp_neg(anomalous_mean, epsilon), -alpha)
    return ag.add(pull, push)


def topk_score(phi: ag.Tensor, k: int) -> ag.Tensor:
    """Mean of the k largest penalty values (ties break to the lowest index)."""
    phi = _as_tensor(phi)
    flat = ag.reshape(phi, (int(np.prod(phi.shape)),))
    return ag.topk_mean(flat, k)


def loss_img(q: ag.Tensor, label: int, alpha: float, epsilon: float = 1e-6) -> ag.Tensor:
    """Image-level push-pull: (1-y) q - alpha y log(1 - exp(-q)).

    For a normal image (y = 0) this is exactly q.
    """
    if label not in (0, 1):
        raise AdtrError(f"image label must be 0 or 1, got {label}")
    q = _as_tensor(q)
    if label == 0:
        return q
    return ag.scale(_clamped_log_one_minus_exp_neg(q, epsilon), -alpha)
