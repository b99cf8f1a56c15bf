"""Finite-difference verification of analytic gradients.

The oracle is central differences in 64-bit precision, independent of the
adjoint code it checks: it only re-runs forward evaluations at perturbed
inputs. Reported error is the largest absolute deviation normalized by
the largest finite-difference magnitude of that input (with a floor of 1,
so near-zero gradients are compared absolutely).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from adtr import autograd as ag

FD_STEP = 1e-5


def numeric_gradient(f: Callable[[Sequence[ag.Tensor]], ag.Tensor],
                     inputs: Sequence[ag.Tensor], wrt: int, step: float = FD_STEP) -> np.ndarray:
    """Central-difference gradient of a scalar-valued function of tensors."""
    base = [t.data.copy() for t in inputs]
    grad = np.zeros_like(base[wrt])
    flat = grad.reshape(-1)
    for i in range(flat.size):
        for sign in (+1.0, -1.0):
            probe = [b.copy() for b in base]
            probe[wrt].reshape(-1)[i] += sign * step
            val = f([ag.Tensor(p, requires_grad=False) for p in probe]).item()
            flat[i] += sign * val
    return grad / (2.0 * step)


def gradient_error(f: Callable[[Sequence[ag.Tensor]], ag.Tensor],
                   inputs: Sequence[ag.Tensor], step: float = FD_STEP) -> float:
    """Max normalized deviation between analytic and numeric gradients."""
    tracked = [ag.Tensor(t.data.copy(), requires_grad=True) for t in inputs]
    loss = f(tracked)
    ag.backward(loss)
    worst = 0.0
    for i, t in enumerate(tracked):
        numeric = numeric_gradient(f, inputs, i, step)
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        denom = max(np.abs(numeric).max(), 1.0)
        worst = max(worst, float(np.abs(analytic - numeric).max() / denom))
    return worst


def _nudge_off_kinks(arr: np.ndarray, margin: float = 1e-3) -> np.ndarray:
    """Move entries away from 0 so relu/abs kinks cannot straddle the FD step."""
    near = np.abs(arr) < margin
    return np.where(near, np.where(arr >= 0, arr + 2 * margin, arr - 2 * margin), arr)


@dataclass
class CheckResult:
    name: str
    max_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tolerance


def _op_cases(rng: np.random.Generator) -> list[tuple[str, Callable, list[np.ndarray]]]:
    def randn(*shape):
        return rng.standard_normal(shape)

    a23 = _nudge_off_kinks(randn(2, 3))
    b34 = randn(3, 4)
    s3 = randn(2, 3, 4)
    t3 = randn(2, 4, 3)
    pos = np.abs(randn(2, 3)) + 0.5
    vec = randn(7)
    gain = randn(4) * 0.5 + 1.0
    bias4 = randn(4) * 0.1

    return [
        ("matmul", lambda x: ag.mean_all(ag.matmul(x[0], x[1])), [a23, b34]),
        ("matmul_stacked", lambda x: ag.mean_all(ag.matmul(x[0], x[1])), [s3, t3]),
        ("transpose", lambda x: ag.mean_all(ag.square(ag.transpose(x[0]))), [a23]),
        ("reshape", lambda x: ag.mean_all(ag.square(ag.reshape(x[0], (3, 2)))), [a23]),
        ("linear", lambda x: ag.mean_all(ag.linear(x[0], x[1], x[2])), [a23, b34, bias4]),
        ("softmax_rows", lambda x: ag.mean_all(ag.mul(ag.softmax_rows(x[0]), x[1])), [randn(3, 5), randn(3, 5)]),
        ("layer_norm", lambda x: ag.mean_all(ag.square(ag.layer_norm(x[0], x[1], x[2]))), [randn(3, 4), gain, bias4]),
        ("add", lambda x: ag.mean_all(ag.square(ag.add(x[0], x[1]))), [a23, randn(2, 3)]),
        ("add_bias", lambda x: ag.mean_all(ag.square(ag.add(x[0], x[1]))), [a23, randn(3)]),
        ("sub", lambda x: ag.mean_all(ag.square(ag.sub(x[0], x[1]))), [a23, randn(2, 3)]),
        ("mul", lambda x: ag.mean_all(ag.mul(x[0], x[1])), [a23, randn(2, 3)]),
        ("scale", lambda x: ag.mean_all(ag.scale(x[0], -1.7)), [a23]),
        ("add_scalar", lambda x: ag.mean_all(ag.square(ag.add_scalar(x[0], 0.3))), [a23]),
        ("relu", lambda x: ag.mean_all(ag.relu(x[0])), [a23]),
        ("exp", lambda x: ag.mean_all(ag.exp(x[0])), [a23]),
        ("log", lambda x: ag.mean_all(ag.log(x[0])), [pos]),
        ("sqrt", lambda x: ag.mean_all(ag.sqrt(x[0])), [pos]),
        ("square", lambda x: ag.mean_all(ag.square(x[0])), [a23]),
        ("abs", lambda x: ag.mean_all(ag.absolute(x[0])), [a23]),
        ("mean_all", lambda x: ag.mean_all(ag.square(x[0])), [a23]),
        ("mean_axis", lambda x: ag.mean_all(ag.square(ag.mean_axis(x[0], 0))), [a23]),
        ("sum_axis", lambda x: ag.mean_all(ag.square(ag.sum_axis(x[0], 1))), [a23]),
        ("l2_norm_axis", lambda x: ag.mean_all(ag.l2_norm_axis(x[0], 0)), [pos]),
        ("concat_axis", lambda x: ag.mean_all(ag.square(ag.concat_axis([x[0], x[1]], 1))), [a23, randn(2, 2)]),
        ("topk_mean", lambda x: ag.topk_mean(x[0], 3), [vec]),
    ]


def check_ops(seed: int = 0, probes: int = 100, tolerance: float = 1e-4) -> list[CheckResult]:
    """Run every op through the finite-difference oracle at seeded probes."""
    results: dict[str, float] = {}
    for probe in range(probes):
        rng = np.random.default_rng([seed, probe])
        for name, fn, arrays in _op_cases(rng):
            err = gradient_error(fn, [ag.Tensor(a, dtype=np.float64) for a in arrays])
            results[name] = max(results.get(name, 0.0), err)
    return [CheckResult(name, err, tolerance) for name, err in results.items()]


def check_model(seed: int = 0, tolerance: float = 1e-3) -> list[CheckResult]:
    """Finite-difference check of the full reconstruction loss on a toy model."""
    from adtr import losses
    from adtr.model import ModelConfig, forward_tokens, init_params

    config = ModelConfig(in_channels=6, token_dim=4, n_encoder_layers=1, n_decoder_layers=1,
                         n_heads=2, ffn_hidden=8, height=2, width=2)
    params = init_params(config, seed=seed, dtype=np.float64)
    rng = np.random.default_rng([seed, 777])
    tokens = rng.standard_normal((config.token_count, config.in_channels))

    names = list(params.tensors)

    def loss_from(values: Sequence[ag.Tensor]) -> ag.Tensor:
        probe_params = params.with_tensors({n: v for n, v in zip(names, values)})
        f = ag.Tensor(tokens, dtype=np.float64)
        f_hat = forward_tokens(f, probe_params, config)
        return losses.loss_norm_tokens(f, f_hat)

    results = []
    base = [params.tensors[n] for n in names]
    tracked = [ag.Tensor(t.data.copy(), requires_grad=True) for t in base]
    ag.backward(loss_from(tracked))
    for i, name in enumerate(names):
        numeric = numeric_gradient(loss_from, base, i)
        analytic = tracked[i].grad if tracked[i].grad is not None else np.zeros_like(base[i].data)
        denom = max(np.abs(numeric).max(), 1.0)
        err = float(np.abs(analytic - numeric).max() / denom)
        results.append(CheckResult(f"model.{name}", err, tolerance))
    return results


def run_all(seed: int = 0, probes: int = 100) -> list[CheckResult]:
    return check_ops(seed=seed, probes=probes) + check_model(seed=seed)
