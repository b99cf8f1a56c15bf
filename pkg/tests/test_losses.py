"""Loss and scoring oracles: every reference value below is either a
hand-derived scalar or a property that pins the exact normalizer."""

import numpy as np
import pytest

from adtr import autograd as ag
from adtr import losses
from adtr.errors import AdtrError, ShapeError
from adtr.losses import (
    LossConfig,
    diff_map,
    image_score,
    loss_img,
    loss_norm,
    loss_px,
    pseudo_huber,
    pseudo_huber_tokens,
    score_map,
    topk_score,
)

ALPHA = 0.003


def const3(values):
    return ag.constant(np.asarray(values, dtype=np.float64), dtype=np.float64)


# ---------------------------------------------------------------------------
# loss_norm


def test_loss_norm_zero_on_identity():
    f = const3(np.random.default_rng(0).standard_normal((3, 2, 2)))
    assert loss_norm(f, f).item() == 0.0


def test_loss_norm_two_channel_single_position():
    f = const3(np.ones((2, 1, 1)))
    f_hat = const3(np.zeros((2, 1, 1)))
    assert loss_norm(f, f_hat).item() == pytest.approx(2.0)


def test_loss_norm_unit_diffs():
    f = const3(np.ones((1, 2, 2)))
    f_hat = const3(np.zeros((1, 2, 2)))
    assert loss_norm(f, f_hat).item() == pytest.approx(1.0)  # 4 unit diffs / 4 positions


def test_loss_norm_not_channel_normalized():
    rng = np.random.default_rng(1)
    f = rng.standard_normal((3, 4, 4))
    f_hat = rng.standard_normal((3, 4, 4))
    single = loss_norm(const3(f), const3(f_hat)).item()
    doubled = loss_norm(const3(np.concatenate([f, f])),
                        const3(np.concatenate([f_hat, f_hat]))).item()
    assert doubled == pytest.approx(2.0 * single, rel=1e-12)


def test_loss_norm_shape_mismatch():
    with pytest.raises(ShapeError):
        loss_norm(const3(np.zeros((2, 2, 2))), const3(np.zeros((2, 2, 3))))


# ---------------------------------------------------------------------------
# diff and score maps


def test_diff_map_zero_and_antisymmetry():
    rng = np.random.default_rng(2)
    a, b = rng.standard_normal((2, 3, 3)), rng.standard_normal((2, 3, 3))
    assert np.allclose(diff_map(const3(a), const3(a)).numpy(), 0.0)
    assert np.array_equal(diff_map(const3(a), const3(b)).numpy(),
                          -diff_map(const3(b), const3(a)).numpy())


def test_diff_map_single_entry():
    out = diff_map(const3([[[3.0]]]), const3([[[1.0]]]))
    assert out.numpy()[0, 0, 0] == 2.0


def test_score_map_pythagorean():
    d = np.zeros((2, 1, 1))
    d[:, 0, 0] = [3.0, 4.0]
    assert score_map(d)[0, 0] == pytest.approx(5.0)


def test_score_map_zero_and_homogeneity():
    rng = np.random.default_rng(3)
    d = rng.standard_normal((4, 3, 3))
    assert np.allclose(score_map(np.zeros((2, 2, 2))), 0.0)
    assert np.allclose(score_map(2.5 * d), 2.5 * score_map(d), rtol=1e-6)


def test_score_map_triangle_inequality():
    rng = np.random.default_rng(4)
    a, b = rng.standard_normal((4, 3, 3)), rng.standard_normal((4, 3, 3))
    assert (score_map(a + b) <= score_map(a) + score_map(b) + 1e-9).all()


# ---------------------------------------------------------------------------
# image score


def test_image_score_constant_map():
    for window in (1, 3, 5):
        assert image_score(np.full((4, 4), 2.5), window) == pytest.approx(2.5)


def test_image_score_window_one_is_max():
    rng = np.random.default_rng(5)
    s = np.abs(rng.standard_normal((5, 6)))
    assert image_score(s, 1) == pytest.approx(float(s.max()))


def test_image_score_single_peak():
    s = np.zeros((3, 3))
    s[1, 1] = 9.0
    assert image_score(s, 3) == pytest.approx(1.0)  # 9 / 9 cells


def test_image_score_rejects_huge_window():
    with pytest.raises(AdtrError):
        image_score(np.zeros((3, 3)), 7)
    with pytest.raises(AdtrError):
        image_score(np.zeros((3, 3)), 4)  # even


# ---------------------------------------------------------------------------
# pseudo-Huber


def test_pseudo_huber_zero():
    out = pseudo_huber(const3(np.zeros((2, 2, 2))))
    assert np.allclose(out.numpy(), 0.0)


def test_pseudo_huber_mean_abs_one():
    d = const3(np.ones((4, 1, 1)))  # m = 1
    assert pseudo_huber(d).numpy()[0, 0] == pytest.approx(np.sqrt(2.0) - 1.0, abs=1e-9)


def test_pseudo_huber_monotone():
    d1 = const3(np.full((4, 1, 1), 1.0))
    d2 = const3(np.full((4, 1, 1), 2.0))
    v1 = pseudo_huber(d1).numpy()[0, 0]
    v2 = pseudo_huber(d2).numpy()[0, 0]
    assert v1 == pytest.approx(0.414214, abs=1e-6)
    assert v2 == pytest.approx(np.sqrt(5.0) - 1.0, abs=1e-9)
    assert v2 > v1


def test_pseudo_huber_tokens_matches_map_layout():
    rng = np.random.default_rng(6)
    d = rng.standard_normal((3, 2, 2))
    by_map = pseudo_huber(const3(d)).numpy().reshape(-1)
    tokens = d.reshape(3, -1).T  # K x C
    by_tokens = pseudo_huber_tokens(const3(tokens)).numpy()
    assert np.allclose(by_map, by_tokens, atol=1e-12)


# ---------------------------------------------------------------------------
# loss_px


def test_loss_px_all_normal_mask_is_mean_plus_clamp_constant():
    rng = np.random.default_rng(7)
    phi_vals = np.abs(rng.standard_normal((3, 3)))
    eps = 1e-6
    out = loss_px(const3(phi_vals), np.zeros((3, 3), dtype=np.uint8), ALPHA, eps).item()
    assert out == pytest.approx(phi_vals.mean() - ALPHA * np.log(eps), rel=1e-9)


def test_loss_px_all_anomalous_ln2():
    # mean(y * phi) = ln 2 -> push term = alpha * ln 2; pull term zero
    phi_vals = np.full((2, 2), np.log(2.0))
    out = loss_px(const3(phi_vals), np.ones((2, 2), dtype=np.uint8), ALPHA).item()
    assert out == pytest.approx(ALPHA * np.log(2.0), rel=1e-9)
    assert out == pytest.approx(0.00207944, abs=1e-8)


def test_loss_px_mask_shape_mismatch():
    with pytest.raises(ShapeError):
        loss_px(const3(np.zeros((2, 2))), np.zeros((3, 3), dtype=np.uint8), ALPHA)


def test_loss_px_pull_gradient_direction():
    # reducing phi on normal positions must reduce the loss
    phi_vals = np.full((2, 2), 0.5)
    phi = ag.Tensor(phi_vals, requires_grad=True, dtype=np.float64)
    out = loss_px(phi, np.zeros((2, 2), dtype=np.uint8), ALPHA)
    ag.backward(out)
    assert (phi.grad > 0).all()  # decreasing phi decreases loss


def test_loss_px_zero_mask_gradient_equals_pure_pull():
    # with y == 0 the push term is a clamp constant and moves no gradients
    rng = np.random.default_rng(8)
    phi_vals = np.abs(rng.standard_normal((3, 3))) + 0.1
    mask = np.zeros((3, 3), dtype=np.uint8)

    full = ag.Tensor(phi_vals, requires_grad=True, dtype=np.float64)
    ag.backward(loss_px(full, mask, ALPHA))

    pull_only = ag.Tensor(phi_vals, requires_grad=True, dtype=np.float64)
    ag.backward(ag.mean_all(ag.mul(pull_only, ag.constant(1.0 - mask, dtype=np.float64))))

    assert np.array_equal(full.grad, pull_only.grad)


def test_loss_px_finite_even_with_perfect_anomalous_reconstruction():
    phi = const3(np.zeros((2, 2)))
    out = loss_px(phi, np.ones((2, 2), dtype=np.uint8), ALPHA).item()
    assert np.isfinite(out)


# ---------------------------------------------------------------------------
# topk_score


def test_topk_score_full_is_mean():
    rng = np.random.default_rng(9)
    phi_vals = np.abs(rng.standard_normal((3, 4)))
    out = topk_score(const3(phi_vals), 12).item()
    assert out == pytest.approx(phi_vals.mean(), rel=1e-12)


def test_topk_score_flat_example():
    out = topk_score(const3(np.array([[5.0, 1.0], [3.0, 2.0]])), 2).item()
    assert out == pytest.approx(4.0)


def test_topk_score_monotone_in_entries():
    phi_vals = np.array([[1.0, 0.5], [0.25, 0.75]])
    base = topk_score(const3(phi_vals), 2).item()
    for i in range(2):
        for j in range(2):
            bumped = phi_vals.copy()
            bumped[i, j] += 0.6
            assert topk_score(const3(bumped), 2).item() >= base


def test_topk_score_out_of_range():
    with pytest.raises(AdtrError):
        topk_score(const3(np.zeros((2, 2))), 5)


# ---------------------------------------------------------------------------
# loss_img


def test_loss_img_normal_is_q_exactly():
    q = const3(np.asarray(0.73))
    out = loss_img(q, 0, ALPHA)
    assert out.item() == 0.73


def test_loss_img_anomalous_ln2():
    q = const3(np.asarray(np.log(2.0)))
    assert loss_img(q, 1, ALPHA).item() == pytest.approx(ALPHA * np.log(2.0), rel=1e-9)


def test_loss_img_decreases_as_q_grows():
    values = [loss_img(const3(np.asarray(q)), 1, ALPHA).item() for q in (0.1, 1.0, 5.0)]
    assert values[0] > values[1] > values[2]


def test_loss_img_finite_at_zero_q():
    assert np.isfinite(loss_img(const3(np.asarray(0.0)), 1, ALPHA).item())


def test_loss_img_rejects_bad_label():
    with pytest.raises(AdtrError):
        loss_img(const3(np.asarray(1.0)), 2, ALPHA)


# ---------------------------------------------------------------------------
# config


def test_loss_config_validation():
    with pytest.raises(AdtrError):
        LossConfig(alpha=0.0)
    with pytest.raises(AdtrError):
        LossConfig(k=0)
    with pytest.raises(AdtrError):
        LossConfig(pool_window=2)
    with pytest.raises(AdtrError):
        LossConfig(epsilon=0.01)
    LossConfig()  # defaults valid
