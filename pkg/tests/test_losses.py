import math

import numpy as np
import pytest

from segkit import losses as L
from segkit.losses import LossConfig, compute_loss

P2 = np.array([[1.0, 0.0], [0.0, 0.0]])
G2 = np.array([[1.0, 1.0], [0.0, 0.0]])


def bce_loop(p, g, delta=1e-7):
    total = 0.0
    for pi, gi in zip(p.ravel(), g.ravel()):
        pi = min(max(pi, delta), 1 - delta)
        total += -(gi * math.log(pi) + (1 - gi) * math.log(1 - pi))
    return total / p.size


def random_case(rng, shape=(2, 1, 4, 4), fg=0.3):
    return rng.uniform(0.02, 0.98, size=shape), (rng.uniform(size=shape) < fg).astype(float)


def test_bce_half_is_log2(rng):
    g = (rng.uniform(size=(3, 3)) < 0.5).astype(float)
    assert L.bce(np.full((3, 3), 0.5), g).item() == pytest.approx(math.log(2), abs=1e-12)


def test_bce_perfect_prediction():
    g = np.array([[1.0, 0.0], [0.0, 1.0]])
    assert L.bce(g, g).item() <= -math.log(1 - 1e-7) + 1e-15


def test_bce_matches_scalar_loop(rng):
    p, g = random_case(rng, (4, 4))
    assert L.bce(p, g).item() == pytest.approx(bce_loop(p, g), abs=1e-9)


def test_non_binary_mask_rejected():
    with pytest.raises(ValueError):
        L.bce(np.full((2, 2), 0.5), np.full((2, 2), 0.5))


def test_dice_hand_value():
    assert L.dice_loss(P2, G2).item() == pytest.approx(1 - (2 + 1e-6) / (3 + 1e-6), abs=1e-6)
    assert L.dice_loss(P2, G2).item() == pytest.approx(0.333333, abs=1e-6)


def test_dice_perfect_and_total_miss():
    g = np.zeros((4, 4))
    g[1:3, 1:3] = 1
    assert L.dice_loss(g, g).item() == pytest.approx(0.0, abs=1e-6)
    assert L.dice_loss(np.zeros_like(g), g).item() == pytest.approx(1.0, abs=1e-6)


def test_inverted_dice_hand_value():
    assert L.inverted_dice_loss(P2, G2).item() == pytest.approx(0.2, abs=1e-6)


def test_inverted_dice_duality(rng):
    p, g = random_case(rng)
    assert L.inverted_dice_loss(p, g).item() == pytest.approx(L.dice_loss(1 - p, 1 - g).item(), abs=1e-12)


def test_focal_gamma_zero_is_bce(rng):
    for _ in range(20):
        p, g = random_case(rng)
        assert abs(L.focal(p, g, 0.0).item() - L.bce(p, g).item()) < 1e-9


def test_focal_single_pixel_closed_form():
    assert L.focal(np.array([0.5]), np.array([1.0]), 1.0).item() == pytest.approx(0.5 * math.log(2), abs=1e-12)


def test_focal_down_weights_easy_pixels():
    easy = L.focal(np.array([0.99]), np.array([1.0]), 2.0).item()
    ce = L.bce(np.array([0.99]), np.array([1.0])).item()
    assert ce == pytest.approx(0.01005, abs=1e-5)
    assert easy == pytest.approx(1e-4 * ce, rel=1e-9)
    assert easy < 1e-3 * ce


def test_focal_negative_gamma_rejected():
    with pytest.raises(ValueError):
        L.focal(np.array([0.5]), np.array([1.0]), -1.0)


def test_foreground_ratio():
    assert L.foreground_ratio(np.zeros((3, 3))) == 0.0
    assert L.foreground_ratio(np.ones((3, 3))) == 1.0
    assert L.foreground_ratio(np.array([[1, 0], [0, 0]])) == 0.25
    with pytest.raises(ValueError):
        L.foreground_ratio(np.zeros((0,)))


def mask_with_ratio(shape, count, rng):
    g = np.zeros(int(np.prod(shape)))
    g[rng.choice(g.size, count, replace=False)] = 1
    return g.reshape(shape)


@pytest.mark.parametrize("count,branch,wd,wi", [(64, "large_foreground", 0.75, 0.25), (1, "small_foreground", 0.25, 0.75)])
def test_switching_branches(rng, count, branch, wd, wi):
    # 256 pixels: 64 -> ratio 0.25, 1 -> ratio 0.0039
    g = mask_with_ratio((1, 1, 16, 16), count, rng)
    p = rng.uniform(0.05, 0.95, size=g.shape)
    value = L.switching(p, g)
    expected = L.bce(p, g).item() + wd * L.dice_loss(p, g).item() + wi * L.inverted_dice_loss(p, g).item()
    assert value.item() == pytest.approx(expected, abs=1e-9)
    assert value.breakdown["branch_taken"] == branch


def test_switching_ratio_equal_to_tau_is_small_branch():
    g = np.zeros((10, 10))
    g[0, 0] = 1  # ratio exactly 0.01
    assert L.switching(np.full(g.shape, 0.3), g).breakdown["branch_taken"] == "small_foreground"


def test_switching_half_lambda_is_branch_free(rng):
    p = rng.uniform(0.05, 0.95, size=(1, 1, 8, 8))
    for count in (1, 30):
        g = mask_with_ratio(p.shape, count, rng)
        expected = L.bce(p, g).item() + 0.5 * L.dice_loss(p, g).item() + 0.5 * L.inverted_dice_loss(p, g).item()
        assert L.switching(p, g, lam=0.5).item() == pytest.approx(expected, abs=1e-12)


def test_switching_gate_ignores_prediction(rng):
    g = mask_with_ratio((1, 1, 16, 16), 1, rng)
    branches = {L.switching(rng.uniform(0.01, 0.99, size=g.shape), g).breakdown["branch_taken"] for _ in range(20)}
    assert branches == {"small_foreground"}


def test_switching_affine_in_lambda(rng):
    p, g = random_case(rng)
    f = [L.switching(p, g, lam=lam).item() for lam in (0.6, 0.7, 0.8)]
    assert f[1] - f[0] == pytest.approx(f[2] - f[1], abs=1e-12)


def test_small_branch_emphasizes_inverted_dice():
    for lam in (0.51, 0.75, 1.0):
        wd, wi, _ = L.switching_weights(0.001, lam, 0.01)
        assert wi > wd


def test_switching_per_sample_branches(rng):
    g = np.stack([mask_with_ratio((1, 8, 8), 20, rng), mask_with_ratio((1, 8, 8), 0, rng)])
    p = rng.uniform(0.1, 0.9, size=g.shape)
    value = L.switching(p, g, reduction="per_sample")
    assert value.breakdown["branch_taken"] == ("large_foreground", "small_foreground")
    expected = L.bce(p, g).item() + 0.5 * sum(
        wd * L.dice_loss(p[i], g[i]).item() + wi * L.inverted_dice_loss(p[i], g[i]).item()
        for i, (wd, wi) in enumerate([(0.75, 0.25), (0.25, 0.75)])
    )
    assert value.item() == pytest.approx(expected, abs=1e-9)


def test_combined_recomposition(rng):
    p, g = random_case(rng)
    parts = [L.bce(p, g).item(), L.dice_loss(p, g).item(), L.inverted_dice_loss(p, g).item()]
    assert L.combined(p, g, "bce_dice_inv").item() == pytest.approx(sum(parts), abs=1e-9)
    assert L.combined(p, g, "bce_dice").item() == pytest.approx(parts[0] + parts[1], abs=1e-9)
    assert L.combined(p, g, "bce_dice_inv").item() >= L.combined(p, g, "bce_dice").item()
    with pytest.raises(ValueError):
        L.combined(p, g, "dice_bce")


def test_bce_dice_on_perfect_prediction():
    g = np.zeros((6, 6))
    g[2:4, 1:5] = 1
    assert L.combined(g, g, "bce_dice").item() == pytest.approx(L.bce(g, g).item(), abs=1e-6)


@pytest.mark.parametrize("kind", L.LOSS_KINDS)
def test_every_loss_finite_and_nonnegative(rng, kind):
    for p in (np.zeros((1, 1, 4, 4)), np.ones((1, 1, 4, 4)), rng.uniform(size=(1, 1, 4, 4))):
        g = (rng.uniform(size=p.shape) < 0.4).astype(float)
        v = compute_loss(p, g, LossConfig(kind=kind)).item()
        assert np.isfinite(v) and v >= 0


@pytest.mark.parametrize("kw", [dict(kind="hinge"), dict(lam=1.5), dict(tau=-0.1), dict(gamma=-1), dict(eps=0), dict(reduction="sum")])
def test_loss_config_validation(kw):
    with pytest.raises(ValueError):
        LossConfig(**kw)
