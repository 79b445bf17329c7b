"""Central finite-difference gradient checks for tensor ops and losses."""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from . import losses as L
from .ops import RunningStats, batch_norm2d, bilinear_upsample2x, conv2d, conv_separable_pair, max_pool2d
from .tensor import Tensor, clamp, concat, log, no_grad, power, relu, sigmoid, sub_scalar


def numerical_grad(fn: Callable[[], Tensor], x: np.ndarray, h: float = 1e-4) -> np.ndarray:
    """Central differences of scalar ``fn()`` with respect to the array ``x`` (perturbed in place)."""
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = fn().item()
            flat[i] = orig - h
            fm = fn().item()
            flat[i] = orig
            gflat[i] = (fp - fm) / (2 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-7) -> float:
    """Max elementwise ``|a - n| / max(|a|, |n|)``.

    Entries where both magnitudes fall below ``floor`` are compared in absolute
    terms instead and only count (as infinite error) if they differ by more
    than ``floor``.
    """
    diff = np.abs(analytic - numeric)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    small = scale < floor
    rel = np.where(small, 0.0, diff / np.where(small, 1.0, scale))
    # near-zero entries must agree to the absolute floor instead
    abs_violation = np.where(small & (diff > floor), np.inf, 0.0)
    return float(np.max(np.maximum(rel, abs_violation), initial=0.0))


def check(fn: Callable[[], Tensor], inputs: Sequence[Tensor], h: float = 1e-4) -> float:
    """Max relative error between backward() and finite differences over all ``inputs``."""
    for t in inputs:
        t.grad = None
    fn().backward()
    worst = 0.0
    for t in inputs:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        numeric = numerical_grad(fn, t.data, h)
        worst = max(worst, relative_error(analytic, numeric))
    return worst


# -- case generators ------------------------------------------------------------
# Each returns (fn, inputs). Inputs are float64 and kept away from kinks
# (ReLU at 0, max-pool near-ties) so central differences stay valid.


def _param(rng, shape, scale=1.0) -> Tensor:
    return Tensor(rng.normal(0.0, scale, size=shape), requires_grad=True)


def _away_from_zero(rng, shape, margin=0.05) -> np.ndarray:
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * (margin + np.abs(x)), x)


def _weighted_sum(out: Tensor, w: np.ndarray) -> Tensor:
    return (out * w).sum()


def _case_conv2d(rng):
    x = _param(rng, (1, 2, 8, 8))
    k = _param(rng, (3, 2, 3, 3))
    b = _param(rng, (3,))
    w = rng.normal(size=(1, 3, 8, 8))
    return (lambda: _weighted_sum(conv2d(x, k, b, padding=2, dilation=2), w)), [x, k, b]


def _case_conv2d_strided(rng):
    x = _param(rng, (2, 2, 8, 8))
    k = _param(rng, (2, 2, 3, 3))
    w = rng.normal(size=(2, 2, 4, 4))
    return (lambda: _weighted_sum(conv2d(x, k, stride=2, padding=1), w)), [x, k]


def _case_separable(rng):
    x = _param(rng, (1, 2, 8, 8))
    ws = [_param(rng, s) for s in [(2, 2, 1, 5), (2, 2, 5, 1), (2, 2, 5, 1), (2, 2, 1, 5)]]
    w = rng.normal(size=(1, 2, 8, 8))
    return (lambda: _weighted_sum(conv_separable_pair(x, ws), w)), [x] + ws


def _case_max_pool(rng):
    # distinct values spaced well beyond h so no window flips its argmax
    vals = rng.permutation(64).astype(float) * 0.01
    x = Tensor(vals.reshape(1, 1, 8, 8), requires_grad=True)
    w = rng.normal(size=(1, 1, 4, 4))
    return (lambda: _weighted_sum(max_pool2d(x), w)), [x]


def _case_upsample(rng):
    x = _param(rng, (1, 2, 8, 8))
    w = rng.normal(size=(1, 2, 16, 16))
    return (lambda: _weighted_sum(bilinear_upsample2x(x), w)), [x]


def _case_relu(rng):
    x = Tensor(_away_from_zero(rng, (8, 8)), requires_grad=True)
    w = rng.normal(size=(8, 8))
    return (lambda: _weighted_sum(relu(x), w)), [x]


def _case_sigmoid(rng):
    x = _param(rng, (8, 8), 2.0)
    w = rng.normal(size=(8, 8))
    return (lambda: _weighted_sum(sigmoid(x), w)), [x]


def _case_log(rng):
    x = Tensor(rng.uniform(0.1, 2.0, size=(8, 8)), requires_grad=True)
    w = rng.normal(size=(8, 8))
    return (lambda: _weighted_sum(log(x), w)), [x]


def _case_neg(rng):
    x = _param(rng, (8, 8))
    w = rng.normal(size=(8, 8))
    return (lambda: _weighted_sum(-x, w)), [x]


def _case_add(rng):
    a, b = _param(rng, (8, 8)), _param(rng, (1, 8))
    w = rng.normal(size=(8, 8))
    return (lambda: _weighted_sum(a + b, w)), [a, b]


def _case_mul(rng):
    a, b = _param(rng, (8, 8)), _param(rng, (8, 8))
    w = rng.normal(size=(8, 8))
    return (lambda: _weighted_sum(a * b, w)), [a, b]


def _case_sub_scalar(rng):
    a = _param(rng, (8, 8))
    w = rng.normal(size=(8, 8))
    return (lambda: _weighted_sum(sub_scalar(a, 0.3), w)), [a]


def _case_div(rng):
    a = _param(rng, (8, 8))
    b = Tensor(rng.uniform(0.5, 2.0, size=(8, 8)), requires_grad=True)
    w = rng.normal(size=(8, 8))
    return (lambda: _weighted_sum(a / b, w)), [a, b]


def _case_pow(rng):
    a = Tensor(rng.uniform(0.2, 1.5, size=(8, 8)), requires_grad=True)
    w = rng.normal(size=(8, 8))
    return (lambda: _weighted_sum(power(a, 1.7), w)), [a]


def _case_clamp(rng):
    a = Tensor(rng.uniform(0.02, 0.98, size=(8, 8)), requires_grad=True)
    w = rng.normal(size=(8, 8))
    return (lambda: _weighted_sum(clamp(a, 1e-7, 1 - 1e-7), w)), [a]


def _case_concat(rng):
    a, b = _param(rng, (1, 2, 8, 8)), _param(rng, (1, 1, 8, 8))
    w = rng.normal(size=(1, 3, 8, 8))
    return (lambda: _weighted_sum(concat([a, b], axis=1), w)), [a, b]


def _case_mean(rng):
    a = _param(rng, (2, 8, 8))
    w = rng.normal(size=(2, 8))
    return (lambda: _weighted_sum(a.mean(axis=2), w)), [a]


def _case_batch_norm(rng):
    x = _param(rng, (2, 3, 8, 8))
    gamma = Tensor(rng.uniform(0.5, 1.5, size=3), requires_grad=True)
    beta = _param(rng, (3,))
    w = rng.normal(size=(2, 3, 8, 8))
    return (lambda: _weighted_sum(batch_norm2d(x, gamma, beta, None, training=True), w)), [x, gamma, beta]


def _case_batch_norm_eval(rng):
    x = _param(rng, (2, 3, 8, 8))
    gamma, beta = _param(rng, (3,)), _param(rng, (3,))
    stats = RunningStats(3)
    stats.mean[:] = rng.normal(size=3)
    stats.var[:] = rng.uniform(0.5, 2.0, size=3)
    w = rng.normal(size=(2, 3, 8, 8))
    return (lambda: _weighted_sum(batch_norm2d(x, gamma, beta, stats, training=False), w)), [x, gamma, beta]


def _case_conv_relu_sum(rng):
    x = Tensor(rng.normal(size=(1, 1, 8, 8)))
    while True:
        k = _param(rng, (2, 1, 3, 3))
        b = _param(rng, (2,))
        with no_grad():
            pre = conv2d(x, k, b, padding=1).data
        # redraw until every pre-activation is clear of the ReLU kink
        if np.min(np.abs(pre)) > 1e-3:
            return (lambda: relu(conv2d(x, k, b, padding=1)).sum()), [k, b]


OP_CASES: Dict[str, Callable] = {
    "conv2d": _case_conv2d,
    "conv2d_strided": _case_conv2d_strided,
    "conv_separable_pair": _case_separable,
    "max_pool2d": _case_max_pool,
    "bilinear_upsample2x": _case_upsample,
    "relu": _case_relu,
    "sigmoid": _case_sigmoid,
    "log": _case_log,
    "neg": _case_neg,
    "add": _case_add,
    "mul": _case_mul,
    "sub_scalar": _case_sub_scalar,
    "div": _case_div,
    "pow": _case_pow,
    "clamp": _case_clamp,
    "concat": _case_concat,
    "mean": _case_mean,
    "batch_norm2d": _case_batch_norm,
    "batch_norm2d_eval": _case_batch_norm_eval,
    "conv_relu_sum": _case_conv_relu_sum,
}


def _loss_case(loss_fn: Callable[[Tensor, np.ndarray], Tensor], fg_prob: float = 0.3):
    def make(rng):
        p = Tensor(rng.uniform(0.02, 0.98, size=(1, 1, 8, 8)), requires_grad=True)
        g = (rng.random((1, 1, 8, 8)) < fg_prob).astype(float)
        return (lambda: loss_fn(p, g)), [p]

    return make


def _sparse_mask_case(loss_fn):
    # one foreground pixel out of 128 keeps the ratio under tau=0.01
    def make(rng):
        p = Tensor(rng.uniform(0.02, 0.98, size=(2, 1, 8, 8)), requires_grad=True)
        g = np.zeros((2, 1, 8, 8))
        g.reshape(-1)[rng.integers(128)] = 1.0
        return (lambda: loss_fn(p, g)), [p]

    return make


LOSS_CASES: Dict[str, Callable] = {
    "bce": _loss_case(L.bce),
    "dice": _loss_case(L.dice_loss),
    "inverted_dice": _loss_case(L.inverted_dice_loss),
    "focal_g0.5": _loss_case(lambda p, g: L.focal(p, g, 0.5)),
    "focal_g1": _loss_case(lambda p, g: L.focal(p, g, 1.0)),
    "focal_g2": _loss_case(lambda p, g: L.focal(p, g, 2.0)),
    "bce_dice": _loss_case(lambda p, g: L.combined(p, g, "bce_dice").total),
    "bce_dice_inv": _loss_case(lambda p, g: L.combined(p, g, "bce_dice_inv").total),
    "switching_large": _loss_case(lambda p, g: L.switching(p, g).total),
    "switching_small": _sparse_mask_case(lambda p, g: L.switching(p, g).total),
    "switching_per_sample": _sparse_mask_case(lambda p, g: L.switching(p, g, reduction="per_sample").total),
}


@dataclass
class GradcheckResult:
    name: str
    trials: int
    max_rel_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def run_suite(
    names: Optional[Sequence[str]] = None,
    trials: int = 100,
    seed: int = 0,
    tolerance: float = 1e-4,
    extra_cases: Optional[Dict[str, Callable]] = None,
) -> List[GradcheckResult]:
    """Run the named finite-difference cases (all known cases when ``names`` is None)."""
    cases = {**OP_CASES, **LOSS_CASES, **(extra_cases or {})}
    selected = list(cases) if names is None else list(names)
    unknown = [n for n in selected if n not in cases]
    if unknown:
        raise KeyError(f"unknown gradcheck case(s): {', '.join(unknown)}")
    results = []
    for name in selected:
        rng = np.random.default_rng([seed, zlib.crc32(name.encode())])
        worst = 0.0
        for _ in range(trials):
            fn, inputs = cases[name](rng)
            worst = max(worst, check(fn, inputs))
        results.append(GradcheckResult(name, trials, worst, tolerance))
    return results


# -- negative control ---------------------------------------------------------------


def _broken_square(x: Tensor) -> Tensor:
    """x**2 with a deliberately wrong backward (x instead of 2x)."""

    def backward(g):
        return (g * x.data,)

    return Tensor._make(x.data**2, (x,), backward, "broken_square")


def _case_broken(rng):
    x = _param(rng, (8, 8))
    w = rng.normal(size=(8, 8))
    return (lambda: _weighted_sum(_broken_square(x), w)), [x]


BROKEN_CASES: Dict[str, Callable] = {"broken_square": _case_broken}
