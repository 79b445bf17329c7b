import numpy as np
import pytest

from segkit.ops import (
    RunningStats,
    batch_norm2d,
    bilinear_upsample2x,
    conv2d,
    conv_output_size,
    conv_separable_pair,
    max_pool2d,
)
from segkit.tensor import ShapeError, Tensor


def conv_reference(x, w, b=None, stride=1, padding=0, dilation=1):
    """Direct nested-loop convolution (cross-correlation, as in the layer)."""
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho = (h + 2 * padding - (kh - 1) * dilation - 1) // stride + 1
    wo = (wd + 2 * padding - (kw - 1) * dilation - 1) // stride + 1
    out = np.zeros((n, o, ho, wo))
    for ni in range(n):
        for oi in range(o):
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0
                    for ci in range(c):
                        for u in range(kh):
                            for v in range(kw):
                                acc += xp[ni, ci, i * stride + u * dilation, j * stride + v * dilation] * w[oi, ci, u, v]
                    out[ni, oi, i, j] = acc + (b[oi] if b is not None else 0.0)
    return out


def upsample_reference(x):
    """Evaluate bilinear interpolation at each output sample point, half-pixel centers, edges clamped."""
    h, w = x.shape

    def coord(o, size):
        s = min(max((o + 0.5) / 2 - 0.5, 0.0), size - 1)
        i0 = int(np.floor(s))
        i1 = min(i0 + 1, size - 1)
        return i0, i1, s - i0

    out = np.zeros((2 * h, 2 * w))
    for oi in range(2 * h):
        r0, r1, fr = coord(oi, h)
        for oj in range(2 * w):
            c0, c1, fc = coord(oj, w)
            top = (1 - fc) * x[r0, c0] + fc * x[r0, c1]
            bottom = (1 - fc) * x[r1, c0] + fc * x[r1, c1]
            out[oi, oj] = (1 - fr) * top + fr * bottom
    return out


# -- conv2d ---------------------------------------------------------------------------


def test_identity_kernel_returns_input():
    x = np.arange(9.0).reshape(1, 1, 3, 3)
    out = conv2d(Tensor(x), Tensor(np.ones((1, 1, 1, 1))), Tensor(np.zeros(1)))
    np.testing.assert_array_equal(out.data, x)


def test_all_ones_kernel_sums():
    out = conv2d(Tensor(np.ones((1, 1, 3, 3))), Tensor(np.ones((1, 1, 3, 3))), Tensor(np.zeros(1)))
    assert out.shape == (1, 1, 1, 1)
    assert out.data.item() == 9.0


def test_dilated_conv_matches_nested_loops(rng):
    x = rng.normal(size=(1, 2, 8, 8))
    w = rng.normal(size=(3, 2, 3, 3))
    b = rng.normal(size=3)
    out = conv2d(Tensor(x), Tensor(w), Tensor(b), padding=2, dilation=2)
    np.testing.assert_allclose(out.data, conv_reference(x, w, b, padding=2, dilation=2), atol=1e-6)


@pytest.mark.parametrize("stride,padding,dilation", [(1, 0, 1), (2, 1, 1), (2, 0, 2), (3, 2, 1)])
def test_conv_variants_match_nested_loops(rng, stride, padding, dilation):
    x = rng.normal(size=(2, 3, 9, 7))
    w = rng.normal(size=(2, 3, 3, 3))
    out = conv2d(Tensor(x), Tensor(w), stride=stride, padding=padding, dilation=dilation)
    ref = conv_reference(x, w, stride=stride, padding=padding, dilation=dilation)
    assert out.shape == ref.shape
    assert out.shape[2] == conv_output_size(9, 3, stride, padding, dilation)
    np.testing.assert_allclose(out.data, ref, atol=1e-9)


def test_conv_linearity(rng):
    w = Tensor(rng.normal(size=(2, 1, 3, 3)))
    x, y = rng.normal(size=(2, 1, 1, 6, 6))
    lhs = conv2d(Tensor(2.5 * x - 0.5 * y), w, padding=1).data
    rhs = 2.5 * conv2d(Tensor(x), w, padding=1).data - 0.5 * conv2d(Tensor(y), w, padding=1).data
    np.testing.assert_allclose(lhs, rhs, atol=1e-6)


def test_conv_channel_mismatch_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(1, 2, 4, 4\).*\(1, 3, 3, 3\)"):
        conv2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 3, 3, 3))))


def test_conv_input_smaller_than_effective_kernel():
    with pytest.raises(ShapeError):
        conv2d(Tensor(np.zeros((1, 1, 4, 4))), Tensor(np.zeros((1, 1, 3, 3))), dilation=2)


def test_conv_backward_matches_transposed_oracle(rng):
    # d(sum(out * g))/dx computed by brute-force perturbation of the nested-loop oracle is linear,
    # so it equals conv_reference applied to unit impulses
    x = rng.normal(size=(1, 1, 5, 5))
    w = rng.normal(size=(1, 1, 3, 3))
    g = rng.normal(size=(1, 1, 5, 5))
    xt = Tensor(x, requires_grad=True)
    wt = Tensor(w, requires_grad=True)
    (conv2d(xt, wt, padding=1) * g).sum().backward()
    expected = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        e = np.zeros_like(x)
        e[idx] = 1.0
        expected[idx] = (conv_reference(e, w, padding=1) * g).sum()
    np.testing.assert_allclose(xt.grad, expected, atol=1e-10)


# -- separable pair ----------------------------------------------------------------------


def _separable_weights(rng, o, c, k, scale=1.0):
    return [
        rng.normal(0, scale, size=(o, c, 1, k)),
        rng.normal(0, scale, size=(o, o, k, 1)),
        rng.normal(0, scale, size=(o, c, k, 1)),
        rng.normal(0, scale, size=(o, o, 1, k)),
    ]


def test_separable_zero_weights_give_zero(rng):
    ws = [np.zeros_like(w) for w in _separable_weights(rng, 2, 3, 5)]
    out = conv_separable_pair(Tensor(rng.normal(size=(1, 3, 8, 8))), [Tensor(w) for w in ws])
    assert not out.data.any()


def test_separable_k1_is_sum_of_pointwise_pipelines(rng):
    x = rng.normal(size=(1, 2, 4, 4))
    ws = _separable_weights(rng, 3, 2, 1)
    out = conv_separable_pair(Tensor(x), [Tensor(w) for w in ws]).data
    mix = lambda w, a: np.einsum("oc,nchw->nohw", w[:, :, 0, 0], a)
    np.testing.assert_allclose(out, mix(ws[1], mix(ws[0], x)) + mix(ws[3], mix(ws[2], x)), atol=1e-12)


def test_separable_k7_equals_explicit_composition(rng):
    x = rng.normal(size=(1, 4, 16, 16))
    ws = _separable_weights(rng, 2, 4, 7)
    out = conv_separable_pair(Tensor(x), [Tensor(w) for w in ws]).data
    a = conv2d(conv2d(Tensor(x), Tensor(ws[0]), padding=(0, 3)), Tensor(ws[1]), padding=(3, 0)).data
    b = conv2d(conv2d(Tensor(x), Tensor(ws[2]), padding=(3, 0)), Tensor(ws[3]), padding=(0, 3)).data
    assert out.shape == (1, 2, 16, 16)
    np.testing.assert_allclose(out, a + b, atol=1e-12)


def test_separable_even_k_rejected(rng):
    with pytest.raises(ValueError):
        conv_separable_pair(Tensor(np.zeros((1, 1, 8, 8))), [Tensor(w) for w in _separable_weights(rng, 1, 1, 4)])


# -- max pool -----------------------------------------------------------------------------


def test_pool_single_window():
    assert max_pool2d(Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]))).data.item() == 4.0


def test_pool_constant_input_ties_go_to_first_element():
    x = Tensor(np.full((1, 1, 4, 4), 7.0), requires_grad=True)
    out = max_pool2d(x)
    np.testing.assert_array_equal(out.data, np.full((1, 1, 2, 2), 7.0))
    out.sum().backward()
    expected = np.zeros((4, 4))
    expected[::2, ::2] = 1.0
    np.testing.assert_array_equal(x.grad[0, 0], expected)


def test_pool_matches_nested_loops(rng):
    x = rng.normal(size=(1, 1, 8, 8))
    out = max_pool2d(Tensor(x)).data
    ref = np.array([[max(x[0, 0, 2 * i + u, 2 * j + v] for u in range(2) for v in range(2)) for j in range(4)] for i in range(4)])
    np.testing.assert_array_equal(out[0, 0], ref)


def test_pool_odd_extent_rejected():
    with pytest.raises(ShapeError):
        max_pool2d(Tensor(np.zeros((1, 1, 5, 4))))


# -- bilinear upsample -----------------------------------------------------------------------


def test_upsample_single_pixel_is_constant():
    out = bilinear_upsample2x(Tensor(np.full((1, 1, 1, 1), 3.5))).data
    np.testing.assert_array_equal(out, np.full((1, 1, 2, 2), 3.5))


def test_upsample_constant_field(rng):
    out = bilinear_upsample2x(Tensor(np.full((2, 3, 5, 4), -1.25))).data
    assert out.shape == (2, 3, 10, 8)
    np.testing.assert_allclose(out, -1.25, atol=1e-15)


def test_upsample_matches_interpolation_oracle():
    x = np.array([[0.0, 1.0], [2.0, 3.0]])
    out = bilinear_upsample2x(Tensor(x[None, None])).data[0, 0]
    np.testing.assert_allclose(out, upsample_reference(x), atol=1e-15)
    # corners clamp to the corner input values; interior samples sit a quarter cell in
    assert out[0, 0] == 0.0 and out[3, 3] == 3.0
    assert out[1, 1] == pytest.approx(0.75)


def test_upsample_random_matches_oracle(rng):
    x = rng.normal(size=(5, 3))
    np.testing.assert_allclose(bilinear_upsample2x(Tensor(x[None, None])).data[0, 0], upsample_reference(x), atol=1e-12)


def test_pool_then_upsample_restores_shape():
    x = Tensor(np.zeros((1, 1, 48, 32)))
    for _ in range(4):
        x = max_pool2d(x)
    for _ in range(4):
        x = bilinear_upsample2x(x)
    assert x.shape == (1, 1, 48, 32)


# -- batch norm ------------------------------------------------------------------------------


def test_batch_norm_training_normalizes(rng):
    x = rng.normal(3.0, 2.0, size=(4, 3, 5, 5))
    out = batch_norm2d(Tensor(x), Tensor(np.ones(3)), Tensor(np.zeros(3))).data
    assert np.abs(out.mean(axis=(0, 2, 3))).max() < 1e-5
    assert np.abs(out.var(axis=(0, 2, 3)) - 1).max() < 1e-4


def test_batch_norm_zero_gamma_gives_beta(rng):
    beta = np.array([0.5, -1.0])
    out = batch_norm2d(Tensor(rng.normal(size=(2, 2, 3, 3))), Tensor(np.zeros(2)), Tensor(beta)).data
    np.testing.assert_array_equal(out, np.broadcast_to(beta.reshape(1, 2, 1, 1), out.shape))


def test_batch_norm_eval_closed_form(rng):
    x = rng.normal(size=(2, 3, 4, 4))
    stats = RunningStats(3)
    stats.mean[:] = [0.1, -0.2, 0.3]
    stats.var[:] = [0.5, 2.0, 1.5]
    gamma, beta = rng.normal(size=3), rng.normal(size=3)
    out = batch_norm2d(Tensor(x), Tensor(gamma), Tensor(beta), stats, training=False).data
    r = lambda v: v.reshape(1, 3, 1, 1)
    np.testing.assert_allclose(out, (x - r(stats.mean)) / np.sqrt(r(stats.var) + 1e-5) * r(gamma) + r(beta), atol=1e-12)


def test_batch_norm_running_update(rng):
    x = rng.normal(size=(2, 1, 3, 3))
    stats = RunningStats(1)
    batch_norm2d(Tensor(x), Tensor(np.ones(1)), Tensor(np.zeros(1)), stats)
    assert stats.mean[0] == pytest.approx(0.1 * x.mean())
    assert stats.var[0] == pytest.approx(0.9 + 0.1 * x.var(ddof=1))


def test_batch_norm_eval_needs_stats():
    with pytest.raises(ValueError):
        batch_norm2d(Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.ones(1)), Tensor(np.zeros(1)), training=False)
