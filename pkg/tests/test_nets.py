import numpy as np
import pytest

from segkit.nets import ModelSpec, br_block, build, gcn_block
from segkit.ops import conv2d
from segkit.tensor import ShapeError, Tensor


def small(family="unet", **kw):
    kw.setdefault("depth", 2)
    kw.setdefault("base_width", 2)
    if family in ("unet_gcn_head", "gcn_unet"):
        kw.setdefault("gcn_kernel", 5)
    return ModelSpec(family=family, **kw)


def test_width_doubling_doubles_every_conv():
    a = build(ModelSpec(base_width=32), seed=0)
    b = build(ModelSpec(base_width=64), seed=0)
    c = build(ModelSpec(base_width=32, width_multiplier=2), seed=0)
    for name, p in a.params.items():
        if not name.endswith(".weight"):
            continue
        o, i, kh, kw = p.shape
        expected = (2 * o if o > 1 else o, 2 * i if i > 1 else i, kh, kw)
        assert b.params[name].shape == expected, name
        assert c.params[name].shape == expected, name


def test_same_seed_same_parameters():
    a = build(small(), seed=5)
    b = build(small(), seed=5)
    c = build(small(), seed=6)
    for name in a.params:
        np.testing.assert_array_equal(a.params[name].data, b.params[name].data)
    assert any(not np.array_equal(a.params[n].data, c.params[n].data) for n in a.params)


def test_micro_unet_hand_count():
    # enc0: two 1->1 3x3 convs (9+1 each) = 20
    # bottleneck: 1->2 (18+2) and 2->2 (36+2) = 58
    # dec0: concat(2 upsampled + 1 skip) 3->1 (27+1) and 1->1 (9+1) = 38
    # head: 1x1 conv 1->1 (1+1) = 2
    assert build(ModelSpec(depth=1, base_width=1, batch_norm=False)).n_parameters() == 118
    # with batch norm the 8 conv biases drop out and 8 channels gain gamma and beta
    assert build(ModelSpec(depth=1, base_width=1)).n_parameters() == 118 - 8 + 16


def test_dilation_adds_no_parameters():
    assert build(ModelSpec(family="dilated_unet", base_width=4)).n_parameters() == build(ModelSpec(base_width=4)).n_parameters()
    assert ModelSpec(family="dilated_unet").dilation_scheme == [2, 2, 2, 4]
    assert ModelSpec().dilation_scheme == [1, 1, 1, 1]


@pytest.mark.parametrize(
    "kw",
    [
        dict(family="unet", gcn_kernel=9),
        dict(family="unet_gcn_head"),
        dict(family="gcn_unet", gcn_kernel=8),
        dict(family="resnet"),
        dict(depth=0),
        dict(width_multiplier=3),
        dict(family="dilated_unet", depth=2, dilation_scheme=[1, 2, 3]),
    ],
)
def test_invalid_specs_rejected(kw):
    with pytest.raises(ValueError):
        ModelSpec(**kw)


@pytest.mark.parametrize("family", ["unet", "dilated_unet", "unet_gcn_head", "gcn_unet"])
def test_forward_shape_and_range(family, rng):
    model = build(small(family), seed=1, dtype=np.float64)
    x = rng.uniform(size=(2, 1, 16, 12))
    out = model.forward(x).data
    assert out.shape == x.shape
    assert np.all((out > 0) & (out < 1))


def test_forward_64_square():
    out = build(ModelSpec(depth=4, base_width=2)).forward(np.zeros((1, 1, 64, 64))).data
    assert out.shape == (1, 1, 64, 64)


def test_indivisible_input_asks_for_padding():
    with pytest.raises(ShapeError, match="pad"):
        build(ModelSpec(depth=4, base_width=2)).forward(np.zeros((1, 1, 256, 216)))


def test_gcn_head_differs_only_after_decoder(rng):
    x = Tensor(rng.normal(size=(1, 1, 16, 16)))
    plain = build(small("unet"), seed=3, dtype=np.float64)
    gcn = build(small("unet_gcn_head", gcn_kernel=9), seed=3, dtype=np.float64)
    pre_plain = plain.decode(*plain.encode(x)).data
    pre_gcn = gcn.decode(*gcn.encode(x)).data
    np.testing.assert_array_equal(pre_plain, pre_gcn)
    assert not np.allclose(plain.forward(x).data, gcn.forward(x).data)


def test_translation_covariance_on_interior(rng):
    depth = 2
    shift = 2**depth
    model = build(ModelSpec(depth=depth, base_width=2, batch_norm=False), seed=0, dtype=np.float64)
    image = np.zeros((48, 48))
    image[16:28, 14:30] = rng.uniform(size=(12, 16))
    shifted = np.roll(image, shift, axis=0)
    a = model.forward(image[None, None]).data[0, 0]
    b = model.forward(shifted[None, None]).data[0, 0]
    band = 2 * 3
    np.testing.assert_allclose(b[shift + band : -band, band:-band], a[band : -band - shift, band:-band], atol=1e-4)


def test_gcn_receptive_field_is_k_by_k(rng):
    k = 5
    weights = [Tensor(rng.normal(size=s)) for s in ((1, 1, 1, k), (1, 1, k, 1), (1, 1, k, 1), (1, 1, 1, k))]
    x = rng.normal(size=(1, 1, 16, 16))
    base = gcn_block(Tensor(x), weights).data[0, 0, 8, 8]
    r = k // 2
    for i in range(16):
        for j in range(16):
            probe = x.copy()
            probe[0, 0, i, j] += 10.0
            out = gcn_block(Tensor(probe), weights).data[0, 0, 8, 8]
            inside = abs(i - 8) <= r and abs(j - 8) <= r
            if inside:
                assert out != base, (i, j)
            else:
                assert out == base, (i, j)


def test_gcn_block_zero_weights():
    weights = [Tensor(np.zeros(s)) for s in ((2, 3, 1, 7), (2, 2, 7, 1), (2, 3, 7, 1), (2, 2, 1, 7))]
    assert not gcn_block(Tensor(np.ones((1, 3, 8, 8))), weights).data.any()


def test_br_zero_weights_is_identity(rng):
    p = rng.normal(size=(1, 1, 8, 8))
    z = Tensor(np.zeros((1, 1, 3, 3)))
    np.testing.assert_array_equal(br_block(Tensor(p), z, z).data, p)


def test_br_is_linear_without_biases(rng):
    p = rng.normal(size=(1, 1, 8, 8))
    w1, w2 = Tensor(rng.normal(size=(1, 1, 3, 3))), Tensor(rng.normal(size=(1, 1, 3, 3)))
    np.testing.assert_allclose(br_block(Tensor(-2.5 * p), w1, w2).data, -2.5 * br_block(Tensor(p), w1, w2).data, atol=1e-12)


def test_br_matches_explicit_composition(rng):
    p = rng.normal(size=(1, 1, 8, 8))
    w1, w2 = Tensor(rng.normal(size=(1, 1, 3, 3))), Tensor(rng.normal(size=(1, 1, 3, 3)))
    b1, b2 = Tensor(rng.normal(size=1)), Tensor(rng.normal(size=1))
    expected = p + conv2d(conv2d(Tensor(p), w1, b1, padding=1), w2, b2, padding=1).data
    np.testing.assert_allclose(br_block(Tensor(p), w1, w2, b1, b2).data, expected, atol=1e-12)


def test_state_round_trip_and_eval_mode(rng):
    a = build(small(), seed=0, dtype=np.float64)
    x = rng.normal(size=(2, 1, 8, 8))
    a.forward(x)  # updates running stats in training mode
    b = build(small(), seed=9, dtype=np.float64)
    b.load_state_arrays(a.state_arrays())
    np.testing.assert_array_equal(a.eval().forward(x).data, b.eval().forward(x).data)


def test_gradients_reach_every_parameter(rng):
    model = build(small("gcn_unet"), seed=0, dtype=np.float64)
    model.forward(rng.normal(size=(1, 1, 8, 8))).sum().backward()
    assert all(p.grad is not None for p in model.parameters())
    # zero-initialized refinement convs still receive a gradient
    assert np.abs(model.params["final_br.conv2.weight"].grad).sum() > 0


def test_refinement_blocks_start_as_identity():
    model = build(small("unet_gcn_head"), seed=0)
    assert not model.params["head_br.conv2.weight"].data.any()
    assert model.params["head_br.conv1.weight"].data.any()
