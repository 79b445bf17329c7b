"""Image operators on N×C×H×W tensors: convolution, pooling, upsampling, batch norm."""

from __future__ import annotations

from functools import lru_cache
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from .tensor import ShapeError, Tensor, add, as_tensor

IntPair = Union[int, Tuple[int, int]]


def _pair(v: IntPair) -> Tuple[int, int]:
    if isinstance(v, (tuple, list)):
        return int(v[0]), int(v[1])
    return int(v), int(v)


def conv_output_size(size: int, k: int, stride: int, padding: int, dilation: int) -> int:
    return (size + 2 * padding - (k - 1) * dilation - 1) // stride + 1


def _im2col(xt: np.ndarray, kh, kw, sh, sw, dh, dw, ho, wo) -> np.ndarray:
    """Columns of shape (C, kh, kw, N, Ho, Wo) from a padded (C, N, Hp, Wp) array."""
    c, n = xt.shape[:2]
    cols = np.empty((c, kh, kw, n, ho, wo), dtype=xt.dtype)
    for i in range(kh):
        r0 = i * dh
        for j in range(kw):
            c0 = j * dw
            cols[:, i, j] = xt[:, :, r0 : r0 + (ho - 1) * sh + 1 : sh, c0 : c0 + (wo - 1) * sw + 1 : sw]
    return cols


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride: IntPair = 1,
    padding: IntPair = 0,
    dilation: IntPair = 1,
) -> Tensor:
    """2-D cross-correlation with zero padding.

    Args:
        x: Input of shape (N, C, H, W).
        weight: Kernel of shape (O, C, kh, kw).
        bias: Optional (O,) offsets.
        stride, padding, dilation: Scalars or (row, col) pairs.

    Returns:
        Tensor of shape (N, O, H', W') with
        ``H' = (H + 2*pad - (kh-1)*dil - 1) // stride + 1``.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input and kernel, got {x.shape} and {weight.shape}")
    n, c, h, w = x.shape
    o, ck, kh, kw = weight.shape
    if c != ck:
        raise ShapeError(f"conv2d channel mismatch: input {x.shape} vs kernel {weight.shape}")
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    dh, dw = _pair(dilation)
    if min(kh, kw) < 1 or min(dh, dw) < 1 or min(sh, sw) < 1:
        raise ValueError("kernel size, stride and dilation must be >= 1")
    if h + 2 * ph < (kh - 1) * dh + 1 or w + 2 * pw < (kw - 1) * dw + 1:
        raise ShapeError(
            f"padded input {(h + 2 * ph, w + 2 * pw)} smaller than effective kernel "
            f"{((kh - 1) * dh + 1, (kw - 1) * dw + 1)}"
        )
    ho = conv_output_size(h, kh, sh, ph, dh)
    wo = conv_output_size(w, kw, sw, pw, dw)

    xt = x.data.transpose(1, 0, 2, 3)
    if ph or pw:
        xt = np.pad(xt, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    cols = _im2col(xt, kh, kw, sh, sw, dh, dw, ho, wo).reshape(c * kh * kw, n * ho * wo)
    wmat = weight.data.reshape(o, -1)
    out = wmat @ cols
    if bias is not None:
        out += bias.data[:, None]
    out = np.ascontiguousarray(out.reshape(o, n, ho, wo).transpose(1, 0, 2, 3))

    parents = (x, weight) if bias is None else (x, weight, as_tensor(bias))

    def backward(g):
        gm = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(o, -1)
        gw = (gm @ cols.T).reshape(weight.shape) if weight.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (wmat.T @ gm).reshape(c, kh, kw, n, ho, wo)
            gxt = np.zeros(xt.shape, dtype=g.dtype)
            for i in range(kh):
                r0 = i * dh
                for j in range(kw):
                    c0 = j * dw
                    gxt[:, :, r0 : r0 + (ho - 1) * sh + 1 : sh, c0 : c0 + (wo - 1) * sw + 1 : sw] += gcols[:, i, j]
            gx = gxt[:, :, ph : ph + h, pw : pw + w].transpose(1, 0, 2, 3)
        if bias is None:
            return gx, gw
        return gx, gw, gm.sum(axis=1)

    return Tensor._make(out, parents, backward, "conv2d")


def conv_separable_pair(
    x: Tensor,
    weights: Sequence[Tensor],
    biases: Optional[Sequence[Optional[Tensor]]] = None,
) -> Tensor:
    """Sum of a (1×k then k×1) branch and a (k×1 then 1×k) branch.

    ``weights`` holds the four kernels in order: branch A first (O, C, 1, k)
    and second (O, O, k, 1); branch B first (O, C, k, 1) and second
    (O, O, 1, k). Padding keeps the spatial shape.
    """
    wa1, wa2, wb1, wb2 = (as_tensor(w) for w in weights)
    k = wa1.shape[3]
    if k % 2 == 0:
        raise ValueError(f"separable kernel length must be odd, got {k}")
    expected = {"a1": (1, k), "a2": (k, 1), "b1": (k, 1), "b2": (1, k)}
    for label, w in zip(expected, (wa1, wa2, wb1, wb2)):
        if tuple(w.shape[2:]) != expected[label]:
            raise ShapeError(f"kernel {label} has spatial shape {w.shape[2:]}, expected {expected[label]}")
    ba1, ba2, bb1, bb2 = biases if biases is not None else (None,) * 4
    r = (k - 1) // 2
    a = conv2d(x, wa1, ba1, padding=(0, r))
    a = conv2d(a, wa2, ba2, padding=(r, 0))
    b = conv2d(x, wb1, bb1, padding=(r, 0))
    b = conv2d(b, wb2, bb2, padding=(0, r))
    return add(a, b)


def max_pool2d(x: Tensor, window: int = 2, stride: int = 2) -> Tensor:
    """Non-overlapping max pooling; ties send the gradient to the first element in row-major order."""
    if window != 2 or stride != 2:
        raise ValueError("only 2x2 pooling with stride 2 is supported")
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"max_pool2d needs even spatial extents, got {(h, w)}")
    blocks = x.data.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        gb = np.zeros(blocks.shape, dtype=g.dtype)
        np.put_along_axis(gb, idx[..., None], g[..., None], axis=-1)
        gx = gb.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
        return (gx,)

    return Tensor._make(out, (x,), backward, "max_pool2d")


@lru_cache(maxsize=64)
def _upsample_matrix(size: int, dtype_str: str) -> np.ndarray:
    """Linear map from ``size`` samples to ``2*size`` with half-pixel centers and edge clamping."""
    m = np.zeros((2 * size, size), dtype=dtype_str)
    for o in range(2 * size):
        src = (o + 0.5) / 2.0 - 0.5
        src = max(src, 0.0)
        i0 = min(int(np.floor(src)), size - 1)
        i1 = min(i0 + 1, size - 1)
        frac = src - i0
        m[o, i0] += 1.0 - frac
        m[o, i1] += frac
    m.setflags(write=False)
    return m


def bilinear_upsample2x(x: Tensor) -> Tensor:
    """Double H and W by bilinear interpolation (corners not aligned)."""
    n, c, h, w = x.shape
    uh = _upsample_matrix(h, x.dtype.str)
    uw = _upsample_matrix(w, x.dtype.str)
    out = uh @ (x.data @ uw.T)

    def backward(g):
        return (uh.T @ (g @ uw),)

    return Tensor._make(out, (x,), backward, "upsample")


class RunningStats:
    """Per-channel running mean/variance buffers for batch normalization."""

    def __init__(self, channels: int, dtype=np.float64, momentum: float = 0.1):
        self.mean = np.zeros(channels, dtype=dtype)
        self.var = np.ones(channels, dtype=dtype)
        self.momentum = momentum


def batch_norm2d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running: Optional[RunningStats] = None,
    training: bool = True,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel normalization over (N, H, W).

    In training mode the batch statistics are used and, when ``running`` is
    given, blended into it with its momentum (variance stored unbiased).
    In eval mode ``running`` supplies the statistics.
    """
    n, c, h, w = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batch_norm2d: {c} channels but gamma {gamma.shape}, beta {beta.shape}")
    g4 = gamma.data.reshape(1, c, 1, 1)
    if training:
        mu = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        if running is not None:
            m = running.momentum
            count = n * h * w
            unbiased = var * count / max(count - 1, 1)
            running.mean[:] = (1 - m) * running.mean + m * mu
            running.var[:] = (1 - m) * running.var + m * unbiased
    else:
        if running is None:
            raise ValueError("eval-mode batch norm needs running statistics")
        mu, var = running.mean, running.var
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu.reshape(1, c, 1, 1)) * inv.reshape(1, c, 1, 1)
    out = xhat * g4 + beta.data.reshape(1, c, 1, 1)

    def backward(g):
        ggamma = (g * xhat).sum(axis=(0, 2, 3))
        gbeta = g.sum(axis=(0, 2, 3))
        if not x.requires_grad:
            return None, ggamma, gbeta
        gxhat = g * g4
        if training:
            count = n * h * w
            gx = (
                inv.reshape(1, c, 1, 1)
                / count
                * (
                    count * gxhat
                    - gxhat.sum(axis=(0, 2, 3), keepdims=True)
                    - xhat * (gxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
                )
            )
        else:
            gx = gxhat * inv.reshape(1, c, 1, 1)
        return gx, ggamma, gbeta

    return Tensor._make(out.astype(x.dtype, copy=False), (x, as_tensor(gamma), as_tensor(beta)), backward, "batch_norm2d")
