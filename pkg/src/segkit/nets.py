"""UNet-family architectures built from a declarative :class:`ModelSpec`."""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .ops import RunningStats, batch_norm2d, bilinear_upsample2x, conv2d, conv_separable_pair, max_pool2d
from .tensor import ShapeError, Tensor, add, concat, relu, sigmoid

FAMILIES = ("unet", "dilated_unet", "unet_gcn_head", "gcn_unet")
GCN_KERNELS = (5, 7, 9, 15)
GCN_FAMILIES = ("unet_gcn_head", "gcn_unet")


@dataclass
class ModelSpec:
    """Architecture variant description.

    ``dilation_scheme`` lists the dilation of both convolutions at each
    encoder level, input level first. Left empty it defaults to all ones,
    or ``[2, 2, 2, 4]`` for a depth-4 ``dilated_unet``.
    """

    family: str = "unet"
    depth: int = 4
    base_width: int = 32
    width_multiplier: int = 1
    dilation_scheme: List[int] = field(default_factory=list)
    gcn_kernel: Optional[int] = None
    batch_norm: bool = True
    br_activation: bool = False
    out_channels: int = 1

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        if self.depth < 1 or self.base_width < 1:
            raise ValueError("depth and base_width must be >= 1")
        if self.width_multiplier not in (1, 2):
            raise ValueError("width_multiplier must be 1 or 2")
        if self.out_channels != 1:
            raise ValueError("only single-channel output is supported")
        if not self.dilation_scheme:
            if self.family == "dilated_unet" and self.depth == 4:
                self.dilation_scheme = [2, 2, 2, 4]
            else:
                self.dilation_scheme = [1] * self.depth
        self.dilation_scheme = [int(d) for d in self.dilation_scheme]
        if len(self.dilation_scheme) != self.depth:
            raise ValueError(f"dilation_scheme has {len(self.dilation_scheme)} entries for depth {self.depth}")
        if any(d < 1 for d in self.dilation_scheme):
            raise ValueError("dilations must be >= 1")
        if self.family in GCN_FAMILIES:
            if self.gcn_kernel is None:
                raise ValueError(f"{self.family} requires gcn_kernel")
            if self.gcn_kernel % 2 == 0 or self.gcn_kernel < 1:
                raise ValueError(f"gcn_kernel must be a positive odd integer, got {self.gcn_kernel}")
        elif self.gcn_kernel is not None:
            raise ValueError(f"gcn_kernel given for family {self.family!r}, which has no GCN block")

    def widths(self) -> List[int]:
        """Channel width of each encoder level followed by the bottleneck."""
        base = self.base_width * self.width_multiplier
        return [base * 2**i for i in range(self.depth + 1)]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(**d)


def _seed_for(seed: int, name: str) -> int:
    digest = hashlib.sha256(f"{seed}:{name}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


class Model:
    """Parameters, batch-norm buffers and the forward pass for one spec."""

    def __init__(self, spec: ModelSpec, seed: int = 0, dtype=np.float32):
        self.spec = spec
        self.seed = seed
        self.dtype = np.dtype(dtype)
        self.params: Dict[str, Tensor] = {}
        self.stats: Dict[str, RunningStats] = {}
        self.training = True
        self._build()

    # -- parameter creation --------------------------------------------------

    def _conv(self, name: str, cin: int, cout: int, kh: int, kw: int, bias: bool = True, zero: bool = False) -> None:
        # per-name seeding keeps shared layers identical across families
        rng = np.random.default_rng(_seed_for(self.seed, name))
        std = np.sqrt(2.0 / (cin * kh * kw))
        w = rng.normal(0.0, std, size=(cout, cin, kh, kw)).astype(self.dtype)
        if zero:
            w[...] = 0
        self.params[f"{name}.weight"] = Tensor(w, requires_grad=True, name=f"{name}.weight")
        if bias:
            self.params[f"{name}.bias"] = Tensor(np.zeros(cout, self.dtype), requires_grad=True, name=f"{name}.bias")

    def _bn(self, name: str, channels: int) -> None:
        self.params[f"{name}.gamma"] = Tensor(np.ones(channels, self.dtype), requires_grad=True, name=f"{name}.gamma")
        self.params[f"{name}.beta"] = Tensor(np.zeros(channels, self.dtype), requires_grad=True, name=f"{name}.beta")
        self.stats[name] = RunningStats(channels, self.dtype)

    def _double_conv(self, name: str, cin: int, cout: int) -> None:
        bn = self.spec.batch_norm
        self._conv(f"{name}.conv1", cin, cout, 3, 3, bias=not bn)
        if bn:
            self._bn(f"{name}.bn1", cout)
        self._conv(f"{name}.conv2", cout, cout, 3, 3, bias=not bn)
        if bn:
            self._bn(f"{name}.bn2", cout)

    def _gcn(self, name: str, cin: int, cout: int, k: int) -> None:
        self._conv(f"{name}.a1", cin, cout, 1, k)
        self._conv(f"{name}.a2", cout, cout, k, 1)
        self._conv(f"{name}.b1", cin, cout, k, 1)
        self._conv(f"{name}.b2", cout, cout, 1, k)

    def _br(self, name: str, channels: int) -> None:
        # the residual branch starts at zero so a chain of BR blocks begins as
        # the identity instead of compounding gains
        self._conv(f"{name}.conv1", channels, channels, 3, 3)
        self._conv(f"{name}.conv2", channels, channels, 3, 3, zero=True)

    def _build(self) -> None:
        spec = self.spec
        widths = spec.widths()
        cin = 1
        for level in range(spec.depth):
            self._double_conv(f"enc{level}", cin, widths[level])
            cin = widths[level]
        self._double_conv("bottleneck", cin, widths[-1])
        k = spec.gcn_kernel
        if spec.family == "gcn_unet":
            for level in range(spec.depth + 1):
                self._gcn(f"gcn{level}", widths[level], 1, k)
                self._br(f"br{level}", 1)
            for level in range(spec.depth):
                self._br(f"fuse{level}", 1)
            self._br("final_br", 1)
            return
        for level in reversed(range(spec.depth)):
            self._double_conv(f"dec{level}", widths[level + 1] + widths[level], widths[level])
        if spec.family == "unet_gcn_head":
            self._gcn("head_gcn", widths[0], 1, k)
            self._br("head_br", 1)
        else:
            self._conv("head", widths[0], 1, 1, 1)

    # -- forward pieces --------------------------------------------------------

    def _apply_conv(self, name: str, x: Tensor, padding=0, dilation: int = 1) -> Tensor:
        return conv2d(x, self.params[f"{name}.weight"], self.params.get(f"{name}.bias"), padding=padding, dilation=dilation)

    def _apply_double_conv(self, name: str, x: Tensor, dilation: int = 1) -> Tensor:
        for i in (1, 2):
            x = self._apply_conv(f"{name}.conv{i}", x, padding=dilation, dilation=dilation)
            if self.spec.batch_norm:
                bn = f"{name}.bn{i}"
                x = batch_norm2d(x, self.params[f"{bn}.gamma"], self.params[f"{bn}.beta"], self.stats[bn], self.training)
            x = relu(x)
        return x

    def _apply_gcn(self, name: str, x: Tensor) -> Tensor:
        weights = [self.params[f"{name}.{p}.weight"] for p in ("a1", "a2", "b1", "b2")]
        biases = [self.params[f"{name}.{p}.bias"] for p in ("a1", "a2", "b1", "b2")]
        return conv_separable_pair(x, weights, biases)

    def _apply_br(self, name: str, x: Tensor) -> Tensor:
        r = self._apply_conv(f"{name}.conv1", x, padding=1)
        if self.spec.br_activation:
            r = relu(r)
        r = self._apply_conv(f"{name}.conv2", r, padding=1)
        return add(x, r)

    def encode(self, x: Tensor) -> Tuple[List[Tensor], Tensor]:
        skips = []
        for level in range(self.spec.depth):
            x = self._apply_double_conv(f"enc{level}", x, self.spec.dilation_scheme[level])
            skips.append(x)
            x = max_pool2d(x)
        return skips, self._apply_double_conv("bottleneck", x)

    def decode(self, skips: List[Tensor], x: Tensor) -> Tensor:
        """Decoder features at full resolution, i.e. the input to the output head."""
        for level in reversed(range(self.spec.depth)):
            x = bilinear_upsample2x(x)
            x = concat([x, skips[level]], axis=1)
            x = self._apply_double_conv(f"dec{level}", x)
        return x

    def forward(self, x) -> Tensor:
        """Map an (N, 1, H, W) batch to per-pixel foreground probabilities of the same shape."""
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=self.dtype))
        if x.ndim != 4 or x.shape[1] != 1:
            raise ShapeError(f"expected an (N, 1, H, W) batch, got {x.shape}")
        m = 2**self.spec.depth
        h, w = x.shape[2:]
        if h % m or w % m:
            raise ShapeError(
                f"spatial size {(h, w)} is not divisible by {m} (2**depth); pad the input first, "
                f"e.g. with segkit.data.transforms.pad_to_multiple"
            )
        skips, bottom = self.encode(x)
        if self.spec.family == "gcn_unet":
            return sigmoid(self._gcn_fusion(skips + [bottom]))
        feats = self.decode(skips, bottom)
        if self.spec.family == "unet_gcn_head":
            score = self._apply_br("head_br", self._apply_gcn("head_gcn", feats))
        else:
            score = self._apply_conv("head", feats)
        return sigmoid(score)

    __call__ = forward

    def _gcn_fusion(self, levels: List[Tensor]) -> Tensor:
        depth = self.spec.depth
        score = self._apply_br(f"br{depth}", self._apply_gcn(f"gcn{depth}", levels[depth]))
        for level in reversed(range(depth)):
            local = self._apply_br(f"br{level}", self._apply_gcn(f"gcn{level}", levels[level]))
            score = self._apply_br(f"fuse{level}", add(bilinear_upsample2x(score), local))
        return self._apply_br("final_br", score)

    # -- bookkeeping -------------------------------------------------------------

    def train(self) -> "Model":
        self.training = True
        return self

    def eval(self) -> "Model":
        self.training = False
        return self

    def parameters(self) -> List[Tensor]:
        return list(self.params.values())

    def n_parameters(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def state_arrays(self) -> Dict[str, np.ndarray]:
        """Parameters and batch-norm buffers as a flat name -> array map."""
        out = {name: t.data for name, t in self.params.items()}
        for name, rs in self.stats.items():
            out[f"{name}.running_mean"] = rs.mean
            out[f"{name}.running_var"] = rs.var
        return out

    def load_state_arrays(self, arrays: Dict[str, np.ndarray]) -> None:
        for name, t in self.params.items():
            if arrays[name].shape != t.shape:
                raise ShapeError(f"{name}: checkpoint shape {arrays[name].shape} != model shape {t.shape}")
            t.data = np.array(arrays[name], dtype=self.dtype)
        for name, rs in self.stats.items():
            rs.mean[:] = arrays[f"{name}.running_mean"]
            rs.var[:] = arrays[f"{name}.running_var"]


def build(spec: ModelSpec, seed: int = 0, dtype=np.float32) -> Model:
    """Instantiate a model with seeded fan-in (ReLU gain) initialization and zero biases.

    The second convolution of every boundary-refinement block is zero, so
    each block is the identity at initialization.
    """
    return Model(spec, seed=seed, dtype=dtype)


def gcn_block(x: Tensor, weights, biases=None) -> Tensor:
    """Global-convolution block: (1×k → k×1) + (k×1 → 1×k), no nonlinearity."""
    return conv_separable_pair(x, weights, biases)


def br_block(score: Tensor, w1: Tensor, w2: Tensor, b1=None, b2=None, activation: bool = False) -> Tensor:
    """Boundary refinement ``P + R(P)`` with ``R`` two 3×3 convolutions."""
    r = conv2d(score, w1, b1, padding=1)
    if activation:
        r = relu(r)
    return add(score, conv2d(r, w2, b2, padding=1))
