"""Generator, discriminator and feature classifier as layer stacks, plus
masks and compositing."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .rng import SeededRng
from .tensor import ContractError, Tensor

BN_MOMENTUM = 0.1
BN_EPS = 1e-5
LEAKY_SLOPE = 0.2


# ---------------------------------------------------------------------- masks


@dataclass
class MaskSpec:
    """``mask`` is 1 on missing pixels. ``weight`` drives the pixel loss:
    0 outside the predicted region, 1 inside the hole, 10 on the overlap ring."""

    mask: np.ndarray
    weight: np.ndarray
    overlap: int = 0

    def __post_init__(self):
        if self.mask.shape != self.weight.shape:
            raise T.DimensionError("mask and weight map differ in shape")
        if not np.all((self.mask == 0) | (self.mask == 1)):
            raise ContractError("mask must be exactly binary")

    @property
    def shape(self) -> tuple[int, int]:
        return self.mask.shape

    def predicted_box(self) -> tuple[int, int, int, int]:
        """(top, left, height, width) bounding the nonzero weight region."""
        rows = np.flatnonzero(self.weight.any(axis=1))
        cols = np.flatnonzero(self.weight.any(axis=0))
        if rows.size == 0:
            raise ContractError("mask has no missing pixels")
        return int(rows[0]), int(cols[0]), int(rows[-1] - rows[0] + 1), int(cols[-1] - cols[0] + 1)


def mask_from_array(mask: np.ndarray, overlap: int = 4, ring_weight: float = 10.0) -> MaskSpec:
    """MaskSpec for an arbitrary binary mask; the ring is a square dilation by ``overlap``."""
    m = (np.asarray(mask) > 0).astype(np.float64)
    grown = m.copy()
    if overlap > 0:
        h, w = m.shape
        padded = np.pad(m, overlap)
        for dy in range(2 * overlap + 1):
            for dx in range(2 * overlap + 1):
                grown = np.maximum(grown, padded[dy : dy + h, dx : dx + w])
    weight = np.where(m > 0, 1.0, np.where(grown > 0, ring_weight, 0.0))
    return MaskSpec(m, weight, overlap)


def make_center_mask(h: int, w: int, overlap: int = 4) -> MaskSpec:
    if h % 2 or w % 2:
        raise ContractError(f"image dims must be even, got {h}x{w}")
    if overlap < 0:
        raise ContractError("overlap must be >= 0")
    if h // 2 + 2 * overlap > h or w // 2 + 2 * overlap > w:
        raise ContractError(f"overlap {overlap} too large for a {h}x{w} image")
    mask = np.zeros((h, w))
    mask[h // 4 : h // 4 + h // 2, w // 4 : w // 4 + w // 2] = 1.0
    weight = np.zeros((h, w))
    weight[h // 4 - overlap : h // 4 + h // 2 + overlap, w // 4 - overlap : w // 4 + w // 2 + overlap] = 10.0
    weight[mask == 1] = 1.0
    return MaskSpec(mask, weight, overlap)


def _mask_array(mask) -> np.ndarray:
    return mask.mask if isinstance(mask, MaskSpec) else np.asarray(mask, dtype=np.float64)


def compose(x, g_out, mask):
    """Context from ``x``, missing region from ``g_out``.

    The mask broadcasts over leading axes. Returns a Tensor when ``g_out``
    is one, otherwise an ndarray.
    """
    m = _mask_array(mask)
    xs = x.data if isinstance(x, Tensor) else np.asarray(x)
    gs = g_out.data if isinstance(g_out, Tensor) else np.asarray(g_out)
    if xs.shape != gs.shape:
        raise T.DimensionError(f"image shapes differ: {xs.shape} vs {gs.shape}")
    if xs.shape[-2:] != m.shape[-2:] and xs.shape[-3:-1] != m.shape[-2:]:
        raise T.DimensionError(f"mask shape {m.shape} does not fit image {xs.shape}")
    if xs.shape[-2:] != m.shape[-2:]:
        m = m[..., None]  # H, W, C layout
    if isinstance(g_out, Tensor) or isinstance(x, Tensor):
        return T.mul(x, 1.0 - m) + T.mul(g_out, m)
    return (1.0 - m) * xs + m * gs


# ---------------------------------------------------------------------- specs


@dataclass(frozen=True)
class NetworkSpec:
    kind: str
    base_channels: int = 16
    with_residual: bool = True
    with_fc_bottleneck: bool = False
    fc_bottleneck_dim: int | None = None
    input_channels: int = 3
    num_classes: int = 4
    input_size: tuple[int, int] | None = None

    def __post_init__(self):
        if self.kind not in ("generator", "discriminator", "classifier"):
            raise ContractError(f"unknown network kind {self.kind!r}")
        if self.base_channels < 4:
            raise ContractError("base_channels must be >= 4")
        if self.with_fc_bottleneck and self.kind != "generator":
            raise ContractError("fc bottleneck only applies to the generator")
        if self.with_fc_bottleneck and self.input_size is None:
            raise ContractError("an fc bottleneck fixes the spatial size; set input_size")
        if self.kind != "generator" and self.input_size is None:
            raise ContractError(f"{self.kind} needs input_size")

    @property
    def bottleneck_dim(self) -> int:
        return self.fc_bottleneck_dim or 8 * self.base_channels

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "base_channels": self.base_channels,
            "with_residual": self.with_residual,
            "with_fc_bottleneck": self.with_fc_bottleneck,
            "fc_bottleneck_dim": self.fc_bottleneck_dim,
            "input_channels": self.input_channels,
            "num_classes": self.num_classes,
            "input_size": list(self.input_size) if self.input_size else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        d = dict(d)
        if d.get("input_size") is not None:
            d["input_size"] = tuple(d["input_size"])
        return cls(**d)


# --------------------------------------------------------------------- layers


class Layer:
    kind = "layer"
    block = ""
    in_ch: int | None = None
    out_ch: int | None = None

    def __init__(self, name: str):
        self.name = name
        self.params: dict[str, Tensor] = {}
        self.buffers: dict[str, np.ndarray] = {}

    def forward(self, x: Tensor, mode: str) -> Tensor:
        raise NotImplementedError

    def named_parameters(self):
        for k, p in self.params.items():
            yield f"{self.name}.{k}", p

    def named_buffers(self):
        for k, b in self.buffers.items():
            yield f"{self.name}.{k}", b

    def describe(self) -> dict:
        return {"name": self.name, "kind": self.kind, "block": self.block, "in_ch": self.in_ch, "out_ch": self.out_ch}


class Conv(Layer):
    def __init__(self, name, block, cin, cout, k, stride, pad, rng: SeededRng, transposed=False):
        super().__init__(name)
        self.kind = "deconv" if transposed else "conv"
        self.block, self.in_ch, self.out_ch = block, cin, cout
        self.k, self.stride, self.pad, self.transposed = k, stride, pad, transposed
        shape = (cin, cout, k, k) if transposed else (cout, cin, k, k)
        self.params["weight"] = Tensor(rng.normal(shape, 0.0, 0.02), requires_grad=True)
        self.params["bias"] = Tensor(np.zeros(cout), requires_grad=True)

    def forward(self, x, mode):
        fn = T.conv_transpose2d if self.transposed else T.conv2d
        return fn(x, self.params["weight"], self.params["bias"], self.stride, self.pad)

    def describe(self):
        return {**super().describe(), "kernel": self.k, "stride": self.stride, "pad": self.pad}


class BatchNorm(Layer):
    kind = "batchnorm"

    def __init__(self, name, block, c, rng: SeededRng):
        super().__init__(name)
        self.block, self.in_ch, self.out_ch = block, c, c
        self.params["gamma"] = Tensor(rng.normal((c,), 1.0, 0.02), requires_grad=True)
        self.params["beta"] = Tensor(np.zeros(c), requires_grad=True)
        self.buffers["running_mean"] = np.zeros(c)
        self.buffers["running_var"] = np.ones(c)

    def forward(self, x, mode):
        return T.batchnorm2d(
            x,
            self.params["gamma"],
            self.params["beta"],
            mode=mode,
            running_mean=self.buffers["running_mean"],
            running_var=self.buffers["running_var"],
            momentum=BN_MOMENTUM,
            eps=BN_EPS,
        )


class Act(Layer):
    kind = "activation"

    def __init__(self, name, block, fn):
        super().__init__(name)
        self.block, self.fn = block, fn

    def forward(self, x, mode):
        return T.activation(self.fn, x, LEAKY_SLOPE)

    def describe(self):
        return {**super().describe(), "fn": self.fn}


class Residual(Layer):
    """conv-bn-relu-conv-bn plus identity skip, relu after the sum."""

    kind = "residual"

    def __init__(self, name, block, c, rng):
        super().__init__(name)
        self.block, self.in_ch, self.out_ch = block, c, c
        self.body = [
            Conv(f"{name}.conv1", block, c, c, 3, 1, 1, rng),
            BatchNorm(f"{name}.bn1", block, c, rng),
            Act(f"{name}.relu1", block, "relu"),
            Conv(f"{name}.conv2", block, c, c, 3, 1, 1, rng),
            BatchNorm(f"{name}.bn2", block, c, rng),
        ]

    def forward(self, x, mode):
        h = x
        for layer in self.body:
            h = layer.forward(h, mode)
        return T.activation("relu", h + x)

    def named_parameters(self):
        for layer in self.body:
            yield from layer.named_parameters()

    def named_buffers(self):
        for layer in self.body:
            yield from layer.named_buffers()


class FcPair(Layer):
    """Flatten, fc to ``dim``, tanh, fc back to the feature-map size, reshape."""

    kind = "fc_pair"

    def __init__(self, name, block, c, h, w, dim, rng):
        super().__init__(name)
        self.block, self.in_ch, self.out_ch = block, c, c
        self.c, self.h, self.w, self.dim = c, h, w, dim
        flat = c * h * w
        self.params["fc1.weight"] = Tensor(rng.normal((flat, dim), 0.0, 0.02), requires_grad=True)
        self.params["fc1.bias"] = Tensor(np.zeros(dim), requires_grad=True)
        self.params["fc2.weight"] = Tensor(rng.normal((dim, flat), 0.0, 0.02), requires_grad=True)
        self.params["fc2.bias"] = Tensor(np.zeros(flat), requires_grad=True)

    def forward(self, x, mode):
        n = x.shape[0]
        if x.shape[1:] != (self.c, self.h, self.w):
            raise ContractError(f"fc bottleneck expects {(self.c, self.h, self.w)} features, got {x.shape[1:]}")
        h = T.linear(x.reshape(n, -1), self.params["fc1.weight"], self.params["fc1.bias"])
        h = T.activation("tanh", h)
        h = T.linear(h, self.params["fc2.weight"], self.params["fc2.bias"])
        return h.reshape(n, self.c, self.h, self.w)


class Dense(Layer):
    """Flattens N,C,H,W (or N,D) input then applies an affine map."""

    kind = "fc"

    def __init__(self, name, block, din, dout, rng):
        super().__init__(name)
        self.block, self.in_ch, self.out_ch = block, din, dout
        self.params["weight"] = Tensor(rng.normal((din, dout), 0.0, 0.02), requires_grad=True)
        self.params["bias"] = Tensor(np.zeros(dout), requires_grad=True)

    def forward(self, x, mode):
        return T.linear(x.reshape(x.shape[0], -1), self.params["weight"], self.params["bias"])


class GlobalPool(Layer):
    kind = "global_pool"

    def __init__(self, name, block):
        super().__init__(name)
        self.block = block

    def forward(self, x, mode):
        return T.reduce_mean(x, axis=(2, 3))


# ---------------------------------------------------------------------- stack


@dataclass
class LayerStack:
    spec: NetworkSpec
    layers: list[Layer] = field(default_factory=list)
    feature_index: int | None = None  # classifier: layers[:feature_index] give the feature

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        return [item for layer in self.layers for item in layer.named_parameters()]

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self) -> list[tuple[str, np.ndarray]]:
        return [item for layer in self.layers for item in layer.named_buffers()]

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def describe(self) -> list[dict]:
        return [layer.describe() for layer in self.layers]

    def residual_blocks(self) -> int:
        return sum(isinstance(layer, Residual) for layer in self.layers)

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {f"param:{k}": p.data for k, p in self.named_parameters()}
        out.update({f"buffer:{k}": b for k, b in self.named_buffers()})
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for k, p in self.named_parameters():
            src = arrays[f"param:{k}"]
            if src.shape != p.shape:
                raise T.DimensionError(f"{k}: stored shape {src.shape} != {p.shape}")
            p.data[...] = src
        for k, b in self.named_buffers():
            b[...] = arrays[f"buffer:{k}"]

    def set_trainable(self, flag: bool) -> None:
        for p in self.parameters():
            p.requires_grad = flag


def _conv_bn_act(layers, prefix, block, cin, cout, k, stride, pad, act, rng, transposed=False):
    layers.append(Conv(f"{prefix}.conv", block, cin, cout, k, stride, pad, rng, transposed))
    layers.append(BatchNorm(f"{prefix}.bn", block, cout, rng))
    layers.append(Act(f"{prefix}.act", block, act))


def _build_generator(spec: NetworkSpec, rng: SeededRng) -> LayerStack:
    cb = spec.base_channels
    layers: list[Layer] = []
    # down-sampling: 4x4/s2 (doubling) alternating with 3x3/s1, ending on 4x4
    c = spec.input_channels
    widths = [cb, 2 * cb, 4 * cb]
    for i, cout in enumerate(widths):
        _conv_bn_act(layers, f"down.{2 * i}", "down", c, cout, 4, 2, 1, "relu", rng)
        c = cout
        if i < 2:
            _conv_bn_act(layers, f"down.{2 * i + 1}", "down", c, c, 3, 1, 1, "relu", rng)
    # flatting: conv(C), res(C), conv(C->2C), res(2C), conv(2C->C)
    _conv_bn_act(layers, "flat.0", "flat", c, c, 3, 1, 1, "relu", rng)
    if spec.with_residual:
        layers.append(Residual("flat.res0", "flat", c, rng))
    _conv_bn_act(layers, "flat.1", "flat", c, 2 * c, 3, 1, 1, "relu", rng)
    if spec.with_fc_bottleneck:
        h, w = spec.input_size
        layers.append(FcPair("flat.fc", "flat", 2 * c, h // 8, w // 8, spec.bottleneck_dim, rng))
    if spec.with_residual:
        layers.append(Residual("flat.res1", "flat", 2 * c, rng))
    _conv_bn_act(layers, "flat.2", "flat", 2 * c, c, 3, 1, 1, "relu", rng)
    # up-sampling: 4x4/s2 deconv (doubles size) alternating with 3x3 conv (halves channels)
    for i in range(3):
        _conv_bn_act(layers, f"up.{2 * i}", "up", c, c, 4, 2, 1, "relu", rng, transposed=True)
        if i < 2:
            _conv_bn_act(layers, f"up.{2 * i + 1}", "up", c, c // 2, 3, 1, 1, "relu", rng)
            c //= 2
    layers.append(Conv("up.5.conv", "up", c, 3, 3, 1, 1, rng))
    layers.append(Act("up.5.act", "up", "sigmoid"))
    return LayerStack(spec, layers)


def discriminator_depth(size: int) -> list[int]:
    """Spatial sizes after each 4x4/s2 conv: halve while > 5 and even (at least once)."""
    sizes = []
    s = size
    while s % 2 == 0 and (s > 5 or not sizes):
        s //= 2
        sizes.append(s)
    if not sizes:
        raise ContractError(f"discriminator input size {size} must be even")
    return sizes


def _build_discriminator(spec: NetworkSpec, rng: SeededRng) -> LayerStack:
    h, w = spec.input_size
    if h != w:
        raise ContractError("discriminator input must be square")
    sizes = discriminator_depth(h)
    layers: list[Layer] = []
    c, cout = spec.input_channels, spec.base_channels
    for i in range(len(sizes)):
        _conv_bn_act(layers, f"disc.{i}", "disc", c, cout, 4, 2, 1, "leakyrelu", rng)
        c, cout = cout, 2 * cout
    layers.append(Dense("disc.fc", "disc", c * sizes[-1] ** 2, 1, rng))
    layers.append(Act("disc.out", "disc", "sigmoid"))
    return LayerStack(spec, layers)


def _build_classifier(spec: NetworkSpec, rng: SeededRng) -> LayerStack:
    h, w = spec.input_size
    if h % 16 or w % 16:
        raise ContractError("classifier input dims must be divisible by 16")
    layers: list[Layer] = []
    c = spec.input_channels
    for i, cout in enumerate(spec.base_channels * m for m in (1, 2, 4, 8)):
        _conv_bn_act(layers, f"cls.{2 * i}", "cls", c, cout, 4, 2, 1, "relu", rng)
        _conv_bn_act(layers, f"cls.{2 * i + 1}", "cls", cout, cout, 3, 1, 1, "relu", rng)
        c = cout
    layers.append(GlobalPool("cls.pool", "cls"))
    feature_index = len(layers)
    layers.append(Dense("cls.fc", "cls", c, spec.num_classes, rng))
    return LayerStack(spec, layers, feature_index=feature_index)


def build_network(spec: NetworkSpec, rng: SeededRng) -> LayerStack:
    if spec.kind == "generator":
        return _build_generator(spec, rng)
    if spec.kind == "discriminator":
        return _build_discriminator(spec, rng)
    return _build_classifier(spec, rng)


# -------------------------------------------------------------------- forward


def _run(layers, x, mode):
    for layer in layers:
        x = layer.forward(x, mode)
    return x


def logits(net: LayerStack, x, mode: str = "eval") -> Tensor:
    if net.spec.kind != "classifier":
        raise ContractError("logits() is only defined for the classifier")
    return _run(net.layers, T.as_tensor(x), mode)


def features(net: LayerStack, x, mode: str = "eval") -> Tensor:
    """Penultimate classifier activations, shape (N, 8 * base_channels)."""
    if net.spec.kind != "classifier":
        raise ContractError("features() is only defined for the classifier")
    return _run(net.layers[: net.feature_index], T.as_tensor(x), mode)


def forward(net: LayerStack, x, mode: str = "train") -> Tensor:
    x = T.as_tensor(x)
    if x.data.ndim != 4:
        raise T.DimensionError(f"expected N,C,H,W input, got {x.shape}", axis=0)
    if x.shape[1] != net.spec.input_channels:
        raise T.DimensionError(f"expected {net.spec.input_channels} channels, got {x.shape[1]}", axis=1)
    h, w = x.shape[2:]
    spec = net.spec
    if spec.kind == "generator":
        if h % 8 or w % 8:
            raise ContractError(f"generator input dims must be divisible by 8, got {h}x{w}")
        if spec.with_fc_bottleneck and (h, w) != tuple(spec.input_size):
            raise ContractError(f"fc-bottleneck generator is fixed to {spec.input_size}, got {h}x{w}")
        return _run(net.layers, x, mode)
    if (h, w) != tuple(spec.input_size):
        raise ContractError(f"{spec.kind} expects {spec.input_size} input, got {h}x{w}")
    if spec.kind == "discriminator":
        return _run(net.layers, x, mode).reshape(x.shape[0])
    z = logits(net, x, mode)
    return T.exp(T.log_softmax(z))


@dataclass
class FeatureVector:
    values: np.ndarray
    dims: tuple[int, int, int]

    def __post_init__(self):
        if self.values.size != int(np.prod(self.dims)):
            raise T.DimensionError(f"{self.values.size} values for dims {self.dims}")


def extract_feature(classifier: LayerStack, image) -> FeatureVector:
    """Penultimate activations (eval mode) for one H,W,3 or 3,H,W image."""
    a = np.asarray(image, dtype=np.float64)
    if a.ndim == 3 and a.shape[-1] == 3 and a.shape[0] != 3:
        a = a.transpose(2, 0, 1)
    f = features(classifier, a[None], "eval").data[0]
    return FeatureVector(f.copy(), (f.size, 1, 1))
