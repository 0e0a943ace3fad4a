"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every primitive is a pair of numpy functions registered in ``OPS``. When a
:class:`Tape` is active and any input requires a gradient, the call is
appended to the tape as a :class:`Record` holding whatever the backward
pass needs.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import kernels


class DimensionError(ValueError):
    """Shape mismatch; ``axis`` names the offending axis when there is one."""

    def __init__(self, message: str, axis: int | None = None):
        super().__init__(message)
        self.axis = axis


class ContractError(ValueError):
    """A precondition on arguments (other than a plain shape mismatch) failed."""


_next_id = itertools.count()


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "id", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.id = next(_next_id)
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported")
        return mul(self, 1.0 / np.asarray(other, dtype=np.float64))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


@dataclass
class Record:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    attrs: dict
    saved: dict = field(default_factory=dict)

    @property
    def input_ids(self) -> tuple[int, ...]:
        return tuple(t.id for t in self.inputs)

    @property
    def output_id(self) -> int:
        return self.output.id


_tapes: list["Tape"] = []


class Tape:
    """Ordered log of primitive applications. Use as a context manager."""

    def __init__(self):
        self.records: list[Record] = []

    def __enter__(self) -> "Tape":
        _tapes.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _tapes.remove(self)

    def leaves(self) -> list[Tensor]:
        produced = {r.output.id for r in self.records}
        seen: dict[int, Tensor] = {}
        for r in self.records:
            for t in r.inputs:
                if t.requires_grad and t.id not in produced:
                    seen.setdefault(t.id, t)
        return list(seen.values())

    def backward(self, loss: Tensor, params=None) -> dict[int, np.ndarray]:
        """Gradients of a scalar ``loss`` for every requires_grad leaf.

        Leaves in ``params`` that do not reach the loss get zeros. Each
        leaf's ``.grad`` is overwritten.
        """
        if loss.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {loss.id: np.ones_like(loss.data)}
        for rec in reversed(self.records):
            g = grads.pop(rec.output.id, None)
            if g is None:
                continue
            spec = OPS[rec.op]
            in_grads = spec.backward(rec.saved, g, *(t.data for t in rec.inputs), **rec.attrs)
            for t, gi in zip(rec.inputs, in_grads):
                if gi is None or not t.requires_grad:
                    continue
                prev = grads.get(t.id)
                grads[t.id] = gi if prev is None else prev + gi
        leaves = {t.id: t for t in self.leaves()}
        for p in params or ():
            leaves.setdefault(p.id, p)
        out: dict[int, np.ndarray] = {}
        for tid, t in leaves.items():
            g = grads.get(tid)
            if g is None:
                g = np.zeros_like(t.data)
            t.grad = g
            out[tid] = g
        return out

    def replay(self) -> dict[int, np.ndarray]:
        """Recompute every recorded output from the current leaf values."""
        env: dict[int, np.ndarray] = {}
        for rec in self.records:
            xs = [env.get(t.id, t.data) for t in rec.inputs]
            env[rec.output.id] = OPS[rec.op].forward({}, *xs, **rec.attrs)
        return env


@dataclass(frozen=True)
class OpSpec:
    forward: Callable
    backward: Callable


OPS: dict[str, OpSpec] = {}


def register(name: str):
    def deco(cls):
        OPS[name] = OpSpec(cls.forward, cls.backward)
        return cls

    return deco


def apply(name: str, *inputs, **attrs) -> Tensor:
    tensors = tuple(as_tensor(x) for x in inputs)
    saved: dict = {}
    out_data = OPS[name].forward(saved, *(t.data for t in tensors), **attrs)
    tape = _tapes[-1] if _tapes else None
    needs = tape is not None and any(t.requires_grad for t in tensors)
    out = Tensor(out_data, requires_grad=needs)
    if needs:
        tape.records.append(Record(name, tensors, out, attrs, saved))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise


@register("add")
class _Add:
    @staticmethod
    def forward(saved, a, b):
        return a + b

    @staticmethod
    def backward(saved, g, a, b):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)


@register("sub")
class _Sub:
    @staticmethod
    def forward(saved, a, b):
        return a - b

    @staticmethod
    def backward(saved, g, a, b):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)


@register("mul")
class _Mul:
    @staticmethod
    def forward(saved, a, b):
        return a * b

    @staticmethod
    def backward(saved, g, a, b):
        return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)


@register("square")
class _Square:
    @staticmethod
    def forward(saved, x):
        return x * x

    @staticmethod
    def backward(saved, g, x):
        return (2.0 * x * g,)


@register("log")
class _Log:
    @staticmethod
    def forward(saved, x):
        return np.log(x)

    @staticmethod
    def backward(saved, g, x):
        return (g / x,)


@register("exp")
class _Exp:
    @staticmethod
    def forward(saved, x):
        y = np.exp(x)
        saved["y"] = y
        return y

    @staticmethod
    def backward(saved, g, x):
        return (g * saved.get("y", np.exp(x)),)


@register("clip")
class _Clip:
    @staticmethod
    def forward(saved, x, lo, hi):
        return np.clip(x, lo, hi)

    @staticmethod
    def backward(saved, g, x, lo, hi):
        return (g * ((x >= lo) & (x <= hi)),)


@register("relu")
class _Relu:
    @staticmethod
    def forward(saved, x):
        return np.maximum(x, 0.0)

    @staticmethod
    def backward(saved, g, x):
        return (g * (x > 0),)


@register("leakyrelu")
class _LeakyRelu:
    @staticmethod
    def forward(saved, x, slope):
        return np.where(x > 0, x, slope * x)

    @staticmethod
    def backward(saved, g, x, slope):
        return (np.where(x > 0, g, slope * g),)


@register("sigmoid")
class _Sigmoid:
    @staticmethod
    def forward(saved, x):
        # split by sign so exp never overflows
        e = np.exp(-np.abs(x))
        y = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
        saved["y"] = y
        return y

    @staticmethod
    def backward(saved, g, x):
        y = saved["y"] if "y" in saved else _Sigmoid.forward({}, x)
        return (g * y * (1.0 - y),)


@register("tanh")
class _Tanh:
    @staticmethod
    def forward(saved, x):
        y = np.tanh(x)
        saved["y"] = y
        return y

    @staticmethod
    def backward(saved, g, x):
        y = saved.get("y", np.tanh(x))
        return (g * (1.0 - y * y),)


# ----------------------------------------------------------------- reductions


@register("sum")
class _Sum:
    @staticmethod
    def forward(saved, x, axis, keepdims):
        return np.asarray(x.sum(axis=axis, keepdims=keepdims))

    @staticmethod
    def backward(saved, g, x, axis, keepdims):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)


@register("reshape")
class _Reshape:
    @staticmethod
    def forward(saved, x, shape):
        return x.reshape(shape)

    @staticmethod
    def backward(saved, g, x, shape):
        return (g.reshape(x.shape),)


@register("crop")
class _Crop:
    @staticmethod
    def forward(saved, x, top, left, height, width):
        return x[..., top : top + height, left : left + width].copy()

    @staticmethod
    def backward(saved, g, x, top, left, height, width):
        out = np.zeros_like(x)
        out[..., top : top + height, left : left + width] = g
        return (out,)


@register("log_softmax")
class _LogSoftmax:
    @staticmethod
    def forward(saved, x):
        shifted = x - x.max(axis=1, keepdims=True)
        y = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        saved["y"] = y
        return y

    @staticmethod
    def backward(saved, g, x):
        y = saved.get("y", _LogSoftmax.forward({}, x))
        return (g - np.exp(y) * g.sum(axis=1, keepdims=True),)


# --------------------------------------------------------------------- layers


@register("matmul")
class _Matmul:
    @staticmethod
    def forward(saved, a, b):
        return a @ b

    @staticmethod
    def backward(saved, g, a, b):
        return g @ b.T, a.T @ g


@register("linear")
class _Linear:
    @staticmethod
    def forward(saved, x, w, b):
        return x @ w + b

    @staticmethod
    def backward(saved, g, x, w, b):
        return g @ w.T, x.T @ g, g.sum(axis=0)


def _conv_out(size: int, k: int, stride: int, pad: int, axis: int) -> int:
    span = size + 2 * pad - k
    if span < 0 or span % stride:
        raise DimensionError(
            f"axis {axis}: (size {size} + 2*pad {pad} - kernel {k}) must be a non-negative multiple of stride {stride}",
            axis=axis,
        )
    return span // stride + 1


def _pad(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return np.ascontiguousarray(x)
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


@register("conv2d")
class _Conv2d:
    @staticmethod
    def forward(saved, x, w, b, stride, pad):
        n, c, h, wd = x.shape
        k, _, kh, kw = w.shape
        oh = _conv_out(h, kh, stride, pad, 2)
        ow = _conv_out(wd, kw, stride, pad, 3)
        cols = kernels.im2col(_pad(x, pad), kh, kw, stride, oh, ow).reshape(n * oh * ow, -1)
        saved["cols"] = cols
        out = cols @ w.reshape(k, -1).T + b
        return np.ascontiguousarray(out.reshape(n, oh, ow, k).transpose(0, 3, 1, 2))

    @staticmethod
    def backward(saved, g, x, w, b, stride, pad):
        n, c, h, wd = x.shape
        k, _, kh, kw = w.shape
        oh, ow = g.shape[2:]
        cols = saved.get("cols")
        if cols is None:
            cols = kernels.im2col(_pad(x, pad), kh, kw, stride, oh, ow).reshape(n * oh * ow, -1)
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, k)
        dw = (g2.T @ cols).reshape(w.shape)
        dcols = np.ascontiguousarray((g2 @ w.reshape(k, -1)).reshape(n, oh, ow, -1))
        dxp = kernels.col2im(dcols, c, h + 2 * pad, wd + 2 * pad, kh, kw, stride)
        dx = dxp[:, :, pad : pad + h, pad : pad + wd]
        return np.ascontiguousarray(dx), dw, g2.sum(axis=0)


@register("conv_transpose2d")
class _ConvTranspose2d:
    @staticmethod
    def forward(saved, x, w, b, stride, pad):
        n, c, h, wd = x.shape
        _, k, kh, kw = w.shape
        hp = (h - 1) * stride + kh
        wp = (wd - 1) * stride + kw
        cols = x.transpose(0, 2, 3, 1).reshape(-1, c) @ w.reshape(c, -1)
        full = kernels.col2im(np.ascontiguousarray(cols.reshape(n, h, wd, -1)), k, hp, wp, kh, kw, stride)
        out = full[:, :, pad : hp - pad, pad : wp - pad] + b.reshape(1, -1, 1, 1)
        return np.ascontiguousarray(out)

    @staticmethod
    def backward(saved, g, x, w, b, stride, pad):
        n, c, h, wd = x.shape
        _, k, kh, kw = w.shape
        gcols = kernels.im2col(_pad(g, pad), kh, kw, stride, h, wd).reshape(n * h * wd, -1)
        wm = w.reshape(c, -1)
        dx = (gcols @ wm.T).reshape(n, h, wd, c).transpose(0, 3, 1, 2)
        dw = (x.transpose(0, 2, 3, 1).reshape(-1, c).T @ gcols).reshape(w.shape)
        return np.ascontiguousarray(dx), dw, g.sum(axis=(0, 2, 3))


@register("batchnorm2d")
class _BatchNorm2d:
    """``mean``/``var`` attrs are None in train mode (batch statistics)."""

    @staticmethod
    def forward(saved, x, gamma, beta, eps, mean=None, var=None):
        if mean is None:
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            saved["batch_mean"] = mean
            saved["batch_var"] = var
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = (x - mean.reshape(1, -1, 1, 1)) * inv_std.reshape(1, -1, 1, 1)
        saved["xhat"] = xhat
        saved["inv_std"] = inv_std
        return xhat * gamma.reshape(1, -1, 1, 1) + beta.reshape(1, -1, 1, 1)

    @staticmethod
    def backward(saved, g, x, gamma, beta, eps, mean=None, var=None):
        xhat = saved["xhat"]
        inv_std = saved["inv_std"].reshape(1, -1, 1, 1)
        dgamma = (g * xhat).sum(axis=(0, 2, 3))
        dbeta = g.sum(axis=(0, 2, 3))
        dxhat = g * gamma.reshape(1, -1, 1, 1)
        if mean is not None:
            return dxhat * inv_std, dgamma, dbeta
        m = x.shape[0] * x.shape[2] * x.shape[3]
        dx = (inv_std / m) * (
            m * dxhat
            - dxhat.sum(axis=(0, 2, 3), keepdims=True)
            - xhat * (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
        )
        return dx, dgamma, dbeta


# ------------------------------------------------------------ public wrappers


def add(a, b) -> Tensor:
    return apply("add", a, b)


def sub(a, b) -> Tensor:
    return apply("sub", a, b)


def mul(a, b) -> Tensor:
    return apply("mul", a, b)


def square(x) -> Tensor:
    return apply("square", x)


def log(x) -> Tensor:
    return apply("log", x)


def exp(x) -> Tensor:
    return apply("exp", x)


def clip(x, lo: float, hi: float) -> Tensor:
    return apply("clip", x, lo=lo, hi=hi)


def reduce_sum(x, axis=None, keepdims=False) -> Tensor:
    if isinstance(axis, list):
        axis = tuple(axis)
    return apply("sum", x, axis=axis, keepdims=keepdims)


def reduce_mean(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    if axis is None:
        count = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([x.shape[a] for a in axes]))
    return reduce_sum(x, axis=axis, keepdims=keepdims) * (1.0 / count)


def reshape(x, shape) -> Tensor:
    return apply("reshape", x, shape=tuple(shape))


def crop(x, top: int, left: int, height: int, width: int) -> Tensor:
    return apply("crop", x, top=top, left=left, height=height, width=width)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[-1] != b.shape[0]:
        raise DimensionError(f"inner dims differ: {a.shape} @ {b.shape}", axis=1)
    return apply("matmul", a, b)


def log_softmax(x) -> Tensor:
    return apply("log_softmax", x)


def activation(kind: str, x, slope: float = 0.2) -> Tensor:
    if kind == "relu":
        return apply("relu", x)
    if kind == "leakyrelu":
        return apply("leakyrelu", x, slope=slope)
    if kind == "sigmoid":
        return apply("sigmoid", x)
    if kind == "tanh":
        return apply("tanh", x)
    raise ValueError(f"unknown activation {kind!r}")


def linear(x, w, b) -> Tensor:
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.data.ndim != 2 or w.data.ndim != 2:
        raise DimensionError("linear expects 2-D input and weight")
    if x.shape[1] != w.shape[0]:
        raise DimensionError(f"input width {x.shape[1]} != weight rows {w.shape[0]}", axis=1)
    if b.shape != (w.shape[1],):
        raise DimensionError(f"bias shape {b.shape} != ({w.shape[1]},)", axis=0)
    return apply("linear", x, w, b)


def _check_conv_args(x: Tensor, w: Tensor, b: Tensor, in_axis: int, out_axis: int) -> None:
    if x.data.ndim != 4:
        raise DimensionError(f"expected N,C,H,W input, got shape {x.shape}", axis=0)
    if w.data.ndim != 4:
        raise DimensionError(f"expected 4-D weight, got shape {w.shape}", axis=0)
    if x.shape[1] != w.shape[in_axis]:
        raise DimensionError(f"input channels {x.shape[1]} != weight channels {w.shape[in_axis]}", axis=1)
    if b.shape != (w.shape[out_axis],):
        raise DimensionError(f"bias shape {b.shape} != ({w.shape[out_axis]},)", axis=1)


def conv2d(x, w, b, stride: int = 1, pad: int = 0) -> Tensor:
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    _check_conv_args(x, w, b, 1, 0)
    _conv_out(x.shape[2], w.shape[2], stride, pad, 2)
    _conv_out(x.shape[3], w.shape[3], stride, pad, 3)
    return apply("conv2d", x, w, b, stride=stride, pad=pad)


def conv_transpose2d(x, w, b, stride: int = 1, pad: int = 0) -> Tensor:
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    _check_conv_args(x, w, b, 0, 1)
    for axis in (2, 3):
        out = (x.shape[axis] - 1) * stride - 2 * pad + w.shape[axis]
        if out < 1:
            raise DimensionError(f"axis {axis}: transposed output size {out} < 1", axis=axis)
    return apply("conv_transpose2d", x, w, b, stride=stride, pad=pad)


transposed_conv2d = conv_transpose2d


def batchnorm2d(
    x,
    gamma,
    beta,
    mode: str = "train",
    running_mean: np.ndarray | None = None,
    running_var: np.ndarray | None = None,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel batch normalization.

    Train mode normalizes with biased batch statistics and, when running
    buffers are given, updates them in place:
    ``running = (1 - momentum) * running + momentum * batch``.
    Eval mode normalizes with the running buffers.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"gamma/beta must have shape ({c},)", axis=1)
    if mode == "eval":
        if running_mean is None or running_var is None:
            raise ContractError("eval mode needs running statistics")
        return apply("batchnorm2d", x, gamma, beta, eps=eps, mean=running_mean.copy(), var=running_var.copy())
    if mode != "train":
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    out = apply("batchnorm2d", x, gamma, beta, eps=eps)
    if running_mean is not None:
        running_mean *= 1.0 - momentum
        running_mean += momentum * x.data.mean(axis=(0, 2, 3))
    if running_var is not None:
        running_var *= 1.0 - momentum
        running_var += momentum * x.data.var(axis=(0, 2, 3))
    return out
