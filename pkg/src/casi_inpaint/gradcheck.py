"""Finite-difference gradient checks for every differentiable primitive and loss."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import losses as L
from . import model as Mdl
from . import tensor as T
from .rng import SeededRng
from .tensor import Tensor

STEP = 1e-5
FLOOR = 1e-8


@dataclass
class Case:
    leaves: list[Tensor]
    fn: Callable[[], Tensor]
    # None means every coordinate; otherwise this many sampled per leaf
    sample: int | None = None


def _away_from_zero(rng: SeededRng, shape, margin=0.05) -> np.ndarray:
    """Values with |v| >= margin so kinks sit well outside the FD stencil."""
    u = rng.normal(shape)
    return np.sign(u) * (margin + np.abs(u))


def _leaf(a) -> Tensor:
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=True)


def _conv_case(rng: SeededRng, transposed: bool) -> Case:
    stride = 1 + int(rng.integers(2, ()))
    pad = int(rng.integers(2, ()))
    cin, cout, k = 2, 3, 3
    x = _leaf(rng.normal((1, cin, 5, 5) if transposed else (1, cin, 7, 7)))
    w = _leaf(rng.normal((cin, cout, k, k) if transposed else (cout, cin, k, k), 0.0, 0.5))
    b = _leaf(rng.normal((cout,)))
    op = T.conv_transpose2d if transposed else T.conv2d
    r = rng.normal(op(x, w, b, stride, pad).shape)
    return Case([x, w, b], lambda: T.reduce_sum(T.mul(op(x, w, b, stride, pad), r)))


def _bn_case(rng: SeededRng, mode: str) -> Case:
    x = _leaf(rng.normal((3, 2, 3, 3), 0.5, 2.0))
    gamma = _leaf(rng.normal((2,), 1.0, 0.3))
    beta = _leaf(rng.normal((2,)))
    mean, var = rng.normal((2,)), 0.5 + rng.uniform((2,))
    r = rng.normal(x.shape)

    def fn():
        if mode == "train":
            out = T.batchnorm2d(x, gamma, beta, "train")
        else:
            out = T.batchnorm2d(x, gamma, beta, "eval", mean.copy(), var.copy())
        return T.reduce_sum(T.mul(out, r))

    return Case([x, gamma, beta], fn)


def _activation_case(rng: SeededRng, kind: str) -> Case:
    x = _leaf(_away_from_zero(rng, (3, 4)) * 2.0)
    r = rng.normal(x.shape)
    return Case([x], lambda: T.reduce_sum(T.mul(T.activation(kind, x), r)))


def _linear_case(rng: SeededRng) -> Case:
    x, w, b = _leaf(rng.normal((4, 5))), _leaf(rng.normal((5, 3))), _leaf(rng.normal((3,)))
    r = rng.normal((4, 3))
    return Case([x, w, b], lambda: T.reduce_sum(T.mul(T.linear(x, w, b), r)))


def _mlp_case(rng: SeededRng) -> Case:
    """mean((sigmoid(Wx + b) - t)^2) on a 2x2 problem."""
    x, t = rng.normal((2, 2)), rng.uniform((2, 2))
    w, b = _leaf(rng.normal((2, 2))), _leaf(rng.normal((2,)))
    return Case([w, b], lambda: T.reduce_mean(T.square(T.activation("sigmoid", T.linear(x, w, b)) - t)))


def _log_softmax_case(rng: SeededRng) -> Case:
    x = _leaf(rng.normal((3, 5), 0.0, 2.0))
    r = rng.normal(x.shape)
    return Case([x], lambda: T.reduce_sum(T.mul(T.log_softmax(x), r)))


def _pixel_case(rng: SeededRng) -> Case:
    mask = Mdl.make_center_mask(8, 8, overlap=1)
    x = rng.uniform((2, 3, 8, 8))
    g = _leaf(rng.uniform((2, 3, 8, 8)))
    return Case([g], lambda: L.pixel_l2_loss(x, g, mask))


def _d_loss_case(rng: SeededRng) -> Case:
    d_real = _leaf(0.05 + 0.9 * rng.uniform((4,)))
    d_fake = _leaf(0.05 + 0.9 * rng.uniform((4,)))
    return Case([d_real, d_fake], lambda: L.discriminator_loss(d_real, d_fake))


def _g_adv_case(rng: SeededRng) -> Case:
    d_fake = _leaf(0.05 + 0.9 * rng.uniform((4,)))
    return Case([d_fake], lambda: L.generator_adv_loss(d_fake))


def _per_case(rng: SeededRng) -> Case:
    fx, fz = _leaf(rng.normal((3, 8))), _leaf(rng.normal((3, 8)))
    return Case([fx, fz], lambda: L.perceptual_loss(fx, fz))


def _joint_case(rng: SeededRng) -> Case:
    parts = [_leaf(rng.uniform(())) for _ in range(3)]
    w = L.LossWeights.with_adv_per(0.001, 0.2)
    return Case(parts, lambda: L.joint_loss(*parts, w))


def _network_loss_case(rng: SeededRng, which: str) -> Case:
    """A loss on the composite of an 8x8 image, differentiated w.r.t. the generator output."""
    size = 16 if which == "perceptual" else 8
    mask = Mdl.make_center_mask(size, size, overlap=1)
    top, left, bh, bw = mask.predicted_box()
    x = rng.uniform((2, 3, size, size))
    g = _leaf(rng.uniform((2, 3, size, size)))
    if which == "adversarial":
        disc = Mdl.build_network(Mdl.NetworkSpec("discriminator", 4, input_size=(bh, bw)), rng)

        def fn():
            z = Mdl.compose(x, g, mask)
            return L.generator_adv_loss(Mdl.forward(disc, T.crop(z, top, left, bh, bw), "train"))

        return Case([g], fn, sample=24)
    if which == "perceptual":
        cls = Mdl.build_network(Mdl.NetworkSpec("classifier", 4, input_size=(size, size)), rng)
        _rescale_for_check(cls, rng)
        f_x = Mdl.features(cls, x, "eval")

        def fn():
            return L.perceptual_loss(f_x, Mdl.features(cls, Mdl.compose(x, g, mask), "eval"))

        return Case([g], fn, sample=24)
    raise ValueError(f"unknown network loss {which!r}")


def _rescale_for_check(net: Mdl.LayerStack, rng: SeededRng) -> None:
    """Fan-in weight scale and non-trivial running statistics.

    At the training init scale the eval-mode features of a fresh network
    shrink to ~1e-9 and the perceptual loss underflows to noise.
    """
    for name, p in net.named_parameters():
        if name.endswith("weight") and p.data.ndim > 1:
            fan_in = p.data[0].size if p.data.ndim == 4 else p.data.shape[0]
            p.data[...] = rng.normal(p.data.shape, 0.0, (2.0 / fan_in) ** 0.5)
    for name, buf in net.named_buffers():
        if name.endswith("running_mean"):
            buf[:] = rng.normal(buf.shape, 0.0, 0.1)
        else:
            buf[:] = 0.5 + rng.uniform(buf.shape)


CASES: dict[str, Callable[[SeededRng], Case]] = {
    "conv2d": lambda r: _conv_case(r, False),
    "transposed_conv2d": lambda r: _conv_case(r, True),
    "batchnorm2d_train": lambda r: _bn_case(r, "train"),
    "batchnorm2d_eval": lambda r: _bn_case(r, "eval"),
    "relu": lambda r: _activation_case(r, "relu"),
    "leakyrelu": lambda r: _activation_case(r, "leakyrelu"),
    "sigmoid": lambda r: _activation_case(r, "sigmoid"),
    "tanh": lambda r: _activation_case(r, "tanh"),
    "linear": _linear_case,
    "log_softmax": _log_softmax_case,
    "sigmoid_mlp": _mlp_case,
    "pixel_l2_loss": _pixel_case,
    "discriminator_loss": _d_loss_case,
    "generator_adv_loss": _g_adv_case,
    "perceptual_loss": _per_case,
    "joint_loss": _joint_case,
    "adv_through_discriminator": lambda r: _network_loss_case(r, "adversarial"),
    "per_through_classifier": lambda r: _network_loss_case(r, "perceptual"),
}


def _coords(leaf: Tensor, sample: int | None, rng: SeededRng) -> list[int]:
    n = leaf.data.size
    if sample is None or sample >= n:
        return list(range(n))
    return [int(i) for i in rng.integers(n, sample)]


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), FLOOR)


def grad_check(op_config, seed: int = 0, tol: float = 1e-4) -> float:
    """Max elementwise relative error between tape and central-difference gradients.

    ``op_config`` is a case name from ``CASES`` or a dict with an ``"op"``
    key. ``tol`` is only echoed by callers; the raw error is returned.
    """
    name = op_config["op"] if isinstance(op_config, dict) else op_config
    if name not in CASES:
        raise ValueError(f"unknown op {name!r}; choose from {sorted(CASES)}")
    rng = SeededRng(seed)
    case = CASES[name](rng)
    with T.Tape() as tape:
        loss = case.fn()
    grads = tape.backward(loss, case.leaves)
    worst = 0.0
    for leaf in case.leaves:
        flat = leaf.data.reshape(-1)
        analytic = grads[leaf.id].reshape(-1)
        for i in _coords(leaf, case.sample, rng):
            orig = flat[i]
            flat[i] = orig + STEP
            up = case.fn().item()
            flat[i] = orig - STEP
            down = case.fn().item()
            flat[i] = orig
            worst = max(worst, relative_error(float(analytic[i]), (up - down) / (2 * STEP)))
    return worst


@dataclass
class SuiteRow:
    op: str
    max_error: float
    seeds: int
    passed: bool


def run_suite(seeds=range(10), tol: float = 1e-4, ops=None) -> tuple[list[SuiteRow], float]:
    """Every case over every seed. Returns the table and the wall time."""
    start = time.perf_counter()
    rows = []
    seeds = list(seeds)
    for name in ops or CASES:
        err = max(grad_check(name, s, tol) for s in seeds)
        rows.append(SuiteRow(name, err, len(seeds), err <= tol))
    return rows, time.perf_counter() - start


def format_table(rows: list[SuiteRow]) -> str:
    width = max(len(r.op) for r in rows)
    lines = [f"{'op':<{width}}  {'max_rel_err':>12}  seeds  status"]
    for r in rows:
        lines.append(f"{r.op:<{width}}  {r.max_error:12.3e}  {r.seeds:5d}  {'ok' if r.passed else 'FAIL'}")
    return "\n".join(lines)
