"""Classifier pretraining, the alternating D/G training loop, inference and
checkpoint plumbing."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import losses as L
from . import model as Mdl
from . import tensor as T
from .checkpoint import Checkpoint, FingerprintMismatchError, save_checkpoint
from .data_io import mean_fill
from .optim import AdamState, adam_step
from .rng import SeededRng
from .tensor import ContractError

log = logging.getLogger(__name__)

VARIANTS = ("casi", "casi-minus", "casi-fc")
CURVE_COLUMNS = ("iteration", "l_pix", "l_adv", "l_per", "l_inp")


def to_nchw(images: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(images, dtype=np.float64).transpose(0, 3, 1, 2))


def to_nhwc(images: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(images).transpose(0, 2, 3, 1))


# -------------------------------------------------------------- classifier


@dataclass(frozen=True)
class PretrainConfig:
    epochs: int = 20
    batch_size: int = 8
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    seed: int = 0
    base_channels: int = 16


@dataclass
class PretrainResult:
    net: Mdl.LayerStack
    initial_loss: float
    epoch_losses: list[float]
    train_accuracy: float
    heldout_accuracy: float | None


def _permutation(rng: SeededRng, n: int) -> np.ndarray:
    order = np.arange(n)
    for i in range(n - 1, 0, -1):
        j = int(rng.integers(i + 1, 1)[0])
        order[i], order[j] = order[j], order[i]
    return order


def cross_entropy(net: Mdl.LayerStack, x, labels: np.ndarray, mode: str) -> T.Tensor:
    logp = T.log_softmax(Mdl.logits(net, x, mode))
    onehot = np.eye(net.spec.num_classes)[labels]
    return T.reduce_sum(T.mul(logp, onehot)) * (-1.0 / len(labels))


def classify(net: Mdl.LayerStack, images_nchw: np.ndarray, batch: int = 64) -> np.ndarray:
    """Eval-mode class probabilities, (N, K)."""
    out = []
    for s in range(0, len(images_nchw), batch):
        out.append(Mdl.forward(net, images_nchw[s : s + batch], "eval").data)
    return np.concatenate(out)


def pretrain_classifier(images, labels, cfg: PretrainConfig = PretrainConfig(), heldout=None) -> PretrainResult:
    """Train the feature classifier with cross-entropy and Adam.

    ``images`` are N, H, W, 3 in [0, 1]; ``heldout`` an optional
    (images, labels) pair scored after training.
    """
    labels = np.asarray(labels, dtype=np.int64)
    k = int(labels.max()) + 1 if labels.size else 0
    if k < 2 or len(np.unique(labels)) < 2:
        raise ContractError("classifier pretraining needs at least two classes")
    x = to_nchw(images)
    rng = SeededRng(cfg.seed)
    spec = Mdl.NetworkSpec("classifier", cfg.base_channels, num_classes=k, input_size=tuple(x.shape[2:]))
    net = Mdl.build_network(spec, rng)
    params = net.parameters()
    state = AdamState.for_params(params, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2)
    initial = float(cross_entropy(net, x, labels, "train").data)
    epoch_losses = []
    for epoch in range(cfg.epochs):
        order = _permutation(rng, len(x))
        total = 0.0
        for s in range(0, len(x), cfg.batch_size):
            idx = order[s : s + cfg.batch_size]
            with T.Tape() as tape:
                loss = cross_entropy(net, x[idx], labels[idx], "train")
            tape.backward(loss, params)
            adam_step(params, [p.grad for p in params], state)
            total += float(loss.data) * len(idx)
        epoch_losses.append(total / len(x))
        log.debug("classifier epoch %d loss %.4f", epoch + 1, epoch_losses[-1])
    net.set_trainable(False)
    train_acc = float((classify(net, x).argmax(1) == labels).mean())
    held = None
    if heldout is not None:
        hx, hy = heldout
        held = float((classify(net, to_nchw(hx)).argmax(1) == np.asarray(hy)).mean())
    return PretrainResult(net, initial, epoch_losses, train_acc, held)


def classifier_checkpoint(result_net: Mdl.LayerStack, meta: dict | None = None) -> Checkpoint:
    cfg = {"spec": result_net.spec.to_dict(), **(meta or {})}
    arrays = {f"F/{k}": v for k, v in result_net.state_arrays().items()}
    return Checkpoint("classifier", cfg, {"spec": result_net.spec.to_dict()}, 0, (0, 0, 0, 0, 0), arrays)


def classifier_from_checkpoint(ck: Checkpoint) -> Mdl.LayerStack:
    spec = Mdl.NetworkSpec.from_dict(ck.config["spec"])
    net = Mdl.build_network(spec, SeededRng(0))
    net.load_state_arrays({k[2:]: v for k, v in ck.arrays.items() if k.startswith("F/")})
    net.set_trainable(False)
    return net


# ---------------------------------------------------------------- training


@dataclass(frozen=True)
class TrainConfig:
    max_iterations: int = 300
    d_iters: int = 1
    batch_size: int = 8
    image_size: int = 32
    overlap: int = 4
    lambda_adv: float = 0.001
    lambda_per: float = 0.2
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    base_channels: int = 16
    variant: str = "casi"
    checkpoint_interval: int = 0
    manifest: str = ""

    def __post_init__(self):
        if self.d_iters < 1:
            raise ContractError("d_iters must be >= 1")
        if self.batch_size < 1:
            raise ContractError("batch_size must be >= 1")
        if self.image_size % 8:
            raise ContractError("image_size must be divisible by 8")
        if self.variant not in VARIANTS:
            raise ContractError(f"variant must be one of {VARIANTS}")
        L.LossWeights.with_adv_per(self.lambda_adv, self.lambda_per)

    @property
    def weights(self) -> L.LossWeights:
        return L.LossWeights.with_adv_per(self.lambda_adv, self.lambda_per)

    def to_dict(self) -> dict:
        return asdict(self)

    def fingerprint_fields(self) -> dict:
        """Fields that define the trajectory; length and bookkeeping excluded so runs can be extended."""
        d = self.to_dict()
        for k in ("max_iterations", "checkpoint_interval", "manifest"):
            d.pop(k)
        return d

    def generator_spec(self) -> Mdl.NetworkSpec:
        s = self.image_size
        return Mdl.NetworkSpec(
            "generator",
            self.base_channels,
            with_residual=self.variant != "casi-minus",
            with_fc_bottleneck=self.variant == "casi-fc",
            input_size=(s, s) if self.variant == "casi-fc" else None,
        )

    def discriminator_spec(self) -> Mdl.NetworkSpec:
        box = Mdl.make_center_mask(self.image_size, self.image_size, self.overlap).predicted_box()
        return Mdl.NetworkSpec("discriminator", self.base_channels, input_size=(box[2], box[3]))


@dataclass
class TrainState:
    config: TrainConfig
    generator: Mdl.LayerStack
    discriminator: Mdl.LayerStack
    classifier: Mdl.LayerStack | None
    adam_g: AdamState
    adam_d: AdamState
    rng: SeededRng
    iteration: int = 0
    curve: list[tuple[int, float, float, float, float]] = field(default_factory=list)


def init_state(cfg: TrainConfig, classifier: Mdl.LayerStack | None) -> TrainState:
    rng = SeededRng(cfg.seed)
    g = Mdl.build_network(cfg.generator_spec(), rng)
    d = Mdl.build_network(cfg.discriminator_spec(), rng)
    hyper = dict(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.adam_eps)
    return TrainState(
        cfg, g, d, classifier, AdamState.for_params(g.parameters(), **hyper), AdamState.for_params(d.parameters(), **hyper), rng
    )


def _adam_arrays(prefix: str, st: AdamState) -> dict[str, np.ndarray]:
    out = {f"{prefix}/t": np.array(float(st.t))}
    for i, (m, v) in enumerate(zip(st.m, st.v)):
        out[f"{prefix}/m{i}"] = m
        out[f"{prefix}/v{i}"] = v
    return out


def _load_adam(prefix: str, st: AdamState, arrays: dict) -> None:
    st.t = int(arrays[f"{prefix}/t"])
    for i in range(len(st.m)):
        st.m[i][...] = arrays[f"{prefix}/m{i}"]
        st.v[i][...] = arrays[f"{prefix}/v{i}"]


def state_to_checkpoint(st: TrainState) -> Checkpoint:
    arrays: dict[str, np.ndarray] = {}
    for tag, net in (("G", st.generator), ("D", st.discriminator), ("F", st.classifier)):
        if net is not None:
            arrays.update({f"{tag}/{k}": v for k, v in net.state_arrays().items()})
    arrays.update(_adam_arrays("adamG", st.adam_g))
    arrays.update(_adam_arrays("adamD", st.adam_d))
    arrays["curve"] = np.array(st.curve, dtype=np.float64).reshape(-1, len(CURVE_COLUMNS))
    config = {"train": st.config.to_dict()}
    if st.classifier is not None:
        config["classifier_spec"] = st.classifier.spec.to_dict()
    fp = {"train": st.config.fingerprint_fields(), "classifier_spec": config.get("classifier_spec")}
    return Checkpoint("casi", config, fp, st.iteration, st.rng.get_state(), arrays)


def state_from_checkpoint(ck: Checkpoint, cfg: TrainConfig | None = None) -> TrainState:
    """Rebuild a TrainState. If ``cfg`` is given its fingerprint must match."""
    stored = TrainConfig(**ck.config["train"])
    if cfg is not None:
        if cfg.fingerprint_fields() != stored.fingerprint_fields():
            raise FingerprintMismatchError("training config differs from the checkpoint's")
    else:
        cfg = stored
    classifier = None
    if "classifier_spec" in ck.config:
        classifier = Mdl.build_network(Mdl.NetworkSpec.from_dict(ck.config["classifier_spec"]), SeededRng(0))
        classifier.load_state_arrays({k[2:]: v for k, v in ck.arrays.items() if k.startswith("F/")})
        classifier.set_trainable(False)
    st = init_state(cfg, classifier)
    st.generator.load_state_arrays({k[2:]: v for k, v in ck.arrays.items() if k.startswith("G/")})
    st.discriminator.load_state_arrays({k[2:]: v for k, v in ck.arrays.items() if k.startswith("D/")})
    _load_adam("adamG", st.adam_g, ck.arrays)
    _load_adam("adamD", st.adam_d, ck.arrays)
    st.rng.set_state(ck.rng_state)
    st.iteration = ck.iteration
    st.curve = [tuple([int(r[0]), *map(float, r[1:])]) for r in ck.arrays["curve"]]
    return st


def mean_filled_inputs(images_hwc: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return to_nchw(np.stack([mean_fill(im, mask) for im in images_hwc]))


@dataclass
class StepOutputs:
    report: L.LossReport
    grad_parts: dict[str, float] | None = None


def generator_losses(st: TrainState, x, xin, mask: Mdl.MaskSpec):
    """Tape-recorded pieces of the generator objective for one batch."""
    cfg = st.config
    top, left, bh, bw = mask.predicted_box()
    g = Mdl.forward(st.generator, xin, "train")
    z = Mdl.compose(x, g, mask)
    # the raw output is scored so the overlap ring (context in z) still carries loss
    l_pix = L.pixel_l2_loss(x, g, mask)
    d_fake = Mdl.forward(st.discriminator, T.crop(z, top, left, bh, bw), "train")
    l_adv = L.generator_adv_loss(d_fake)
    if cfg.lambda_per > 0:
        if st.classifier is None:
            raise ContractError("lambda_per > 0 needs a pretrained classifier")
        f_x = Mdl.features(st.classifier, x, "eval")
        f_z = Mdl.features(st.classifier, z, "eval")
        l_per = L.perceptual_loss(f_x, f_z)
    else:
        l_per = T.Tensor(0.0)
    return g, z, l_pix, l_adv, l_per


def train_casi(
    cfg: TrainConfig,
    images: np.ndarray,
    classifier: Mdl.LayerStack | None = None,
    resume: Checkpoint | None = None,
    on_event: Callable[[str, int], None] | None = None,
    checkpoint_path=None,
) -> TrainState:
    """Alternating updates: ``d_iters`` discriminator steps then one generator step per iteration.

    ``images`` is the N, H, W, 3 training set. Returns the final state; its
    ``curve`` holds (iteration, l_pix, l_adv, l_per, l_inp) rows.
    """
    if len(images) == 0:
        raise ContractError("training set is empty")
    if cfg.lambda_per > 0 and classifier is None and resume is None:
        raise ContractError("lambda_per > 0 needs a pretrained classifier")
    if images.shape[1:3] != (cfg.image_size, cfg.image_size):
        raise ContractError(f"images are {images.shape[1:3]}, config says {cfg.image_size}")
    st = state_from_checkpoint(resume, cfg) if resume is not None else init_state(cfg, classifier)
    st.config = cfg
    if cfg.lambda_per > 0 and st.classifier is None:
        raise ContractError("lambda_per > 0 needs a pretrained classifier")
    mask = Mdl.make_center_mask(cfg.image_size, cfg.image_size, cfg.overlap)
    top, left, bh, bw = mask.predicted_box()
    x_all = to_nchw(images)
    xin_all = mean_filled_inputs(images, mask.mask)
    w = cfg.weights
    g_params = st.generator.parameters()
    d_params = st.discriminator.parameters()

    while st.iteration < cfg.max_iterations:
        for _ in range(cfg.d_iters):
            idx = st.rng.integers(len(x_all), cfg.batch_size)
            x, xin = x_all[idx], xin_all[idx]
            g = Mdl.forward(st.generator, xin, "train").data
            z = Mdl.compose(x, g, mask)
            st.discriminator.set_trainable(True)
            with T.Tape() as tape:
                d_real = Mdl.forward(st.discriminator, T.crop(x, top, left, bh, bw), "train")
                d_fake = Mdl.forward(st.discriminator, T.crop(z, top, left, bh, bw), "train")
                loss_d = L.discriminator_loss(d_real, d_fake)
            tape.backward(loss_d, d_params)
            adam_step(d_params, [p.grad for p in d_params], st.adam_d)
            if on_event:
                on_event("D", st.iteration)

        st.discriminator.set_trainable(False)
        with T.Tape() as tape:
            _, _, l_pix, l_adv, l_per = generator_losses(st, x, xin, mask)
            total = L.joint_loss(l_pix, l_adv, l_per, w)
        tape.backward(total, g_params)
        adam_step(g_params, [p.grad for p in g_params], st.adam_g)
        if on_event:
            on_event("G", st.iteration)

        st.iteration += 1
        row = (st.iteration, float(l_pix.data), float(l_adv.data), float(l_per.data), float(total.data))
        st.curve.append(row)
        if not all(math.isfinite(v) for v in row[1:]):
            raise FloatingPointError(f"non-finite loss at iteration {st.iteration}: {row}")
        if checkpoint_path and cfg.checkpoint_interval and st.iteration % cfg.checkpoint_interval == 0:
            save_checkpoint(state_to_checkpoint(st), checkpoint_path)
        if st.iteration % 50 == 0:
            log.info("iter %d  l_pix %.5f  l_adv %.4f  l_per %.5f  L %.5f", *row)
    st.discriminator.set_trainable(True)
    return st


def write_curve_csv(curve, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(CURVE_COLUMNS)
        for it, *vals in curve:
            w.writerow([int(it), *(f"{v:.17g}" for v in vals)])


# --------------------------------------------------------------- inference


def inpaint_batch(generator: Mdl.LayerStack, images: np.ndarray, masks) -> np.ndarray:
    """Mean-fill, run the generator in eval mode, paste the holes back.

    ``images`` N, H, W, 3; ``masks`` one H, W mask or N of them. Context
    pixels of the result are the input pixels, bit for bit.
    """
    images = np.asarray(images, dtype=np.float64)
    n, h, w = images.shape[:3]
    if h % 8 or w % 8:
        raise ContractError(f"image dims must be divisible by 8, got {h}x{w}")
    masks = np.asarray(masks, dtype=np.float64)
    if masks.ndim == 2:
        masks = np.broadcast_to(masks, (n, h, w))
    filled = np.stack([mean_fill(im, m) for im, m in zip(images, masks)])
    out = to_nhwc(Mdl.forward(generator, to_nchw(filled), "eval").data)
    m = masks[..., None] > 0
    return np.where(m, out, images)


def generator_from_checkpoint(ck: Checkpoint) -> Mdl.LayerStack:
    return state_from_checkpoint(ck).generator


def with_overrides(cfg: TrainConfig, **kw) -> TrainConfig:
    return replace(cfg, **kw)
