"""Pixel, adversarial, perceptual and joint inpainting losses.

All functions take Tensors (or arrays) and return scalar Tensors so they
can sit on a tape.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .model import FeatureVector, MaskSpec
from .tensor import ContractError, Tensor

PROB_CLAMP = 1e-7


@dataclass(frozen=True)
class LossWeights:
    pix: float = 0.799
    adv: float = 0.001
    per: float = 0.2

    def __post_init__(self):
        if min(self.pix, self.adv, self.per) < 0:
            raise ContractError("loss weights must be non-negative")
        if abs(self.pix + self.adv + self.per - 1.0) > 1e-12:
            raise ContractError(f"loss weights must sum to 1, got {self.pix + self.adv + self.per!r}")

    @classmethod
    def with_adv_per(cls, adv: float, per: float) -> "LossWeights":
        """The pixel weight takes up the remainder so the three sum to one."""
        return cls(pix=1.0 - adv - per, adv=adv, per=per)


@dataclass
class LossReport:
    l_pix: float
    l_adv: float
    l_per: float
    l_inp: float


def pixel_l2_loss(x, z, mask_spec: MaskSpec) -> Tensor:
    """Weighted mean squared error over the predicted region.

    Normalized by ``sum(weight) * channels * batch`` so a constant error e
    gives e**2 whatever the mask size.
    """
    x, z = T.as_tensor(x), T.as_tensor(z)
    if x.shape != z.shape:
        raise T.DimensionError(f"shapes differ: {x.shape} vs {z.shape}")
    w = mask_spec.weight
    if x.shape[-2:] != w.shape:
        raise T.DimensionError(f"weight map {w.shape} does not fit image {x.shape}")
    reps = int(np.prod(x.shape[:-2]))
    total = float(w.sum()) * reps
    if total == 0:
        raise ContractError("weight map is empty")
    return T.reduce_sum(T.mul(T.square(x - z), w)) * (1.0 / total)


def _clamped(d) -> Tensor:
    return T.clip(T.as_tensor(d), PROB_CLAMP, 1.0 - PROB_CLAMP)


def discriminator_loss(d_real, d_fake) -> Tensor:
    """Binary cross-entropy of the discriminator, averaged over the batch."""
    d_real, d_fake = _clamped(d_real), _clamped(d_fake)
    per_sample = T.log(d_real) + T.log(1.0 - d_fake)
    return T.reduce_mean(per_sample) * -1.0


def generator_adv_loss(d_fake) -> Tensor:
    """Non-saturating generator objective ``-log D(z)``, batch mean."""
    return T.reduce_mean(T.log(_clamped(d_fake))) * -1.0


def perceptual_loss(f_x, f_z) -> Tensor:
    """``||f_x - f_z||^2 / (C*H*W)``, averaged over the batch.

    Accepts FeatureVectors or (N, D) feature Tensors.
    """
    if isinstance(f_x, FeatureVector) or isinstance(f_z, FeatureVector):
        if not (isinstance(f_x, FeatureVector) and isinstance(f_z, FeatureVector)):
            raise ContractError("mix of FeatureVector and Tensor")
        if f_x.dims != f_z.dims:
            raise T.DimensionError(f"feature dims differ: {f_x.dims} vs {f_z.dims}")
        norm = math.prod(f_x.dims)
        return T.reduce_sum(T.square(T.as_tensor(f_x.values) - T.as_tensor(f_z.values))) * (1.0 / norm)
    f_x, f_z = T.as_tensor(f_x), T.as_tensor(f_z)
    if f_x.shape != f_z.shape:
        raise T.DimensionError(f"feature shapes differ: {f_x.shape} vs {f_z.shape}")
    return T.reduce_sum(T.square(f_x - f_z)) * (1.0 / f_x.size)


def joint_loss(l_pix, l_adv, l_per, w: LossWeights) -> Tensor:
    terms = [T.as_tensor(t) for t in (l_pix, l_adv, l_per)]
    return terms[0] * w.pix + terms[1] * w.adv + terms[2] * w.per
