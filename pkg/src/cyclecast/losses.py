"""The four loss families and the per-network totals.

Directions: "forward" is the future-predicting path (its fakes live at
t_{i+step} and are judged by the future discriminator); "backward" is the
past-predicting path (fakes at t_i, past discriminator). The cycle term couples
both generators and is shared between the two generator totals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Literal

import torch
from torch import Tensor

from .fields import threshold_to_model_space

Direction = Literal["forward", "backward"]


@dataclass(frozen=True)
class LossWeights:
    lambda_cyc: float = 10.0
    lambda_con: float = 10.0
    lambda_tor: float = 100.0

    def __post_init__(self) -> None:
        for name in ("lambda_cyc", "lambda_con", "lambda_tor"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and >= 0")


@dataclass(frozen=True)
class TorrentialConfig:
    """Heavy-rain threshold in the same value space as the fields it is applied to.

    Physical-space configs use a positive mm/h threshold (25 mm/h or more by
    design); :meth:`in_model_space` rescales it for use on normalized tensors,
    where the threshold lands in (-1, 1).
    """

    threshold: float = 30.0
    epsilon: float = 0.0

    def __post_init__(self) -> None:
        # -1 is the no-rain floor of model space; anything at or below it would
        # mask every cell
        if not self.threshold > -1.0:
            raise ValueError("threshold must exceed -1")
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")

    def in_model_space(self, cap: float) -> "TorrentialConfig":
        """Config with the threshold mapped through the data's affine normalization."""
        return replace(self, threshold=threshold_to_model_space(self.threshold, cap))


@dataclass
class CycleBatch:
    """All tensors one training step produces for a pair batch.

    real/fake/cycled tensors are (B, C, H, W) in model space; score maps are the
    discriminator outputs for the corresponding frames (None until computed).
    """

    real_i: Tensor
    real_istep: Tensor
    fake_i: Tensor
    fake_istep: Tensor
    cycled_i: Tensor
    cycled_istep: Tensor
    scores_real_istep: Tensor | None = None
    scores_fake_istep: Tensor | None = None
    scores_real_i: Tensor | None = None
    scores_fake_i: Tensor | None = None


def _check_same_shape(a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def _check_finite(*tensors: Tensor) -> None:
    for t in tensors:
        if not torch.isfinite(t).all():
            raise ValueError("non-finite values in loss input")


def adv_loss_discriminator(scores_real: Tensor, scores_fake: Tensor) -> Tensor:
    """Least-squares discriminator loss: real scores toward 1, fake toward 0."""
    _check_same_shape(scores_real, scores_fake)
    _check_finite(scores_real, scores_fake)
    return 0.5 * ((scores_real - 1.0) ** 2).mean() + 0.5 * (scores_fake**2).mean()


def adv_loss_generator(scores_fake: Tensor) -> Tensor:
    """Least-squares generator loss: fake scores toward 1."""
    _check_finite(scores_fake)
    return 0.5 * ((scores_fake - 1.0) ** 2).mean()


def _mean_l1(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b)
    return (a - b).abs().mean()


def cycle_loss(batch: CycleBatch) -> Tensor:
    """Mean-L1 mismatch of both cycled frames against their real counterparts."""
    return _mean_l1(batch.cycled_istep, batch.real_istep) + _mean_l1(batch.cycled_i, batch.real_i)


def connection_loss(fake: Tensor, real: Tensor) -> Tensor:
    """Mean-L1 tie between a one-step fake and the real frame it imitates."""
    return _mean_l1(fake, real)


def torrential_loss(real: Tensor, fake: Tensor, cfg: TorrentialConfig) -> Tensor:
    """1 - CSI of the heavy-rain masks, plus epsilon.

    Masks are hard (>= threshold) and the result is a count ratio, so this term
    is piecewise constant in the inputs and carries no gradient. When neither
    field reaches the threshold the CSI does not exist and the loss is exactly
    epsilon.
    """
    _check_same_shape(real, fake)
    mask_real = real >= cfg.threshold
    mask_fake = fake >= cfg.threshold
    num_hit = (mask_real & mask_fake).sum()
    num_total = (mask_real | mask_fake).sum()
    if num_total.item() == 0:
        return torch.tensor(0.0, dtype=torch.float64) + cfg.epsilon
    csi = num_hit.double() / num_total.double()
    return (1.0 - csi) + cfg.epsilon


TorrentialFn = Callable[[Tensor, Tensor, TorrentialConfig], Tensor]


def total_generator_loss(
    direction: Direction,
    batch: CycleBatch,
    weights: LossWeights,
    tor_cfg: TorrentialConfig,
    torrential_fn: TorrentialFn = torrential_loss,
) -> Tensor:
    """adv + lambda_cyc*cycle + lambda_con*connection + lambda_tor*torrential.

    ``torrential_fn`` is a hook for swapping in a relaxed heavy-rain penalty;
    the default is the hard-mask count.
    """
    if direction == "forward":
        scores = batch.scores_fake_istep
        fake, real = batch.fake_istep, batch.real_istep
    elif direction == "backward":
        scores = batch.scores_fake_i
        fake, real = batch.fake_i, batch.real_i
    else:
        raise ValueError(f"direction must be 'forward' or 'backward', got {direction!r}")
    if scores is None:
        raise ValueError(f"{direction} fake score map has not been computed")
    total = adv_loss_generator(scores) + weights.lambda_cyc * cycle_loss(batch)
    total = total + weights.lambda_con * connection_loss(fake, real)
    if weights.lambda_tor != 0.0:
        total = total + weights.lambda_tor * torrential_fn(real, fake, tor_cfg)
    return total


def total_discriminator_loss(direction: Direction, batch: CycleBatch) -> Tensor:
    """The discriminator objective is its adversarial loss alone."""
    if direction == "forward":
        scores_real, scores_fake = batch.scores_real_istep, batch.scores_fake_istep
    elif direction == "backward":
        scores_real, scores_fake = batch.scores_real_i, batch.scores_fake_i
    else:
        raise ValueError(f"direction must be 'forward' or 'backward', got {direction!r}")
    if scores_real is None or scores_fake is None:
        raise ValueError(f"{direction} score maps have not been computed")
    return adv_loss_discriminator(scores_real, scores_fake)
