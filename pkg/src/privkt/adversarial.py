"""Gumbel-softmax relaxed label samples, the discriminator, and GAN losses."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .distill import LOG_FLOOR, ProbVector
from .errors import ConfigError
from .nn import DenseNet, forward

PROB_CLAMP = 1e-7
GAN_MODES = ("minimax", "nonsaturating")


@dataclass
class RelaxedSample:
    y: Tensor  # (B, M), rows on the simplex
    source: str  # "teacher" or "student"
    temperature: float


@dataclass
class GanLosses:
    loss_d: Tensor  # discriminator maximizes this
    loss_s: Tensor  # student minimizes this


def gumbel_sample(p, temperature: float, rng: np.random.Generator, source: str = "student",
                  gumbel=None) -> RelaxedSample:
    """``softmax((ln p + g) / temperature)`` with ``g`` i.i.d. standard Gumbel.

    ``p`` may be a ProbVector, a taped Tensor (gradients flow back through
    ``ln p``) or a plain array. Pass ``gumbel`` to reuse fixed noise.
    """
    if not temperature > 0:
        raise ConfigError(f"relaxation temperature must be positive, got {temperature}",
                          key="gumbel_temperature")
    probs = p.probs if isinstance(p, ProbVector) else ad.as_tensor(p)
    if probs.data.ndim == 1:
        probs = Tensor(probs.data[None, :])
    g = rng.gumbel(size=probs.shape) if gumbel is None else np.asarray(gumbel, dtype=np.float64)
    logits = ad.add(ad.log(probs, floor=LOG_FLOOR), g)
    return RelaxedSample(ad.softmax(logits, temperature=temperature), source, float(temperature))


def discriminate(disc: DenseNet, sample, tape: Tape | None = None) -> Tensor:
    """Probability (clamped to [1e-7, 1 - 1e-7]) that each row came from the teacher."""
    if disc.dout != 1 or disc.layers[-1].activation != "sigmoid":
        raise ConfigError("discriminator must end in a single sigmoid unit")
    y = sample.y if isinstance(sample, RelaxedSample) else ad.as_tensor(sample)
    out = forward(disc, y, tape)
    return ad.clamp(ad.tsum(out, axis=1), PROB_CLAMP, 1.0 - PROB_CLAMP)


def gan_losses(pd_teacher, pd_student, mode: str = "minimax") -> GanLosses:
    """Discriminator objective ``mean ln D(y_T) + mean ln(1 - D(y_S))`` and the student's view.

    ``minimax``: the student minimizes ``mean ln(1 - D(y_S))``.
    ``nonsaturating``: the student minimizes ``-mean ln D(y_S)``.
    """
    if mode not in GAN_MODES:
        raise ConfigError(f"unknown GAN mode {mode!r}", key="gan_mode")
    pt, ps = ad.as_tensor(pd_teacher), ad.as_tensor(pd_student)
    if pt.data.size == 0 or ps.data.size == 0:
        raise ConfigError("GAN losses need nonempty sample batches")
    fake_term = ad.mean(ad.log(ad.add(ad.neg(ps), 1.0)))
    loss_d = ad.add(ad.mean(ad.log(pt)), fake_term)
    if mode == "minimax":
        loss_s = fake_term
    else:
        loss_s = ad.neg(ad.mean(ad.log(ps)))
    return GanLosses(loss_d, loss_s)
