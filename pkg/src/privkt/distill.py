"""Temperature-softened distributions and the KL distillation loss.

The teacher's probabilities always enter as constants so gradients only ever
reach the student.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError

LOG_FLOOR = 1e-12


@dataclass
class ProbVector:
    """A batch of distributions, one row per example, made at ``temperature``."""

    probs: Tensor
    temperature: float

    @property
    def values(self) -> np.ndarray:
        return self.probs.data

    @property
    def n_classes(self) -> int:
        return self.probs.shape[1]


@dataclass
class DistillBatch:
    per_example: Tensor  # (B, M); row i is v^i
    floor_hits: int = 0

    @property
    def batch_size(self) -> int:
        return self.per_example.shape[0]


def temperature_softmax(logits, tau: float) -> ProbVector:
    if not tau > 0:
        raise ConfigError(f"temperature must be positive, got {tau}", key="tau")
    z = ad.as_tensor(logits)
    if z.data.ndim == 1:
        z = Tensor(z.data[None, :]) if z.tape is None else z
    return ProbVector(ad.softmax(z, temperature=tau), float(tau))


def per_example_vectors(p_teacher: ProbVector, p_student: ProbVector) -> DistillBatch:
    """Row i, component k: ``pT_k * ln(pT_k / pS_k)``, with ``0 ln 0 = 0``.

    Student probabilities below ``LOG_FLOOR`` are clamped there; each clamp
    where the teacher has mass is counted in ``floor_hits``.
    """
    if p_teacher.values.shape != p_student.values.shape:
        raise ConfigError(
            f"teacher/student shapes differ: {p_teacher.values.shape} vs {p_student.values.shape}")
    if p_teacher.temperature != p_student.temperature:
        raise ConfigError("teacher and student must share a temperature", key="tau")
    pt = p_teacher.values
    mass = pt > 0.0
    log_pt = np.log(np.where(mass, np.maximum(pt, LOG_FLOOR), 1.0))
    hits = int(np.count_nonzero(mass & (p_student.values < LOG_FLOOR)))
    log_ps = ad.log(p_student.probs, floor=LOG_FLOOR)
    # pt * (log pt - log ps), with rows/cols where pt == 0 contributing exactly 0
    v = ad.mul(ad.add(ad.neg(log_ps), log_pt), pt)
    return DistillBatch(v, hits)


def distill_loss(batch: DistillBatch) -> Tensor:
    """Sum over examples and classes of the per-example vectors."""
    if batch.batch_size == 0:
        raise ConfigError("empty distillation batch")
    return batch.per_example.sum()


def kl_divergence(p, q) -> np.ndarray:
    """Row-wise KL(p || q) on plain arrays, with the same flooring rules."""
    p = np.atleast_2d(np.asarray(p, dtype=np.float64))
    q = np.atleast_2d(np.asarray(q, dtype=np.float64))
    safe_p = np.where(p > 0, p, 1.0)
    terms = np.where(p > 0, p * (np.log(safe_p) - np.log(np.maximum(q, LOG_FLOOR))), 0.0)
    return terms.sum(axis=1)


def entropy(p) -> np.ndarray:
    """Row-wise Shannon entropy (nats) of probability rows or a ProbVector."""
    if isinstance(p, ProbVector):
        p = p.values
    p = np.atleast_2d(np.asarray(p, dtype=np.float64))
    return -np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0).sum(axis=1)
