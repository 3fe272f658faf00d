"""Clip-and-noise sanitization of the distillation loss, and the RDP accountant.

The accountant tracks the sampled Gaussian mechanism at integer Renyi orders
(exact binomial expansion) and converts to (epsilon, delta)-DP with
``eps = min_a [eps_rdp(a) + ln(1/delta) / (a - 1)]``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from . import autodiff as ad
from . import kernels
from .autodiff import Tensor
from .distill import DistillBatch
from .errors import ConfigError, NumericError, UsageError

DEFAULT_ORDERS = tuple(range(2, 129))
DEFAULT_DELTA = 1e-5

POISSON_DISCLAIMER = (
    "RDP accounting assumes Poisson subsampling with rate q = B/N; training draws "
    "fixed-size shuffled batches, so the reported bound is the standard approximation."
)
DISCRIMINATOR_CAVEAT = (
    "Discriminator updates consume relaxed samples of teacher outputs but are not "
    "charged to the privacy budget; only sanitized distillation queries are accounted."
)


@dataclass(frozen=True)
class DpConfig:
    q: float
    clip: float
    noise_multiplier: float
    delta: float = DEFAULT_DELTA
    n: int = 1

    def __post_init__(self):
        if not 0.0 < self.q <= 1.0:
            raise ConfigError(f"sampling probability q must lie in (0, 1], got {self.q}", key="q")
        if not self.clip > 0:
            raise ConfigError(f"clip threshold must be positive, got {self.clip}", key="clip")
        if not self.noise_multiplier > 0:
            raise ConfigError(
                f"noise multiplier must be positive, got {self.noise_multiplier}",
                key="noise_multiplier")
        if not 0.0 < self.delta < 1.0:
            raise ConfigError(f"delta must lie in (0, 1), got {self.delta}", key="delta")
        if int(self.n) < 1:
            raise ConfigError(f"dataset size must be >= 1, got {self.n}", key="n")

    @property
    def sigma(self) -> float:
        return self.noise_multiplier * self.clip

    def as_dict(self) -> dict:
        return {"q": self.q, "clip": self.clip, "noise_multiplier": self.noise_multiplier,
                "sigma": self.sigma, "delta": self.delta, "n": self.n}


@dataclass
class NoiseRecord:
    """What sanitize did to one batch (for inspection and reports)."""

    noise: np.ndarray  # the Gaussian draws actually added, already scaled by sigma
    clip_scales: np.ndarray  # per-example min(1, C/||v||)
    clean_sum: np.ndarray  # sum of clipped vectors, before noise
    clean_loss: float  # (1/qN) * sum of clean_sum
    noisy_loss: float


def clip_l2(v, clip: float) -> np.ndarray:
    """``v * min(1, clip / ||v||_2)``; rows are clipped independently for 2-D input."""
    if not clip > 0:
        raise ConfigError(f"clip threshold must be positive, got {clip}", key="clip")
    arr = np.asarray(v, dtype=np.float64)
    out, _ = kernels.clip_rows(np.atleast_2d(arr), clip)
    return out.reshape(arr.shape)


def sanitize(batch: DistillBatch, cfg: DpConfig, rng: np.random.Generator) -> tuple[Tensor, NoiseRecord]:
    """Clip each per-example vector, sum, add N(0, sigma^2 I), scale by 1/(qN).

    Returns the scalar noisy loss (sum of the noisy components) and a record of
    the noise. Clip scales and noise are constants in the gradient graph. The
    caller must charge the accountant once per call.
    """
    v = batch.per_example
    if v.shape[0] == 0:
        raise ConfigError("cannot sanitize an empty batch")
    _, scales = kernels.clip_rows(v.data, cfg.clip)
    clipped_sum = ad.tsum(ad.mul(v, scales[:, None]), axis=0)
    noise = cfg.sigma * rng.standard_normal(v.shape[1])
    scale = 1.0 / (cfg.q * cfg.n)
    noisy = ad.mul(ad.add(clipped_sum, noise), scale)
    loss = noisy.sum()
    record = NoiseRecord(noise=noise, clip_scales=scales, clean_sum=clipped_sum.data.copy(),
                         clean_loss=float(clipped_sum.data.sum() * scale),
                         noisy_loss=float(loss.data))
    return loss, record


# -- accountant ----------------------------------------------------------------

def _check_orders(orders) -> tuple[int, ...]:
    out = []
    for a in orders:
        if isinstance(a, (bool, np.bool_)) or float(a) != int(a):
            raise ConfigError(f"Renyi orders must be integers, got {a!r}", key="orders")
        if int(a) < 2:
            raise ConfigError(f"Renyi orders must be >= 2, got {a!r}", key="orders")
        out.append(int(a))
    if not out:
        raise ConfigError("empty order grid", key="orders")
    return tuple(out)


def rdp_sgm_step(q: float, noise_multiplier: float, orders=DEFAULT_ORDERS) -> np.ndarray:
    """Per-step RDP of the sampled Gaussian mechanism at each integer order."""
    if not noise_multiplier > 0:
        raise ConfigError("noise multiplier must be positive", key="noise_multiplier")
    if not 0.0 < q <= 1.0:
        raise ConfigError(f"q must lie in (0, 1], got {q}", key="q")
    orders = _check_orders(orders)
    m = float(noise_multiplier)
    if q == 1.0:
        return np.array([a / (2.0 * m * m) for a in orders])
    return np.array([max(0.0, kernels.log_a_int(q, m, a) / (a - 1)) for a in orders])


@dataclass(frozen=True)
class AccountantState:
    orders: tuple[int, ...] = DEFAULT_ORDERS
    eps_rdp: tuple[float, ...] = field(default=())
    steps: int = 0

    def __post_init__(self):
        object.__setattr__(self, "orders", _check_orders(self.orders))
        if not self.eps_rdp:
            object.__setattr__(self, "eps_rdp", (0.0,) * len(self.orders))
        if len(self.eps_rdp) != len(self.orders):
            raise ConfigError("eps_rdp and orders differ in length")


def compose(state: AccountantState, per_step, n_steps: int = 1) -> AccountantState:
    """Add ``n_steps`` copies of ``per_step`` RDP to the running total."""
    per_step = np.asarray(per_step, dtype=np.float64)
    if per_step.shape != (len(state.orders),):
        raise ConfigError(
            f"per-step curve has {per_step.size} orders, accountant has {len(state.orders)}")
    if n_steps < 0:
        raise ConfigError("n_steps must be >= 0")
    if n_steps == 0:
        return state
    eps = np.asarray(state.eps_rdp) + n_steps * per_step
    return AccountantState(state.orders, tuple(float(e) for e in eps), state.steps + int(n_steps))


@dataclass(frozen=True)
class DpSpend:
    epsilon: float
    delta: float
    order: int


def to_dp(state: AccountantState, delta: float = DEFAULT_DELTA) -> DpSpend:
    if not 0.0 < delta < 1.0:
        raise ConfigError(f"delta must lie in (0, 1), got {delta}", key="delta")
    if state is None or not state.orders:
        raise UsageError("accountant has no order grid")
    orders = np.asarray(state.orders, dtype=np.float64)
    eps = np.asarray(state.eps_rdp) + math.log(1.0 / delta) / (orders - 1.0)
    i = int(np.argmin(eps))
    return DpSpend(float(max(eps[i], 0.0)), float(delta), int(state.orders[i]))


class RdpAccountant:
    """Owns an :class:`AccountantState` for a fixed (q, m) mechanism.

    ``charge()`` is called once per sanitized query.
    """

    def __init__(self, q: float, noise_multiplier: float, orders=DEFAULT_ORDERS):
        self.q = q
        self.noise_multiplier = noise_multiplier
        self.per_step = rdp_sgm_step(q, noise_multiplier, orders)
        self.state = AccountantState(tuple(orders))

    @property
    def steps(self) -> int:
        return self.state.steps

    def charge(self, n_steps: int = 1) -> None:
        self.state = compose(self.state, self.per_step, n_steps)

    def spend(self, delta: float = DEFAULT_DELTA) -> DpSpend:
        return to_dp(self.state, delta)


def compute_epsilon(q: float, noise_multiplier: float, steps: int, delta: float,
                    orders=DEFAULT_ORDERS) -> tuple[DpSpend, AccountantState]:
    state = compose(AccountantState(tuple(orders)), rdp_sgm_step(q, noise_multiplier, orders), steps)
    return to_dp(state, delta), state


def privacy_report(cfg: DpConfig, state: AccountantState, spend: DpSpend, extra: dict | None = None) -> dict:
    report = {
        "config": cfg.as_dict(),
        "steps": state.steps,
        "orders": list(state.orders),
        "eps_rdp": list(state.eps_rdp),
        "order": spend.order,
        "epsilon": spend.epsilon,
        "delta": spend.delta,
        "disclaimers": [POISSON_DISCLAIMER, DISCRIMINATOR_CAVEAT],
    }
    if extra:
        report.update(extra)
    return report


# -- numeric Renyi divergence (test oracle) -----------------------------------

def renyi_divergence_numeric(p_density, q_density, alpha: float, domain, points=None,
                             grid: int = 4001, log_densities: bool = False) -> float:
    """``1/(alpha-1) ln integral q (p/q)^alpha`` by adaptive quadrature over ``domain``.

    The integrand is evaluated in log space and rescaled by its peak (located
    on a ``grid``-point scan) so large orders do not overflow. With
    ``log_densities`` the callables return log densities, which keeps far
    tails (where large orders put their mass) from underflowing.
    """
    if alpha <= 0 or alpha == 1:
        raise ConfigError(f"order must be positive and != 1, got {alpha}")
    lo, hi = map(float, domain)
    if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
        raise ConfigError(f"integration domain must be a finite interval, got {domain}")

    def log_integrand(x):
        with np.errstate(divide="ignore", invalid="ignore"):
            lp = np.asarray(p_density(x), dtype=np.float64)
            lq = np.asarray(q_density(x), dtype=np.float64)
            if not log_densities:
                lp, lq = np.log(lp), np.log(lq)
            out = alpha * lp + (1.0 - alpha) * lq
        # where p vanishes the integrand does too, whatever q does
        return np.where(np.isneginf(lp), -np.inf, out)

    xs = np.linspace(lo, hi, grid)
    vals = log_integrand(xs)
    if not np.any(np.isfinite(vals)):
        raise NumericError("integrand is zero or undefined everywhere on the domain")
    peak = float(np.max(vals[np.isfinite(vals)]))
    x_peak = float(xs[np.nanargmax(np.where(np.isfinite(vals), vals, -np.inf))])
    brk = sorted({x_peak, *(points or [])} - {lo, hi})

    def f(x):
        v = log_integrand(x)
        return float(np.exp(v - peak)) if np.isfinite(v) else 0.0

    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            val, abserr = integrate.quad(f, lo, hi, points=brk or None, limit=500,
                                         epsabs=0.0, epsrel=1e-10)
        except integrate.IntegrationWarning as exc:
            raise NumericError(f"quadrature did not converge: {exc}") from None
    if not val > 0:
        raise NumericError(f"non-positive integral {val} (abserr {abserr})")
    return (math.log(val) + peak) / (alpha - 1.0)
