"""Teacher pretraining and the three-player transfer loop.

Each outer epoch runs ``disc_epochs`` passes that train the discriminator on
relaxed teacher/student label samples, then ``student_epochs`` passes that
train the student on ``alpha * sanitized_KD + (1 - alpha) * adversarial``.
Every sanitized distillation query charges the RDP accountant once.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .adversarial import GAN_MODES, discriminate, gan_losses, gumbel_sample
from .autodiff import Tape, Tensor
from .data import Dataset
from .distill import distill_loss, per_example_vectors, temperature_softmax
from .errors import ConfigError
from .nn import DenseNet, OptimizerState, cross_entropy, forward, mlp, step
from .privacy import DpConfig, DpSpend, NoiseRecord, RdpAccountant, sanitize

log = logging.getLogger(__name__)

MODES = ("joint", "kd_only")


@dataclass
class TrainConfig:
    epochs: int = 30  # T
    disc_epochs: int = 1  # T_D
    student_epochs: int = 1  # T_S
    batch_size: int = 50
    tau: float = 2.0
    alpha: float = 0.85
    gumbel_temperature: float = 1.0
    gumbel_anneal: float = 1.0  # multiplicative per outer epoch; 1.0 = constant
    gumbel_min_temperature: float = 0.1
    gumbel_samples: int = 1
    gan_mode: str = "minimax"
    mode: str = "joint"
    clip: float = 1.0
    noise_multiplier: float = 1.1
    delta: float = 1e-5
    tau_sq_scaling: bool = False
    condition_on_x: bool = False
    student_hidden: tuple[int, ...] = (32,)
    disc_hidden: tuple[int, ...] = (32,)
    student_optimizer: str = "adam"
    student_lr: float = 1e-3
    disc_optimizer: str = "adam"
    disc_lr: float = 1e-3
    seed: int = 0
    verbose: bool = False

    def __post_init__(self):
        for key in ("epochs", "disc_epochs", "student_epochs"):
            if int(getattr(self, key)) < 1:
                raise ConfigError(f"{key} must be >= 1", key=key)
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1", key="batch_size")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}", key="alpha")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}", key="mode")
        if self.gan_mode not in GAN_MODES:
            raise ConfigError(f"gan_mode must be one of {GAN_MODES}", key="gan_mode")
        if not self.tau > 0:
            raise ConfigError("tau must be positive", key="tau")
        if not self.gumbel_temperature > 0:
            raise ConfigError("gumbel_temperature must be positive", key="gumbel_temperature")
        if self.gumbel_samples < 1:
            raise ConfigError("gumbel_samples must be >= 1", key="gumbel_samples")
        self.student_hidden = tuple(int(h) for h in self.student_hidden)
        self.disc_hidden = tuple(int(h) for h in self.disc_hidden)

    @property
    def effective_alpha(self) -> float:
        return 1.0 if self.mode == "kd_only" else self.alpha

    def dp_config(self, n_public: int) -> DpConfig:
        if self.batch_size > n_public:
            raise ConfigError(
                f"batch_size {self.batch_size} exceeds public set size {n_public}", key="batch_size")
        return DpConfig(q=self.batch_size / n_public, clip=self.clip,
                        noise_multiplier=self.noise_multiplier, delta=self.delta, n=n_public)

    def as_dict(self) -> dict:
        d = asdict(self)
        d["student_hidden"] = list(self.student_hidden)
        d["disc_hidden"] = list(self.disc_hidden)
        return d


@dataclass
class MetricsRecord:
    epoch: int
    l_ds: float  # clean (clipped, scaled) distillation loss, batch mean
    l_ds_noisy: float
    l_ad_d: float | None  # discriminator objective, batch mean; None in kd_only mode
    l_ad_s: float | None
    acc_student: float
    acc_teacher: float
    eps: float
    seconds: float
    floor_hits: int = 0


@dataclass
class RunResult:
    student: DenseNet
    discriminator: DenseNet | None
    metrics: list[MetricsRecord]
    spend: DpSpend
    accountant: RdpAccountant
    dp: DpConfig
    sanitize_calls: int
    noise_records: list[NoiseRecord] = field(default_factory=list)


@dataclass
class Players:
    teacher: DenseNet
    student: DenseNet
    disc: DenseNet | None
    opt_s: OptimizerState
    opt_d: OptimizerState | None


def evaluate(net: DenseNet, data: Dataset) -> float:
    """Fraction of argmax-correct predictions (ties go to the lowest index)."""
    if len(data) == 0 or data.labels is None:
        raise ConfigError("evaluation needs a nonempty labelled set")
    pred = np.argmax(forward(net, data.features).data, axis=1)
    return float(np.mean(pred == data.labels))


def pretrain_teacher(data: Dataset, hidden=(64,), epochs: int = 50, seed=0, lr: float = 1e-3,
                     batch_size: int = 64, optimizer: str = "adam") -> DenseNet:
    """Cross-entropy training on the private split only."""
    if len(data) == 0 or data.labels is None:
        raise ConfigError("teacher pretraining needs a nonempty labelled private split")
    ss = np.random.SeedSequence(seed)
    init_seed, shuffle_seed = ss.spawn(2)
    net = mlp(data.dim, hidden, data.n_classes, np.random.default_rng(init_seed))
    opt = OptimizerState(optimizer, lr)
    rng = np.random.default_rng(shuffle_seed)
    n = len(data)
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            tape = Tape()
            loss = cross_entropy(forward(net, data.features[idx], tape), data.labels[idx])
            ad.backward(tape, loss)
            step(opt, net.parameters(), tape.gradients(net))
    return net


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def _disc_input(y: Tensor, x: np.ndarray, cfg: TrainConfig) -> Tensor:
    return ad.concat(y, x) if cfg.condition_on_x else y


def _relaxed_pair(cfg: TrainConfig, teacher: DenseNet, s_logits: Tensor, x: np.ndarray,
                  lam: float, rng: np.random.Generator):
    """Relaxed samples from p^T (constant) and p^S (differentiable if taped)."""
    k = cfg.gumbel_samples
    p_t = ad.softmax(forward(teacher, x).data)
    p_s = ad.softmax(s_logits)
    if k > 1:
        rows = np.repeat(np.arange(x.shape[0]), k)
        p_t, p_s, x = ad.take_rows(p_t, rows), ad.take_rows(p_s, rows), x[rows]
    y_t = gumbel_sample(p_t, lam, rng, source="teacher")
    y_s = gumbel_sample(p_s, lam, rng, source="student")
    return _disc_input(y_t.y, x, cfg), _disc_input(y_s.y, x, cfg)


def discriminator_epoch(cfg: TrainConfig, players: Players, public_x: np.ndarray,
                        rng_batch: np.random.Generator, rng_gumbel: np.random.Generator,
                        lam: float) -> list[float]:
    """One pass over the public set ascending the discriminator objective.

    Student and teacher are read only. No privacy budget is charged here.
    """
    disc, opt = players.disc, players.opt_d
    losses = []
    for idx in _batches(len(public_x), cfg.batch_size, rng_batch):
        x = public_x[idx]
        s_logits = forward(players.student, x)
        in_t, in_s = _relaxed_pair(cfg, players.teacher, s_logits, x, lam, rng_gumbel)
        tape = Tape()
        gl = gan_losses(discriminate(disc, in_t, tape), discriminate(disc, in_s, tape), cfg.gan_mode)
        ad.backward(tape, ad.neg(gl.loss_d))
        step(opt, disc.parameters(), tape.gradients(disc))
        losses.append(float(gl.loss_d.data))
    return losses


def student_step(cfg: TrainConfig, players: Players, x: np.ndarray, dp: DpConfig,
                 accountant: RdpAccountant, rng_noise: np.random.Generator,
                 rng_gumbel: np.random.Generator, lam: float):
    """One student update on batch ``x``. Returns (noise record, adversarial losses or None, floor hits)."""
    alpha = cfg.effective_alpha
    tape = Tape()
    s_logits = forward(players.student, x, tape)
    t_logits = forward(players.teacher, x).data
    batch = per_example_vectors(temperature_softmax(t_logits, cfg.tau),
                                temperature_softmax(s_logits, cfg.tau))
    noisy, record = sanitize(batch, dp, rng_noise)
    accountant.charge()
    if cfg.tau_sq_scaling:
        noisy = ad.mul(noisy, cfg.tau ** 2)
    total = ad.mul(noisy, alpha)
    gl = None
    if cfg.mode == "joint":
        in_t, in_s = _relaxed_pair(cfg, players.teacher, s_logits, x, lam, rng_gumbel)
        gl = gan_losses(discriminate(players.disc, in_t, tape),
                        discriminate(players.disc, in_s, tape), cfg.gan_mode)
        total = ad.add(total, ad.mul(gl.loss_s, 1.0 - alpha))
    ad.backward(tape, total)
    step(players.opt_s, players.student.parameters(), tape.gradients(players.student))
    return record, gl, batch.floor_hits


def student_epoch(cfg: TrainConfig, players: Players, public_x: np.ndarray, dp: DpConfig,
                  accountant: RdpAccountant, rng_batch, rng_noise, rng_gumbel, lam: float):
    if accountant.q != dp.q or accountant.noise_multiplier != dp.noise_multiplier:
        raise ConfigError("accountant was built for a different (q, noise_multiplier)")
    records, ad_losses, hits = [], [], 0
    for idx in _batches(len(public_x), cfg.batch_size, rng_batch):
        record, gl, h = student_step(cfg, players, public_x[idx], dp, accountant,
                                     rng_noise, rng_gumbel, lam)
        records.append(record)
        hits += h
        if gl is not None:
            ad_losses.append(float(gl.loss_s.data))
    return records, ad_losses, hits


def init_players(cfg: TrainConfig, teacher: DenseNet, n_features: int) -> Players:
    ss = np.random.SeedSequence(cfg.seed)
    s_seed, d_seed = ss.spawn(2)
    n_classes = teacher.dout
    student = mlp(n_features, cfg.student_hidden, n_classes, np.random.default_rng(s_seed))
    disc = opt_d = None
    if cfg.mode == "joint":
        d_in = n_classes + (n_features if cfg.condition_on_x else 0)
        disc = mlp(d_in, cfg.disc_hidden, 1, np.random.default_rng(d_seed), head="sigmoid")
        opt_d = OptimizerState(cfg.disc_optimizer, cfg.disc_lr)
    return Players(teacher, student, disc, OptimizerState(cfg.student_optimizer, cfg.student_lr), opt_d)


def run(cfg: TrainConfig, teacher: DenseNet, public: Dataset, test: Dataset | None = None,
        keep_noise: bool = False) -> RunResult:
    """Train a student from ``teacher`` on the unlabelled ``public`` set."""
    if public.dim != teacher.din:
        raise ConfigError(f"public features have width {public.dim}, teacher expects {teacher.din}")
    dp = cfg.dp_config(len(public))
    accountant = RdpAccountant(dp.q, dp.noise_multiplier)
    players = init_players(cfg, teacher, public.dim)
    streams = np.random.SeedSequence(cfg.seed).spawn(6)[2:]
    rng_dbatch, rng_sbatch, rng_gumbel, rng_noise = (np.random.default_rng(s) for s in streams)
    acc_teacher = evaluate(teacher, test) if test is not None else float("nan")
    x = public.features
    metrics, kept, calls = [], [], 0
    lam = cfg.gumbel_temperature
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        d_losses: list[float] = []
        if cfg.mode == "joint":
            for _ in range(cfg.disc_epochs):
                d_losses += discriminator_epoch(cfg, players, x, rng_dbatch, rng_gumbel, lam)
        records, s_losses, hits = [], [], 0
        for _ in range(cfg.student_epochs):
            r, sl, h = student_epoch(cfg, players, x, dp, accountant,
                                     rng_sbatch, rng_noise, rng_gumbel, lam)
            records += r
            s_losses += sl
            hits += h
        calls += len(records)
        if keep_noise:
            kept += records
        spend = accountant.spend(cfg.delta)
        rec = MetricsRecord(
            epoch=epoch + 1,
            l_ds=float(np.mean([r.clean_loss for r in records])),
            l_ds_noisy=float(np.mean([r.noisy_loss for r in records])),
            l_ad_d=float(np.mean(d_losses)) if d_losses else None,
            l_ad_s=float(np.mean(s_losses)) if s_losses else None,
            acc_student=evaluate(players.student, test) if test is not None else float("nan"),
            acc_teacher=acc_teacher,
            eps=spend.epsilon,
            seconds=time.perf_counter() - t0,
            floor_hits=hits,
        )
        metrics.append(rec)
        if cfg.verbose:
            log.info("epoch %d: l_ds=%.4f acc=%.4f eps=%.3f", rec.epoch, rec.l_ds, rec.acc_student, rec.eps)
        lam = max(cfg.gumbel_min_temperature, lam * cfg.gumbel_anneal) if cfg.gumbel_anneal != 1.0 else lam
    return RunResult(players.student, players.disc, metrics, accountant.spend(cfg.delta),
                     accountant, dp, calls, kept)


def expected_steps(cfg: TrainConfig, n_public: int) -> int:
    return cfg.epochs * cfg.student_epochs * math.ceil(n_public / cfg.batch_size)
