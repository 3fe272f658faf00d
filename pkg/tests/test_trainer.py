import copy
import math

import numpy as np
import pytest

from privkt.data import Dataset, SplitSpec, gen_blobs, split_with_holdout, standardize
from privkt.errors import ConfigError
from privkt.nn import DenseNet, Layer, OptimizerState, mlp
from privkt.privacy import RdpAccountant, compute_epsilon
from privkt.trainer import (Players, TrainConfig, discriminator_epoch, evaluate, expected_steps,
                            init_players, pretrain_teacher, run, student_step)

from conftest import central_diff


def _softmax(z):
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def _forward(net, x):
    h = x
    for l in net.layers:
        h = h @ l.weight + l.bias
        if l.activation == "relu":
            h = np.maximum(h, 0)
        elif l.activation == "sigmoid":
            h = 1 / (1 + np.exp(-h))
    return h


@pytest.fixture(scope="module")
def blobs():
    d = gen_blobs(1200, 3, 6, seed=0)
    priv, pub, test = split_with_holdout(d, SplitSpec(private_fraction=0.5, n_pub=300, seed=0))
    return standardize(priv, pub, test)


@pytest.fixture(scope="module")
def teacher(blobs):
    return pretrain_teacher(blobs[0], hidden=(16,), epochs=15, seed=0, lr=1e-2)


class TestConfig:
    @pytest.mark.parametrize("kw", [dict(alpha=1.5), dict(epochs=0), dict(mode="x"), dict(tau=0.0),
                                    dict(gan_mode="x"), dict(batch_size=0), dict(gumbel_samples=0)])
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            TrainConfig(**kw)

    def test_sampling_rate(self):
        assert TrainConfig(batch_size=50).dp_config(1000).q == 0.05
        with pytest.raises(ConfigError):
            TrainConfig(batch_size=50).dp_config(10)

    def test_expected_steps(self):
        assert expected_steps(TrainConfig(epochs=3, student_epochs=2, batch_size=40), 100) == 18


class TestEvaluate:
    def test_ties_go_to_lowest_index(self):
        net = DenseNet([Layer(np.zeros((2, 3)), np.zeros(3))])
        data = Dataset(np.ones((4, 2)), np.array([0, 0, 1, 2]), 3)
        assert evaluate(net, data) == 0.5

    def test_unlabelled(self):
        with pytest.raises(ConfigError):
            evaluate(mlp(2, (), 2, 0), Dataset(np.ones((2, 2)), None, 2))


class TestPretrain:
    def test_separable(self, blobs):
        priv, _, test = blobs
        net = pretrain_teacher(priv, hidden=(16,), epochs=15, seed=0, lr=1e-2)
        # least-squares linear oracle
        x = np.hstack([priv.features, np.ones((len(priv), 1))])
        w = np.linalg.lstsq(x, np.eye(3)[priv.labels], rcond=None)[0]
        oracle = np.mean((np.hstack([test.features, np.ones((len(test), 1))]) @ w).argmax(1) == test.labels)
        acc = evaluate(net, test)
        assert acc >= 0.99 and acc >= oracle - 0.01

    def test_zero_epochs_is_init(self, blobs):
        a = pretrain_teacher(blobs[0], hidden=(4,), epochs=0, seed=3)
        b = mlp(blobs[0].dim, (4,), 3, np.random.default_rng(np.random.SeedSequence(3).spawn(2)[0]))
        assert a.param_bytes() == b.param_bytes()

    def test_deterministic(self, blobs):
        a = pretrain_teacher(blobs[0], hidden=(4,), epochs=2, seed=1)
        b = pretrain_teacher(blobs[0], hidden=(4,), epochs=2, seed=1)
        assert a.param_bytes() == b.param_bytes()

    def test_needs_labels(self, blobs):
        with pytest.raises(ConfigError):
            pretrain_teacher(blobs[1])


def _players(cfg, teacher, dim, student=None):
    p = init_players(cfg, teacher, dim)
    if student is not None:
        p.student = student
    return p


class TestDiscriminatorEpoch:
    def test_indistinguishable_players(self, blobs, teacher):
        cfg = TrainConfig(batch_size=50, disc_lr=1e-2)
        players = _players(cfg, teacher, blobs[1].dim, student=teacher.copy())
        t_bytes, s_bytes = teacher.param_bytes(), players.student.param_bytes()
        rb, rg = np.random.default_rng(0), np.random.default_rng(1)
        losses = []
        for _ in range(20):
            losses += discriminator_epoch(cfg, players, blobs[1].features, rb, rg, 1.0)
        assert np.mean(losses[-30:]) == pytest.approx(2 * math.log(0.5), abs=0.02)
        assert teacher.param_bytes() == t_bytes and players.student.param_bytes() == s_bytes

    def test_deterministic(self, blobs, teacher):
        cfg = TrainConfig(batch_size=64)
        out = []
        for _ in range(2):
            players = _players(cfg, teacher, blobs[1].dim)
            discriminator_epoch(cfg, players, blobs[1].features, np.random.default_rng(0),
                                np.random.default_rng(1), 1.0)
            out.append(players.disc.param_bytes())
        assert out[0] == out[1]

    def test_single_step_matches_numpy_oracle(self, blobs, teacher):
        x_all = blobs[1].features[:40]
        cfg = TrainConfig(batch_size=40, disc_optimizer="sgd", disc_lr=0.1, disc_hidden=(5,))
        players = _players(cfg, teacher, x_all.shape[1])
        rb, rg = np.random.default_rng(7), np.random.default_rng(8)
        rb2, rg2 = copy.deepcopy(rb), copy.deepcopy(rg)
        disc0 = players.disc.copy()
        discriminator_epoch(cfg, players, x_all, rb, rg, 0.7)

        x = x_all[rb2.permutation(40)]
        pt = _softmax(_forward(teacher, x))
        ps = _softmax(_forward(players.student, x))
        yt = _softmax((np.log(pt) + rg2.gumbel(size=pt.shape)) / 0.7)
        ys = _softmax((np.log(ps) + rg2.gumbel(size=ps.shape)) / 0.7)

        def neg_loss_d():
            dt = np.clip(_forward(disc0, yt)[:, 0], 1e-7, 1 - 1e-7)
            ds = np.clip(_forward(disc0, ys)[:, 0], 1e-7, 1 - 1e-7)
            return -(np.mean(np.log(dt)) + np.mean(np.log(1 - ds)))

        for got, p in zip(players.disc.parameters(), disc0.parameters()):
            want = p - 0.1 * central_diff(neg_loss_d, p)
            np.testing.assert_allclose(got, want, rtol=1e-7, atol=1e-9)


def _kl_rows(pt, ps):
    return np.sum(pt * (np.log(pt) - np.log(ps)), axis=1)


class TestStudentStep:
    def _setup(self, blobs, teacher, **kw):
        cfg = TrainConfig(batch_size=20, **kw)
        x = blobs[1].features[:20]
        players = _players(cfg, teacher, x.shape[1])
        dp = cfg.dp_config(len(blobs[1]))
        return cfg, players, x, dp, RdpAccountant(dp.q, dp.noise_multiplier)

    def test_alpha_one_ignores_adversary(self, blobs, teacher):
        outs = []
        for mode in ("joint", "kd_only"):
            cfg, players, x, dp, acc = self._setup(blobs, teacher, alpha=1.0, mode=mode)
            student_step(cfg, players, x, dp, acc, np.random.default_rng(0), np.random.default_rng(1), 1.0)
            outs.append(players.student.param_bytes())
        assert outs[0] == outs[1]

    def test_alpha_zero_still_charges(self, blobs, teacher):
        cfg, players, x, dp, acc = self._setup(blobs, teacher, alpha=0.0)
        before = players.student.param_bytes()
        rec, gl, _ = student_step(cfg, players, x, dp, acc, np.random.default_rng(0),
                                  np.random.default_rng(1), 1.0)
        assert acc.steps == 1 and gl is not None and rec.noise.shape == (3,)
        assert players.student.param_bytes() != before

    def test_teacher_and_discriminator_untouched(self, blobs, teacher):
        cfg, players, x, dp, acc = self._setup(blobs, teacher)
        t, d = teacher.param_bytes(), players.disc.param_bytes()
        student_step(cfg, players, x, dp, acc, np.random.default_rng(0), np.random.default_rng(1), 1.0)
        assert teacher.param_bytes() == t and players.disc.param_bytes() == d

    def test_noiseless_unclipped_update_matches_oracle(self, blobs, teacher):
        cfg, players, x, dp, acc = self._setup(blobs, teacher, mode="kd_only", clip=1e6,
                                                noise_multiplier=1e-300, student_optimizer="sgd",
                                                student_lr=0.05, tau=2.0)
        s0 = players.student.copy()
        student_step(cfg, players, x, dp, acc, np.random.default_rng(0), np.random.default_rng(1), 1.0)
        pt = _softmax(_forward(teacher, x) / 2.0)

        def loss():
            return _kl_rows(pt, _softmax(_forward(s0, x) / 2.0)).sum() / (dp.q * dp.n)

        for got, p in zip(players.student.parameters(), s0.parameters()):
            np.testing.assert_allclose(got, p - 0.05 * central_diff(loss, p), rtol=1e-6, atol=1e-8)


class TestRun:
    def test_kd_only(self, blobs, teacher):
        cfg = TrainConfig(mode="kd_only", epochs=3, batch_size=50)
        r = run(cfg, teacher, blobs[1], blobs[2])
        assert r.discriminator is None
        assert all(m.l_ad_d is None and m.l_ad_s is None for m in r.metrics)

    def test_step_count_and_budget(self, blobs, teacher):
        cfg = TrainConfig(epochs=4, student_epochs=2, disc_epochs=2, batch_size=64)
        r = run(cfg, teacher, blobs[1], blobs[2])
        steps = expected_steps(cfg, len(blobs[1]))
        assert r.accountant.steps == r.sanitize_calls == steps == 4 * 2 * 5
        want, _ = compute_epsilon(64 / 300, 1.1, steps, 1e-5)
        assert r.spend.epsilon == pytest.approx(want.epsilon, rel=1e-12)
        eps = [m.eps for m in r.metrics]
        assert eps == sorted(eps) and eps[-1] == r.spend.epsilon

    def test_teacher_immutable_and_deterministic(self, blobs, teacher):
        cfg = TrainConfig(epochs=2, batch_size=50)
        t = teacher.param_bytes()
        a = run(cfg, teacher, blobs[1], blobs[2])
        b = run(cfg, teacher, blobs[1], blobs[2])
        assert teacher.param_bytes() == t
        assert a.student.param_bytes() == b.student.param_bytes()
        assert [m.l_ds_noisy for m in a.metrics] == [m.l_ds_noisy for m in b.metrics]

    def test_student_learns(self, blobs, teacher):
        r = run(TrainConfig(epochs=10, batch_size=50, student_lr=5e-3), teacher, blobs[1], blobs[2])
        assert r.metrics[-1].acc_student >= 0.95

    def test_width_mismatch(self, blobs, teacher):
        bad = Dataset(np.zeros((100, 2)), None, 3)
        with pytest.raises(ConfigError):
            run(TrainConfig(epochs=1), teacher, bad)

    @pytest.mark.xfail(strict=True, reason="the noise enters the loss additively, so it never "
                                           "reaches the student gradient; see the decisions ledger")
    def test_heavy_noise_starves_student(self, blobs, teacher):
        accs = [run(TrainConfig(mode="kd_only", alpha=1.0, noise_multiplier=100.0, epochs=10,
                                student_lr=5e-3, seed=s), teacher, blobs[1], blobs[2]).metrics[-1].acc_student
                for s in range(5)]
        assert np.mean(accs) <= 1 / 3 + 0.1
