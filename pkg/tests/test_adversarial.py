import math

import numpy as np
import pytest
from scipy import stats

from privkt.adversarial import PROB_CLAMP, discriminate, gan_losses, gumbel_sample
from privkt.autodiff import Tape, Tensor, backward
from privkt.distill import temperature_softmax
from privkt.errors import ConfigError
from privkt.nn import DenseNet, Layer, forward, mlp, step, OptimizerState

from conftest import central_diff


def _sigmoid(z):
    return 1.0 / (1.0 + math.exp(-z))


def linear_disc(w, b=0.0):
    return DenseNet([Layer(np.asarray(w, dtype=float).reshape(-1, 1), np.array([float(b)]), "sigmoid")])


class TestGumbel:
    def test_rows_on_simplex(self, rng):
        p = rng.dirichlet(np.ones(5), size=20)
        y = gumbel_sample(p, 0.7, rng).y.data
        assert np.all(y >= 0)
        np.testing.assert_allclose(y.sum(axis=1), 1.0, rtol=1e-14)

    def test_fixed_noise_formula(self):
        p = np.array([[0.2, 0.3, 0.5]])
        g = np.array([[0.1, -0.4, 0.3]])
        z = (np.log(p) + g) / 0.5
        want = np.exp(z - z.max()) / np.exp(z - z.max()).sum()
        got = gumbel_sample(p, 0.5, np.random.default_rng(0), gumbel=g).y.data
        np.testing.assert_allclose(got, want, rtol=1e-14)

    def test_low_temperature_is_one_hot_argmax(self, rng):
        p = rng.dirichlet(np.ones(4), size=50)
        g = rng.gumbel(size=p.shape)
        y = gumbel_sample(p, 1e-4, rng, gumbel=g).y.data
        z = np.sort(np.log(p) + g, axis=1)
        clear = z[:, -1] - z[:, -2] > 1e-2  # skip near ties
        hot = np.argmax(np.log(p) + g, axis=1)
        assert clear.sum() > 40
        np.testing.assert_allclose(y[clear], np.eye(4)[hot][clear], atol=1e-8)

    def test_argmax_frequencies_match_p(self):
        p = np.array([0.1, 0.2, 0.3, 0.4])
        n = 100_000
        rng = np.random.default_rng(99)
        y = gumbel_sample(np.tile(p, (n, 1)), 1e-3, rng).y.data
        counts = np.bincount(y.argmax(axis=1), minlength=4)
        # chi-square goodness of fit at the 1e-4 level
        assert stats.chisquare(counts, n * p).pvalue > 1e-4
        assert np.all(np.abs(counts / n - p) < 4 * np.sqrt(p * (1 - p) / n))

    def test_deterministic_given_seed(self):
        p = np.array([[0.3, 0.7], [0.5, 0.5]])
        a = gumbel_sample(p, 1.0, np.random.default_rng(5)).y.data
        b = gumbel_sample(p, 1.0, np.random.default_rng(5)).y.data
        np.testing.assert_array_equal(a, b)

    @pytest.mark.parametrize("t", [0.0, -1.0])
    def test_bad_temperature(self, t, rng):
        with pytest.raises(ConfigError):
            gumbel_sample(np.array([[0.5, 0.5]]), t, rng)

    def test_gradient_reaches_logits(self, rng):
        from privkt import autodiff as ad
        z = rng.normal(size=(2, 3))
        g = rng.gumbel(size=(2, 3))
        c = rng.normal(size=(2, 3))

        def loss(zin):
            y = gumbel_sample(temperature_softmax(zin, 1.5), 0.8, rng, gumbel=g).y
            return ad.tsum(ad.mul(y, c))

        tape = Tape()
        zl = tape.leaf(z.copy())
        backward(tape, loss(zl))
        num = central_diff(lambda: loss(z).item(), z)
        np.testing.assert_allclose(zl.grad, num, rtol=1e-6, atol=1e-9)


class TestDiscriminator:
    def test_zero_weights_give_half(self, rng):
        disc = mlp(3, (8,), 1, seed=0, head="sigmoid")
        for p in disc.parameters():
            p[...] = 0.0
        out = discriminate(disc, rng.dirichlet(np.ones(3), size=6)).data
        np.testing.assert_array_equal(out, np.full(6, 0.5))

    def test_hand_linear(self):
        disc = linear_disc([1.0, -1.0], b=0.2)
        out = discriminate(disc, np.array([[0.7, 0.3], [0.0, 1.0]])).data
        np.testing.assert_allclose(out, [_sigmoid(0.6), _sigmoid(-0.8)], rtol=1e-15)

    def test_clamped(self):
        disc = linear_disc([100.0, -100.0])
        out = discriminate(disc, np.array([[1.0, 0.0], [0.0, 1.0]])).data
        np.testing.assert_array_equal(out, [1.0 - PROB_CLAMP, PROB_CLAMP])

    def test_wrong_head(self):
        with pytest.raises(ConfigError):
            discriminate(mlp(3, (4,), 2, seed=0, head="sigmoid"), np.ones((1, 3)) / 3)
        with pytest.raises(ConfigError):
            discriminate(mlp(3, (4,), 1, seed=0), np.ones((1, 3)) / 3)


class TestGanLosses:
    def test_indifferent_discriminator(self):
        half = np.full(10, 0.5)
        losses = gan_losses(half, half)
        assert losses.loss_d.item() == pytest.approx(2 * math.log(0.5), rel=1e-15)
        assert losses.loss_s.item() == pytest.approx(math.log(0.5), rel=1e-15)

    def test_perfect_discriminator(self):
        losses = gan_losses(np.full(4, 1.0 - PROB_CLAMP), np.full(4, PROB_CLAMP))
        assert losses.loss_d.item() == pytest.approx(0.0, abs=1e-6)

    def test_worked_example(self):
        # (ln .9 + ln .6)/2 + (ln .6 + ln .9)/2 = ln .54
        losses = gan_losses(np.array([0.9, 0.6]), np.array([0.4, 0.1]))
        assert losses.loss_d.item() == pytest.approx(math.log(0.54), rel=1e-14)
        assert losses.loss_d.item() == pytest.approx(-0.6161861394238171, rel=1e-14)
        assert losses.loss_s.item() == pytest.approx((math.log(0.6) + math.log(0.9)) / 2, rel=1e-14)

    def test_nonsaturating(self):
        losses = gan_losses(np.array([0.9]), np.array([0.4]), mode="nonsaturating")
        assert losses.loss_s.item() == pytest.approx(-math.log(0.4), rel=1e-14)

    def test_bounded_above_by_zero(self, rng):
        for _ in range(50):
            a, b = rng.uniform(PROB_CLAMP, 1 - PROB_CLAMP, size=(2, 7))
            assert gan_losses(a, b).loss_d.item() <= 0.0

    def test_bad_mode_and_empty(self):
        with pytest.raises(ConfigError):
            gan_losses(np.array([0.5]), np.array([0.5]), mode="wgan")
        with pytest.raises(ConfigError):
            gan_losses(np.array([]), np.array([0.5]))


def _setup(rng):
    yt = np.eye(3)[rng.integers(0, 3, size=16)] * 0.9 + 0.1 / 3
    ys = rng.dirichlet(np.ones(3), size=16)
    disc = mlp(3, (6,), 1, seed=1, head="sigmoid")
    return yt, ys, disc


def _loss_d(disc, yt, ys, tape=None):
    return gan_losses(discriminate(disc, yt, tape), discriminate(disc, ys, tape)).loss_d


class TestUpdates:
    def test_discriminator_gradient_matches_finite_differences(self, rng):
        yt, ys, disc = _setup(rng)
        tape = Tape()
        backward(tape, _loss_d(disc, yt, ys, tape))
        grads = tape.gradients(disc)
        for p, g in zip(disc.parameters(), grads):
            num = central_diff(lambda: _loss_d(disc, yt, ys).item(), p)
            np.testing.assert_allclose(g, num, rtol=1e-5, atol=1e-8)

    def test_ascent_step_increases_loss_d(self, rng):
        yt, ys, disc = _setup(rng)
        before = _loss_d(disc, yt, ys).item()
        tape = Tape()
        backward(tape, -_loss_d(disc, yt, ys, tape))
        step(OptimizerState("sgd", lr=1e-2), disc.parameters(), tape.gradients(disc))
        assert _loss_d(disc, yt, ys).item() > before

    def test_student_descent_step_decreases_loss_s(self, rng):
        disc = mlp(3, (6,), 1, seed=1, head="sigmoid")
        z0 = rng.normal(size=(16, 3))
        g = rng.gumbel(size=(16, 3))

        def loss_s(z, tape=None):
            zl = tape.leaf(z) if tape is not None else z
            y = gumbel_sample(temperature_softmax(zl, 1.0), 1.0, rng, gumbel=g)
            d = discriminate(disc, y, tape)
            return gan_losses(np.full(4, 0.5), d).loss_s, zl

        tape = Tape()
        ls, zl = loss_s(z0, tape)
        backward(tape, ls)
        assert loss_s(z0 - 0.05 * zl.grad)[0].item() < ls.item()

    def test_equilibrium_when_distributions_match(self, rng):
        # identical inputs: the best achievable loss_d is 2 ln 0.5, reached at D = 0.5
        y = rng.dirichlet(np.ones(3), size=64)
        disc = mlp(3, (6,), 1, seed=2, head="sigmoid")
        opt = OptimizerState("adam", lr=1e-2)
        for _ in range(300):
            tape = Tape()
            backward(tape, -_loss_d(disc, y, y, tape))
            step(opt, disc.parameters(), tape.gradients(disc))
        val = _loss_d(disc, y, y).item()
        assert val <= 2 * math.log(0.5) + 1e-12
        assert val == pytest.approx(2 * math.log(0.5), abs=1e-3)
