import math

import numpy as np
import pytest

from tvtlab import autodiff as ad
from tvtlab import learning
from tvtlab.autodiff import Tensor
from tvtlab.learning import (Adam, HyperParams, compute_returns,
                             compute_returns_direct, gae_advantages)
from tvtlab.nn import ParameterSet


class TestReturns:
    def test_single_terminal_step(self):
        np.testing.assert_array_equal(compute_returns([5.0], 0.96, True), [5.0])

    def test_gamma_one_is_reward_tail_sum(self, rng):
        r = rng.normal(size=20)
        out = compute_returns(r, 1.0, True)
        want = np.cumsum(r[::-1])[::-1]
        np.testing.assert_allclose(out, want, atol=1e-12)

    def test_recursive_matches_direct(self, rng):
        for _ in range(20):
            T = int(rng.integers(1, 40))
            r = rng.normal(size=T)
            gamma = float(rng.uniform(0, 1))
            terminal = bool(rng.integers(2))
            boot = float(rng.normal())
            a = compute_returns(r, gamma, terminal, boot)
            b = compute_returns_direct(r, gamma, terminal, boot)
            np.testing.assert_allclose(a, b, atol=1e-9)

    def test_bootstrap_enters_when_not_terminal(self):
        out = compute_returns([0.0, 0.0], 0.5, False, window_end_value=8.0)
        np.testing.assert_allclose(out, [2.0, 4.0])


class TestGae:
    def test_lambda_zero_is_td_error(self, rng):
        T = 15
        r = rng.normal(size=T)
        v = rng.normal(size=T)
        adv = gae_advantages(r, v, 0.9, 0.0, True)
        vnext = np.append(v[1:], 0.0)
        gamma_t = np.full(T, 0.9)
        gamma_t[-1] = 0.0
        delta = r + gamma_t * vnext - v
        np.testing.assert_allclose(adv, delta, atol=1e-12)

    def test_lambda_one_is_return_minus_value(self, rng):
        # telescoping-sum oracle
        for terminal in (True, False):
            T = 12
            r = rng.normal(size=T)
            v = rng.normal(size=T)
            boot = float(rng.normal()) if not terminal else 0.0
            adv = gae_advantages(r, v, 0.93, 1.0, terminal, boot)
            ret = compute_returns(r, 0.93, terminal, boot)
            np.testing.assert_allclose(adv, ret - v, atol=1e-9)

    def test_zero_deltas_zero_advantages(self):
        # v chosen so r + gamma*v' - v = 0 everywhere
        gamma = 0.8
        T = 10
        r = np.ones(T)
        v = np.empty(T + 1)
        v[-1] = 0.0
        for t in range(T - 1, -1, -1):
            v[t] = r[t] + gamma * v[t + 1]
        adv = gae_advantages(r, v[:-1], gamma, 0.7, False, window_end_value=v[-1])
        # terminal=False with bootstrap equal to the consistent value
        np.testing.assert_allclose(adv, np.zeros(T), atol=1e-9)

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            gae_advantages([1.0, 2.0], [1.0], 0.9, 0.9, True)


class TestAdam:
    def _params(self):
        p = ParameterSet()
        p.add("x", np.array([1.0, -2.0, 3.0], dtype=np.float32))
        return p

    def test_zero_gradient_no_change(self):
        p = self._params()
        before = p["x"].data.copy()
        opt = Adam(p, HyperParams(eta=0.1))
        opt.step({"x": np.zeros(3, dtype=np.float32)})
        np.testing.assert_array_equal(p["x"].data, before)

    def test_first_step_magnitude_near_eta(self):
        p = self._params()
        eta = 0.05
        opt = Adam(p, HyperParams(eta=eta))
        before = p["x"].data.copy()
        opt.step({"x": np.array([0.5, -1.0, 2.0], dtype=np.float32)})
        step = before - p["x"].data
        # bias-corrected first step is eta * g / (|g| + eps) = eta * sign(g)
        np.testing.assert_allclose(np.abs(step), eta, rtol=1e-4)
        np.testing.assert_array_equal(np.sign(step), [1.0, -1.0, 1.0])

    def test_quadratic_bowl_monotone_decrease(self):
        p = ParameterSet()
        p.add("x", np.array([4.0, -3.0], dtype=np.float64))
        opt = Adam(p, HyperParams(eta=0.05))
        losses = []
        for _ in range(100):
            x = p["x"].data
            losses.append(float(np.sum(x * x)))
            opt.step({"x": 2.0 * x})
        diffs = np.diff(losses)
        assert np.all(diffs <= 1e-9)
        assert losses[-1] < losses[0] / 10


class TestHyperParams:
    def test_lambda_defaults_to_gamma(self):
        hp = HyperParams(gamma=0.87)
        assert hp.lam == 0.87

    def test_invalid_gamma_rejected(self):
        with pytest.raises(ValueError):
            HyperParams(gamma=1.5)

    def test_invalid_eta_rejected(self):
        with pytest.raises(ValueError):
            HyperParams(eta=0.0)


class _FakeStep:
    """Minimal StepOutput stand-in for loss assembly tests."""

    def __init__(self, logits, value, recon=None, strengths=None,
                 grid=None, prev_action=None, prev_reward=0.0, nact=6):
        self.logits = Tensor(np.asarray(logits, dtype=np.float64),
                             requires_grad=True)
        self.log_probs = ad.log_softmax(self.logits)
        self.value = Tensor(np.asarray([value], dtype=np.float64),
                            requires_grad=True)
        self.recon = recon
        self.read_strengths = strengths
        self.obs_grid_flat = grid if grid is not None else np.zeros(4)
        self.prev_action_onehot = (prev_action if prev_action is not None
                                   else np.zeros(nact))
        self.prev_reward = prev_reward


class TestTotalLoss:
    def test_uniform_policy_entropy_term(self):
        hp = HyperParams(eta=1e-3, alpha_entropy=0.01)
        step = _FakeStep(np.zeros(6), value=0.0)
        loss, bd = learning.total_loss([step], [0], returns=[0.0],
                                       advantages=[0.0], hp=hp, tvt_enabled=False)
        np.testing.assert_allclose(bd.entropy, -0.01 * math.log(6.0), rtol=1e-6)

    def test_zero_advantage_zero_policy_gradient(self):
        hp = HyperParams(eta=1e-3)
        step = _FakeStep(np.array([0.3, -0.1, 0.5, 0.0, 0.0, 0.0]), value=0.0)
        loss, _ = learning.total_loss([step], [2], returns=[0.0],
                                      advantages=[0.0], hp=hp, tvt_enabled=False)
        step.logits.zero_grad()
        ad.backward(loss)
        # only the entropy term contributes to the logits gradient here
        hp2 = HyperParams(eta=1e-3, alpha_entropy=0.0)
        step2 = _FakeStep(np.array([0.3, -0.1, 0.5, 0.0, 0.0, 0.0]), value=0.0)
        loss2, _ = learning.total_loss([step2], [2], returns=[0.0],
                                       advantages=[0.0], hp=hp2, tvt_enabled=False)
        ad.backward(loss2)
        np.testing.assert_allclose(step2.logits.grad, np.zeros(6), atol=1e-12)

    def test_value_term_plugin(self):
        # R=1, V=0 -> 0.4 * 0.5 * 1 = 0.2
        hp = HyperParams(eta=1e-3, alpha_entropy=0.0)
        step = _FakeStep(np.zeros(6), value=0.0)
        _loss, bd = learning.total_loss([step], [0], returns=[1.0],
                                        advantages=[0.0], hp=hp, tvt_enabled=False)
        np.testing.assert_allclose(bd.value, 0.2, rtol=1e-9)

    def test_near_perfect_reconstruction_small_loss(self):
        hp = HyperParams(eta=1e-3, alpha_entropy=0.0)
        grid = np.array([1.0, 0.0, 1.0, 0.0])
        big = 16.0  # sigmoid(+-16) is within 1e-7 of the target
        recon = {
            "image_logits": Tensor(np.array([big, -big, big, -big]),
                                   requires_grad=True),
            "reward": Tensor(np.array([0.7]), requires_grad=True),
            "action_logits": Tensor(np.array([30.0, 0.0, 0.0, 0.0, 0.0, 0.0]),
                                    requires_grad=True),
        }
        onehot = np.zeros(6)
        onehot[0] = 1.0
        step = _FakeStep(np.zeros(6), value=2.5, recon=recon, grid=grid,
                         prev_action=onehot, prev_reward=0.7)
        _loss, bd = learning.total_loss([step], [0], returns=[2.5],
                                        advantages=[0.0], hp=hp, tvt_enabled=False)
        assert bd.image < 1e-5
        assert bd.reward == 0.0
        assert bd.action < 1e-9
        assert bd.value < 1e-12

    def test_read_regularization_term(self):
        hp = HyperParams(eta=1e-3, alpha_entropy=0.0)
        strengths = [Tensor(np.array([4.0]), requires_grad=True),
                     Tensor(np.array([1.0]), requires_grad=True)]
        step = _FakeStep(np.zeros(6), value=0.0, strengths=strengths)
        _loss, bd = learning.total_loss([step], [0], returns=[0.0],
                                        advantages=[0.0], hp=hp, tvt_enabled=True)
        np.testing.assert_allclose(bd.read_reg, 5e-6 * 2.0, rtol=1e-6)
        _loss2, bd2 = learning.total_loss([step], [0], returns=[0.0],
                                          advantages=[0.0], hp=hp, tvt_enabled=False)
        assert bd2.read_reg == 0.0
