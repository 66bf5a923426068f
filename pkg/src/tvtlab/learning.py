"""Returns, generalized advantages, the Adam update, and loss assembly.

Per-episode quantities are plain float64 arrays; only the loss assembly
touches the autodiff graph. Advantages and return targets enter the loss
as constants, so no gradient flows through them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .nn import ParameterSet
from .tvt import TvtConfig


class TrainingDiverged(RuntimeError):
    """A loss, gradient, parameter or policy became non-finite."""


@dataclass
class HyperParams:
    eta: float = 5e-6
    gamma: float = 0.96
    lam: float | None = None          # defaults to gamma (lambda in configs)
    alpha_image: float = 20.0
    alpha_rew: float = 1.0
    alpha_value: float = 0.4
    alpha_act: float = 1.0
    alpha_entropy: float = 0.01
    tau_window: int | None = None     # None: the full episode
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    tvt: TvtConfig = field(default_factory=TvtConfig)

    def __post_init__(self):
        if self.lam is None:
            self.lam = self.gamma
        if not (0.0 <= self.gamma <= 1.0):
            raise ValueError(f"gamma {self.gamma} outside [0, 1]")
        if not (0.0 <= self.lam <= 1.0):
            raise ValueError(f"lambda {self.lam} outside [0, 1]")
        if self.eta <= 0:
            raise ValueError("eta must be positive")


def compute_returns(rewards, gamma: float, terminal: bool,
                    window_end_value: float = 0.0) -> np.ndarray:
    """Discounted within-window returns, bootstrapped at the window end.

    R_k = r_k + gamma * R_{k+1}, seeded with the value prediction at the
    step after the window when the window stops before termination, and
    with 0 at termination.
    """
    r = np.asarray(rewards, dtype=np.float64)
    out = np.empty_like(r)
    acc = 0.0 if terminal else float(window_end_value)
    for k in range(len(r) - 1, -1, -1):
        acc = r[k] + gamma * acc
        out[k] = acc
    return out


def compute_returns_direct(rewards, gamma: float, terminal: bool,
                           window_end_value: float = 0.0) -> np.ndarray:
    """Non-recursive restatement (oracle): explicit discounted sums."""
    r = np.asarray(rewards, dtype=np.float64)
    T = len(r)
    out = np.zeros(T)
    for t in range(T):
        for u in range(t, T):
            out[t] += gamma ** (u - t) * r[u]
        if not terminal:
            out[t] += gamma ** (T - t) * window_end_value
    return out


def gae_advantages(rewards, values, gamma: float, lam: float, terminal: bool,
                   window_end_value: float = 0.0) -> np.ndarray:
    """A_t = delta_t + (gamma*lambda) A_{t+1} with A seeded to 0 past the end.

    ``values`` has length T; the step-after-window bootstrap comes in via
    ``window_end_value`` (taken as 0 at termination).
    """
    r = np.asarray(rewards, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    if len(v) != len(r):
        raise ValueError(f"{len(r)} rewards vs {len(v)} values")
    vnext = np.append(v[1:], 0.0 if terminal else float(window_end_value))
    gamma_t = np.full(len(r), gamma)
    if terminal:
        gamma_t[-1] = 0.0
    delta = r + gamma_t * vnext - v
    out = np.empty_like(delta)
    acc = 0.0
    for t in range(len(r) - 1, -1, -1):
        acc = delta[t] + gamma * lam * acc
        out[t] = acc
    return out


@dataclass
class LossBreakdown:
    policy: float = 0.0
    entropy: float = 0.0
    image: float = 0.0
    reward: float = 0.0
    action: float = 0.0
    value: float = 0.0
    read_reg: float = 0.0
    total: float = 0.0

    def as_dict(self) -> dict[str, float]:
        return {
            "loss_policy": self.policy, "loss_entropy": self.entropy,
            "loss_image": self.image, "loss_reward": self.reward,
            "loss_action": self.action, "loss_value": self.value,
            "loss_read_reg": self.read_reg, "loss_total": self.total,
        }


def total_loss(step_outputs, actions, returns, advantages, hp: HyperParams,
               tvt_enabled: bool) -> tuple[Tensor, LossBreakdown]:
    """Single minimized scalar for one rollout window.

    Maximized terms (advantage-weighted log-probabilities, entropy bonus)
    enter negated; reconstruction and value terms add as losses, plus the
    read-strength regularizer when transport is active. Advantages and
    returns are constants here.
    """
    terms = []
    bd = LossBreakdown()
    for k, out in enumerate(step_outputs):
        logp_a = ad.gather(out.log_probs, [actions[k]])
        pol = ad.scale_const(ad.tsum(logp_a), -float(advantages[k]))
        ent = ad.scale_const(ad.entropy(out.logits), -hp.alpha_entropy)
        vloss = ad.scale_const(
            ad.square(ad.sub(Tensor(np.asarray(returns[k], dtype=out.value.dtype)),
                             ad.tsum(out.value))),
            0.5 * hp.alpha_value)
        terms += [pol, ent, vloss]
        bd.policy += pol.item()
        bd.entropy += ent.item()
        bd.value += vloss.item()
        if out.recon is not None:
            img = ad.scale_const(
                ad.bernoulli_ce_logits(out.recon["image_logits"], out.obs_grid_flat),
                hp.alpha_image / out.obs_grid_flat.size)
            rew = ad.scale_const(
                ad.square(ad.sub(Tensor(np.asarray(out.prev_reward, dtype=out.value.dtype)),
                                 ad.tsum(out.recon["reward"]))),
                0.5 * hp.alpha_rew)
            act = ad.scale_const(
                ad.softmax_ce_logits(out.recon["action_logits"], out.prev_action_onehot),
                hp.alpha_act)
            terms += [img, rew, act]
            bd.image += img.item()
            bd.reward += rew.item()
            bd.action += act.item()
        if tvt_enabled and out.read_strengths is not None and \
                np.isfinite(hp.tvt.beta_threshold):
            reg = ad.scale_const(
                ad.tsum(ad.relu(ad.sub(ad.concat(out.read_strengths),
                                       hp.tvt.beta_threshold))),
                5e-6)
            terms.append(reg)
            bd.read_reg += reg.item()
    total = terms[0]
    for t in terms[1:]:
        total = ad.add(total, t)
    bd.total = total.item()
    return total, bd


class Adam:
    """Adaptive-moment update with bias correction; eps = 1e-8."""

    def __init__(self, params: ParameterSet, hp: HyperParams):
        self.params = params
        self.hp = hp
        self.m = {name: np.zeros_like(p.data) for name, p in params}
        self.v = {name: np.zeros_like(p.data) for name, p in params}
        self.t = 0

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1, b2, eps = self.hp.beta1, self.hp.beta2, self.hp.adam_eps
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for name, p in self.params:
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data -= (self.hp.eta * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.data.dtype)
