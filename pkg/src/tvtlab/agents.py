"""The memory-augmented agent and its two structural ablations.

The full agent (``rma``) encodes each observation, compresses it with
the recurrent context into a state variable, reads from an append-only
episodic memory with content-based attention, writes the state variable
back, and decodes observation reconstructions plus a value prediction.
``lstm_mem`` is the same model without the reconstruction decoders and
losses; ``lstm`` additionally drops the external memory. Temporal value
transport is not an architecture: agent variant ``tvt`` is the full
model trained with transport enabled.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import memory as mem_mod
from .autodiff import Tensor
from .learning import TrainingDiverged
from .nn import MLP, DeepLSTM, Linear, ParameterSet

VARIANTS = ("rma", "lstm_mem", "lstm")


def arch_of(agent_name: str) -> tuple[str, bool]:
    """Map a CLI agent name to (architecture variant, tvt_enabled)."""
    if agent_name == "tvt":
        return "rma", True
    if agent_name in VARIANTS:
        return agent_name, False
    raise ValueError(f"unknown agent {agent_name!r}")


@dataclass
class Observation:
    grid: np.ndarray          # (C, H, W) binary
    prev_action: int | None   # None on the first step
    prev_reward: float

    def action_onehot(self, num_actions: int) -> np.ndarray:
        onehot = np.zeros(num_actions, dtype=np.float32)
        if self.prev_action is not None:
            onehot[self.prev_action] = 1.0
        return onehot


@dataclass
class AgentConfig:
    variant: str = "rma"
    obs_shape: tuple = (39, 7, 9)
    num_actions: int = 6
    word_size: int = 200          # W: state-variable and memory row width
    num_heads: int = 3            # k
    top_k: int = 50
    memory_size: int = 160        # N: rows, sized to episode length
    encoder_hidden: int = 256
    lstm_hidden: int = 128
    policy_hidden: int = 200
    value_hidden: int = 200
    dtype: str = "float32"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")

    @property
    def np_dtype(self):
        return np.float64 if self.dtype == "float64" else np.float32

    @property
    def has_memory(self) -> bool:
        return self.variant in ("rma", "lstm_mem")

    @property
    def has_decoders(self) -> bool:
        return self.variant == "rma"


@dataclass
class StepOutput:
    z: Tensor
    logits: Tensor
    log_probs: Tensor
    probs: np.ndarray
    value: Tensor
    recon: dict | None
    reads: list | None
    read_strengths: list | None
    obs_grid_flat: np.ndarray
    prev_action_onehot: np.ndarray
    prev_reward: float
    action: int = -1

    @property
    def read_strength_values(self) -> np.ndarray:
        if self.read_strengths is None:
            return np.zeros(0)
        return np.array([float(s.data[0]) for s in self.read_strengths])

    def read_weight_rows(self, capacity: int) -> np.ndarray:
        if self.reads is None:
            return np.zeros((0, capacity), dtype=np.float32)
        return np.stack([r.weights for r in self.reads])


class Agent:
    """Parameters plus per-episode recurrent state for one worker."""

    def __init__(self, config: AgentConfig, rng: np.random.Generator):
        self.config = config
        cfg = config
        dt = cfg.np_dtype
        p = ParameterSet()
        grid_dim = int(np.prod(cfg.obs_shape))
        self.grid_dim = grid_dim
        self.embed_dim = cfg.encoder_hidden + cfg.num_actions + 1
        self.encoder = Linear(p, "encoder", grid_dim, cfg.encoder_hidden, rng, dt)
        w = cfg.word_size
        h_out = cfg.lstm_hidden * 2
        m_dim = cfg.num_heads * w if cfg.has_memory else 0
        self.z_mlp = MLP(p, "state_var", self.embed_dim + h_out + m_dim, 2 * w, w, rng, dt)
        lstm_in = w + m_dim
        self.lstm = DeepLSTM(p, "lstm", lstm_in, cfg.lstm_hidden, rng, dtype=dt)
        if cfg.has_memory:
            self.interface = Linear(p, "interface", h_out,
                                    cfg.num_heads * (w + 1), rng, dt)
            pol_in = w + h_out + m_dim
            val_in = w + cfg.num_actions
        else:
            pol_in = w + h_out
            val_in = w + h_out + cfg.num_actions
        self.policy = MLP(p, "policy", pol_in, cfg.policy_hidden, cfg.num_actions, rng, dt)
        self.value = MLP(p, "value", val_in, cfg.value_hidden, 1, rng, dt)
        if cfg.has_decoders:
            self.dec_image = MLP(p, "dec_image", w, cfg.encoder_hidden, grid_dim, rng, dt)
            self.dec_reward = Linear(p, "dec_reward", w, 1, rng, dt)
            self.dec_action = Linear(p, "dec_action", w, cfg.num_actions, rng, dt)
        self.params = p
        self.reset()

    def reset(self) -> None:
        """Zero the recurrent state; memory starts blank each episode."""
        cfg = self.config
        dt = cfg.np_dtype
        self.lstm_state = self.lstm.zero_state()
        self.prev_reads = [Tensor(np.zeros(cfg.word_size, dtype=dt))
                           for _ in range(cfg.num_heads)] if cfg.has_memory else []
        self.memory = mem_mod.MemoryState(cfg.memory_size, cfg.word_size, dt) \
            if cfg.has_memory else None

    # ------------------------------------------------------------------

    def encode(self, obs: Observation, grid_tensor: Tensor | None = None) -> Tensor:
        cfg = self.config
        grid = np.asarray(obs.grid)
        if grid.shape != cfg.obs_shape:
            raise ValueError(f"observation grid {grid.shape}, expected {cfg.obs_shape}")
        if grid_tensor is None:
            flat = Tensor(grid.reshape(-1).astype(cfg.np_dtype))
        else:
            flat = grid_tensor
        img = ad.tanh(self.encoder(flat))
        act = Tensor(obs.action_onehot(cfg.num_actions).astype(cfg.np_dtype))
        rew = Tensor(np.asarray([obs.prev_reward], dtype=cfg.np_dtype))
        return ad.concat([img, act, rew])

    def step(self, obs: Observation, rng: np.random.Generator | None = None,
             sample: bool = True, mutate: bool = True,
             grid_tensor: Tensor | None = None) -> StepOutput:
        """One agent cycle: encode, state variable, recurrence, read,
        write, policy, decode. ``mutate=False`` leaves the recurrent
        state untouched (used for the post-window bootstrap value)."""
        cfg = self.config
        e = self.encode(obs, grid_tensor)
        h_prev = ad.concat([h for h, _ in self.lstm_state])
        if cfg.has_memory:
            z_in = ad.concat([e, h_prev] + self.prev_reads)
        else:
            z_in = ad.concat([e, h_prev])
        z = self.z_mlp(z_in)
        x = ad.concat([z] + self.prev_reads) if cfg.has_memory else z
        h, new_state = self.lstm(x, self.lstm_state)
        reads = None
        strengths = None
        if cfg.has_memory:
            keys, strengths = mem_mod.interface_split(
                self.interface(h), cfg.num_heads, cfg.word_size)
            reads = mem_mod.read(self.memory, keys, strengths, cfg.top_k)
            m_vecs = [r.vector for r in reads]
            pol_in = ad.concat([z, h] + m_vecs)
        else:
            pol_in = ad.concat([z, h])
        logits = self.policy(pol_in)
        log_probs = ad.log_softmax(logits)
        probs64 = np.exp(log_probs.data.astype(np.float64))
        if not np.all(np.isfinite(probs64)):
            raise TrainingDiverged("policy distribution is non-finite")
        probs64 /= probs64.sum()
        if cfg.has_memory:
            val_in = ad.concat([z, ad.stop_gradient(logits)])
        else:
            val_in = ad.concat([z, h, ad.stop_gradient(logits)])
        value = self.value(val_in)
        recon = None
        if cfg.has_decoders:
            recon = {
                "image_logits": self.dec_image(z),
                "reward": self.dec_reward(z),
                "action_logits": self.dec_action(z),
            }
        if mutate:
            if cfg.has_memory:
                self.memory.write(z)
                self.prev_reads = [r.vector for r in reads]
            self.lstm_state = new_state
        out = StepOutput(
            z=z, logits=logits, log_probs=log_probs, probs=probs64, value=value,
            recon=recon, reads=reads, read_strengths=strengths,
            obs_grid_flat=np.asarray(obs.grid).reshape(-1).astype(cfg.np_dtype),
            prev_action_onehot=obs.action_onehot(cfg.num_actions).astype(cfg.np_dtype),
            prev_reward=float(obs.prev_reward))
        if sample:
            if rng is None:
                raise ValueError("sampling requires an rng")
            out.action = int(rng.choice(cfg.num_actions, p=probs64))
        else:
            out.action = int(np.argmax(logits.data))
        return out

    def bootstrap_value(self, obs: Observation) -> float:
        """Value prediction one step past the window, no state mutation."""
        with ad.no_grad():
            out = self.step(obs, sample=False, mutate=False)
        return float(out.value.data[0])

    # ------------------------------------------------------------------

    def checkpoint_meta(self) -> dict:
        cfg = self.config
        return {"variant": cfg.variant, "obs_shape": list(cfg.obs_shape),
                "num_actions": cfg.num_actions, "word_size": cfg.word_size,
                "num_heads": cfg.num_heads, "top_k": cfg.top_k,
                "memory_size": cfg.memory_size,
                "encoder_hidden": cfg.encoder_hidden,
                "lstm_hidden": cfg.lstm_hidden,
                "policy_hidden": cfg.policy_hidden,
                "value_hidden": cfg.value_hidden}


def config_from_meta(meta: dict) -> AgentConfig:
    return AgentConfig(
        variant=meta["variant"], obs_shape=tuple(meta["obs_shape"]),
        num_actions=meta["num_actions"], word_size=meta["word_size"],
        num_heads=meta["num_heads"], top_k=meta["top_k"],
        memory_size=meta["memory_size"], encoder_hidden=meta["encoder_hidden"],
        lstm_hidden=meta["lstm_hidden"], policy_hidden=meta["policy_hidden"],
        value_hidden=meta["value_hidden"])
