"""Episode workers and the trainer loop.

A worker owns an environment and a parameter copy: it rolls out one
truncation window at a time, optionally applies temporal value transport
to the window's rewards, assembles returns/advantages/losses and hands
gradients back. The trainer owns the canonical parameters and applies
one optimizer step per incoming gradient. The default mode runs workers
round-robin in one thread, which is fully deterministic given the seed;
``async_mode`` runs them in threads and applies gradients in arrival
order, which reproduces the asynchronous contract at the cost of
determinism.
"""

from __future__ import annotations

import csv
import threading
import time
from contextlib import nullcontext
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import tvt as tvt_mod
from .agents import Agent, AgentConfig, Observation, arch_of
from .autodiff import Tensor
from .checkpoint import save as save_checkpoint
from .envs import GridTaskEnv, TaskConfig
from .learning import (Adam, HyperParams, LossBreakdown, TrainingDiverged,
                       compute_returns, gae_advantages, total_loss)
from .traces import EpisodeTrace, save_trace


METRIC_COLUMNS = [
    "episodes", "env_steps", "p1_score", "p2_score", "p3_score", "p4_score",
    "p5_score", "episode_return", "max_read_strength", "loss_policy",
    "loss_entropy", "loss_image", "loss_reward", "loss_action", "loss_value",
    "loss_read_reg", "loss_total", "key_p1", "pad_outcome", "p1_object_touches",
]


@dataclass
class EpisodeResult:
    window_grads: list[dict]
    trace: EpisodeTrace
    breakdown: LossBreakdown
    summary: dict
    steps: int
    max_read_strength: float


def _detach_agent_state(agent: Agent) -> None:
    """Cut the graph between truncation windows (BPTT truncation)."""
    agent.lstm_state = [(Tensor(h.data.copy()), Tensor(c.data.copy()))
                        for h, c in agent.lstm_state]
    if agent.memory is not None:
        agent.memory.rows = [Tensor(r.data.copy()) for r in agent.memory.rows]
        agent.prev_reads = [Tensor(r.data.copy()) for r in agent.prev_reads]


def run_episode(env: GridTaskEnv, agent: Agent, hp: HyperParams, tvt_enabled: bool,
                env_rng: np.random.Generator, act_rng: np.random.Generator,
                compute_grads: bool = True, greedy: bool = False,
                episode_seed: int | None = None) -> EpisodeResult:
    """One full episode, one gradient per truncation window.

    Transport operates on window-local rewards with absolute memory-slot
    indexing; with the default whole-episode window this is exactly the
    multi-read transport applied to the complete trace. Steps that fall
    in already-consumed windows cannot be modified retroactively.
    """
    cfg = agent.config
    ncap = cfg.memory_size if cfg.has_memory else env.config.max_episode_steps
    k = cfg.num_heads
    tau = hp.tau_window or env.config.max_episode_steps
    obs_grid = env.reset(env_rng)
    agent.reset()
    prev_action: int | None = None
    prev_reward = 0.0
    done = False
    t_abs = 0
    window_grads: list[dict] = []
    bd_total = LossBreakdown()
    ep = {"phase": [], "action": [], "reward_env": [], "reward_tvt": [],
          "value": [], "logp": [], "strengths": [], "weights": [],
          "obs": [], "pos": [], "dir": []}
    bootstrap = 0.0
    while not done:
        outs = []
        actions = []
        rewards = []
        t_start = t_abs
        while not done and t_abs - t_start < tau:
            o = Observation(obs_grid, prev_action, prev_reward)
            with ad.no_grad() if not compute_grads else nullcontext():
                so = agent.step(o, act_rng, sample=not greedy)
            obs_grid_next, r, done, info = env.step(so.action)
            outs.append(so)
            actions.append(so.action)
            rewards.append(r)
            ep["phase"].append(info["phase"])
            ep["action"].append(so.action)
            ep["reward_env"].append(r)
            ep["value"].append(float(so.value.data[0]))
            ep["logp"].append(float(so.log_probs.data[so.action]))
            if cfg.has_memory:
                ep["strengths"].append(so.read_strength_values)
                ep["weights"].append(so.read_weight_rows(ncap))
            else:
                ep["strengths"].append(np.zeros(0))
                ep["weights"].append(np.zeros((0, ncap), dtype=np.float32))
            ep["obs"].append((o.grid > 0.5).astype(np.uint8))
            ep["pos"].append(info["pos"])
            ep["dir"].append(info["dir"])
            prev_action, prev_reward = so.action, r
            obs_grid = obs_grid_next
            t_abs += 1
        bootstrap = 0.0 if done else agent.bootstrap_value(
            Observation(obs_grid, prev_action, prev_reward))
        rewards = np.asarray(rewards, dtype=np.float64)
        if tvt_enabled and cfg.has_memory:
            r_abs = np.zeros(t_abs)
            r_abs[t_start:] = rewards
            v_abs = np.zeros(t_abs + 1)
            v_abs[t_start:-1] = ep["value"][t_start:]
            v_abs[-1] = bootstrap
            s_abs = np.zeros((t_abs, k))
            s_abs[t_start:] = np.stack(ep["strengths"][t_start:])
            w_abs = np.zeros((t_abs, k, ncap), dtype=np.float32)
            w_abs[t_start:] = np.stack(ep["weights"][t_start:])
            r_mod_abs, _events = tvt_mod.apply(r_abs, v_abs, s_abs, w_abs, hp.tvt)
            rewards_used = r_mod_abs[t_start:]
        else:
            rewards_used = rewards
        ep["reward_tvt"].extend(rewards_used.tolist())
        if compute_grads:
            values = np.asarray(ep["value"][t_start:], dtype=np.float64)
            returns = compute_returns(rewards_used, hp.gamma, done, bootstrap)
            advantages = gae_advantages(rewards_used, values, hp.gamma, hp.lam,
                                        done, bootstrap)
            loss, bd = total_loss(outs, actions, returns, advantages, hp, tvt_enabled)
            agent.params.zero_grad()
            ad.backward(loss)
            window_grads.append({name: g.copy() for name, g in agent.params.grads().items()})
            for f in ("policy", "entropy", "image", "reward", "action", "value",
                      "read_reg", "total"):
                setattr(bd_total, f, getattr(bd_total, f) + getattr(bd, f))
        if not done:
            _detach_agent_state(agent)
    strengths = (np.stack(ep["strengths"]) if cfg.has_memory
                 else np.zeros((t_abs, 0)))
    weights = (np.stack(ep["weights"]) if cfg.has_memory
               else np.zeros((t_abs, 0, ncap), dtype=np.float32))
    summary = env.summary()
    header = {"task": env.config.task, "agent": cfg.variant,
              "tvt_enabled": bool(tvt_enabled), "seed": episode_seed,
              "T": t_abs, "k": k, "N": ncap, "gamma": hp.gamma,
              "lambda": hp.lam, "tvt_alpha": hp.tvt.alpha,
              "beta_threshold": hp.tvt.beta_threshold,
              "obs_shape": list(cfg.obs_shape)}
    trace = EpisodeTrace(
        header=header,
        phase=np.asarray(ep["phase"], dtype=np.int64),
        action=np.asarray(ep["action"], dtype=np.int64),
        reward_env=np.asarray(ep["reward_env"], dtype=np.float64),
        reward_tvt=np.asarray(ep["reward_tvt"], dtype=np.float64),
        value=np.asarray(ep["value"], dtype=np.float64),
        bootstrap_value=bootstrap,
        logp_action=np.asarray(ep["logp"], dtype=np.float64),
        strengths=strengths,
        weights=weights,
        obs=np.asarray(ep["obs"], dtype=np.uint8),
        pos=np.asarray(ep["pos"], dtype=np.int64),
        direction=np.asarray(ep["dir"], dtype=np.int64),
        summary=summary)
    max_beta = float(strengths.max()) if strengths.size else 0.0
    return EpisodeResult(window_grads, trace, bd_total, summary, t_abs, max_beta)


def make_agent_config(task_config: TaskConfig, agent_name: str, *,
                      word_size=200, num_heads=3, top_k=50, encoder_hidden=256,
                      lstm_hidden=128, policy_hidden=200, value_hidden=200,
                      dtype="float32") -> AgentConfig:
    variant, _ = arch_of(agent_name)
    return AgentConfig(
        variant=variant, obs_shape=task_config.obs_shape(),
        num_actions=6, word_size=word_size, num_heads=num_heads,
        top_k=top_k, memory_size=task_config.max_episode_steps,
        encoder_hidden=encoder_hidden, lstm_hidden=lstm_hidden,
        policy_hidden=policy_hidden, value_hidden=value_hidden, dtype=dtype)


class Trainer:
    """Owns the canonical parameters; workers feed it gradients."""

    def __init__(self, task_config: TaskConfig, agent_config: AgentConfig,
                 hp: HyperParams, tvt_enabled: bool, seed: int, out_dir=None,
                 num_workers: int = 1, async_mode: bool = False,
                 trace_every: int = 0, checkpoint_every: int = 0,
                 log_fn=None):
        self.task_config = task_config
        self.agent_config = agent_config
        self.hp = hp
        self.tvt_enabled = tvt_enabled
        self.seed = seed
        self.num_workers = num_workers
        self.async_mode = async_mode
        self.trace_every = trace_every
        self.checkpoint_every = checkpoint_every
        self.out_dir = out_dir
        self.log_fn = log_fn
        init_rng = np.random.default_rng(np.random.SeedSequence([seed, 0xA6E7]))
        self.master = Agent(agent_config, init_rng)
        self.optimizer = Adam(self.master.params, hp)
        self.episodes = 0
        self.env_steps = 0
        self.metrics_rows: list[dict] = []
        self._lock = threading.Lock()
        self._metrics_path = None
        if out_dir is not None:
            from pathlib import Path
            out = Path(out_dir)
            (out / "traces").mkdir(parents=True, exist_ok=True)
            (out / "checkpoints").mkdir(parents=True, exist_ok=True)
            self._metrics_path = out / "metrics.csv"
            with open(self._metrics_path, "w", newline="") as fh:
                csv.writer(fh).writerow(METRIC_COLUMNS)

    def checkpoint_meta(self) -> dict:
        meta = self.master.checkpoint_meta()
        meta.update({"task": self.task_config.task, "tvt_enabled": self.tvt_enabled,
                     "gamma": self.hp.gamma, "eta": self.hp.eta,
                     "beta_threshold": self.hp.tvt.beta_threshold,
                     "tvt_alpha": self.hp.tvt.alpha})
        return meta

    def save_checkpoint(self, name: str) -> None:
        if self.out_dir is None:
            return
        from pathlib import Path
        path = Path(self.out_dir) / "checkpoints" / f"{name}.ckpt"
        save_checkpoint(path, self.master.params.arrays(), self.checkpoint_meta())

    def _worker_loop(self, wid: int, stop_check) -> None:
        env = GridTaskEnv(self.task_config)
        agent = Agent(self.agent_config,
                      np.random.default_rng(np.random.SeedSequence([self.seed, wid])))
        episode_idx = 0
        while True:
            with self._lock:
                if stop_check():
                    return
                agent.params.load_values(self.master.params)
            env_rng = np.random.default_rng(
                np.random.SeedSequence([self.seed, wid, episode_idx, 0]))
            act_rng = np.random.default_rng(
                np.random.SeedSequence([self.seed, wid, episode_idx, 1]))
            try:
                result = run_episode(env, agent, self.hp, self.tvt_enabled,
                                     env_rng, act_rng, episode_seed=episode_idx)
            except TrainingDiverged:
                with self._lock:
                    self.save_checkpoint("diagnostic")
                raise
            with self._lock:
                if stop_check():
                    return
                self._ingest(result)
            episode_idx += 1

    def _ingest(self, result: EpisodeResult) -> None:
        for grads in result.window_grads:
            for g in grads.values():
                if not np.all(np.isfinite(g)):
                    self.save_checkpoint("diagnostic")
                    raise TrainingDiverged("non-finite gradient encountered")
            self.optimizer.step(grads)
        for p in self.master.params.arrays().values():
            if not np.all(np.isfinite(p)):
                self.save_checkpoint("diagnostic")
                raise TrainingDiverged("non-finite parameter after update")
        if not np.isfinite(result.breakdown.total):
            self.save_checkpoint("diagnostic")
            raise TrainingDiverged("non-finite loss")
        self.episodes += 1
        self.env_steps += result.steps
        s = result.summary
        row = {"episodes": self.episodes, "env_steps": self.env_steps,
               "p1_score": s["p1_score"], "p2_score": s["p2_score"],
               "p3_score": s["p3_score"], "p4_score": s["p4_score"],
               "p5_score": s["p5_score"], "episode_return": s["episode_return"],
               "max_read_strength": result.max_read_strength,
               **result.breakdown.as_dict(),
               "key_p1": int(s["key_p1"]), "pad_outcome": s["pad_outcome"],
               "p1_object_touches": s["p1_object_touches"]}
        self.metrics_rows.append(row)
        if self._metrics_path is not None:
            with open(self._metrics_path, "a", newline="") as fh:
                csv.writer(fh).writerow([row[c] for c in METRIC_COLUMNS])
        if self.log_fn is not None:
            self.log_fn(row)
        if self.out_dir is not None and self.trace_every and \
                self.episodes % self.trace_every == 0:
            from pathlib import Path
            save_trace(Path(self.out_dir) / "traces" / f"ep_{self.episodes:07d}.npz",
                       result.trace)
        if self.checkpoint_every and self.episodes % self.checkpoint_every == 0:
            self.save_checkpoint(f"ck_{self.episodes:07d}")

    def train(self, max_episodes: int | None = None,
              max_env_steps: int | None = None,
              wall_clock_limit: float | None = None) -> None:
        if max_episodes is None and max_env_steps is None:
            raise ValueError("need max_episodes or max_env_steps")
        start = time.time()

        def stop() -> bool:
            if max_episodes is not None and self.episodes >= max_episodes:
                return True
            if max_env_steps is not None and self.env_steps >= max_env_steps:
                return True
            if wall_clock_limit is not None and time.time() - start > wall_clock_limit:
                return True
            return False

        if self.async_mode and self.num_workers > 1:
            threads = [threading.Thread(target=self._worker_loop, args=(w, stop))
                       for w in range(self.num_workers)]
            for t in threads:
                t.start()
            for t in threads:
                t.join()
        else:
            self._train_sync(stop)
        self.save_checkpoint("ck_final")

    def _train_sync(self, stop) -> None:
        envs = [GridTaskEnv(self.task_config) for _ in range(self.num_workers)]
        agents = [Agent(self.agent_config,
                        np.random.default_rng(np.random.SeedSequence([self.seed, w])))
                  for w in range(self.num_workers)]
        episode_idx = [0] * self.num_workers
        while not stop():
            wid = self.episodes % self.num_workers
            agents[wid].params.load_values(self.master.params)
            env_rng = np.random.default_rng(
                np.random.SeedSequence([self.seed, wid, episode_idx[wid], 0]))
            act_rng = np.random.default_rng(
                np.random.SeedSequence([self.seed, wid, episode_idx[wid], 1]))
            try:
                result = run_episode(envs[wid], agents[wid], self.hp,
                                     self.tvt_enabled, env_rng, act_rng,
                                     episode_seed=episode_idx[wid])
            except TrainingDiverged:
                self.save_checkpoint("diagnostic")
                raise
            episode_idx[wid] += 1
            self._ingest(result)
