"""Episode trace files: one compressed npz per episode.

A trace is the complete per-step record the analyses and the transport
verifier consume: observations, actions, environment and transported
rewards, value predictions, read strengths and full attention rows,
phase labels and agent positions, plus a small JSON header.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass
class EpisodeTrace:
    header: dict                 # task, agent, seed, T, k, gamma, tvt params, ...
    phase: np.ndarray            # (T,) 1-based phase labels
    action: np.ndarray           # (T,)
    reward_env: np.ndarray       # (T,)
    reward_tvt: np.ndarray       # (T,) equals reward_env when transport is off
    value: np.ndarray            # (T,)
    bootstrap_value: float       # value past the last step (0 at termination)
    logp_action: np.ndarray      # (T,)
    strengths: np.ndarray        # (T, k)
    weights: np.ndarray          # (T, k, N)
    obs: np.ndarray              # (T, C, H, W) uint8
    pos: np.ndarray              # (T, 2)
    direction: np.ndarray        # (T,)
    summary: dict

    @property
    def T(self) -> int:
        return len(self.reward_env)

    def argmax_weight_indices(self) -> np.ndarray:
        """(T, k) earliest-argmax slot per read head."""
        return np.argmax(self.weights, axis=2)

    def phase_steps(self, phase: int) -> np.ndarray:
        return np.flatnonzero(self.phase == phase)


def save_trace(path, trace: EpisodeTrace) -> None:
    np.savez_compressed(
        Path(path),
        header=json.dumps(trace.header, sort_keys=True),
        phase=trace.phase.astype(np.int16),
        action=trace.action.astype(np.int16),
        reward_env=trace.reward_env.astype(np.float64),
        reward_tvt=trace.reward_tvt.astype(np.float64),
        value=trace.value.astype(np.float64),
        bootstrap_value=np.float64(trace.bootstrap_value),
        logp_action=trace.logp_action.astype(np.float64),
        strengths=trace.strengths.astype(np.float64),
        weights=trace.weights.astype(np.float32),
        obs=trace.obs.astype(np.uint8),
        pos=trace.pos.astype(np.int16),
        direction=trace.direction.astype(np.int8),
        summary=json.dumps(trace.summary, sort_keys=True))


def load_trace(path) -> EpisodeTrace:
    with np.load(Path(path), allow_pickle=False) as z:
        return EpisodeTrace(
            header=json.loads(str(z["header"])),
            phase=z["phase"].astype(np.int64),
            action=z["action"].astype(np.int64),
            reward_env=z["reward_env"],
            reward_tvt=z["reward_tvt"],
            value=z["value"],
            bootstrap_value=float(z["bootstrap_value"]),
            logp_action=z["logp_action"],
            strengths=z["strengths"],
            weights=z["weights"],
            obs=z["obs"],
            pos=z["pos"].astype(np.int64),
            direction=z["direction"].astype(np.int64),
            summary=json.loads(str(z["summary"])))


def trace_table_csv(trace: EpisodeTrace) -> str:
    """Flat per-step table: the delimited view of a trace."""
    k = trace.strengths.shape[1] if trace.strengths.size else 0
    cols = ["t", "phase", "action", "reward_env", "reward_tvt", "value"]
    cols += [f"beta_{i}" for i in range(k)]
    cols += [f"argmax_w_{i}" for i in range(k)]
    lines = [",".join(cols)]
    argmax = trace.argmax_weight_indices() if k else None
    for t in range(trace.T):
        row = [str(t), str(int(trace.phase[t])), str(int(trace.action[t])),
               repr(float(trace.reward_env[t])), repr(float(trace.reward_tvt[t])),
               repr(float(trace.value[t]))]
        row += [repr(float(trace.strengths[t, i])) for i in range(k)]
        row += [str(int(argmax[t, i])) for i in range(k)]
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def list_traces(trace_dir) -> list[Path]:
    paths = sorted(Path(trace_dir).glob("*.npz"))
    if not paths:
        raise FileNotFoundError(f"no trace files in {trace_dir}")
    return paths
