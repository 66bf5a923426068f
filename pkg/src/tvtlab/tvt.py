"""Temporal value transport over a completed episode trace.

Pure functions of recorded arrays: recency-filter the read strengths,
detect splice events as threshold crossings, and add discounted future
value predictions onto past rewards through the attention weights. A
deliberately naive double-loop reference of the whole pipeline is kept
alongside for oracle testing and trace verification.

Shapes: T steps, k read heads, N memory slots (N >= T; weights beyond
the written prefix are structurally zero).
    rewards    (T,)
    values     (T+1,)  the extra slot is the post-episode bootstrap
    strengths  (T, k)
    weights    (T, k, N)
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def half_life(gamma: float) -> float:
    """1/(1-gamma) as a step-count threshold.

    Snapped to the nearest integer when within rounding fuzz so that
    boundary comparisons (strict inequalities against step indices)
    behave as in exact arithmetic, e.g. gamma=0.96 gives exactly 25.
    """
    tau = 1.0 / (1.0 - gamma)
    return round(tau) if abs(tau - round(tau)) < 1e-6 else tau


@dataclass(frozen=True)
class TvtConfig:
    alpha: float = 0.9          # transport discount
    beta_threshold: float = 2.0
    gamma: float = 0.96

    @property
    def half_life(self) -> float:
        return half_life(self.gamma)


@dataclass(frozen=True)
class SpliceEvent:
    head: int
    t_max: int
    transported_value: float   # value prediction at t_max + 1
    weights: np.ndarray        # the attention row w_{t_max} for this head


def recency_filter(weights: np.ndarray, strengths: np.ndarray, gamma: float) -> np.ndarray:
    """Zero the strength of reads that attend to the recent past.

    A read at t' is dropped when t' - argmax_t w_t'[t] < 1/(1-gamma).
    The argmax considers slots < t' (later slots are structurally zero);
    an all-zero row resolves to slot 0, numpy's earliest-index rule.
    """
    T, k = strengths.shape
    out = strengths.astype(np.float64).copy()
    tau = half_life(gamma)
    for t in range(T):
        for i in range(k):
            row = weights[t, i, :t] if t > 0 else weights[t, i, :1]
            peak = int(np.argmax(row)) if row.size else 0
            if t - peak < tau:
                out[t, i] = 0.0
    return out


def detect_splices(filtered_strengths: np.ndarray, beta_threshold: float,
                   values: np.ndarray, weights: np.ndarray) -> list[SpliceEvent]:
    """One event per maximal contiguous above-threshold window per head.

    Window membership uses beta >= threshold; both flanks are strictly
    below (episode edges count as below). The trigger step is the
    earliest argmax of beta inside the window.
    """
    T, k = filtered_strengths.shape
    events = []
    for i in range(k):
        beta = filtered_strengths[:, i]
        t = 0
        while t < T:
            if beta[t] >= beta_threshold:
                start = t
                while t + 1 < T and beta[t + 1] >= beta_threshold:
                    t += 1
                window = beta[start:t + 1]
                t_max = start + int(np.argmax(window))
                events.append(SpliceEvent(
                    head=i, t_max=t_max,
                    transported_value=float(values[t_max + 1]),
                    weights=weights[t_max, i].astype(np.float64).copy()))
            t += 1
    return events


def transport(rewards: np.ndarray, events: list[SpliceEvent],
              alpha: float, gamma: float) -> np.ndarray:
    """Additively credit past steps with discounted transported value.

    Each event adds alpha * w[t] * V(t_max+1) to every reward at
    t < t_max - 1/(1-gamma); steps within one half-life of the trigger
    are left untouched. Events are independent and additive.
    """
    out = rewards.astype(np.float64).copy()
    tau = half_life(gamma)
    for ev in events:
        cutoff = ev.t_max - tau
        for t in range(len(out)):
            if t < cutoff:
                out[t] += alpha * ev.weights[t] * ev.transported_value
    return out


def read_regularization(strengths: np.ndarray, beta_threshold: float,
                        coeff: float = 5e-6) -> float:
    """coeff * sum over heads and steps of max(beta - threshold, 0)."""
    over = np.maximum(strengths.astype(np.float64) - beta_threshold, 0.0)
    return float(coeff * np.sum(over))


def apply(rewards: np.ndarray, values: np.ndarray, strengths: np.ndarray,
          weights: np.ndarray, config: TvtConfig) -> tuple[np.ndarray, list[SpliceEvent]]:
    """Full pipeline: recency filter -> splice detection -> transport."""
    if np.isinf(config.beta_threshold):
        return rewards.astype(np.float64).copy(), []
    filtered = recency_filter(weights, strengths, config.gamma)
    events = detect_splices(filtered, config.beta_threshold, values, weights)
    return transport(rewards, events, config.alpha, config.gamma), events


def apply_reference(rewards: np.ndarray, values: np.ndarray, strengths: np.ndarray,
                    weights: np.ndarray, config: TvtConfig) -> np.ndarray:
    """Naive O(T^2 k) re-statement of the pipeline, kept independent.

    Written directly from the definition, with no shared code: per head,
    reset recent-past strengths, scan for threshold windows, then a
    double loop adds the transported value to eligible steps.
    """
    T, k = strengths.shape
    r = rewards.astype(np.float64).copy()
    if np.isinf(config.beta_threshold):
        return r
    tau = half_life(config.gamma)
    for i in range(k):
        beta = strengths[:, i].astype(np.float64).copy()
        for tp in range(T):
            best, best_w = 0, -np.inf
            for t in range(max(tp, 1)):
                if weights[tp, i, t] > best_w:
                    best, best_w = t, weights[tp, i, t]
            if tp - best < tau:
                beta[tp] = 0.0
        splices = []
        for tp in range(T):
            above = beta[tp] >= config.beta_threshold
            prev_above = tp > 0 and beta[tp - 1] >= config.beta_threshold
            if above and not prev_above:
                end = tp
                while end + 1 < T and beta[end + 1] >= config.beta_threshold:
                    end += 1
                t_max, best = tp, -np.inf
                for t in range(tp, end + 1):
                    if beta[t] > best:
                        t_max, best = t, beta[t]
                splices.append(t_max)
        for t in range(T):
            for t_max in splices:
                if t < t_max - tau:
                    r[t] += config.alpha * weights[t_max, i, t] * values[t_max + 1]
    return r
