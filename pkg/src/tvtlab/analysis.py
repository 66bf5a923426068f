"""Estimators over trace files: gradient signal-to-noise, return-variance
comparison, value-vs-return curves, value saliency maps and behavioral
occupancy. All are pure functions of their inputs: the same files give
identical reports.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .agents import Agent, Observation
from .autodiff import Tensor
from .traces import EpisodeTrace

# ---------------------------------------------------------------------------
# signal-to-noise of the first-phase policy gradient


@dataclass
class SnrReport:
    """Monte-Carlo decomposition of the P1 policy-gradient estimate.

    signal: squared norm of the mean gradient estimate.
    noise: trace of its covariance.
    The decomposition terms expose the product structure of the noise:
    distractor reward variance times the raw-gradient covariance trace,
    plus the no-distractor term.
    """
    episodes: int
    signal: float
    noise: float
    snr: float
    p2_reward_variance: float
    tr_var_g: float
    noise_no_p2: float
    predicted_noise: float

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in
                ("episodes", "signal", "noise", "snr", "p2_reward_variance",
                 "tr_var_g", "noise_no_p2", "predicted_noise")}


def snr_estimate(g: np.ndarray, r_p2: np.ndarray, r_p3: np.ndarray) -> SnrReport:
    """SNR of the undiscounted, baseline-subtracted P1 gradient estimate.

    ``g`` holds one summed P1 log-probability gradient per episode
    (E, D); first-phase rewards are zero, so each episode's estimate is
    g_e times its baseline-subtracted downstream return.
    """
    g = np.asarray(g, dtype=np.float64)
    r_p2 = np.asarray(r_p2, dtype=np.float64)
    r_p3 = np.asarray(r_p3, dtype=np.float64)
    E = len(g)
    if E < 2:
        raise ValueError("need at least 2 episodes to estimate variances")
    returns = r_p2 + r_p3
    centered = returns - returns.mean()
    delta = g * centered[:, None]
    mean_delta = delta.mean(axis=0)
    signal = float(np.dot(mean_delta, mean_delta))
    noise = float(np.sum((delta - mean_delta) ** 2) / (E - 1))
    g_mean = g.mean(axis=0)
    tr_var_g = float(np.sum((g - g_mean) ** 2) / (E - 1))
    delta_no_p2 = g * (r_p3 - r_p3.mean())[:, None]
    mean_no_p2 = delta_no_p2.mean(axis=0)
    noise_no_p2 = float(np.sum((delta_no_p2 - mean_no_p2) ** 2) / (E - 1))
    p2_var = float(np.var(r_p2, ddof=1))
    return SnrReport(
        episodes=E, signal=signal, noise=noise,
        snr=signal / noise if noise > 0 else np.inf,
        p2_reward_variance=p2_var, tr_var_g=tr_var_g, noise_no_p2=noise_no_p2,
        predicted_noise=p2_var * tr_var_g + noise_no_p2)


def snr_with_se(g: np.ndarray, r_p2: np.ndarray, r_p3: np.ndarray,
                batches: int = 20) -> tuple[float, float]:
    """Point estimate plus a batch-means standard error of the SNR."""
    E = len(g)
    if E < 2 * batches:
        raise ValueError(f"need at least {2 * batches} episodes for {batches} batches")
    per_batch = []
    size = E // batches
    for b in range(batches):
        sl = slice(b * size, (b + 1) * size)
        per_batch.append(snr_estimate(g[sl], r_p2[sl], r_p3[sl]).snr)
    per_batch = np.asarray(per_batch)
    point = snr_estimate(g, r_p2, r_p3).snr
    return point, float(per_batch.std(ddof=1) / np.sqrt(batches))


def synthetic_three_phase(episodes: int, p2_std: float, rng: np.random.Generator,
                          theta=(0.4, -0.4), r_p3=(1.0, 0.0),
                          p2_mean: float = 3.0):
    """Two-armed synthetic generator with enumerable gradient statistics.

    One P1 step samples an arm from softmax(theta); the distractor pays
    p2_mean +/- p2_std with equal probability; the final phase pays
    r_p3[arm]. Returns per-episode (gradients, r_p1, r_p2, r_p3).
    """
    theta = np.asarray(theta, dtype=np.float64)
    probs = np.exp(theta - theta.max())
    probs /= probs.sum()
    arms = rng.choice(len(theta), size=episodes, p=probs)
    g = -np.tile(probs, (episodes, 1))
    g[np.arange(episodes), arms] += 1.0
    signs = rng.integers(0, 2, size=episodes) * 2 - 1
    r2 = p2_mean + signs * p2_std
    r3 = np.asarray(r_p3)[arms]
    return g, np.zeros(episodes), r2, r3


def synthetic_closed_form(p2_std: float, theta=(0.4, -0.4), r_p3=(1.0, 0.0)):
    """Exact SNR of the synthetic process by joint enumeration."""
    theta = np.asarray(theta, dtype=np.float64)
    probs = np.exp(theta - theta.max())
    probs /= probs.sum()
    r3 = np.asarray(r_p3, dtype=np.float64)
    mean_return = float(probs @ r3)  # p2 mean cancels under baseline subtraction
    states = []
    for arm in range(len(theta)):
        g = -probs.copy()
        g[arm] += 1.0
        for sign in (-1.0, 1.0):
            weight = probs[arm] * 0.5
            centered = (r3[arm] + sign * p2_std) - mean_return
            states.append((weight, g * centered))
    mean_delta = sum(w * d for w, d in states)
    signal = float(mean_delta @ mean_delta)
    second = sum(w * float(d @ d) for w, d in states)
    noise = second - signal
    return signal, noise, (signal / noise if noise > 0 else np.inf)


def write_snr_rows(path, g, r_p1, r_p2, r_p3) -> None:
    g = np.asarray(g)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"g_{i}" for i in range(g.shape[1])] + ["r_p1", "r_p2", "r_p3"])
        for e in range(len(g)):
            w.writerow([repr(float(x)) for x in g[e]] +
                       [repr(float(r_p1[e])), repr(float(r_p2[e])), repr(float(r_p3[e]))])


def load_snr_rows(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    dims = sum(1 for h in header if h.startswith("g_"))
    data = np.asarray([[float(x) for x in row] for row in rows[1:]])
    return data[:, :dims], data[:, dims], data[:, dims + 1], data[:, dims + 2]


# ---------------------------------------------------------------------------
# return-variance comparison


@dataclass
class VarianceTrace:
    var_bootstrapped: np.ndarray   # per-step variance of the recursive return
    var_undiscounted: np.ndarray   # per-step variance of sum of future rewards
    phase: np.ndarray              # phase labels (from the first trace)
    n_traces: int

    def phase_mean(self, phase: int, which: str = "bootstrapped") -> float:
        arr = self.var_bootstrapped if which == "bootstrapped" else self.var_undiscounted
        mask = self.phase == phase
        return float(arr[mask].mean())


def bootstrapped_return(rewards: np.ndarray, values: np.ndarray, bootstrap: float,
                        gamma: float, lam: float) -> np.ndarray:
    """R_t = r_t + gamma * (lam * R_{t+1} + (1-lam) * V_{t+1}), seeded with
    the post-episode bootstrap value."""
    T = len(rewards)
    out = np.empty(T)
    nxt = bootstrap
    v_next = np.append(values[1:], bootstrap)
    for t in range(T - 1, -1, -1):
        out[t] = rewards[t] + gamma * (lam * nxt + (1.0 - lam) * v_next[t])
        nxt = out[t]
    return out


def return_variance_compare(traces: list[EpisodeTrace], gamma: float, lam: float,
                            tvt_enabled: bool) -> VarianceTrace:
    """Per-timestep variance of the bootstrapped return (with transported
    rewards when enabled) against the undiscounted raw return."""
    if len(traces) < 2:
        raise ValueError("need at least 2 traces")
    T = min(tr.T for tr in traces)
    boot = np.empty((len(traces), T))
    undisc = np.empty((len(traces), T))
    for i, tr in enumerate(traces):
        rewards = tr.reward_tvt if tvt_enabled else tr.reward_env
        rb = bootstrapped_return(rewards[:tr.T], tr.value, tr.bootstrap_value,
                                 gamma, lam)
        ru = np.cumsum(tr.reward_env[::-1])[::-1]
        boot[i] = rb[:T]
        undisc[i] = ru[:T]
    return VarianceTrace(
        var_bootstrapped=boot.var(axis=0, ddof=1),
        var_undiscounted=undisc.var(axis=0, ddof=1),
        phase=traces[0].phase[:T], n_traces=len(traces))


# ---------------------------------------------------------------------------
# value prediction vs realized discounted return


@dataclass
class ValueReturnCurves:
    mean_value: np.ndarray
    mean_return: np.ndarray
    diff: np.ndarray
    diff_se: np.ndarray
    phase: np.ndarray
    n_traces: int

    def phase_gap(self, phase: int) -> tuple[float, float]:
        """Mean and standard error of (value - return) within a phase."""
        mask = self.phase == phase
        per_step_gap = self.diff[mask]
        # SE of the phase mean: average the per-step SEs conservatively
        return float(per_step_gap.mean()), float(np.mean(self.diff_se[mask]))


def value_vs_return_trace(traces: list[EpisodeTrace], gamma: float) -> ValueReturnCurves:
    if len(traces) < 2:
        raise ValueError("need at least 2 traces")
    T = min(tr.T for tr in traces)
    values = np.empty((len(traces), T))
    rets = np.empty((len(traces), T))
    for i, tr in enumerate(traces):
        disc = np.empty(tr.T)
        acc = 0.0
        for t in range(tr.T - 1, -1, -1):
            acc = tr.reward_env[t] + gamma * acc
            disc[t] = acc
        values[i] = tr.value[:T]
        rets[i] = disc[:T]
    diff = values - rets
    return ValueReturnCurves(
        mean_value=values.mean(axis=0), mean_return=rets.mean(axis=0),
        diff=diff.mean(axis=0),
        diff_se=diff.std(axis=0, ddof=1) / np.sqrt(len(traces)),
        phase=traces[0].phase[:T], n_traces=len(traces))


# ---------------------------------------------------------------------------
# value saliency


def value_saliency(agent: Agent, trace: EpisodeTrace,
                   steps: list[int] | None = None,
                   floor: float = 0.3, percentile: float = 97.0):
    """Sensitivity of the value prediction to each observation cell.

    Replays the trace (recorded actions and rewards), differentiates
    each requested step's value against that step's observation, and
    reports the per-cell gradient magnitude g = sqrt(sum over channels
    of squared sensitivities) plus the alpha map
    min(floor + (1-floor) * g / g_p, 1) normalized at the given
    percentile over all computed steps and cells.
    """
    cfg = agent.config
    T = trace.T
    wanted = sorted(set(range(T) if steps is None else steps))
    if any(t < 0 or t >= T for t in wanted):
        raise ValueError("saliency step outside trace")
    agent.reset()
    grads = {}
    for t in range(T):
        prev_action = int(trace.action[t - 1]) if t > 0 else None
        prev_reward = float(trace.reward_env[t - 1]) if t > 0 else 0.0
        grid = trace.obs[t].astype(cfg.np_dtype)
        obs = Observation(grid, prev_action, prev_reward)
        if t in wanted:
            grid_tensor = Tensor(grid.reshape(-1), requires_grad=True)
            out = agent.step(obs, sample=False, grid_tensor=grid_tensor)
            ad.backward(out.value, seed=np.array([1.0], dtype=cfg.np_dtype))
            gflat = grid_tensor.grad if grid_tensor.grad is not None \
                else np.zeros(grid.size, dtype=cfg.np_dtype)
            gmap = gflat.reshape(cfg.obs_shape)
            grads[t] = np.sqrt(np.sum(gmap.astype(np.float64) ** 2, axis=0))
        else:
            with ad.no_grad():
                agent.step(obs, sample=False)
        # cut the graph so each step's backward stays per-step
        from .training import _detach_agent_state
        _detach_agent_state(agent)
    all_g = np.stack([grads[t] for t in wanted])
    g_ref = float(np.percentile(all_g, percentile))
    alphas = {t: np.minimum(floor + (1.0 - floor) * grads[t] / g_ref, 1.0)
              if g_ref > 0 else np.full_like(grads[t], 1.0)
              for t in wanted}
    return grads, alphas, g_ref


# ---------------------------------------------------------------------------
# occupancy


@dataclass
class OccupancyReport:
    frequencies: np.ndarray       # (H, W), sums to 1 over visited cells
    counts: np.ndarray
    touches_mean: float           # first-phase object touches
    touches_std: float
    n_traces: int


def occupancy_histogram(traces: list[EpisodeTrace], phase: int) -> OccupancyReport:
    if not traces:
        raise ValueError("no traces")
    shape = tuple(traces[0].header["obs_shape"][1:])
    task = traces[0].header["task"]
    for tr in traces:
        if tuple(tr.header["obs_shape"][1:]) != shape or tr.header["task"] != task:
            raise ValueError("traces mix tasks or grids")
    counts = np.zeros(shape)
    touches = []
    for tr in traces:
        for t in tr.phase_steps(phase):
            counts[tr.pos[t, 0], tr.pos[t, 1]] += 1
        touches.append(tr.summary.get("p1_object_touches", 0))
    total = counts.sum()
    freq = counts / total if total > 0 else counts
    touches = np.asarray(touches, dtype=np.float64)
    return OccupancyReport(
        frequencies=freq, counts=counts,
        touches_mean=float(touches.mean()),
        touches_std=float(touches.std(ddof=1)) if len(touches) > 1 else 0.0,
        n_traces=len(traces))


# ---------------------------------------------------------------------------
# delimited report writers


def write_csv(path, header: list[str], rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow(row)


def variance_trace_csv(path, vt: VarianceTrace) -> None:
    write_csv(path, ["t", "phase", "var_bootstrapped", "var_undiscounted"],
              ([t, int(vt.phase[t]), repr(float(vt.var_bootstrapped[t])),
                repr(float(vt.var_undiscounted[t]))]
               for t in range(len(vt.phase))))


def value_return_csv(path, vr: ValueReturnCurves) -> None:
    write_csv(path, ["t", "phase", "mean_value", "mean_return", "diff", "diff_se"],
              ([t, int(vr.phase[t]), repr(float(vr.mean_value[t])),
                repr(float(vr.mean_return[t])), repr(float(vr.diff[t])),
                repr(float(vr.diff_se[t]))]
               for t in range(len(vr.phase))))


def snr_csv(path, reports: list[SnrReport]) -> None:
    keys = ["episodes", "signal", "noise", "snr", "p2_reward_variance",
            "tr_var_g", "noise_no_p2", "predicted_noise"]
    write_csv(path, keys, ([repr(float(r.as_dict()[k])) if k != "episodes"
                            else r.episodes for k in keys] for r in reports))


def occupancy_csv(path, rep: OccupancyReport) -> None:
    h, w = rep.frequencies.shape
    rows = ([r, c, repr(float(rep.frequencies[r, c])), int(rep.counts[r, c])]
            for r in range(h) for c in range(w))
    write_csv(path, ["row", "col", "frequency", "count"], rows)


def saliency_csv(path, grads: dict, alphas: dict) -> None:
    rows = []
    for t in sorted(grads):
        h, w = grads[t].shape
        for r in range(h):
            for c in range(w):
                rows.append([t, r, c, repr(float(grads[t][r, c])),
                             repr(float(alphas[t][r, c]))])
    write_csv(path, ["t", "row", "col", "sensitivity", "alpha"], rows)
