import numpy as np
import pytest

from tvtlab.envs import default_task_config
from tvtlab.learning import HyperParams
from tvtlab.training import (Trainer, TrainingDiverged, make_agent_config,
                             run_episode)
from tvtlab.tvt import TvtConfig
from tvtlab.agents import Agent
from tvtlab.envs import GridTaskEnv


TINY_TASK = dict(p1_steps=4, p2_steps=8, p3_steps=4, distractor_size=4)
TINY_MODEL = dict(word_size=12, top_k=4, encoder_hidden=16, lstm_hidden=12,
                  policy_hidden=16, value_hidden=16)


def tiny_trainer(agent_name="rma", seed=0, out_dir=None, gamma=0.9, eta=1e-3,
                 beta_threshold=2.0, workers=1, **hp_kw):
    tc = default_task_config("key_to_door", **TINY_TASK)
    ac = make_agent_config(tc, agent_name, **TINY_MODEL)
    hp = HyperParams(eta=eta, gamma=gamma,
                     tvt=TvtConfig(gamma=gamma, beta_threshold=beta_threshold),
                     **hp_kw)
    from tvtlab.agents import arch_of
    _variant, tvt_enabled = arch_of(agent_name)
    return Trainer(tc, ac, hp, tvt_enabled=tvt_enabled, seed=seed,
                   out_dir=out_dir, num_workers=workers, trace_every=1)


def trace_arrays_equal(a, b):
    np.testing.assert_array_equal(a.action, b.action)
    np.testing.assert_array_equal(a.reward_env, b.reward_env)
    np.testing.assert_array_equal(a.reward_tvt, b.reward_tvt)
    np.testing.assert_array_equal(a.value, b.value)
    np.testing.assert_array_equal(a.strengths, b.strengths)
    np.testing.assert_array_equal(a.weights, b.weights)
    np.testing.assert_array_equal(a.obs, b.obs)
    assert a.bootstrap_value == b.bootstrap_value


class TestDeterminism:
    def test_same_seed_identical_runs(self, tmp_path):
        rows = []
        traces = []
        for run in range(2):
            out = tmp_path / f"run{run}"
            tr = tiny_trainer(seed=11, out_dir=out)
            tr.train(max_episodes=4)
            rows.append(tr.metrics_rows)
            from tvtlab.traces import load_trace
            traces.append([load_trace(p) for p in sorted((out / "traces").glob("*.npz"))])
        assert rows[0] == rows[1]
        for a, b in zip(traces[0], traces[1]):
            trace_arrays_equal(a, b)

    def test_different_seeds_differ(self):
        a = tiny_trainer(seed=1)
        a.train(max_episodes=2)
        b = tiny_trainer(seed=2)
        b.train(max_episodes=2)
        assert a.metrics_rows != b.metrics_rows


class TestRunEpisode:
    def _episode(self, agent_name="rma", tvt_enabled=None, tau=None, seed=5):
        tc = default_task_config("key_to_door", **TINY_TASK)
        ac = make_agent_config(tc, agent_name, **TINY_MODEL)
        hp = HyperParams(eta=1e-3, gamma=0.9, tau_window=tau,
                         tvt=TvtConfig(gamma=0.9))
        from tvtlab.agents import arch_of
        variant, default_tvt = arch_of(agent_name)
        env = GridTaskEnv(tc)
        agent = Agent(ac, np.random.default_rng(seed))
        use_tvt = default_tvt if tvt_enabled is None else tvt_enabled
        return run_episode(env, agent, hp, use_tvt,
                           np.random.default_rng(seed + 1),
                           np.random.default_rng(seed + 2))

    def test_tvt_disabled_rewards_unmodified(self):
        result = self._episode("rma")
        np.testing.assert_array_equal(result.trace.reward_env,
                                      result.trace.reward_tvt)

    def test_trace_covers_full_episode(self):
        result = self._episode("tvt")
        tc_len = 4 + 8 + 4
        assert result.trace.T == tc_len
        assert result.steps == tc_len
        assert result.trace.obs.shape[0] == tc_len
        assert result.trace.weights.shape == (tc_len, 3, tc_len)

    def test_truncation_windows_cover_episode(self):
        full = self._episode("rma", tau=None)
        windowed = self._episode("rma", tau=5)
        assert len(windowed.window_grads) == 4  # ceil(16 / 5)
        assert len(full.window_grads) == 1
        assert windowed.trace.T == full.trace.T

    def test_lstm_agent_episode_runs(self):
        result = self._episode("lstm")
        assert result.trace.strengths.shape[1] == 0
        assert result.max_read_strength == 0.0


class TestTvtNoopEquivalence:
    def test_infinite_threshold_matches_rma_exactly(self, tmp_path):
        out_a = tmp_path / "rma"
        out_b = tmp_path / "tvt_inf"
        a = tiny_trainer("rma", seed=21, out_dir=out_a)
        a.train(max_episodes=3)
        b = tiny_trainer("tvt", seed=21, out_dir=out_b,
                         beta_threshold=float("inf"))
        b.train(max_episodes=3)
        from tvtlab.traces import load_trace
        traces_a = [load_trace(p) for p in sorted((out_a / "traces").glob("*.npz"))]
        traces_b = [load_trace(p) for p in sorted((out_b / "traces").glob("*.npz"))]
        for ta, tb in zip(traces_a, traces_b):
            trace_arrays_equal(ta, tb)
        for ra, rb in zip(a.metrics_rows, b.metrics_rows):
            assert {k: v for k, v in ra.items()} == {k: v for k, v in rb.items()}


class TestMetrics:
    def test_phase_scores_partition_return(self, tmp_path):
        tr = tiny_trainer(seed=3, out_dir=tmp_path / "m")
        tr.train(max_episodes=5)
        for row in tr.metrics_rows:
            total = sum(row[f"p{i}_score"] for i in range(1, 6))
            assert total == row["episode_return"]

    def test_metrics_csv_written(self, tmp_path):
        out = tmp_path / "m"
        tr = tiny_trainer(seed=3, out_dir=out)
        tr.train(max_episodes=2)
        lines = (out / "metrics.csv").read_text().strip().splitlines()
        assert len(lines) == 3
        assert lines[0].startswith("episodes,env_steps,p1_score")


class TestDivergenceAbort:
    def test_nan_aborts_with_diagnostic_checkpoint(self, tmp_path):
        out = tmp_path / "diverge"
        tr = tiny_trainer(seed=3, out_dir=out)
        tr.master.params["encoder.w"].data[0, 0] = np.nan
        with pytest.raises(TrainingDiverged):
            tr.train(max_episodes=5)
        assert (out / "checkpoints" / "diagnostic.ckpt").exists()
