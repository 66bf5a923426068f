"""Command-line entry points.

Subcommands: train, eval, verify-tvt, analyze (snr, fig3c, fig4d,
fig6d, saliency, occupancy), sweep, trace-dump. Every analyze
subcommand writes a delimited report and a rendered figure side by
side in the output directory. Exit codes: 0 success, 2 validation
failure, 3 training divergence.

The run-directory root defaults to ``./runs`` and can be moved with
the TVTLAB_RUNS environment variable.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import analysis, figures
from .agents import Agent, arch_of, config_from_meta
from .checkpoint import load as load_checkpoint
from .config import ConfigError, RunConfig, parse_overrides
from .envs import GridTaskEnv, TaskConfig
from .learning import HyperParams
from .traces import list_traces, load_trace, save_trace, trace_table_csv
from .training import Trainer, TrainingDiverged, run_episode
from .tvt import TvtConfig, apply as tvt_apply


class CliError(ValueError):
    pass


def _runs_root() -> Path:
    return Path(os.environ.get("TVTLAB_RUNS", "runs"))


def _resolve_out(arg: str | None, default_name: str) -> Path:
    return Path(arg) if arg is not None else _runs_root() / default_name


def _add_common_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--task", help="task id")
    p.add_argument("--agent", choices=("tvt", "rma", "lstm_mem", "lstm"))
    p.add_argument("--gamma", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--override", action="append", default=[],
                   metavar="KEY=VALUE", help="repeatable config override")


def _build_run_config(args) -> RunConfig:
    overrides = parse_overrides(args.override)
    for flag in ("task", "agent", "gamma", "seed", "workers"):
        val = getattr(args, flag, None)
        if val is not None:
            overrides[flag] = str(val)
    if getattr(args, "deterministic", False):
        overrides["workers"] = "1"
        overrides["async_mode"] = "false"
    return RunConfig.resolve(args.config, overrides)


def cmd_train(args) -> int:
    cfg = _build_run_config(args)
    max_episodes = args.episodes or cfg["max_episodes"] or None
    max_env_steps = args.max_steps or cfg["max_env_steps"] or None
    if max_episodes is None and max_env_steps is None:
        raise CliError("set --episodes, --max-steps, max_episodes or max_env_steps")
    out = _resolve_out(args.out, f"{cfg['task']}-{cfg['agent']}-s{cfg['seed']}")
    out.mkdir(parents=True, exist_ok=True)
    cfg.write(out / "config.txt")
    trainer = Trainer(
        cfg.task_config(), cfg.agent_config(), cfg.hyperparams(),
        tvt_enabled=cfg.tvt_enabled, seed=cfg["seed"], out_dir=out,
        num_workers=cfg["workers"], async_mode=cfg["async_mode"],
        trace_every=cfg["trace_every"], checkpoint_every=cfg["checkpoint_every"],
        log_fn=(_progress_logger(args.log_every) if args.log_every else None))
    trainer.train(max_episodes=max_episodes, max_env_steps=max_env_steps)
    figures.learning_curve_figure(trainer.metrics_rows, "episode_return",
                                  out / "learning_curve.png")
    last = trainer.metrics_rows[-1] if trainer.metrics_rows else {}
    print(f"trained {trainer.episodes} episodes / {trainer.env_steps} env steps "
          f"-> {out}")
    if last:
        print(f"final episode return {last['episode_return']:.2f}, "
              f"loss {last['loss_total']:.3f}")
    return 0


def _progress_logger(every: int):
    def log(row: dict) -> None:
        if row["episodes"] % every == 0:
            print(f"ep {row['episodes']:>7} steps {row['env_steps']:>9} "
                  f"return {row['episode_return']:>8.2f} "
                  f"loss {row['loss_total']:>10.3f} "
                  f"max_beta {row['max_read_strength']:>6.2f}", flush=True)
    return log


def _load_agent(checkpoint_path) -> tuple[Agent, dict]:
    arrays, meta = load_checkpoint(checkpoint_path)
    agent = Agent(config_from_meta(meta), np.random.default_rng(0))
    for name, p in agent.params:
        if name not in arrays:
            raise CliError(f"checkpoint missing tensor {name}")
        np.copyto(p.data, arrays[name].astype(p.data.dtype))
    return agent, meta


def cmd_eval(args) -> int:
    if args.episodes <= 0:
        raise CliError("eval needs a positive --episodes count")
    agent, meta = _load_agent(args.checkpoint)
    overrides = parse_overrides(args.override)
    overrides["task"] = args.task or meta["task"]
    overrides["agent"] = "tvt" if meta.get("tvt_enabled") else meta["variant"]
    if args.gamma is not None:
        overrides["gamma"] = str(args.gamma)
    if "gamma" not in overrides and "gamma" in meta:
        overrides["gamma"] = str(meta["gamma"])
    if "beta_threshold" not in overrides and "beta_threshold" in meta:
        overrides["beta_threshold"] = str(meta["beta_threshold"])
    cfg = RunConfig.resolve(args.config, overrides)
    task_config = cfg.task_config()
    if overrides["task"] != meta["task"]:
        raise CliError(f"checkpoint was trained on {meta['task']!r}, "
                       f"not {overrides['task']!r}")
    if tuple(task_config.obs_shape()) != tuple(meta["obs_shape"]):
        raise CliError("task geometry does not match the checkpoint observation shape")
    out = _resolve_out(args.out, f"eval-{meta['task']}")
    (out / "traces").mkdir(parents=True, exist_ok=True)
    env = GridTaskEnv(task_config)
    hp = cfg.hyperparams()
    tvt_enabled = cfg.tvt_enabled
    seed = args.seed if args.seed is not None else 0
    summaries = []
    for ep in range(args.episodes):
        env_rng = np.random.default_rng(np.random.SeedSequence([seed, ep, 0])
                                        )
        act_rng = np.random.default_rng(np.random.SeedSequence([seed, ep, 1]))
        result = run_episode(env, agent, hp, tvt_enabled, env_rng, act_rng,
                             compute_grads=False, greedy=args.greedy,
                             episode_seed=ep)
        save_trace(out / "traces" / f"ep_{ep:05d}.npz", result.trace)
        summaries.append(result.summary)
    rows = []
    keys = ["p1_score", "p2_score", "p3_score", "p4_score", "p5_score",
            "episode_return"]
    stats_row = {}
    for key in keys:
        vals = np.asarray([s[key] for s in summaries], dtype=np.float64)
        se = vals.std(ddof=1) / np.sqrt(len(vals)) if len(vals) > 1 else 0.0
        stats_row[key] = (vals.mean(), se)
    key_rate = float(np.mean([s["key_p1"] for s in summaries]))
    pad_rate = float(np.mean([s["pad_outcome"] == "correct" for s in summaries]))
    touches = float(np.mean([s["p1_object_touches"] for s in summaries]))
    analysis.write_csv(
        out / "eval_summary.csv",
        ["metric", "mean", "se"],
        [[k, repr(v[0]), repr(v[1])] for k, v in stats_row.items()] +
        [["key_p1_rate", repr(key_rate), ""],
         ["pad_correct_rate", repr(pad_rate), ""],
         ["p1_object_touches", repr(touches), ""]])
    print(f"evaluated {args.episodes} episodes -> {out}")
    for k, (m, se) in stats_row.items():
        print(f"  {k:>15}: {m:8.3f} ± {se:.3f}")
    print(f"  key_p1_rate {key_rate:.3f}  pad_correct_rate {pad_rate:.3f}  "
          f"p1_object_touches {touches:.2f}")
    return 0


def cmd_verify_tvt(args) -> int:
    paths = [Path(args.trace)] if args.trace else list_traces(args.traces)
    worst = 0.0
    total_events = 0
    for path in paths:
        tr = load_trace(path)
        cfg = TvtConfig(alpha=tr.header["tvt_alpha"],
                        beta_threshold=tr.header["beta_threshold"],
                        gamma=tr.header["gamma"])
        values = np.append(tr.value, tr.bootstrap_value)
        if tr.header.get("tvt_enabled"):
            expected, events = tvt_apply(tr.reward_env, values, tr.strengths,
                                         tr.weights, cfg)
        else:
            expected, events = tr.reward_env.astype(np.float64), []
        diff = float(np.max(np.abs(expected - tr.reward_tvt))) if tr.T else 0.0
        worst = max(worst, diff)
        total_events += len(events)
        print(f"{path.name}: T={tr.T} events={len(events)} "
              f"max|replay - stored|={diff:.3g}")
        for ev in events:
            delta = expected - tr.reward_env
            print(f"  head {ev.head} t_max {ev.t_max} "
                  f"value {ev.transported_value:.3f} "
                  f"total transported {np.sum(np.abs(delta)):.3f}")
    if worst > 0.0:
        print(f"verification FAILED: max deviation {worst:.3g}")
        return 2
    print(f"verified {len(paths)} trace(s), {total_events} splice event(s), zero diff")
    return 0


def cmd_analyze(args) -> int:
    out = Path(args.out) if args.out else Path("analysis_out")
    out.mkdir(parents=True, exist_ok=True)
    sub = args.analysis
    if sub == "snr":
        g, r1, r2, r3 = analysis.load_snr_rows(args.rows)
        report = analysis.snr_estimate(g, r2, r3)
        analysis.snr_csv(out / "snr.csv", [report])
        figures.snr_figure([report], [report.p2_reward_variance], out / "snr.png")
        print(f"snr={report.snr:.4g} signal={report.signal:.4g} "
              f"noise={report.noise:.4g} -> {out}")
        return 0
    traces = [load_trace(p) for p in list_traces(args.traces)]
    first = traces[0]
    gamma = args.gamma if args.gamma is not None else first.header["gamma"]
    if sub == "fig4d":
        vt = analysis.return_variance_compare(
            traces, gamma, gamma, tvt_enabled=first.header.get("tvt_enabled", False))
        analysis.variance_trace_csv(out / "fig4d.csv", vt)
        figures.variance_figure(vt, out / "fig4d.png")
        print(f"P1 variance bootstrapped {vt.phase_mean(1):.4g} vs "
              f"undiscounted {vt.phase_mean(1, 'undiscounted'):.4g} -> {out}")
    elif sub == "fig3c":
        vr = analysis.value_vs_return_trace(traces, gamma)
        analysis.value_return_csv(out / "fig3c.csv", vr)
        figures.value_return_figure(vr, out / "fig3c.png")
        gap, se = vr.phase_gap(1)
        print(f"P1 value-return gap {gap:.4g} ± {se:.4g} -> {out}")
    elif sub == "fig6d":
        rep = analysis.occupancy_histogram(traces, phase=args.phase)
        analysis.occupancy_csv(out / "fig6d.csv", rep)
        figures.occupancy_figure(rep, out / "fig6d.png")
        print(f"P{args.phase} object touches {rep.touches_mean:.2f} ± "
              f"{rep.touches_std:.2f} -> {out}")
    elif sub == "occupancy":
        rep = analysis.occupancy_histogram(traces, phase=args.phase)
        analysis.occupancy_csv(out / "occupancy.csv", rep)
        figures.occupancy_figure(rep, out / "occupancy.png")
        print(f"occupancy over {rep.n_traces} traces -> {out}")
    elif sub == "saliency":
        if not args.checkpoint:
            raise CliError("saliency needs --checkpoint")
        agent, _meta = _load_agent(args.checkpoint)
        steps = [int(s) for s in args.step] if args.step else None
        grads, alphas, g_ref = analysis.value_saliency(agent, first, steps)
        analysis.saliency_csv(out / "saliency.csv", grads, alphas)
        figures.saliency_figure(grads, alphas, out / "saliency.png")
        print(f"saliency over {len(grads)} step(s), reference {g_ref:.4g} -> {out}")
    else:
        raise CliError(f"unknown analysis {sub!r}")
    return 0


def cmd_sweep(args) -> int:
    grid = [float(x) for x in args.grid.split(",")]
    rows = []
    for eta in grid:
        sweep_args = argparse.Namespace(**vars(args))
        sweep_args.override = list(args.override) + [f"eta={eta}"]
        cfg = _build_run_config(sweep_args)
        out = _resolve_out(args.out, "sweep") / f"eta_{eta:g}"
        out.mkdir(parents=True, exist_ok=True)
        cfg.write(out / "config.txt")
        trainer = Trainer(cfg.task_config(), cfg.agent_config(), cfg.hyperparams(),
                          tvt_enabled=cfg.tvt_enabled, seed=cfg["seed"],
                          out_dir=out, num_workers=cfg["workers"])
        trainer.train(max_episodes=args.episodes)
        tail = trainer.metrics_rows[-max(1, len(trainer.metrics_rows) // 5):]
        mean_return = float(np.mean([r["episode_return"] for r in tail]))
        rows.append([eta, trainer.episodes, repr(mean_return)])
        print(f"eta={eta:g}: mean tail return {mean_return:.3f}")
    out_root = _resolve_out(args.out, "sweep")
    analysis.write_csv(out_root / "sweep.csv",
                       ["eta", "episodes", "mean_tail_return"], rows)
    print(f"sweep -> {out_root / 'sweep.csv'}")
    return 0


def cmd_trace_dump(args) -> int:
    tr = load_trace(args.trace)
    text = trace_table_csv(tr)
    if args.out:
        Path(args.out).write_text(text)
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tvtlab", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train an agent on a task")
    _add_common_config_args(t)
    t.add_argument("--out", help="run directory (under TVTLAB_RUNS unless absolute)")
    t.add_argument("--episodes", type=int, default=0)
    t.add_argument("--max-steps", type=int, default=0)
    t.add_argument("--deterministic", action="store_true",
                   help="single synchronous worker")
    t.add_argument("--log-every", type=int, default=0)
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--episodes", type=int, default=20)
    e.add_argument("--task")
    e.add_argument("--gamma", type=float)
    e.add_argument("--seed", type=int)
    e.add_argument("--config")
    e.add_argument("--out")
    e.add_argument("--greedy", action="store_true")
    e.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
    e.set_defaults(fn=cmd_eval)

    v = sub.add_parser("verify-tvt", help="replay transport over stored traces")
    v.add_argument("--trace")
    v.add_argument("--traces")
    v.set_defaults(fn=cmd_verify_tvt)

    a = sub.add_parser("analyze", help="run an analysis over traces")
    a.add_argument("analysis", choices=("snr", "fig3c", "fig4d", "fig6d",
                                        "saliency", "occupancy"))
    a.add_argument("--traces")
    a.add_argument("--rows", help="snr: CSV of per-episode gradients and rewards")
    a.add_argument("--out")
    a.add_argument("--gamma", type=float)
    a.add_argument("--phase", type=int, default=1)
    a.add_argument("--checkpoint")
    a.add_argument("--step", action="append", help="saliency step (repeatable)")
    a.set_defaults(fn=cmd_analyze)

    s = sub.add_parser("sweep", help="learning-rate sweep")
    _add_common_config_args(s)
    s.add_argument("--grid", default="3.2e-7,8e-7,2e-6,5e-6,1.25e-5")
    s.add_argument("--episodes", type=int, required=True)
    s.add_argument("--out")
    s.set_defaults(fn=cmd_sweep)

    d = sub.add_parser("trace-dump", help="print the flat per-step table of a trace")
    d.add_argument("--trace", required=True)
    d.add_argument("--out")
    d.set_defaults(fn=cmd_trace_dump)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return 3
    except (CliError, ConfigError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
