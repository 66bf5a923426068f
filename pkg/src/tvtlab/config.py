"""Run configuration: flat key=value files, overrides, round-tripping.

Configuration keys use the canonical hyperparameter names (gamma,
lambda, alpha_image, beta_threshold, top_k, w, k, tau_window, eta, ...)
plus task-geometry and run-control keys. A resolved configuration is
written into every run directory and can be fed back in to reproduce
the run exactly.
"""

from __future__ import annotations

from dataclasses import replace
from pathlib import Path

from .agents import AgentConfig, arch_of
from .envs import TaskConfig, default_task_config
from .learning import HyperParams
from .tvt import TvtConfig


class ConfigError(ValueError):
    pass


def _parse_bool(s: str) -> bool:
    low = str(s).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {s!r}")


def _parse_float(s) -> float:
    return float(s)  # accepts "inf"


# key -> (parser, default); task-dependent defaults are None and filled
# in during resolution.
SCHEMA: dict = {
    "task": (str, "passive_match"),
    "agent": (str, "rma"),
    "seed": (int, 0),
    "workers": (int, 8),
    "async_mode": (_parse_bool, False),
    "max_episodes": (int, 0),
    "max_env_steps": (int, 0),
    "trace_every": (int, 0),
    "checkpoint_every": (int, 0),
    # optimization (canonical names)
    "eta": (_parse_float, 5e-6),
    "gamma": (_parse_float, 0.96),
    "lambda": (_parse_float, None),
    "alpha_image": (_parse_float, 20.0),
    "alpha_rew": (_parse_float, 1.0),
    "alpha_value": (_parse_float, 0.4),
    "alpha_act": (_parse_float, 1.0),
    "alpha_entropy": (_parse_float, None),
    "tau_window": (int, 0),
    "beta1": (_parse_float, 0.9),
    "beta2": (_parse_float, 0.999),
    # memory / transport
    "w": (int, 200),
    "k": (int, 3),
    "top_k": (int, 50),
    "beta_threshold": (_parse_float, 2.0),
    "tvt_alpha": (_parse_float, 0.9),
    # model sizes
    "encoder_hidden": (int, 256),
    "lstm_hidden": (int, 128),
    "policy_hidden": (int, 200),
    "value_hidden": (int, 200),
    # task geometry
    "p1_steps": (int, None),
    "p2_steps": (int, None),
    "p3_steps": (int, None),
    "p4_steps": (int, None),
    "p5_steps": (int, None),
    "distractor_variant": (str, None),
    "apple_prob": (_parse_float, None),
    "r_apple": (_parse_float, None),
    "distractor_size": (int, None),
    "cue_steps": (int, None),
    "latent_cue_steps": (int, None),
}

_TASK_KEYS = ("p1_steps", "p2_steps", "p3_steps", "p4_steps", "p5_steps",
              "distractor_variant", "apple_prob", "r_apple", "distractor_size",
              "cue_steps", "latent_cue_steps")


class RunConfig:
    """Resolved configuration: defaults, then file, then overrides."""

    def __init__(self, values: dict):
        self.values = values

    @classmethod
    def resolve(cls, path=None, overrides: dict | None = None) -> "RunConfig":
        explicit: dict = {}
        if path is not None:
            explicit.update(parse_config_file(path))
        for key, raw in (overrides or {}).items():
            if key not in SCHEMA:
                raise ConfigError(f"unknown config key: {key}")
            parser = SCHEMA[key][0]
            explicit[key] = parser(raw) if isinstance(raw, str) else raw
        values = {}
        for key, (_parser, default) in SCHEMA.items():
            values[key] = explicit.get(key, default)
        task = values["task"]
        task_defaults = default_task_config(task)
        for key in _TASK_KEYS:
            if values[key] is None:
                values[key] = getattr(task_defaults, key)
        if values["lambda"] is None:
            values["lambda"] = values["gamma"]
        if values["alpha_entropy"] is None:
            values["alpha_entropy"] = 0.05 if task == "two_negative_keys" else 0.01
        cfg = cls(values)
        cfg.task_config()   # validates task keys
        cfg.hyperparams()   # validates optimization keys
        arch_of(values["agent"])
        return cfg

    def __getitem__(self, key: str):
        return self.values[key]

    def task_config(self) -> TaskConfig:
        v = self.values
        return TaskConfig(
            task=v["task"], p1_steps=v["p1_steps"], p2_steps=v["p2_steps"],
            p3_steps=v["p3_steps"], p4_steps=v["p4_steps"], p5_steps=v["p5_steps"],
            distractor_variant=v["distractor_variant"], apple_prob=v["apple_prob"],
            r_apple=v["r_apple"], distractor_size=v["distractor_size"],
            cue_steps=v["cue_steps"], latent_cue_steps=v["latent_cue_steps"])

    def hyperparams(self) -> HyperParams:
        v = self.values
        return HyperParams(
            eta=v["eta"], gamma=v["gamma"], lam=v["lambda"],
            alpha_image=v["alpha_image"], alpha_rew=v["alpha_rew"],
            alpha_value=v["alpha_value"], alpha_act=v["alpha_act"],
            alpha_entropy=v["alpha_entropy"],
            tau_window=v["tau_window"] or None,
            beta1=v["beta1"], beta2=v["beta2"],
            tvt=TvtConfig(alpha=v["tvt_alpha"], beta_threshold=v["beta_threshold"],
                          gamma=v["gamma"]))

    def agent_config(self) -> AgentConfig:
        v = self.values
        variant, _tvt = arch_of(v["agent"])
        tc = self.task_config()
        return AgentConfig(
            variant=variant, obs_shape=tc.obs_shape(), num_actions=6,
            word_size=v["w"], num_heads=v["k"], top_k=v["top_k"],
            memory_size=tc.max_episode_steps,
            encoder_hidden=v["encoder_hidden"], lstm_hidden=v["lstm_hidden"],
            policy_hidden=v["policy_hidden"], value_hidden=v["value_hidden"])

    @property
    def tvt_enabled(self) -> bool:
        return arch_of(self.values["agent"])[1]

    def serialize(self) -> str:
        lines = ["# resolved run configuration"]
        for key in SCHEMA:
            lines.append(f"{key} = {self.values[key]}")
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        Path(path).write_text(self.serialize())


def parse_config_file(path) -> dict:
    """Flat ``key = value`` lines; '#' comments; keys must be known."""
    text = Path(path).read_text()
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" in line:
            key, val = line.split("=", 1)
        elif ":" in line:
            key, val = line.split(":", 1)
        else:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key = key.strip()
        val = val.strip()
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key: {key}")
        try:
            out[key] = SCHEMA[key][0](val)
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {val!r} ({exc})") from exc
    return out


def parse_overrides(pairs: list[str]) -> dict:
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"override must be key=value, got {pair!r}")
        key, val = pair.split("=", 1)
        out[key.strip()] = val.strip()
    return out
