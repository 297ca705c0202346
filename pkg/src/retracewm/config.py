"""Run configuration: TOML parsing, dotted overrides, defaults, and echo.

The default tree below is the schema: unknown keys are rejected, and every
run writes back the fully resolved configuration (defaults included) next to
its outputs so reruns are exactly reproducible.
"""

from __future__ import annotations

import copy
import hashlib
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .agent import AgentConfig
from .envs import EnvSpec
from .errors import ContractViolation
from .losses import LossConfig
from .trainer import TrainConfig
from .truncation import TruncationConfig


class ConfigError(ValueError):
    pass


def default_config() -> dict:
    return {
        "run_name": "run",
        "seed": 0,
        "env": {
            "name": "pointmaze",
            "action_dim": 2,
            "mass": 1.0,
            "friction": 0.5,
            "stiffness": 1.0,
            "reward_offset": 0.0,
            "dt": 0.1,
            "max_episode_steps": 200,
            "action_repeat": 2,
            "distractor_dim": 0,
            "symmetric": False,
        },
        "trainer": {
            "batch_size": 64,
            "segment_len": 50,
            "total_steps": 5000,
            "eval_every": 10000,
            "eval_episodes": 5,
            "buffer_capacity": 100000,
            "warmup_episodes": 5,
            "env_steps_per_train_step": 1,
            "model_lr": 6e-4,
            "value_lr": 8e-5,
            "policy_lr": 8e-5,
            "grad_clip": 100.0,
            "model_window": 0,
            "imagine_batch": 128,
            "explore_noise": 0.3,
        },
        "model": {
            "z_dim": 32,
            "h_dim": 256,
            "embed_dim": 64,
            "hidden_dim": 128,
            "stop_retrace_grad": False,
        },
        "losses": {
            "beta": 1.0,
            "retrace_weight": 1.0,
            "gamma": 0.99,
            "retrace_variant": "bisimulation",
        },
        "truncation": {
            "eta": 0.10,
            "window": 10,
            "back_steps": 5,
            "warmup_steps": 100000,
            "mode": "adaptive",
            "fixed_proportion": 0.0,
            "anneal_steps": 0,
            "disjunctive": False,
        },
        "agent": {
            "horizon": 15,
            "gamma": 0.99,
            "lambda_return_decay": 0.95,
            "gae_decay": 0.95,
            "entropy_weight": 1e-4,
            "hidden_dim": 128,
        },
        "transfer": {
            "n_seeds": 15,
            "eval_episodes": 1,
            "change_sets": [{"reward_offset": 1.0}],
        },
        "rollout": {
            "horizons": [1, 2, 3, 5, 10, 15, 20, 25, 30],
            "n_trajectories": 5,
            "context": 5,
            "action_source": "random",
            "export_latents": True,
        },
        "ablate": {
            "retrace_weights": [0.0, 1.0],
            "truncation_modes": ["off", "adaptive"],
            "variants": ["bisimulation"],
            "seeds": [0, 1, 2],
            "total_steps": 0,
        },
    }


def _find_line(text: str, key: str) -> int | None:
    for i, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0]
        if stripped.strip().startswith(f"{key}") and "=" in stripped:
            return i
        if stripped.strip() == f"[{key}]":
            return i
    return None


def _merge_checked(base: dict, incoming: dict, path: str, text: str) -> None:
    for key, value in incoming.items():
        if key not in base:
            dotted = f"{path}.{key}" if path else key
            line = _find_line(text, key)
            loc = f" (line {line})" if line else ""
            raise ConfigError(f"unknown configuration key '{dotted}'{loc}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"'{path + '.' if path else ''}{key}' must be a table")
            _merge_checked(base[key], value, f"{path}.{key}" if path else key, text)
        else:
            base[key] = _coerce(base[key], value, f"{path}.{key}" if path else key)


def _coerce(default, value, dotted: str):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"'{dotted}' expects a boolean, got {value!r}")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"'{dotted}' expects an integer, got {value!r}")
        if isinstance(value, float) and not value.is_integer():
            raise ConfigError(f"'{dotted}' expects an integer, got {value!r}")
        return int(value)
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"'{dotted}' expects a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"'{dotted}' expects a string, got {value!r}")
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"'{dotted}' expects a list, got {value!r}")
        return value
    raise ConfigError(f"unsupported config entry '{dotted}'")


def load_config(path: str | Path | None, overrides: list[str] | None = None,
                seed: int | None = None) -> dict:
    """Defaults, optionally updated from a TOML file and k=v override strings."""
    cfg = default_config()
    if path is not None:
        text = Path(path).read_text()
        try:
            parsed = tomllib.loads(text)
        except tomllib.TOMLDecodeError as err:
            raise ConfigError(f"config syntax error in {path}: {err}") from err
        _merge_checked(cfg, parsed, "", text)
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override '{item}' is not of the form key=value")
        dotted, raw = item.split("=", 1)
        try:
            value = tomllib.loads(f"v = {raw.strip()}")["v"]
        except tomllib.TOMLDecodeError:
            value = raw.strip()  # bare words read as strings
        node = cfg
        parts = dotted.strip().split(".")
        for part in parts[:-1]:
            if part not in node or not isinstance(node[part], dict):
                raise ConfigError(f"unknown configuration key '{dotted.strip()}'")
            node = node[part]
        if parts[-1] not in node:
            raise ConfigError(f"unknown configuration key '{dotted.strip()}'")
        node[parts[-1]] = _coerce(node[parts[-1]], value, dotted.strip())
    if seed is not None:
        cfg["seed"] = int(seed)
    return cfg


def to_train_config(cfg: dict) -> TrainConfig:
    try:
        return TrainConfig(
            env=EnvSpec(**cfg["env"]),
            seed=cfg["seed"],
            **cfg["trainer"],
            **cfg["model"],
            losses=LossConfig(**cfg["losses"]),
            truncation=TruncationConfig(**cfg["truncation"]),
            agent=AgentConfig(**cfg["agent"]),
        )
    except ContractViolation as err:
        raise ConfigError(str(err)) from err


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float)):
        return repr(value)
    if isinstance(value, str):
        return '"' + value.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(value, dict):
        inner = ", ".join(f"{k} = {_fmt(v)}" for k, v in value.items())
        return "{" + inner + "}"
    if isinstance(value, list):
        return "[" + ", ".join(_fmt(v) for v in value) + "]"
    raise ConfigError(f"cannot serialize config value {value!r}")


def dump_config(cfg: dict) -> str:
    """Deterministic TOML text for the resolved configuration."""
    lines = []
    for key, value in cfg.items():
        if not isinstance(value, dict):
            lines.append(f"{key} = {_fmt(value)}")
    for key, value in cfg.items():
        if isinstance(value, dict):
            lines.append("")
            lines.append(f"[{key}]")
            for k, v in value.items():
                lines.append(f"{k} = {_fmt(v)}")
    return "\n".join(lines) + "\n"


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(dump_config(cfg).encode("utf-8")).hexdigest()[:16]
