"""Declarative run configuration: one TOML file with sections
env / decomposer / policy / trainer. Every default lives in the reference
configs shipped with the repo, so nothing is implicit in code."""

from __future__ import annotations

import hashlib
import json

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .envs import EnvConfig, make_env
from .model import ModelConfig
from .policy import PolicyConfig


class ConfigError(ValueError):
    pass


SECTIONS = ("env", "decomposer", "policy", "trainer")


def load_config(path, overrides=()):
    with open(path, "rb") as fh:
        cfg = tomllib.load(fh)
    for section in SECTIONS:
        cfg.setdefault(section, {})
    for item in overrides:
        apply_override(cfg, item)
    validate(cfg)
    return cfg


def apply_override(cfg, item):
    """Apply one 'section.key=value' override; value parsed as TOML."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} must look like section.key=value")
    key, raw = item.split("=", 1)
    parts = key.strip().split(".")
    if len(parts) < 2:
        raise ConfigError(f"override key {key!r} must be section.key")
    try:
        value = tomllib.loads(f"v = {raw.strip()}")["v"]
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse override value {raw!r}: {exc}") from exc
    node = cfg
    for p in parts[:-1]:
        node = node.setdefault(p, {})
    node[parts[-1]] = value


def validate(cfg):
    env = cfg["env"]
    for field in ("scenario", "n_agents", "horizon"):
        if field not in env:
            raise ConfigError(f"config missing required env.{field}")
    trainer = cfg["trainer"]
    if trainer.get("iterations", 1) < 1:
        raise ConfigError("trainer.iterations must be >= 1")
    if trainer.get("decomp_every", 1) < 1:
        raise ConfigError("trainer.decomp_every must be >= 1")


def config_hash(cfg):
    return hashlib.sha256(
        json.dumps(cfg, sort_keys=True).encode()).hexdigest()[:16]


def build_env_config(cfg):
    return EnvConfig(**cfg["env"])


def build_model_config(cfg, env):
    dec = dict(cfg["decomposer"])
    k = dec.pop("k_samples", 3)
    return ModelConfig(
        state_dim=env.state_dim,
        n_actions=env.n_actions,
        n_agents=env.n_agents,
        max_horizon=env.horizon,
        k_samples=k,
        **dec,
    )


def build_policy_config(cfg, env):
    pol = dict(cfg["policy"])
    if "hidden" in pol:
        pol["hidden"] = tuple(pol["hidden"])
    pol.setdefault("gamma", cfg["env"].get("gamma", 0.99))
    return PolicyConfig(state_dim=env.state_dim, n_actions=env.n_actions, **pol)


def build_all(cfg):
    """(env, model config, policy config) from a parsed config dict."""
    env = make_env(build_env_config(cfg))
    return env, build_model_config(cfg, env), build_policy_config(cfg, env)
