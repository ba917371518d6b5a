"""One human-readable configuration file for every module.

Defaults are the published parameter table values where given, ledgered
choices otherwise. Unknown keys are rejected; the effective configuration
is echoed into every output directory together with a schema version.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field

import yaml

from .controller import PreviewConfig
from .errors import ConfigError
from .evaluate import EvalConfig
from .planner import LatticeConfig
from .rate import RolloutConfig
from .reward import RewardConfig
from .sim import SimConfig
from .transition import TrainConfig

SCHEMA_VERSION = 1
ENV_CONFIG_PATH = "DCPLAN_CONFIG"


@dataclass
class Config:
    root_seed: int = 20240613
    sim: SimConfig = field(default_factory=SimConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    preview: PreviewConfig = field(default_factory=PreviewConfig)
    lattice: LatticeConfig = field(default_factory=LatticeConfig)
    rollout: RolloutConfig = field(default_factory=RolloutConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)


_SECTIONS = {f.name: f for f in dataclasses.fields(Config) if f.name != "root_seed"}


def _build_section(cls, data, path):
    known = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in known:
            raise ConfigError(f"unknown key {path}.{key}")
        if isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    return cls(**kwargs)


def load_config(path=None) -> Config:
    """Config from a YAML file; unknown keys are an error.

    Falls back to the DCPLAN_CONFIG environment variable, then defaults.
    """
    if path is None:
        path = os.environ.get(ENV_CONFIG_PATH)
    if path is None:
        return Config()
    with open(path, "r", encoding="utf-8") as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config root must be a mapping")
    data.pop("schema_version", None)
    kwargs = {}
    for key, value in data.items():
        if key == "root_seed":
            kwargs[key] = int(value)
        elif key in _SECTIONS:
            cls = _SECTIONS[key].default_factory
            kwargs[key] = _build_section(cls, value or {}, key)
        else:
            raise ConfigError(f"unknown key {key}")
    return Config(**kwargs)


def config_to_dict(cfg: Config) -> dict:
    out = {"schema_version": SCHEMA_VERSION, "root_seed": cfg.root_seed}
    for name in _SECTIONS:
        section = dataclasses.asdict(getattr(cfg, name))
        for k, v in section.items():
            if isinstance(v, tuple):
                section[k] = list(v)
        out[name] = section
    return out


def echo_config(cfg: Config, out_dir) -> None:
    """Write the effective configuration into an output directory."""
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "effective_config.yaml"), "w", encoding="utf-8") as fh:
        yaml.safe_dump(config_to_dict(cfg), fh, sort_keys=True)
