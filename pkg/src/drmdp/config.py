"""Run configuration read from an INI file with named sections.

Every key belongs to exactly one section; unknown sections or keys are
errors. Omitted keys take the desk-scale defaults below. Example::

    [run]
    algorithm = hc
    seeds = 0 1 2 3 4
    output_dir = runs/hc

    [env]
    name = point_reach
    size = 20
    interval = 8
    step_limit = 120

    [critic]
    structure = singleton
    lam = 0.05

    [train]
    env_steps = 50000
    batch_size = 64

The optimiser is Adam (beta1 0.9, beta2 0.999, eps 1e-8) at ``lr``.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, fields, replace
from pathlib import Path

ALGORITHMS = ("hc", "ircr")
STRUCTURES = ("singleton", "pairwise")
ENVS = ("point_reach",)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    # [run]
    algorithm: str = "hc"
    seeds: tuple[int, ...] = (0,)
    output_dir: str = "runs"
    # [env]
    env: str = "point_reach"
    size: float = 20.0
    interval: int = 8
    step_limit: int = 120
    # [critic]
    structure: str = "singleton"
    pairwise_k: int = 1
    hidden: int = 64
    lam: float = 0.05
    gamma: float = 0.99
    # [train]
    env_steps: int = 50_000
    gradient_steps: int = 1
    batch_size: int = 64
    buffer_capacity: int = 100_000
    start_steps: int = 1_000
    lr: float = 3e-4
    tau_target: float = 0.005
    exploration_noise: float = 0.3
    policy_delay: int = 1
    # [eval]
    eval_every: int = 1_000
    eval_episodes: int = 1
    variance_probe: bool = False
    probe_every: int = 500
    snapshot: bool = True

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        positive = ("interval", "step_limit", "hidden", "env_steps", "batch_size", "buffer_capacity",
                    "eval_every", "eval_episodes", "probe_every", "policy_delay")
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        for name in ("gradient_steps", "start_steps", "pairwise_k"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be nonnegative")
        if self.size <= 0:
            raise ConfigError("size must be positive")
        if self.lam < 0:
            raise ConfigError("lam must be nonnegative")
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigError("gamma must lie in [0, 1)")
        if not 0.0 < self.tau_target <= 1.0:
            raise ConfigError("tau_target must lie in (0, 1]")
        if self.lr <= 0 or self.exploration_noise < 0:
            raise ConfigError("lr must be positive and exploration_noise nonnegative")
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"algorithm must be one of {ALGORITHMS}")
        if self.structure not in STRUCTURES:
            raise ConfigError(f"structure must be one of {STRUCTURES}")
        if self.env not in ENVS:
            raise ConfigError(f"env must be one of {ENVS}")
        if self.variance_probe and self.batch_size < 2:
            raise ConfigError("the variance probe needs batch_size >= 2")
        if not self.seeds:
            raise ConfigError("at least one seed is required")

    def with_(self, **changes) -> "RunConfig":
        return replace(self, **changes)

    def to_ini(self) -> str:
        parser = configparser.ConfigParser()
        for section, names in SECTIONS.items():
            parser[section] = {_ini_key(n): _fmt(getattr(self, n)) for n in names}
        lines = []
        for section in parser.sections():
            lines.append(f"[{section}]")
            lines.extend(f"{k} = {v}" for k, v in parser[section].items())
            lines.append("")
        return "\n".join(lines)


SECTIONS = {
    "run": ("algorithm", "seeds", "output_dir"),
    "env": ("env", "size", "interval", "step_limit"),
    "critic": ("structure", "pairwise_k", "hidden", "lam", "gamma"),
    "train": ("env_steps", "gradient_steps", "batch_size", "buffer_capacity", "start_steps", "lr", "tau_target",
              "exploration_noise", "policy_delay"),
    "eval": ("eval_every", "eval_episodes", "variance_probe", "probe_every", "snapshot"),
}
_KEY_ALIASES = {"env": "name"}


def _ini_key(name: str) -> str:
    return _KEY_ALIASES.get(name, name)


def _fmt(v) -> str:
    if isinstance(v, tuple):
        return " ".join(map(str, v))
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _parse(name: str, raw: str):
    t = _TYPES[name]
    try:
        if t == "bool":
            low = raw.strip().lower()
            if low not in ("true", "false", "yes", "no", "1", "0"):
                raise ValueError(raw)
            return low in ("true", "yes", "1")
        if t == "int":
            return int(raw)
        if t == "float":
            return float(raw)
        if t.startswith("tuple"):
            return tuple(int(x) for x in raw.replace(",", " ").split())
        return raw.strip()
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {raw!r}") from exc


def loads_config(text: str) -> RunConfig:
    parser = configparser.ConfigParser(default_section="__none__")
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    values = {}
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        allowed = {_ini_key(n): n for n in SECTIONS[section]}
        for key, raw in parser[section].items():
            if key not in allowed:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            values[allowed[key]] = _parse(allowed[key], raw)
    return RunConfig(**values)


def load_config(path) -> RunConfig:
    return loads_config(Path(path).read_text())


__all__ = ["ConfigError", "RunConfig", "SECTIONS", "load_config", "loads_config"]
