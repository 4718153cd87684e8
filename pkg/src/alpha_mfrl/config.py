"""Flat ``key = value`` run configuration."""
from __future__ import annotations

import math
from dataclasses import dataclass, fields
from pathlib import Path

from .alignment import ScheduleParams
from .orchestrator import AGENT_KINDS, RunConfig
from .ppo import PpoHyperparams


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


_PPO = PpoHyperparams()


@dataclass
class CliConfig:
    agent: str = "alpha"
    episode_count: int = 300
    episode_length: int = 20
    seed_count: int = 300
    rng_seed: int = 0
    hidden_width: int = 1024
    epsilon: float = 0.1
    checkpoint_interval: int = 20
    gamma: float = _PPO.gamma
    lam: float = _PPO.lam
    clip_eps: float = _PPO.clip_eps
    epochs: int = _PPO.epochs
    minibatch_size: int = _PPO.minibatch_size
    entropy_coef: float = _PPO.entropy_coef
    value_coef: float = _PPO.value_coef
    batch_threshold: int = _PPO.batch_threshold
    lr: float = _PPO.lr
    grid_resolution: int = 10
    bandwidth_cells: float = 1.5
    n_perm: int = 9999
    usage_window: int = 10

    def ppo(self) -> PpoHyperparams:
        return PpoHyperparams(gamma=self.gamma, lam=self.lam, clip_eps=self.clip_eps,
                              epochs=self.epochs, minibatch_size=self.minibatch_size,
                              entropy_coef=self.entropy_coef, value_coef=self.value_coef,
                              batch_threshold=self.batch_threshold, lr=self.lr)

    def run_config(self, out_dir=None) -> RunConfig:
        return RunConfig(agent=self.agent, episode_count=self.episode_count,
                         episode_length=self.episode_length, seed_count=self.seed_count,
                         rng_seed=self.rng_seed, hidden_width=self.hidden_width,
                         epsilon=self.epsilon, checkpoint_interval=self.checkpoint_interval,
                         ppo=self.ppo(), out_dir=Path(out_dir) if out_dir is not None else None)


_TYPES = {f.name: f.type for f in fields(CliConfig)}


def _check_ranges(cfg: CliConfig, lines: dict[str, int]) -> None:
    def fail(key, msg):
        raise ConfigError(f"{key}: {msg}", lines.get(key))

    for f in fields(CliConfig):
        if f.type == "float" and not math.isfinite(getattr(cfg, f.name)):
            fail(f.name, "must be finite")
    if cfg.agent not in AGENT_KINDS:
        fail("agent", f"must be one of {', '.join(AGENT_KINDS)}")
    if not 0.0 < cfg.epsilon < 1.0 / 3.0:
        fail("epsilon", "must satisfy 0 < epsilon < 1/3")
    if not 0.0 < cfg.gamma <= 1.0:
        fail("gamma", "must be in (0, 1]")
    if not 0.0 < cfg.lam <= 1.0:
        fail("lam", "must be in (0, 1]")
    for key in ("episode_count", "episode_length", "seed_count", "hidden_width",
                "checkpoint_interval", "epochs", "minibatch_size", "batch_threshold",
                "grid_resolution", "usage_window"):
        if getattr(cfg, key) < 1:
            fail(key, "must be >= 1")
    for key in ("clip_eps", "lr", "bandwidth_cells", "value_coef"):
        if not getattr(cfg, key) > 0:
            fail(key, "must be > 0")
    if cfg.entropy_coef < 0:
        fail("entropy_coef", "must be >= 0")
    if cfg.n_perm < 0:
        fail("n_perm", "must be >= 0")
    if cfg.seed_count != cfg.episode_count:
        fail("seed_count", "must equal episode_count (one seed per episode)")
    ScheduleParams(cfg.epsilon, cfg.episode_count)


def parse_config(text: str) -> CliConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment. Missing keys take defaults."""
    values: dict[str, object] = {}
    lines: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = (part.strip() for part in line.partition("="))
        if not sep or not key:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", lineno)
        if key not in _TYPES:
            raise ConfigError(f"unknown key {key!r}", lineno)
        if key in values:
            raise ConfigError(f"duplicate key {key!r}", lineno)
        typ = _TYPES[key]
        try:
            if typ == "int":
                values[key] = int(val)
            elif typ == "float":
                values[key] = float(val)
            else:
                values[key] = val
        except ValueError:
            raise ConfigError(f"{key}: cannot parse {val!r} as {typ}", lineno) from None
        lines[key] = lineno
    cfg = CliConfig(**values)
    _check_ranges(cfg, lines)
    return cfg


def load_config(path) -> CliConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


def serialize_config(cfg: CliConfig) -> str:
    out = []
    for f in fields(CliConfig):
        v = getattr(cfg, f.name)
        out.append(f"{f.name} = {v!r}" if isinstance(v, float) else f"{f.name} = {v}")
    return "\n".join(out) + "\n"
