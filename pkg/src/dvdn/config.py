"""Experiment configuration and its flat dotted key/value text format.

Grammar, one entry per line::

    # comment
    key = value
    section.key = value

Blank lines and ``#`` comments are ignored. Tuples are comma separated; the
climb payoff matrix uses ``;`` between rows. Unknown keys are rejected with
their full dotted path. ``dumps`` writes every key, so a dumped config reloads
to an identical object.
"""
from __future__ import annotations

import dataclasses
import zlib
from dataclasses import dataclass, field

import numpy as np

from .envs import env_params

ALGORITHMS = ("IQL", "VDN", "VDN_PS", "DVDN", "DVDN_GT", "GT")


class ConfigError(ValueError):
    """Bad key or value; ``key`` holds the dotted path at fault."""

    def __init__(self, key: str, msg: str):
        super().__init__(f"{key}: {msg}")
        self.key = key


@dataclass
class TrainConfig:
    total_steps: int = 100_000
    lr: float = 5e-4
    gamma: float = 0.99
    batch_size: int = 32
    buffer_capacity: int = 5000
    hidden_dims: tuple = (64,)
    standardize_rewards: bool = True
    grad_clip: float = 10.0
    train_every: str = "step"


@dataclass
class ExploreConfig:
    eps_start: float = 1.0
    eps_final: float = 0.05
    anneal_steps: int = 20_000


@dataclass
class TargetConfig:
    mode: str = "hard"
    period: int = 200
    rate: float = 0.01


@dataclass
class GraphConfig:
    kind: str = "random"
    p_extra: float = 0.5


@dataclass
class EvalConfig:
    interval: int = 5_000
    episodes: int = 50
    epsilon: float = 0.0
    resamples: int = 20_000


@dataclass
class ExperimentConfig:
    algorithm: str = "DVDN"
    env: str = "climb"
    seeds: tuple = (0,)
    env_params: dict = field(default_factory=dict)
    train: TrainConfig = field(default_factory=TrainConfig)
    explore: ExploreConfig = field(default_factory=ExploreConfig)
    target: TargetConfig = field(default_factory=TargetConfig)
    graph: GraphConfig = field(default_factory=GraphConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    diagnostics: bool = False

    def validate(self) -> "ExperimentConfig":
        if self.algorithm not in ALGORITHMS:
            raise ConfigError("algorithm", f"must be one of {', '.join(ALGORITHMS)}")
        try:
            allowed = env_params(self.env)
        except KeyError as e:
            raise ConfigError("env.id", str(e)) from None
        for k in self.env_params:
            if k not in allowed or k == "gamma":
                raise ConfigError(f"env.{k}", f"unknown parameter for environment {self.env!r}")
        if self.train.train_every not in ("step", "episode"):
            raise ConfigError("train.train_every", "must be 'step' or 'episode'")
        if self.target.mode not in ("hard", "soft"):
            raise ConfigError("target.mode", "must be 'hard' or 'soft'")
        if self.graph.kind not in ("random", "complete", "ring"):
            raise ConfigError("graph.kind", "must be 'random', 'complete' or 'ring'")
        if not self.seeds:
            raise ConfigError("seeds", "at least one seed required")
        for path, value in (("train.total_steps", self.train.total_steps), ("eval.interval", self.eval.interval - 1),
                            ("eval.episodes", self.eval.episodes - 1), ("train.batch_size", self.train.batch_size - 1)):
            if value < 0:
                raise ConfigError(path, "out of range")
        if self.train.buffer_capacity < self.train.batch_size:
            raise ConfigError("train.buffer_capacity", "must be >= train.batch_size")
        return self


_SECTIONS = ("train", "explore", "target", "graph", "eval")


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (tuple, list)):
        if value and isinstance(value[0], (tuple, list)):
            return "; ".join(_format(row) for row in value)
        return ", ".join(_format(v) for v in value)
    return str(value)


def _parse(key: str, text: str, like):
    text = text.strip()
    try:
        if isinstance(like, bool):
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return low in ("true", "1", "yes")
        if isinstance(like, int):
            return int(text)
        if isinstance(like, float):
            return float(text)
        if isinstance(like, tuple):
            if like and isinstance(like[0], tuple):
                return tuple(tuple(float(x) for x in row.split(",")) for row in text.split(";"))
            elem = type(like[0]) if like else int
            return tuple(elem(x) for x in text.split(",") if x.strip())
        return text
    except ValueError:
        raise ConfigError(key, f"cannot parse {text!r} as {type(like).__name__}") from None


def set_key(cfg: ExperimentConfig, key: str, value: str) -> None:
    """Apply one ``dotted.key = value`` assignment."""
    if key == "seed":
        cfg.seeds = (_parse(key, value, 0),)
        return
    if key in ("algorithm", "seeds", "diagnostics"):
        setattr(cfg, key, _parse(key, value, getattr(cfg, key)))
        if key == "algorithm":
            cfg.algorithm = cfg.algorithm.upper()
        return
    if key == "env.id":
        cfg.env = value.strip()
        return
    head, _, rest = key.partition(".")
    if head == "env" and rest:
        try:
            defaults = env_params(cfg.env)
        except KeyError as e:
            raise ConfigError("env.id", str(e)) from None
        if rest not in defaults or rest == "gamma":
            raise ConfigError(key, f"unknown parameter for environment {cfg.env!r}")
        cfg.env_params[rest] = _parse(key, value, defaults[rest])
        return
    if head in _SECTIONS and rest:
        section = getattr(cfg, head)
        names = {f.name for f in dataclasses.fields(section)}
        if rest not in names:
            raise ConfigError(key, "unknown key")
        setattr(section, rest, _parse(key, value, getattr(section, rest)))
        return
    raise ConfigError(key, "unknown key")


def loads(text: str, overrides=()) -> ExperimentConfig:
    cfg = ExperimentConfig()
    entries = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", f"expected 'key = value', got {raw!r}")
        k, v = line.split("=", 1)
        entries.append((k.strip(), v))
    # env.id first so that env.* parameters are checked against the right environment
    entries.sort(key=lambda kv: kv[0] != "env.id")
    for k, v in entries:
        set_key(cfg, k, v)
    for ov in overrides:
        if "=" not in ov:
            raise ConfigError(ov, "override must look like key=value")
        k, v = ov.split("=", 1)
        set_key(cfg, k.strip(), v)
    return cfg.validate()


def load(path, overrides=()) -> ExperimentConfig:
    with open(path) as fh:
        return loads(fh.read(), overrides)


def dumps(cfg: ExperimentConfig) -> str:
    lines = [f"algorithm = {cfg.algorithm}", f"seeds = {_format(cfg.seeds)}",
             f"diagnostics = {_format(cfg.diagnostics)}", f"env.id = {cfg.env}"]
    for k in sorted(cfg.env_params):
        lines.append(f"env.{k} = {_format(cfg.env_params[k])}")
    for sec in _SECTIONS:
        section = getattr(cfg, sec)
        for f in dataclasses.fields(section):
            lines.append(f"{sec}.{f.name} = {_format(getattr(section, f.name))}")
    return "\n".join(lines) + "\n"


def substream(root_seed: int, name: str, *index: int) -> np.random.Generator:
    """Named, independent random stream derived from one root seed.

    The stream is ``SeedSequence([root_seed, crc32(name), *index])``; names in
    use are ``graph``, ``replay``, ``init``, ``explore``, ``env`` and ``eval``.
    """
    return np.random.default_rng(np.random.SeedSequence([root_seed, zlib.crc32(name.encode()), *index]))
