"""Run configuration: sectioned INI text with strict keys and exact round-trip."""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, field, fields, replace

from .errors import ConfigError


@dataclass(frozen=True)
class WorldSection:
    n_episodes: int = 400
    max_objects: int = 2
    flip_prob: float = 0.0
    jitter: float = 0.5
    ego_amplitude: float = 3.0


@dataclass(frozen=True)
class ExtractSection:
    window: int = 7
    polyorder: int = 3
    threshold: float = 0.75
    n_modes: int = 5
    homography_mode: str = "estimated"
    crop_fraction: float = 0.6
    samples_per_label: int = 4


@dataclass(frozen=True)
class ModelSection:
    crop_size: int = 38
    channels: tuple = (8, 16, 32)
    hidden: int = 64
    attention: bool = False
    learning_rate: float = 1e-3
    epochs: int = 60
    batch_size: int = 32
    lambda_traj: float = 1.0


@dataclass(frozen=True)
class ParadigmSection:
    scene: str = "drawer"
    goal: str = "drawer:7.2"
    embedding: str = "encoder"
    goal_metric: str = "min"
    n0: int = 30
    ns: int = 30
    j: int = 2
    k: int = 10
    p: float = 0.35
    std_c: float = 2.0
    std_tau: float = 1.0
    n_queries: int = 16
    n_imitation: int = 100
    bc_k: int = 20
    bc_epochs: int = 500
    bc_runs: int = 10
    q: int = 2000
    n_c: int = 4
    n_tau: int = 4
    dqn_steps: int = 2000
    dqn_reward_sign: float = -1.0


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    out_dir: str = "out"
    world: WorldSection = field(default_factory=WorldSection)
    extract: ExtractSection = field(default_factory=ExtractSection)
    model: ModelSection = field(default_factory=ModelSection)
    paradigm: ParadigmSection = field(default_factory=ParadigmSection)

    def with_overrides(self, seed=None, out_dir=None, goal=None):
        cfg = self
        if seed is not None:
            cfg = replace(cfg, seed=int(seed))
        if out_dir is not None:
            cfg = replace(cfg, out_dir=str(out_dir))
        if goal is not None:
            cfg = replace(cfg, paradigm=replace(cfg.paradigm, goal=str(goal)))
        return cfg

    def digest(self):
        """Content hash; the output directory is excluded so outputs do not depend on it."""
        return hashlib.sha256(dump_config(replace(self, out_dir="")).encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class _RunTop:
    seed: int = 0
    out_dir: str = "out"


_SECTIONS = ("world", "extract", "model", "paradigm")


def _format(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(text, default, key):
    try:
        if isinstance(default, bool):
            low = text.strip().lower()
            if low not in ("true", "false"):
                raise ValueError(text)
            return low == "true"
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {text!r}") from exc
    return text.strip()


def _fill(cls, items, where):
    defaults = cls()
    known = {f.name for f in fields(cls)}
    kwargs = {}
    for key, text in items:
        if key not in known:
            raise ConfigError(f"unknown key {key!r} in [{where}]")
        kwargs[key] = _parse(text, getattr(defaults, key), f"{where}.{key}")
    return cls(**kwargs)


def loads_config(text):
    parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"unreadable config: {exc}") from exc
    unknown = set(parser.sections()) - {"run", *_SECTIONS}
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(sorted(unknown))}")
    top = _fill(_RunTop, parser.items("run") if parser.has_section("run") else [], "run")
    parts = {}
    for name in _SECTIONS:
        cls = type(getattr(RunConfig(), name))
        parts[name] = _fill(cls, parser.items(name) if parser.has_section(name) else [], name)
    return RunConfig(seed=top.seed, out_dir=top.out_dir, **parts)


def dump_config(cfg):
    lines = ["[run]", f"seed = {cfg.seed}", f"out_dir = {cfg.out_dir}", ""]
    for name in _SECTIONS:
        section = getattr(cfg, name)
        lines.append(f"[{name}]")
        lines.extend(f"{f.name} = {_format(getattr(section, f.name))}" for f in fields(section))
        lines.append("")
    return "\n".join(lines)


def load_config(path):
    if path is None:
        return RunConfig()
    try:
        with open(path, encoding="utf-8") as fh:
            return loads_config(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
