"""Run configuration in flat ``section.key = value`` text.

Example::

    # desk-scale highway run
    run.scenario = highway
    run.variant = radial
    run.seeds = 0, 1, 2
    train.target_eps = 3/255
    cert.tv = 5

Unknown sections or keys are errors reporting the line and column, as are
malformed values. ``run.scenario`` is required.
"""

from __future__ import annotations

import types
import typing
from dataclasses import dataclass, field, fields, replace
from fractions import Fraction
from pathlib import Path

from . import env
from .policy import EpsGrid
from .smoothing import SmoothingConfig
from .train import TrainConfig


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        where = f"line {line}, column {column}: " if line is not None else ""
        super().__init__(where + message)
        self.line = line
        self.column = column


@dataclass(frozen=True)
class CertSettings:
    tv: int = 5
    budget: int = 500
    grid_max: int | None = None  # defaults per norm: 255 for linf, 20 for l2
    grid_denominator: int = 255

    def grid(self, norm: str) -> EpsGrid:
        base = EpsGrid.for_norm(norm)
        return EpsGrid(Fraction(1, self.grid_denominator),
                       self.grid_max if self.grid_max is not None else base.max_index)


@dataclass(frozen=True)
class AttackSettings:
    pgd_steps: int = 20
    restarts: int = 5
    step_size: float | None = None
    seed: int = 0
    sweep_max: int = 8  # attack sweep covers grid indices 0..sweep_max
    episodes: int = 10


@dataclass(frozen=True)
class EvalSettings:
    seeds: tuple[int, ...] = tuple(range(1000, 1020))
    eps_for_mse: float = 1 / 255


@dataclass(frozen=True)
class RunSettings:
    scenario: str = "highway"
    norm: str = "linf"
    variant: str = "vanilla"
    seeds: tuple[int, ...] = (0,)
    out: str = "out"


@dataclass(frozen=True)
class RunConfig:
    run: RunSettings = field(default_factory=RunSettings)
    train: TrainConfig = field(default_factory=TrainConfig)
    cert: CertSettings = field(default_factory=CertSettings)
    smoothing: SmoothingConfig = field(default_factory=SmoothingConfig)
    attack: AttackSettings = field(default_factory=AttackSettings)
    eval: EvalSettings = field(default_factory=EvalSettings)

    @property
    def preset(self) -> env.ScenarioPreset:
        return env.get_preset(self.run.scenario)

    @property
    def grid(self) -> EpsGrid:
        return self.cert.grid(self.run.norm)

    def train_config(self, seed: int | None = None) -> TrainConfig:
        """Training settings with the run's variant and norm applied."""
        cfg = replace(self.train, variant=self.run.variant, norm=self.run.norm)
        return replace(cfg, seed=seed) if seed is not None else cfg


SECTIONS = {f.name: f for f in fields(RunConfig)}
REQUIRED = (("run", "scenario"),)


def _number(text: str) -> float:
    if "/" in text:
        return float(Fraction(text.replace(" ", "")))
    return float(text)


def _coerce(tp, text: str):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin in (typing.Union, types.UnionType):
        if text.lower() == "none" and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _coerce(inner[0], text)
    if origin is tuple:
        parts = [p.strip() for p in text.split(",") if p.strip()]
        return tuple(_coerce(args[0], p) for p in parts)
    if tp is bool:
        if text.lower() in ("true", "yes", "1"):
            return True
        if text.lower() in ("false", "no", "0"):
            return False
        raise ValueError(f"expected a boolean, got {text!r}")
    if tp is int:
        return int(text)
    if tp is float:
        return _number(text)
    if tp is str:
        return text
    raise ValueError(f"unsupported field type {tp!r}")


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    values: dict[str, dict[str, object]] = {name: {} for name in SECTIONS}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].rstrip()
        if not line.strip():
            continue
        indent = len(line) - len(line.lstrip())
        key, eq, value = line.partition("=")
        if not eq:
            raise ConfigError(f"{source}: expected 'section.key = value'", lineno, indent + 1)
        key = key.strip()
        section, dot, name = key.partition(".")
        if not dot or not name:
            raise ConfigError(f"{source}: key {key!r} is not of the form section.key", lineno, indent + 1)
        if section not in SECTIONS:
            raise ConfigError(f"{source}: unknown section {section!r}", lineno, indent + 1)
        cls = SECTIONS[section].default_factory  # type: ignore[misc]
        hints = typing.get_type_hints(cls)
        known = {f.name for f in fields(cls)}
        if name not in known:
            raise ConfigError(f"{source}: unknown key {key!r}", lineno, indent + len(section) + 2)
        value_col = len(raw) - len(raw.split("=", 1)[1].lstrip()) + 1
        try:
            values[section][name] = _coerce(hints[name], value.strip())
        except (ValueError, ZeroDivisionError) as exc:
            raise ConfigError(f"{source}: bad value for {key!r}: {exc}", lineno, value_col) from None
    for section, name in REQUIRED:
        if name not in values[section]:
            raise ConfigError(f"{source}: missing required key '{section}.{name}'")
    try:
        parts = {s: SECTIONS[s].default_factory(**v) for s, v in values.items()}  # type: ignore[misc]
        cfg = RunConfig(**parts)
        cfg.preset  # unknown scenario names fail here
        if cfg.run.norm not in ("linf", "l2"):
            raise ValueError("run.norm must be 'linf' or 'l2'")
        cfg.train_config()
        if cfg.cert.tv < 1:
            raise ValueError("cert.tv must be at least 1")
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"{source}: {exc}") from None
    return cfg


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    return parse_config(path.read_text(encoding="utf-8"), str(path))


def with_overrides(cfg: RunConfig, **sections) -> RunConfig:
    """Replace fields per section, e.g. ``with_overrides(cfg, cert={'tv': 10})``."""
    return replace(cfg, **{s: replace(getattr(cfg, s), **kv) for s, kv in sections.items() if kv})

