"""Run configuration: sectioned key-value files with strict schema checking.

One master seed in [run] fans out to every stochastic component through
:func:`shredkit.seeding.derive_seed`. Unknown sections or keys are hard
errors. The SHRED_SEED environment variable, when set, overrides the seed.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field, fields as dc_fields

from .errors import ConfigError
from .network import TrainConfig
from .solver import SolverConfig


def _parse_int_tuple(text: str) -> tuple[int, ...]:
    return tuple(int(part.strip()) for part in text.split(",") if part.strip())


@dataclass(frozen=True)
class ChannelSettings:
    ext_column: int = 3
    reg_column: int = 45
    count: int = 20


@dataclass(frozen=True)
class SensingSettings:
    channel: str = "ext"
    sensors: int = 3
    ensemble: int = 10
    lags: int = 30
    sigma: float = 0.025
    noise: str = "additive"


@dataclass(frozen=True)
class SvdSettings:
    energy: float = 0.999
    rank: int | None = None


@dataclass(frozen=True)
class UpdateSettings:
    positions: int = 8
    ensemble: int = 20
    perturbation: str = "heater_scale"
    value: float = 1.02


@dataclass(frozen=True)
class RunSettings:
    seed: int = 0
    out_dir: str = "runs/out"
    solver: SolverConfig = field(default_factory=SolverConfig)
    channels: ChannelSettings = field(default_factory=ChannelSettings)
    sensing: SensingSettings = field(default_factory=SensingSettings)
    svd: SvdSettings = field(default_factory=SvdSettings)
    train: TrainConfig = field(default_factory=TrainConfig)
    update: UpdateSettings = field(default_factory=UpdateSettings)


_SOLVER_TUPLE_KEYS = {
    "heater_columns", "heater_rows", "obstacle_columns", "obstacle_rows",
    "top_strip", "recirculation_columns",
}

_SCHEMA: dict[str, dict[str, type | str]] = {
    "run": {"seed": int, "out_dir": str},
    "solver": {
        f.name: ("tuple" if f.name in _SOLVER_TUPLE_KEYS else f.type)
        for f in dc_fields(SolverConfig)
        if f.name != "seed"  # the master seed in [run] is the only seed knob
    },
    "channels": {f.name: f.type for f in dc_fields(ChannelSettings)},
    "sensing": {f.name: f.type for f in dc_fields(SensingSettings)},
    "svd": {"energy": float, "rank": int},
    "train": {
        f.name: f.type for f in dc_fields(TrainConfig) if f.name != "seed"
    },
    "update": {f.name: f.type for f in dc_fields(UpdateSettings)},
}


def _convert(section: str, key: str, raw: str):
    kind = _SCHEMA[section][key]
    try:
        if kind == "tuple":
            value = _parse_int_tuple(raw)
            if key == "top_strip" and not value:
                return None
            return value
        if kind in (int, "int"):
            return int(raw)
        if kind in (float, "float"):
            return float(raw)
        if kind in (str, "str"):
            return raw.strip()
        # dataclass field types arrive as strings under future annotations
        if "int" in str(kind):
            return int(raw)
        if "float" in str(kind):
            return float(raw)
        return raw.strip()
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r}: {exc}") from exc


def load_settings(path) -> RunSettings:
    """Parse and validate a configuration file into RunSettings."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    read = parser.read(path)
    if not read:
        raise ConfigError(f"cannot read config file {path}")
    values: dict[str, dict] = {name: {} for name in _SCHEMA}
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        for key, raw in parser.items(section):
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            values[section][key] = _convert(section, key, raw)

    seed = values["run"].get("seed", 0)
    env_seed = os.environ.get("SHRED_SEED")
    if env_seed is not None:
        try:
            seed = int(env_seed)
        except ValueError as exc:
            raise ConfigError(f"SHRED_SEED must be an integer, got {env_seed!r}") from exc

    try:
        solver = SolverConfig(**values["solver"], seed=seed)
        sensing = SensingSettings(**values["sensing"])
        train = TrainConfig(**values["train"])
        settings = RunSettings(
            seed=seed,
            out_dir=values["run"].get("out_dir", "runs/out"),
            solver=solver,
            channels=ChannelSettings(**values["channels"]),
            sensing=sensing,
            svd=SvdSettings(**values["svd"]),
            train=train,
            update=UpdateSettings(**values["update"]),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc
    if settings.sensing.channel not in ("ext", "reg"):
        raise ConfigError("sensing.channel must be 'ext' or 'reg'")
    if settings.sensing.noise not in ("additive", "multiplicative"):
        raise ConfigError("sensing.noise must be 'additive' or 'multiplicative'")
    return settings
