"""TOML run configuration.

A file looks like::

    output_dir = "out/lv"
    plot = true

    [system]
    preset = "lv"            # any field below overrides the preset
    # params = { r_x = 0.933 }
    # sample_dt = 1.0
    # substeps = 1
    # observed = [0]

    [simulate]
    seed = 0
    n_keep = 1000
    n_transient = 1000

    [train]
    learning_rate = 1e-3
    patience = 200

    [experiment]
    train_sizes = [50]
    delays = [1, 2, 3, 4]
    hidden_sizes = [2]
    replicates = 20

    [oracle]
    delays = [1, 2, 3, 4]

Unknown keys raise ConfigError naming the offending key.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import tomli

from .bench import ExperimentConfig
from .dynamics import PRESETS, SystemSpec
from .errors import ConfigError
from .nets import TrainConfig

__all__ = ["RunConfig", "SimulateConfig", "OracleConfig", "load_config", "parse_config", "build_system"]


@dataclass(frozen=True)
class SimulateConfig:
    seed: int = 0
    n_keep: int = 1000
    n_transient: int = 1000


@dataclass(frozen=True)
class OracleConfig:
    delays: tuple[int, ...] = (1, 2, 3, 4, 5, 6, 7, 8)
    seed: int = 0
    n_transient: int = 10000
    n_fit: int = 10000
    n_eval: int = 10000
    max_eval_points: int | None = None

    def __post_init__(self):
        if not self.delays or any(d < 1 for d in self.delays):
            raise ValueError("delays: every d must be >= 1")


@dataclass(frozen=True)
class RunConfig:
    system_name: str = "lv"
    system: SystemSpec = field(default_factory=lambda: PRESETS["lv"])
    simulate: SimulateConfig = field(default_factory=SimulateConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)
    oracle: OracleConfig = field(default_factory=OracleConfig)
    output_dir: str = "out"
    plot: bool = True


_SYSTEM_KEYS = {"preset", "params", "sample_dt", "substeps", "observed"}
_TOP_KEYS = {"output_dir", "plot", "system", "simulate", "train", "experiment", "oracle"}
_TUPLE_FIELDS = {"train_sizes", "delays", "hidden_sizes", "horizons", "architectures", "h_range"}


def _field_names(cls) -> set[str]:
    return {f.name for f in dataclasses.fields(cls)}


def _check_keys(section: str, table: dict, allowed: set[str]) -> None:
    for key in table:
        if key not in allowed:
            where = f"{section}.{key}" if section else key
            raise ConfigError(f"unknown config key {where!r}")


def _tupled(table: dict) -> dict:
    return {k: tuple(v) if k in _TUPLE_FIELDS and isinstance(v, list) else v for k, v in table.items()}


def build_system(table: dict) -> tuple[str, SystemSpec]:
    """Preset name plus overrides -> (name, SystemSpec)."""
    _check_keys("system", table, _SYSTEM_KEYS)
    name = table.get("preset", "lv")
    if name not in PRESETS:
        raise ConfigError(f"system.preset: unknown system {name!r}; choose from {sorted(PRESETS)}")
    base = PRESETS[name].to_dict()
    params = table.get("params", {})
    if not isinstance(params, dict):
        raise ConfigError("system.params must be a table")
    _check_keys("system.params", params, set(base["params"]))
    base["params"].update(params)
    for key in ("sample_dt", "substeps", "observed"):
        if key in table:
            base[key] = table[key]
    try:
        spec = SystemSpec.from_dict(base)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"system: {exc}") from None
    return name, spec


def _make(cls, section: str, table: dict, **extra):
    _check_keys(section, table, _field_names(cls) - set(extra))
    try:
        return cls(**_tupled(table), **extra)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{section}: {exc}") from None


def parse_config(data: dict) -> RunConfig:
    """Validate a decoded TOML document."""
    _check_keys("", data, _TOP_KEYS)
    for key in ("system", "simulate", "train", "experiment", "oracle"):
        if key in data and not isinstance(data[key], dict):
            raise ConfigError(f"{key!r} must be a table")
    name, spec = build_system(data.get("system", {}))
    train = _make(TrainConfig, "train", data.get("train", {}))
    exp_table = dict(data.get("experiment", {}))
    if "system" in exp_table:
        raise ConfigError("unknown config key 'experiment.system' (use the [system] table)")
    system_arg = name if spec == PRESETS[name] else spec
    experiment = _make(ExperimentConfig, "experiment", exp_table, system=system_arg, train=train)
    return RunConfig(
        system_name=name,
        system=spec,
        simulate=_make(SimulateConfig, "simulate", data.get("simulate", {})),
        train=train,
        experiment=experiment,
        oracle=_make(OracleConfig, "oracle", data.get("oracle", {})),
        output_dir=str(data.get("output_dir", "out")),
        plot=bool(data.get("plot", True)),
    )


def load_config(path) -> RunConfig:
    try:
        with open(path, "rb") as fh:
            data = tomli.load(fh)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return parse_config(data)

