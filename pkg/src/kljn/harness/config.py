"""TOML experiment configuration.

A config is a handful of top-level keys (experiment, master_seed, ...)
plus one table per module.  Every table maps onto a frozen dataclass;
missing keys take the dataclass default and unknown keys are errors.
Validation runs at parse time by building the module objects once.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import tomli
import tomli_w

from ..signal import BOLTZMANN

EXPERIMENTS = (
    "kljn-exchange",
    "attack-transient",
    "defend-rrrt",
    "amplify",
    "continuity",
    "psd-check",
    "scaling-demo",
)


class ConfigError(ValueError):
    """Malformed or invalid configuration."""


@dataclass(frozen=True)
class PhysicsSection:
    normalized_units: bool = True  # k = 1/4, so T = 1 gives 4kT = 1
    k: float = BOLTZMANN

    @property
    def k_eff(self):
        return 0.25 if self.normalized_units else self.k


@dataclass(frozen=True)
class CableSection:
    model: str = "line"  # line | ladder | ideal
    n_segments: int = 32
    delay: float = 6e-5
    impedance: float = 300.0
    total_resistance: float = 0.0
    series_resistance: float = 0.0
    series_inductance: float = 0.0
    shunt_capacitance: float = 0.0
    tap_nodes: tuple = ()


@dataclass(frozen=True)
class ProtocolSection:
    R_L: float = 1e3
    R_H: float = 1e4
    T_eff: float = 1.0
    bandwidth: float = 1e3
    bit_period: float = 0.1
    switching_mode: str = "abrupt"
    ramp_time: float = 0.0
    fine_window: float = 5e-5


@dataclass(frozen=True)
class RrrtSection:
    R_min: float = 3e3
    R_max: float = 4e3
    T_min: float = 0.1
    T_max: float = 10.0
    resolution_threshold: float = 0.02


@dataclass(frozen=True)
class AttackSection:
    tap_node: int = 1
    window_fraction: float = 0.1
    statistic: str = "mean_square"
    n_training: int = 300


@dataclass(frozen=True)
class PrivacySection:
    p0: float = 0.75
    stages: int = 4
    n_bits: int = 1 << 20


@dataclass(frozen=True)
class ContinuitySection:
    U0: float = 1.0
    T: float = 1.0
    tau: float = 0.05
    bandwidth: float = 1e3
    lo_decade: int = -4
    hi_decade: int = 1
    per_decade: int = 5
    n_trials: int = 1000


@dataclass(frozen=True)
class PsdSection:
    spectral_density: float = 1e-12
    bandwidth: float = 1e4
    dt: float = 2.5e-5
    n_samples: int = 1 << 20
    segment_len: int = 4096


@dataclass(frozen=True)
class ScalingSection:
    resistances: tuple = (1e3, 4e3)
    capacitance: float = 1e-7
    T_eff: float = 1.0
    bandwidth: float = 1e3
    window_fraction: float = 0.1  # window as a fraction of the smallest R*C


SECTIONS = {
    "physics": PhysicsSection,
    "cable": CableSection,
    "protocol": ProtocolSection,
    "rrrt": RrrtSection,
    "attack": AttackSection,
    "privacy": PrivacySection,
    "continuity": ContinuitySection,
    "psd": PsdSection,
    "scaling": ScalingSection,
}


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    master_seed: int = 0
    n_trials: int = 0  # 0 means the experiment's own default
    n_chains: int = 8
    workers: int = 1
    output: str = ""
    physics: PhysicsSection = field(default_factory=PhysicsSection)
    cable: CableSection = field(default_factory=CableSection)
    protocol: ProtocolSection = field(default_factory=ProtocolSection)
    rrrt: RrrtSection = field(default_factory=RrrtSection)
    attack: AttackSection = field(default_factory=AttackSection)
    privacy: PrivacySection = field(default_factory=PrivacySection)
    continuity: ContinuitySection = field(default_factory=ContinuitySection)
    psd: PsdSection = field(default_factory=PsdSection)
    scaling: ScalingSection = field(default_factory=ScalingSection)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


_TOP_LEVEL = ("experiment", "master_seed", "n_trials", "n_chains", "workers", "output")


def _coerce(cls, name, key, value):
    fld = {f.name: f for f in dataclasses.fields(cls)}[key]
    default = fld.default if fld.default is not dataclasses.MISSING else None
    where = f"{name}.{key}" if name else key
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where} must be true or false")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where} must be an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where} must be a number")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where} must be a string")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, list):
            raise ConfigError(f"{where} must be an array")
        return tuple(value)
    return value


def _section(cls, name, table):
    if not isinstance(table, dict):
        raise ConfigError(f"[{name}] must be a table")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(table) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in [{name}]: {', '.join(unknown)}")
    return cls(**{k: _coerce(cls, name, k, v) for k, v in table.items()})


def parse_config(text):
    """Parse and validate TOML text into an :class:`ExperimentConfig`."""
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"TOML syntax error: {exc}") from None
    unknown = sorted(set(data) - set(_TOP_LEVEL) - set(SECTIONS))
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
    if "experiment" not in data:
        raise ConfigError("missing required key 'experiment'")
    top = {}
    for key in _TOP_LEVEL:
        if key in data:
            top[key] = _coerce(ExperimentConfig, "", key, data[key])
    sections = {name: _section(cls, name, data.get(name, {})) for name, cls in SECTIONS.items()}
    config = ExperimentConfig(**top, **sections)
    validate(config)
    return config


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def config_to_dict(config):
    out = {key: getattr(config, key) for key in _TOP_LEVEL}
    for name in SECTIONS:
        out[name] = {k: (list(v) if isinstance(v, tuple) else v)
                     for k, v in dataclasses.asdict(getattr(config, name)).items()}
    return out


def serialize_config(config):
    """TOML text that parses back to an equal config."""
    return tomli_w.dumps(config_to_dict(config))


def validate(config):
    """Build every module object once so invalid values fail here, not mid-run."""
    from . import experiments

    if config.experiment not in EXPERIMENTS:
        raise ConfigError(
            f"unknown experiment {config.experiment!r}; choose from {', '.join(EXPERIMENTS)}"
        )
    for key in ("n_trials", "master_seed"):
        if getattr(config, key) < 0:
            raise ConfigError(f"{key} must be >= 0")
    for key in ("n_chains", "workers"):
        if getattr(config, key) < 1:
            raise ConfigError(f"{key} must be >= 1")
    try:
        experiments.build_kljn_params(config)
        experiments.build_rrrt_params(config)
        experiments.build_attack(config)
        experiments.build_dc_scenario(config)
        experiments.build_continuity_grid(config)
        experiments.check_sections(config)
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None
