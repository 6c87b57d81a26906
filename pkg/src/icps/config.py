"""Experiment configuration: typed dataclasses backed by INI-style text.

Each section maps onto one dataclass. Values are parsed according to the
dataclass field type; power fields also accept a ``dBm`` or ``W`` suffix.
Environment variables ``ICPS_<SECTION>__<KEY>`` override file values.
"""

from __future__ import annotations

import configparser
import dataclasses
import io
import os
import re
from dataclasses import dataclass, field
from pathlib import Path

from .network import ConfigError, NetworkConfig, dbm_to_watt
from .plant import PlantParams

ENV_PREFIX = "ICPS_"
MODES = ("decoupled", "coupled")


@dataclass(frozen=True)
class EnvParams:
    mu1: float = 0.3
    mu2: float = 10.0
    mu3: float = 0.5
    # weight of the control users' QoS flags inside the mu3 term; 1.0 treats
    # all users alike, which leaves the allocator indifferent between serving
    # the control user and one more broadband user when subcarriers run out
    urllc_weight: float = 2.0
    episode_len: int = 300
    init_range: float = 0.05
    train_mode: str = "decoupled"
    eval_mode: str = "coupled"
    observe_held_force: bool = True
    power_decades: float = 8.0

    def __post_init__(self):
        if min(self.mu1, self.mu2, self.mu3, self.urllc_weight) < 0:
            raise ConfigError("env.mu1/mu2/mu3/urllc_weight must be nonnegative")
        if self.episode_len < 1:
            raise ConfigError("env.episode_len must be positive")
        if not 0 <= self.init_range < 0.261:
            raise ConfigError("env.init_range must lie in [0, 0.261)")
        for m in (self.train_mode, self.eval_mode):
            if m not in MODES:
                raise ConfigError(f"env mode must be one of {MODES}, got {m!r}")
        if not self.power_decades > 0:
            raise ConfigError("env.power_decades must be positive")


@dataclass(frozen=True)
class Hyper:
    gamma: float = 0.99
    # discount of the allocator's critic (its reward is per-step); negative
    # means "same as gamma"
    gamma_first: float = 0.0
    xi: float = 0.95
    clip_eps: float = 0.2
    alpha3: float = 0.1
    rho: float = 0.05
    batch_base: int = 64
    batch_lambda: int = 32
    batch_first: int = 64
    epochs: int = 10
    horizon: int = 2048
    total_steps: int = 200_000
    min_iterations: int = 60
    hidden: int = 64
    lr_actor: float = 3e-4
    lr_critic: float = 3e-4
    lr_stability: float = 3e-4
    lr_lambda: float = 5e-4
    lambda_init: float = 0.0
    optimizer: str = "adam"
    max_grad_norm: float = 0.5
    init_log_std: float = -0.5

    @property
    def gamma1(self) -> float:
        return self.gamma if self.gamma_first < 0 else self.gamma_first

    def __post_init__(self):
        if not 0 <= self.gamma < 1:
            raise ConfigError("train.gamma must lie in [0, 1)")
        if not self.gamma_first < 1:
            raise ConfigError("train.gamma_first must be below 1")
        if not 0 <= self.xi <= 1:
            raise ConfigError("train.xi must lie in [0, 1]")
        if not self.clip_eps > 0 or not self.alpha3 > 0 or not self.rho > 0:
            raise ConfigError("train.clip_eps, alpha3 and rho must be positive")
        for name in ("batch_base", "batch_lambda", "batch_first", "epochs", "horizon", "hidden"):
            if getattr(self, name) < 1:
                raise ConfigError(f"train.{name} must be positive")
        if self.total_steps < 0 or self.min_iterations < 0:
            raise ConfigError("train.total_steps and min_iterations must be nonnegative")
        for name in ("lr_actor", "lr_critic", "lr_stability", "lr_lambda"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"train.{name} must be positive")
        if self.lambda_init < 0:
            raise ConfigError("train.lambda_init must be nonnegative")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError("train.optimizer must be 'adam' or 'sgd'")


@dataclass(frozen=True)
class BaselineParams:
    q_diag: tuple = (1.0, 1.0, 10.0, 10.0)
    r: float = 1.0
    sigma: float = 0.1
    eps0: float = 1e-3

    def __post_init__(self):
        if len(self.q_diag) != 4 or min(self.q_diag) < 0:
            raise ConfigError("baseline.q_diag needs 4 nonnegative entries")
        if not self.r > 0:
            raise ConfigError("baseline.r must be positive")
        if self.sigma < 0 or self.eps0 < 0:
            raise ConfigError("baseline.sigma and eps0 must be nonnegative")


@dataclass(frozen=True)
class EvalParams:
    episodes: int = 50
    uub_T: int = 100
    uub_fraction: float = 0.9
    seed_offset: int = 1_000_000

    def __post_init__(self):
        if self.episodes < 0 or self.uub_T < 0:
            raise ConfigError("eval.episodes and eval.uub_T must be nonnegative")
        if not 0 <= self.uub_fraction <= 1:
            raise ConfigError("eval.uub_fraction must lie in [0, 1]")


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    plant: PlantParams = field(default_factory=PlantParams)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    env: EnvParams = field(default_factory=EnvParams)
    train: Hyper = field(default_factory=Hyper)
    baseline: BaselineParams = field(default_factory=BaselineParams)
    eval: EvalParams = field(default_factory=EvalParams)


SECTIONS = ("plant", "network", "env", "train", "baseline", "eval")
_POWER_FIELDS = {("network", "P_bs_max"), ("network", "P_cst"), ("network", "N0")}
_UNIT = re.compile(r"^\s*([-+0-9.eE]+)\s*(dBm|W)\s*$")


def _parse(section: str, key: str, typ, text: str):
    text = text.strip()
    try:
        if (section, key) in _POWER_FIELDS:
            m = _UNIT.match(text)
            if m:
                value = float(m.group(1))
                return dbm_to_watt(value) if m.group(2) == "dBm" else value
            return float(text)
        if typ in (bool, "bool"):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if typ in (int, "int"):
            return int(text)
        if typ in (float, "float"):
            return float(text)
        if typ in (tuple, "tuple"):
            return tuple(float(v) for v in text.replace(",", " ").split())
        return text
    except ValueError:
        raise ConfigError(f"{section}.{key}: cannot parse {text!r} as {typ}") from None


def _field_types(cls):
    return {f.name: f.type for f in dataclasses.fields(cls)}


def _section_classes():
    return {f.name: f.default_factory for f in dataclasses.fields(ExperimentConfig)
            if f.name in SECTIONS}


def from_mapping(data: dict, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Build a config from ``{section: {key: text}}``; unknown keys are errors."""
    base = base or ExperimentConfig()
    classes = _section_classes()
    updates = {}
    for section, values in data.items():
        if section == "experiment":
            for key, text in values.items():
                if key != "seed":
                    raise ConfigError(f"experiment.{key}: unknown key")
                updates["seed"] = _parse(section, key, int, text)
            continue
        if section not in classes:
            raise ConfigError(f"unknown section [{section}]")
        current = getattr(base, section)
        types = _field_types(type(current))
        kw = {}
        for key, text in values.items():
            if key not in types:
                raise ConfigError(f"{section}.{key}: unknown key")
            kw[key] = _parse(section, key, types[key], text)
        try:
            updates[section] = dataclasses.replace(current, **kw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
    return dataclasses.replace(base, **updates)


def env_overrides(environ=None) -> dict:
    environ = os.environ if environ is None else environ
    out: dict = {}
    for name, value in environ.items():
        if not name.startswith(ENV_PREFIX) or "__" not in name:
            continue
        section, key = name[len(ENV_PREFIX):].split("__", 1)
        section = section.lower()
        if section not in SECTIONS and section != "experiment":
            continue
        classes = _section_classes()
        if section in classes:
            # keys are case sensitive in the dataclasses (N_e, P_cst, ...)
            names = {n.lower(): n for n in _field_types(classes[section]())}
            key = names.get(key.lower(), key)
        else:
            key = key.lower()
        out.setdefault(section, {})[key] = value
    return out


def loads(text: str, environ=None) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    parser.read_string(text)
    data = {s: dict(parser.items(s)) for s in parser.sections()}
    cfg = from_mapping(data)
    return from_mapping(env_overrides(environ), cfg)


def load(path, environ=None) -> ExperimentConfig:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"config file not found: {p}")
    return loads(p.read_text(), environ)


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return " ".join(repr(float(v)) for v in value)
    return str(value)


def dumps(cfg: ExperimentConfig) -> str:
    """Resolved snapshot; powers in watts, floats in round-trip repr."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    parser["experiment"] = {"seed": str(cfg.seed)}
    for section in SECTIONS:
        obj = getattr(cfg, section)
        parser[section] = {f.name: _fmt(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def with_overrides(cfg: ExperimentConfig, **sections) -> ExperimentConfig:
    """``with_overrides(cfg, train={"total_steps": 0})`` convenience for code/tests."""
    updates = {}
    for section, kw in sections.items():
        if section == "seed":
            updates["seed"] = kw
            continue
        updates[section] = dataclasses.replace(getattr(cfg, section), **kw)
    return dataclasses.replace(cfg, **updates)
