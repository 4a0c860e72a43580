"""Experiment configuration: TOML files and run manifests.

A config file has an optional top-level ``seed`` and the tables ``[env]``,
``[train]``, ``[robot]`` and ``[experiment.*]``. ``robot`` is either an inline
model table or ``robot = "file.toml"`` (relative to the config file). A run
manifest (``manifest.json``) is accepted in place of a TOML file; its
``config`` entry holds the fully resolved tables.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import tomli

from ..dynamics import RobotModel, default_biped, model_from_dict, model_to_dict
from ..env import EnvConfig, env_config_from_dict
from ..errors import ConfigError
from ..ppo import TrainConfig, train_config_from_dict

PROTOCOLS = ("velocity-sweep", "max-velocity", "push-sweep", "slip", "jump-eval", "train", "play")


def _check_known(cls, data: dict) -> dict:
    names = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in names:
            raise ConfigError(f"{cls.__name__}: unknown key {key!r}")
    return {k: tuple(v) if isinstance(v, list) else v for k, v in data.items()}


@dataclass(frozen=True)
class ExperimentSpec:
    """Velocity sweep and max-velocity search settings."""

    protocol: str = "velocity-sweep"
    v_min: float = -1.0  # m/s
    v_max: float = 1.0
    step: float = 0.1
    repetitions: int = 3
    duration: float = 8.0  # s per trial
    window: float = 0.5  # s, steady-state smoothing window
    init_noise: tuple[float, float] = (0.02, 0.05)  # joint angle (rad), base velocity (m/s)
    zero_speed_tol: float = 0.05  # m/s, balance criterion at zero command

    def __post_init__(self):
        if self.protocol not in PROTOCOLS:
            raise ConfigError(f"unknown protocol {self.protocol!r}")
        if not self.step > 0:
            raise ConfigError("command step must be positive")
        if self.repetitions < 1:
            raise ConfigError("need at least one repetition per command")
        if self.v_max < self.v_min:
            raise ConfigError("v_max must not be below v_min")
        if self.duration <= 0 or self.window <= 0:
            raise ConfigError("duration and window must be positive")

    def grid(self) -> list[float]:
        n = int(math.floor((self.v_max - self.v_min) / self.step + 1e-9))
        return [round(self.v_min + k * self.step, 10) + 0.0 for k in range(n + 1)]


@dataclass(frozen=True)
class PushSpec:
    angles: tuple[float, ...] = (0.0, 180.0)  # deg; 0 pushes the back (towards +x)
    forces: tuple[float, ...] = tuple(0.5 * k for k in range(1, 41))  # N, tried in order
    duration: float = 0.2  # s, rectangular profile
    push_time: float = 2.0  # s after the trial starts
    recovery: float = 3.0  # s the robot must stay up after the push ends
    command: float = 0.0
    repetitions: int = 3
    init_noise: tuple[float, float] = (0.02, 0.05)

    def __post_init__(self):
        if any(not 0.0 <= a < 360.0 for a in self.angles):
            raise ConfigError("push angles must lie in [0, 360)")
        if any(b <= a for a, b in zip(self.forces, self.forces[1:])):
            raise ConfigError("push force schedule must be strictly increasing")
        if any(f < 0 for f in self.forces):
            raise ConfigError("push forces must be non-negative")
        if self.duration <= 0 or self.push_time <= 0 or self.recovery <= 0:
            raise ConfigError("push timing must be positive")
        if self.repetitions < 1:
            raise ConfigError("need at least one repetition per push level")


@dataclass(frozen=True)
class SlipSpec:
    command: float = 0.3
    event_time: float = 2.0  # s
    mu_nominal: float = 1.0
    mu_low: float = 0.05
    slip_duration: float = 0.3  # s
    observe: float = 3.0  # s after the event
    seeds: int = 20
    init_noise: tuple[float, float] = (0.02, 0.05)

    def __post_init__(self):
        if self.mu_low < 0 or self.mu_nominal < 0:
            raise ConfigError("friction coefficients must be non-negative")
        if self.slip_duration < 0 or self.observe <= 0 or self.event_time < 0:
            raise ConfigError("slip timing must be non-negative")
        if self.seeds < 1:
            raise ConfigError("need at least one seed")


@dataclass(frozen=True)
class JumpSpec:
    command: float = 0.0
    duration: float = 15.0
    min_flight: float = 0.05  # s, both feet airborne
    max_stance: float = 0.5  # s between landing and next take-off within a jump series
    init_noise: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.duration <= 0 or self.min_flight <= 0 or self.max_stance <= 0:
            raise ConfigError("jump timing must be positive")


@dataclass(frozen=True)
class PlaySpec:
    command: float = 0.3
    duration: float = 8.0
    init_noise: tuple[float, float] = (0.0, 0.0)
    window: float = 0.5


_SPECS = {"velocity": ExperimentSpec, "push": PushSpec, "slip": SlipSpec, "jump": JumpSpec, "play": PlaySpec}


@dataclass(frozen=True)
class ExperimentConfig:
    env: EnvConfig = field(default_factory=EnvConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    model: RobotModel = field(default_factory=default_biped)
    velocity: ExperimentSpec = field(default_factory=ExperimentSpec)
    push: PushSpec = field(default_factory=PushSpec)
    slip: SlipSpec = field(default_factory=SlipSpec)
    jump: JumpSpec = field(default_factory=JumpSpec)
    play: PlaySpec = field(default_factory=PlaySpec)
    seed: int = 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "seed": self.seed,
            "env": self.env.to_dict(),
            "train": self.train.to_dict(),
            "robot": model_to_dict(self.model),
            "experiment": {name: dataclasses.asdict(getattr(self, name)) for name in _SPECS},
        }

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return dataclasses.replace(self, seed=int(seed), train=dataclasses.replace(self.train, seed=int(seed)))

    def replace(self, section: str, **kw) -> "ExperimentConfig":
        return dataclasses.replace(self, **{section: dataclasses.replace(getattr(self, section), **kw)})


def config_from_dict(data: dict, base_dir: Path | None = None) -> ExperimentConfig:
    known = {"seed", "env", "train", "robot", "experiment"}
    for key in data:
        if key not in known:
            raise ConfigError(f"unknown config section {key!r}")
    kw: dict[str, Any] = {}
    if "env" in data:
        kw["env"] = env_config_from_dict(data["env"])
    train = dict(data.get("train", {}))
    if "seed" in data:
        kw["seed"] = int(data["seed"])
        train.setdefault("seed", int(data["seed"]))
    kw["train"] = train_config_from_dict(train)
    robot = data.get("robot")
    if isinstance(robot, str):
        path = Path(robot)
        if not path.is_absolute() and base_dir is not None:
            path = base_dir / path
        kw["model"] = model_from_dict(_read_toml(path).get("robot", {}))
    elif robot is not None:
        kw["model"] = model_from_dict(robot)
    for name, val in data.get("experiment", {}).items():
        if name not in _SPECS:
            raise ConfigError(f"unknown experiment table {name!r}")
        kw[name] = _SPECS[name](**_check_known(_SPECS[name], val))
    return ExperimentConfig(**kw)


def _read_toml(path: Path) -> dict:
    try:
        with Path(path).open("rb") as fh:
            return tomli.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def load_config(path) -> ExperimentConfig:
    """Read a TOML config or a run manifest."""
    path = Path(path)
    if path.suffix == ".json":
        try:
            data = json.loads(path.read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        if "config" in data:
            data = data["config"]
        return config_from_dict(data, path.parent)
    return config_from_dict(_read_toml(path), path.parent)
