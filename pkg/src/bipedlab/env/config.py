"""Environment configuration: rewards, constraints, randomization, episode settings.

Every dataclass here round-trips through plain dicts so configs can live in
TOML files and be written back into run manifests.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Any

from ..dynamics import ActuatorModel, ContactModel
from ..errors import ConfigError

GAIT_MODES = ("walking", "jumping", "none")


@dataclass(frozen=True)
class RewardParams:
    sigma_lin: float = 0.25  # m/s
    sigma_yaw: float = 0.5  # rad/s
    w_lin: float = 1.0
    w_yaw: float = 0.5

    def __post_init__(self):
        if self.sigma_lin <= 0 or self.sigma_yaw <= 0:
            raise ConfigError("reward sigmas must be positive")


@dataclass(frozen=True)
class ConstraintConfig:
    """Limits and termination settings for the constraint table.

    Limits are configuration defaults chosen for the desk-scale robot, not
    measured values.
    """

    gait: str = "walking"
    foot_force: float = 40.0  # N
    torque: float = 2.2  # N m, checked on the PD motor torque
    joint_velocity: float = 20.0  # rad/s
    joint_acceleration: float = 1500.0  # rad/s^2
    base_orientation: float = 0.5  # rad
    hip: float = 1.2  # rad
    knee: float = 1.8  # rad
    air_time: float = 0.2  # s, desired minimum swing time
    p_max_soft: float = 0.25
    p_max_gait: float = 0.25
    decay: float = 0.999
    enabled: tuple[str, ...] = (
        "knee_contact", "base_contact", "upside_down", "foot_force", "torque",
        "joint_velocity", "joint_acceleration", "base_orientation", "hip", "knee", "gait", "air_time",
    )

    def __post_init__(self):
        if self.gait not in GAIT_MODES:
            raise ConfigError(f"unknown gait mode {self.gait!r}; expected one of {GAIT_MODES}")
        for p in (self.p_max_soft, self.p_max_gait):
            if not 0.0 < p <= 1.0:
                raise ConfigError("p_max must lie in (0, 1]")
        if not 0.0 < self.decay <= 1.0:
            raise ConfigError("running-max decay must lie in (0, 1]")


@dataclass(frozen=True)
class RandomizationConfig:
    """Training-time randomization; one entry per randomized quantity.

    Ranges are uniform ``(low, high)`` unless noted. ``base_yaw`` is sampled
    and reported but has no effect in the sagittal model.
    """

    enabled: bool = True
    friction: tuple[float, float] = (0.4, 1.5)
    height_noise: tuple[float, float] = (0.0, 0.02)  # m, quantized to height_step
    height_step: float = 0.005
    terrain_cell: float = 0.1
    terrain_length: float = 40.0
    mass_scale: tuple[float, float] = (0.8, 1.2)
    inertia_scale: tuple[float, float] = (0.8, 1.2)
    base_com: tuple[float, float] = (-0.02, 0.02)  # m, x and z independently
    joint_friction: tuple[float, float] = (0.01, 0.1)  # Coulomb, N m
    base_position: tuple[float, float] = (-0.5, 0.5)  # m
    base_yaw: tuple[float, float] = (-math.pi, math.pi)
    base_lin_vel: tuple[float, float] = (-0.3, 0.3)  # m/s, x and z
    base_ang_vel: tuple[float, float] = (-0.1, 0.1)  # rad/s
    joint_scale: tuple[float, float] = (0.9, 1.1)
    delay: tuple[int, int] = (0, 2)  # physics steps, inclusive integers
    pushes: bool = True
    push_interval: tuple[float, float] = (4.0, 8.0)  # s between pushes
    push_lin_x: tuple[float, float] = (-0.5, 0.5)  # m/s
    push_lin_z: tuple[float, float] = (-0.1, 0.1)  # m/s
    push_ang: tuple[float, float] = (-0.5, 0.5)  # rad/s
    observation_noise: bool = True
    noise_ang_vel: tuple[float, float] = (-0.2, 0.2)  # rad/s
    noise_gravity_std: float = 0.05
    noise_gravity_bias: tuple[float, float] = (0.0, 0.05)
    noise_joint_pos: tuple[float, float] = (-0.01, 0.01)  # rad
    noise_joint_pos_bias: tuple[float, float] = (0.0, 0.05)  # rad
    noise_joint_vel: tuple[float, float] = (-1.5, 1.5)  # rad/s

    def __post_init__(self):
        for f in dataclasses.fields(self):
            val = getattr(self, f.name)
            if isinstance(val, tuple) and len(val) == 2 and not val[0] <= val[1]:
                raise ConfigError(f"randomization range {f.name} has low > high")
        if self.height_step <= 0 or self.terrain_cell <= 0:
            raise ConfigError("height_step and terrain_cell must be positive")


@dataclass(frozen=True)
class EnvConfig:
    decimation: int = 20
    dt: float = 1e-3
    episode_length: float = 10.0  # s
    action_scale: float = 0.5
    action_clip: float = 4.0
    command_range: tuple[float, float] = (-1.0, 1.0)
    command_resample: float = 5.0  # s, 0 disables mid-episode resampling
    stochastic_termination: bool = True
    nominal_friction: float = 1.0
    nominal_delay: int = 1
    obs_scale_ang_vel: float = 0.25
    obs_scale_joint_vel: float = 0.05
    reward: RewardParams = field(default_factory=RewardParams)
    constraints: ConstraintConfig = field(default_factory=ConstraintConfig)
    randomization: RandomizationConfig = field(default_factory=RandomizationConfig)
    actuator: ActuatorModel = field(default_factory=lambda: ActuatorModel(coulomb=0.05))
    contact: ContactModel = field(default_factory=ContactModel)

    def __post_init__(self):
        lo, hi = self.command_range
        if not (-1.0 <= lo <= hi <= 1.0):
            raise ConfigError("command range must lie within [-1, 1] m/s")
        if self.decimation < 1 or self.dt <= 0 or self.episode_length <= 0:
            raise ConfigError("decimation, dt and episode_length must be positive")

    @property
    def policy_dt(self) -> float:
        return self.dt * self.decimation

    @property
    def max_steps(self) -> int:
        return int(round(self.episode_length / self.policy_dt))

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def constraint_hash(self) -> str:
        """Stable digest of the constraint set (used to guard checkpoint reuse)."""
        blob = json.dumps(dataclasses.asdict(self.constraints), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


_NESTED = {
    "reward": RewardParams,
    "constraints": ConstraintConfig,
    "randomization": RandomizationConfig,
    "actuator": ActuatorModel,
    "contact": ContactModel,
}


def _build(cls, data: dict):
    names = {f.name: f for f in dataclasses.fields(cls)}
    kw = {}
    for key, val in data.items():
        if key not in names:
            raise ConfigError(f"{cls.__name__}: unknown key {key!r}")
        if key in _NESTED and cls is EnvConfig:
            val = _build(_NESTED[key], val)
        elif isinstance(val, list):
            val = tuple(val)
        kw[key] = val
    return cls(**kw)


def env_config_from_dict(data: dict) -> EnvConfig:
    return _build(EnvConfig, data)
