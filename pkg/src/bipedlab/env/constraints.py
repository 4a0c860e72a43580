"""Constraint costs and the termination probability derived from them.

Every constraint produces one or more cost columns ``c``; a column is
violated when ``c > 0``. Costs are evaluated on whole batches at once, so each
input array carries a leading environment axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from ..errors import ConfigError
from .config import GAIT_MODES, ConstraintConfig


class Kind(str, Enum):
    KNEE_CONTACT = "knee_contact"
    BASE_CONTACT = "base_contact"
    UPSIDE_DOWN = "upside_down"
    FOOT_FORCE = "foot_force"
    TORQUE = "torque"
    JOINT_VELOCITY = "joint_velocity"
    JOINT_ACCELERATION = "joint_acceleration"
    BASE_ORIENTATION = "base_orientation"
    HIP = "hip"
    KNEE = "knee"
    GAIT = "gait"
    AIR_TIME = "air_time"


HARD_KINDS = (Kind.KNEE_CONTACT, Kind.BASE_CONTACT, Kind.UPSIDE_DOWN)


@dataclass(frozen=True)
class ConstraintSpec:
    kind: Kind
    limit: float = 0.0
    hard: bool = False
    p_max: float = 0.25
    gait: str = "walking"

    def __post_init__(self):
        if not 0.0 < self.p_max <= 1.0:
            raise ConfigError(f"{self.kind.value}: p_max must lie in (0, 1]")
        if self.hard and self.p_max != 1.0:
            raise ConfigError(f"{self.kind.value}: hard constraints need p_max = 1")
        if self.kind is Kind.GAIT and self.gait not in ("walking", "jumping"):
            raise ConfigError(f"unknown gait mode {self.gait!r}")


def build_specs(cfg: ConstraintConfig) -> list[ConstraintSpec]:
    """Translate a :class:`ConstraintConfig` into the ordered list of enabled specs."""
    if cfg.gait not in GAIT_MODES:
        raise ConfigError(f"unknown gait mode {cfg.gait!r}")
    known = {k.value for k in Kind}
    for name in cfg.enabled:
        if name not in known:
            raise ConfigError(f"unknown constraint {name!r}")
    limits = {
        Kind.FOOT_FORCE: cfg.foot_force,
        Kind.TORQUE: cfg.torque,
        Kind.JOINT_VELOCITY: cfg.joint_velocity,
        Kind.JOINT_ACCELERATION: cfg.joint_acceleration,
        Kind.BASE_ORIENTATION: cfg.base_orientation,
        Kind.HIP: cfg.hip,
        Kind.KNEE: cfg.knee,
        Kind.AIR_TIME: cfg.air_time,
    }
    specs = []
    for kind in Kind:
        if kind.value not in cfg.enabled:
            continue
        if kind is Kind.GAIT:
            if cfg.gait == "none":
                continue
            specs.append(ConstraintSpec(kind, 0.0, False, cfg.p_max_gait, cfg.gait))
        elif kind in HARD_KINDS:
            specs.append(ConstraintSpec(kind, 0.0, True, 1.0))
        else:
            specs.append(ConstraintSpec(kind, limits[kind], False, cfg.p_max_soft))
    return specs


@dataclass
class ConstraintInputs:
    """Per-step quantities the constraint table reads (leading axis = env).

    ``hip`` and ``knee`` are joint angles of the hip and knee joints,
    ``touchdown`` flags feet that landed during the step and ``last_air`` holds
    the swing duration that ended at that landing.
    """

    knee_hit: np.ndarray  # (N, n_knees) 0/1
    base_hit: np.ndarray  # (N,) 0/1
    gravity_z: np.ndarray  # (N,) projected gravity z component
    foot_fn: np.ndarray  # (N, n_feet)
    foot_ft: np.ndarray  # (N, n_feet)
    in_contact: np.ndarray  # (N, n_feet) 0/1
    torque: np.ndarray  # (N, n_joints) motor torque
    qd: np.ndarray  # (N, n_joints)
    qdd: np.ndarray  # (N, n_joints)
    pitch: np.ndarray  # (N,)
    hip: np.ndarray  # (N, n_hips)
    knee: np.ndarray  # (N, n_knee_joints)
    touchdown: np.ndarray  # (N, n_feet) 0/1
    last_air: np.ndarray  # (N, n_feet)


@dataclass
class ConstraintReport:
    costs: np.ndarray  # (N, n_cols)
    names: list[str]
    hard: np.ndarray  # (n_cols,) bool
    p_max: np.ndarray  # (n_cols,)
    delta: np.ndarray | None = field(default=None)

    @property
    def violated(self) -> np.ndarray:
        return self.costs > 0.0


def gait_cost(n_contact, mode: str):
    """Walking wants exactly one foot down, jumping wants zero or two."""
    n = np.asarray(n_contact)
    if mode == "walking":
        return np.abs(n - 1).astype(float)
    if mode == "jumping":
        return np.mod(n, 2).astype(float)
    raise ConfigError(f"unknown gait mode {mode!r}")


def _columns(spec: ConstraintSpec, x: ConstraintInputs, sides, joints):
    k = spec.kind
    if k is Kind.KNEE_CONTACT:
        return x.knee_hit.astype(float), [f"knee_contact/{s}" for s in sides]
    if k is Kind.BASE_CONTACT:
        return (x.base_hit > 0).astype(float)[:, None], ["base_contact"]
    if k is Kind.UPSIDE_DOWN:
        return (x.gravity_z > 0.0).astype(float)[:, None], ["upside_down"]
    if k is Kind.FOOT_FORCE:
        return np.hypot(x.foot_fn, x.foot_ft) - spec.limit, [f"foot_force/{s}" for s in sides]
    if k is Kind.TORQUE:
        return np.abs(x.torque) - spec.limit, [f"torque/{j}" for j in joints]
    if k is Kind.JOINT_VELOCITY:
        return np.abs(x.qd) - spec.limit, [f"joint_velocity/{j}" for j in joints]
    if k is Kind.JOINT_ACCELERATION:
        return np.abs(x.qdd) - spec.limit, [f"joint_acceleration/{j}" for j in joints]
    if k is Kind.BASE_ORIENTATION:
        return (np.abs(x.pitch) - spec.limit)[:, None], ["base_orientation"]
    if k is Kind.HIP:
        return np.abs(x.hip) - spec.limit, [f"hip/{s}" for s in sides]
    if k is Kind.KNEE:
        return np.abs(x.knee) - spec.limit, [f"knee/{s}" for s in sides]
    if k is Kind.GAIT:
        n = np.sum(x.in_contact > 0, axis=1)
        return gait_cost(n, spec.gait)[:, None], ["gait"]
    if k is Kind.AIR_TIME:
        c = np.where(x.touchdown > 0, spec.limit - x.last_air, 0.0)
        return c, [f"air_time/{s}" for s in sides]
    raise ConfigError(f"unhandled constraint kind {k}")


def evaluate_constraints(inputs: ConstraintInputs, specs: list[ConstraintSpec],
                         sides=("left", "right"), joints=None) -> ConstraintReport:
    """Cost table for every enabled constraint; ``delta`` is left unset."""
    n = inputs.pitch.shape[0]
    if joints is None:
        joints = [str(j) for j in range(inputs.torque.shape[1])]
    cols, names, hard, p_max = [], [], [], []
    for spec in specs:
        c, nm = _columns(spec, inputs, sides, joints)
        cols.append(np.asarray(c, dtype=float).reshape(n, -1))
        names += nm
        hard += [spec.hard] * len(nm)
        p_max += [spec.p_max] * len(nm)
    costs = np.concatenate(cols, axis=1) if cols else np.zeros((n, 0))
    return ConstraintReport(costs, names, np.array(hard, dtype=bool), np.array(p_max, dtype=float))


def update_running_max(running_max: np.ndarray, costs: np.ndarray, decay: float) -> np.ndarray:
    """Decayed running maximum of the positive part of each cost column (in place)."""
    np.maximum(running_max * decay, np.maximum(costs, 0.0), out=running_max)
    return running_max


def termination_probability(costs, running_max, hard, p_max) -> np.ndarray:
    """Per-env termination probability: max over columns of the scaled violation.

    Soft columns contribute ``p_max * clamp(c+ / running_max, 0, 1)``; hard
    columns contribute 1 when violated. Columns with a zero running max only
    contribute when their cost is positive, in which case the ratio saturates.
    """
    costs = np.atleast_2d(np.asarray(costs, dtype=float))
    running_max = np.broadcast_to(np.asarray(running_max, dtype=float), costs.shape)
    pos = np.maximum(costs, 0.0)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        ratio = np.where(running_max > 0.0, pos / np.where(running_max > 0.0, running_max, 1.0),
                         np.where(pos > 0.0, 1.0, 0.0))
    ratio = np.clip(ratio, 0.0, 1.0)
    per = np.where(hard, (costs > 0.0).astype(float), p_max * ratio)
    if per.shape[1] == 0:
        return np.zeros(per.shape[0])
    return per.max(axis=1)


def cat_termination(report: ConstraintReport, running_max: np.ndarray) -> np.ndarray:
    """Fill ``report.delta`` from the current running maxima and return it."""
    report.delta = termination_probability(report.costs, running_max, report.hard, report.p_max)
    return report.delta
