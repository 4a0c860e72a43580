"""Robot, actuator, contact and terrain descriptions.

The default robot is a planar point-foot biped: a torso carrying two legs,
each a thigh and a shank joined by a hip and a knee. Numbers are Bolt-sized
placeholders (about 1.3 kg, 0.4 m legs) and every one of them can be
overridden from a TOML file, see ``configs/robot.toml``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from ..errors import ConfigError, DynamicsInputError
from . import _kernels as K


@dataclass(frozen=True)
class Link:
    name: str
    mass: float
    inertia: float  # about the CoM, kg m^2
    length: float
    com: tuple[float, float]  # CoM in the link frame (x, z)


@dataclass(frozen=True)
class Joint:
    name: str
    parent: str  # parent link name, or "world" for a fixed-base root
    child: str
    origin: tuple[float, float]  # joint position in the parent frame
    lower: float
    upper: float
    torque_limit: float
    velocity_limit: float
    accel_limit: float
    q_ref: float = 0.0


@dataclass(frozen=True)
class RobotModel:
    links: tuple[Link, ...]
    joints: tuple[Joint, ...]
    floating_base: bool = True
    gravity: float = 9.81
    leg_length: float = 0.4
    # contact/collision points: (link name, point in link frame)
    feet: tuple[tuple[str, tuple[float, float]], ...] = ()
    knees: tuple[tuple[str, tuple[float, float]], ...] = ()
    base_points: tuple[tuple[float, float], ...] = ()
    hip_joints: tuple[str, ...] = ()
    knee_joints: tuple[str, ...] = ()

    def __post_init__(self):
        names = [link.name for link in self.links]
        if len(set(names)) != len(names):
            raise ConfigError("duplicate link names")
        for link in self.links:
            if not (link.mass > 0 and link.inertia > 0 and link.length > 0):
                raise ConfigError(f"link {link.name!r}: mass, inertia and length must be positive")
        seen = {self.links[0].name} if self.floating_base else {"world"}
        for j in self.joints:
            if j.parent not in seen:
                raise ConfigError(f"joint {j.name!r}: parent {j.parent!r} must be declared first")
            if j.child not in names:
                raise ConfigError(f"joint {j.name!r}: unknown child link {j.child!r}")
            if not j.lower < j.upper:
                raise ConfigError(f"joint {j.name!r}: lower limit must be below upper limit")
            seen.add(j.child)
        for name, _ in self.feet + self.knees:
            if name not in names:
                raise ConfigError(f"unknown contact link {name!r}")
        if self.gravity <= 0 or self.leg_length <= 0:
            raise ConfigError("gravity and leg_length must be positive")

    @property
    def mass(self) -> float:
        return float(sum(link.mass for link in self.links))

    @property
    def n_joints(self) -> int:
        return len(self.joints)

    @property
    def n_v(self) -> int:
        return self.n_joints + (3 if self.floating_base else 0)

    @property
    def q_ref(self) -> np.ndarray:
        return np.array([j.q_ref for j in self.joints])

    @property
    def joint_names(self) -> list[str]:
        return [j.name for j in self.joints]

    def joint_index(self, name: str) -> int:
        return self.joint_names.index(name)

    def scaled(self, mass_scale: Sequence[float], inertia_scale: Sequence[float],
               base_com_shift: tuple[float, float] = (0.0, 0.0)) -> "RobotModel":
        """Copy with per-link mass/inertia factors and a shifted root-link CoM."""
        links = []
        for i, link in enumerate(self.links):
            com = link.com
            if i == 0:
                com = (com[0] + base_com_shift[0], com[1] + base_com_shift[1])
            links.append(replace(link, mass=link.mass * mass_scale[i],
                                 inertia=link.inertia * inertia_scale[i], com=com))
        return replace(self, links=tuple(links))

    def arrays(self) -> "ModelArrays":
        return pack_model(self)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ActuatorModel:
    """PD servo with Coulomb/viscous joint friction and a command delay."""

    kp: float = 5.0
    kd: float = 0.1
    coulomb: tuple[float, ...] | float = 0.0
    viscous: float = 0.01
    resistance: float = 0.3  # winding resistance, ohm
    torque_constant: float = 0.25  # N m / A at the joint
    delay: int = 0  # physics steps

    def __post_init__(self):
        if self.kp < 0 or self.kd < 0 or self.viscous < 0:
            raise ConfigError("kp, kd and viscous friction must be non-negative")
        if np.any(np.asarray(self.coulomb) < 0):
            raise ConfigError("Coulomb friction must be non-negative")
        if self.torque_constant <= 0 or self.resistance < 0:
            raise ConfigError("torque constant must be positive, resistance non-negative")
        if self.delay not in (0, 1, 2):
            raise ConfigError("delay must be 0, 1 or 2 physics steps")

    def coulomb_array(self, n: int) -> np.ndarray:
        c = np.asarray(self.coulomb, dtype=float)
        return np.full(n, float(c)) if c.ndim == 0 else c.copy()


@dataclass(frozen=True)
class ContactModel:
    k_n: float = 5e3  # N/m
    c_n: float = 50.0  # N s/m
    k_t: float = 1e3  # N s/m


@dataclass(frozen=True)
class Terrain:
    """Piecewise-constant height profile; flat ground (height 0) off the ends."""

    heights: tuple[float, ...] = ()
    cell: float = 0.1
    x0: float = 0.0
    mu: float = 1.0

    def __post_init__(self):
        if self.mu <= 0:
            raise ConfigError("friction coefficient must be positive")
        if self.cell <= 0:
            raise ConfigError("terrain cell width must be positive")

    def height_at(self, x: float) -> float:
        return K.terrain_height(np.asarray(self.heights, dtype=float), self.x0, self.cell, x)


class ModelArrays(NamedTuple):
    jtype: np.ndarray
    parent: np.ndarray
    offset: np.ndarray
    mass: np.ndarray
    inertia: np.ndarray
    com: np.ndarray
    foot_body: np.ndarray
    foot_local: np.ndarray
    knee_body: np.ndarray
    knee_local: np.ndarray
    base_body: int
    base_local: np.ndarray
    qlo: np.ndarray
    qhi: np.ndarray
    tau_lim: np.ndarray
    gravity: float


def pack_model(model: RobotModel) -> ModelArrays:
    jtype, parent, offset, mass, inertia, com = [], [], [], [], [], []
    body_of = {}
    if model.floating_base:
        root = model.links[0]
        for t, p in ((K.PRISMATIC_X, -1), (K.PRISMATIC_Z, 0)):
            jtype.append(t)
            parent.append(p)
            offset.append((0.0, 0.0))
            mass.append(0.0)
            inertia.append(0.0)
            com.append((0.0, 0.0))
        jtype.append(K.REVOLUTE)
        parent.append(1)
        offset.append((0.0, 0.0))
        mass.append(root.mass)
        inertia.append(root.inertia)
        com.append(root.com)
        body_of[root.name] = 2
    else:
        body_of["world"] = -1
    links = {link.name: link for link in model.links}
    for j in model.joints:
        child = links[j.child]
        jtype.append(K.REVOLUTE)
        parent.append(body_of[j.parent])
        offset.append(j.origin)
        mass.append(child.mass)
        inertia.append(child.inertia)
        com.append(child.com)
        body_of[j.child] = len(jtype) - 1

    def points(spec):
        if not spec:
            return np.zeros(0, dtype=np.int64), np.zeros((0, 2))
        return (np.array([body_of[name] for name, _ in spec], dtype=np.int64),
                np.array([p for _, p in spec], dtype=float))

    foot_body, foot_local = points(model.feet)
    knee_body, knee_local = points(model.knees)
    base_body = body_of[model.links[0].name] if model.floating_base else 0
    base_local = np.array(model.base_points, dtype=float).reshape(-1, 2)
    return ModelArrays(
        jtype=np.array(jtype, dtype=np.int64),
        parent=np.array(parent, dtype=np.int64),
        offset=np.array(offset, dtype=float).reshape(-1, 2),
        mass=np.array(mass, dtype=float),
        inertia=np.array(inertia, dtype=float),
        com=np.array(com, dtype=float).reshape(-1, 2),
        foot_body=foot_body,
        foot_local=foot_local,
        knee_body=knee_body,
        knee_local=knee_local,
        base_body=int(base_body),
        base_local=base_local,
        qlo=np.array([j.lower for j in model.joints]),
        qhi=np.array([j.upper for j in model.joints]),
        tau_lim=np.array([j.torque_limit for j in model.joints]),
        gravity=float(model.gravity),
    )


def default_biped() -> RobotModel:
    thigh = 0.2
    shank = 0.2
    links = (
        Link("torso", 0.7, 0.0035, 0.2, (0.0, 0.06)),
        Link("thigh_left", 0.15, 0.0005, thigh, (0.0, -0.09)),
        Link("shank_left", 0.15, 0.0005, shank, (0.0, -0.1)),
        Link("thigh_right", 0.15, 0.0005, thigh, (0.0, -0.09)),
        Link("shank_right", 0.15, 0.0005, shank, (0.0, -0.1)),
    )
    common = dict(torque_limit=2.5, velocity_limit=25.0, accel_limit=2000.0)
    joints = []
    # hip reference chosen so the whole-body CoM sits above the feet at zero pitch
    for side in ("left", "right"):
        joints.append(Joint(f"hip_{side}", "torso", f"thigh_{side}", (0.0, 0.0),
                            -1.6, 1.6, q_ref=0.464, **common))
        joints.append(Joint(f"knee_{side}", f"thigh_{side}", f"shank_{side}", (0.0, -thigh),
                            -2.6, 0.2, q_ref=-0.8, **common))
    return RobotModel(
        links=links,
        joints=tuple(joints),
        floating_base=True,
        gravity=9.81,
        leg_length=thigh + shank,
        feet=(("shank_left", (0.0, -shank)), ("shank_right", (0.0, -shank))),
        knees=(("shank_left", (0.0, 0.0)), ("shank_right", (0.0, 0.0))),
        base_points=((-0.06, 0.0), (0.06, 0.0), (-0.06, 0.16), (0.06, 0.16)),
        hip_joints=("hip_left", "hip_right"),
        knee_joints=("knee_left", "knee_right"),
    )


def double_pendulum(m1=1.0, m2=1.0, l1=0.5, l2=0.5) -> RobotModel:
    """Fixed-base two-link pendulum hanging from the origin (uniform rods)."""
    links = (
        Link("upper", m1, m1 * l1 ** 2 / 12, l1, (0.0, -l1 / 2)),
        Link("lower", m2, m2 * l2 ** 2 / 12, l2, (0.0, -l2 / 2)),
    )
    big = dict(torque_limit=1e9, velocity_limit=1e9, accel_limit=1e9)
    joints = (
        Joint("shoulder", "world", "upper", (0.0, 0.0), -1e3, 1e3, **big),
        Joint("elbow", "upper", "lower", (0.0, -l1), -1e3, 1e3, **big),
    )
    return RobotModel(links=links, joints=joints, floating_base=False, leg_length=l1 + l2)


def single_pendulum(m=1.0, lc=0.3, inertia=0.01) -> RobotModel:
    links = (Link("rod", m, inertia, 2 * lc, (0.0, -lc)),)
    joints = (Joint("pivot", "world", "rod", (0.0, 0.0), -1e3, 1e3, 1e9, 1e9, 1e9),)
    return RobotModel(links=links, joints=joints, floating_base=False, leg_length=2 * lc)


def _pair(value, what) -> tuple[float, float]:
    try:
        x, z = value
        return float(x), float(z)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{what}: expected a 2-element [x, z] list") from exc


def model_from_dict(data: dict) -> RobotModel:
    """Build a RobotModel from the ``[robot]`` table of a config file."""
    try:
        links = tuple(
            Link(str(d["name"]), float(d["mass"]), float(d["inertia"]), float(d["length"]),
                 _pair(d.get("com", (0.0, 0.0)), f"link {d['name']} com"))
            for d in data["links"]
        )
        joints = tuple(
            Joint(str(d["name"]), str(d["parent"]), str(d["child"]),
                  _pair(d.get("origin", (0.0, 0.0)), f"joint {d['name']} origin"),
                  float(d["lower"]), float(d["upper"]), float(d["torque_limit"]),
                  float(d["velocity_limit"]), float(d["accel_limit"]), float(d.get("q_ref", 0.0)))
            for d in data["joints"]
        )
        return RobotModel(
            links=links,
            joints=joints,
            floating_base=bool(data.get("floating_base", True)),
            gravity=float(data.get("gravity", 9.81)),
            leg_length=float(data.get("leg_length", 0.4)),
            feet=tuple((str(f["link"]), _pair(f["point"], "foot point")) for f in data.get("feet", [])),
            knees=tuple((str(f["link"]), _pair(f["point"], "knee point")) for f in data.get("knees", [])),
            base_points=tuple(_pair(p, "base point") for p in data.get("base_points", [])),
            hip_joints=tuple(data.get("hip_joints", ())),
            knee_joints=tuple(data.get("knee_joints", ())),
        )
    except KeyError as exc:
        raise ConfigError(f"robot config is missing key {exc}") from exc


def model_to_dict(model: RobotModel) -> dict:
    """Inverse of :func:`model_from_dict` (plain lists, TOML/JSON friendly)."""
    return {
        "links": [{"name": k.name, "mass": k.mass, "inertia": k.inertia, "length": k.length, "com": list(k.com)}
                  for k in model.links],
        "joints": [{"name": j.name, "parent": j.parent, "child": j.child, "origin": list(j.origin),
                    "lower": j.lower, "upper": j.upper, "torque_limit": j.torque_limit,
                    "velocity_limit": j.velocity_limit, "accel_limit": j.accel_limit, "q_ref": j.q_ref}
                   for j in model.joints],
        "floating_base": model.floating_base,
        "gravity": model.gravity,
        "leg_length": model.leg_length,
        "feet": [{"link": name, "point": list(p)} for name, p in model.feet],
        "knees": [{"link": name, "point": list(p)} for name, p in model.knees],
        "base_points": [list(p) for p in model.base_points],
        "hip_joints": list(model.hip_joints),
        "knee_joints": list(model.knee_joints),
    }


def load_model(path: str | Path) -> RobotModel:
    import tomli

    with open(path, "rb") as fh:
        data = tomli.load(fh)
    if "robot" not in data:
        raise ConfigError(f"{path}: no [robot] table")
    return model_from_dict(data["robot"])


def check_finite(name: str, x: np.ndarray) -> None:
    if not np.all(np.isfinite(x)):
        raise DynamicsInputError(f"{name} contains non-finite entries")


def check_dim(name: str, x: np.ndarray, n: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (n,):
        raise DynamicsInputError(f"{name} has shape {x.shape}, expected ({n},)")
    return x


__all__ = [
    "model_to_dict", "Link", "Joint", "RobotModel", "ActuatorModel", "ContactModel", "Terrain",
    "ModelArrays", "pack_model", "default_biped", "double_pendulum", "single_pendulum",
    "model_from_dict", "load_model",
]
