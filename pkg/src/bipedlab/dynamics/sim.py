"""Simulation state, the batched integrator and the per-state dynamics API."""

from __future__ import annotations

import functools
from dataclasses import dataclass, field, fields

import numpy as np

from ..errors import DynamicsInputError, SimulationDiverged
from . import _kernels as K
from .model import ActuatorModel, ContactModel, ModelArrays, RobotModel, Terrain, check_dim, check_finite, pack_model

DT = 1e-3
DELAY_SLOTS = 3


@functools.lru_cache(maxsize=64)
def _packed(model: RobotModel) -> ModelArrays:
    return pack_model(model)


@dataclass(frozen=True)
class ContactState:
    in_contact: bool
    normal_force: float
    tangential_force: float
    air_time: float
    contact_start: float
    last_air_time: float


@dataclass
class SimState:
    """Full state of one simulated robot.

    ``q`` and ``v`` are generalized coordinates ``[x, z, pitch, joints...]``
    (joints only for a fixed base). ``qdd``, ``tau``, ``tau_friction`` and the
    contact forces come from the most recent physics step and were evaluated
    at ``dyn_q``/``dyn_v``, the configuration before that step's update.
    """

    q: np.ndarray
    v: np.ndarray
    qdd: np.ndarray
    tau: np.ndarray
    tau_friction: np.ndarray
    buffer: np.ndarray
    fn: np.ndarray
    ft: np.ndarray
    in_contact: np.ndarray
    t_air: np.ndarray
    last_air: np.ndarray
    touchdown: np.ndarray
    t_start: np.ndarray
    knee_hit: np.ndarray
    base_hit: np.ndarray
    time: float
    dyn_q: np.ndarray
    dyn_v: np.ndarray
    terrain: Terrain = field(default_factory=Terrain)

    def copy(self) -> "SimState":
        kw = {}
        for f in fields(self):
            val = getattr(self, f.name)
            kw[f.name] = val.copy() if isinstance(val, np.ndarray) else val
        return SimState(**kw)

    @property
    def contacts(self) -> list[ContactState]:
        return [
            ContactState(bool(self.in_contact[i]), float(self.fn[i]), float(self.ft[i]),
                         float(self.t_air[i]), float(self.t_start[i]), float(self.last_air[i]))
            for i in range(self.fn.shape[0])
        ]


def initial_state(model: RobotModel, q: np.ndarray | None = None, v: np.ndarray | None = None,
                  terrain: Terrain | None = None, command: np.ndarray | None = None) -> SimState:
    """Build a state at rest; the delay buffer is filled with ``command`` (default ``q_ref``)."""
    n = model.n_v
    na = model.n_joints
    nf = len(model.feet)
    q = np.zeros(n) if q is None else check_dim("q", q, n).copy()
    v = np.zeros(n) if v is None else check_dim("v", v, n).copy()
    cmd = model.q_ref if command is None else np.asarray(command, dtype=float)
    return SimState(
        q=q, v=v, qdd=np.zeros(n), tau=np.zeros(na), tau_friction=np.zeros(na),
        buffer=np.tile(cmd, (DELAY_SLOTS, 1)),
        fn=np.zeros(nf), ft=np.zeros(nf), in_contact=np.zeros(nf), t_air=np.zeros(nf),
        last_air=np.zeros(nf), touchdown=np.zeros(nf), t_start=np.zeros(nf),
        knee_hit=np.zeros(len(model.knees)), base_hit=np.zeros(1), time=0.0,
        dyn_q=q.copy(), dyn_v=v.copy(), terrain=terrain or Terrain(),
    )


class BatchSim:
    """Struct-of-arrays integrator for ``n`` robots sharing one topology.

    Per-robot parameters (link masses, inertias, CoMs, Coulomb friction, delay,
    ground friction, terrain heights) live in rows that callers overwrite
    between episodes with :meth:`configure`. The integrator carries the
    generalized momentum ``p``; after writing to ``v`` directly call
    :meth:`sync_momentum` for the touched rows.
    """

    def __init__(self, model: RobotModel, n: int, actuator: ActuatorModel | None = None,
                 contact: ContactModel | None = None, dt: float = DT, n_cells: int = 0,
                 terrain_x0: float = 0.0, terrain_cell: float = 0.1):
        self.model = model
        self.n = n
        self.dt = dt
        self.contact = contact or ContactModel()
        actuator = actuator or ActuatorModel()
        self.arr = _packed(model)
        nv, na = model.n_v, model.n_joints
        nf, nk = len(model.feet), len(model.knees)
        self.kp = np.full(na, float(actuator.kp))
        self.kd = np.full(na, float(actuator.kd))
        self.viscous = np.full(na, float(actuator.viscous))
        self.mass = np.tile(self.arr.mass, (n, 1))
        self.inertia = np.tile(self.arr.inertia, (n, 1))
        self.com = np.tile(self.arr.com, (n, 1, 1))
        self.coulomb = np.tile(actuator.coulomb_array(na), (n, 1))
        self.delay = np.full(n, actuator.delay, dtype=np.int64)
        self.mu = np.ones(n)
        self.heights = np.zeros((n, n_cells))
        self.x0 = float(terrain_x0)
        self.cell = float(terrain_cell)

        self.q = np.zeros((n, nv))
        self.v = np.zeros((n, nv))
        self.p = np.zeros((n, nv))
        self.qdd = np.zeros((n, nv))
        self.tau = np.zeros((n, na))
        self.tau_friction = np.zeros((n, na))
        self.buffer = np.zeros((n, DELAY_SLOTS, na))
        self.fn = np.zeros((n, nf))
        self.ft = np.zeros((n, nf))
        self.in_contact = np.zeros((n, nf))
        self.t_air = np.zeros((n, nf))
        self.last_air = np.zeros((n, nf))
        self.touchdown = np.zeros((n, nf))
        self.t_start = np.zeros((n, nf))
        self.knee_hit = np.zeros((n, nk))
        self.base_hit = np.zeros((n, 1))
        self.clock = np.zeros((n, 1))
        self.dyn_q = np.zeros((n, nv))
        self.dyn_v = np.zeros((n, nv))
        self.status = np.zeros(n, dtype=np.int64)
        self._zero_force = np.zeros((n, 2))

    _STATE = ("q", "v", "qdd", "tau", "tau_friction", "buffer", "fn", "ft", "in_contact",
              "t_air", "last_air", "touchdown", "t_start", "knee_hit", "base_hit", "dyn_q", "dyn_v")

    def configure(self, i: int, model: RobotModel | None = None, actuator: ActuatorModel | None = None,
                  terrain: Terrain | None = None) -> None:
        if model is not None:
            arr = pack_model(model)
            self.mass[i] = arr.mass
            self.inertia[i] = arr.inertia
            self.com[i] = arr.com
            self.sync_momentum([i])
        if actuator is not None:
            self.coulomb[i] = actuator.coulomb_array(self.model.n_joints)
            self.delay[i] = actuator.delay
        if terrain is not None:
            self.mu[i] = terrain.mu
            h = np.asarray(terrain.heights, dtype=float)
            if h.shape[0] > self.heights.shape[1]:
                raise DynamicsInputError("terrain has more cells than the batch was sized for")
            self.heights[i] = 0.0
            self.heights[i, : h.shape[0]] = h

    def load_state(self, i: int, state: SimState) -> None:
        for name in self._STATE:
            getattr(self, name)[i] = getattr(state, name)
        self.clock[i, 0] = state.time
        self.status[i] = 0
        self.sync_momentum([i])

    def sync_momentum(self, rows) -> None:
        """Refresh the momentum of ``rows`` after their velocity was edited directly."""
        a = self.arr
        K.sync_momentum(a.jtype, a.parent, a.offset, self.mass, self.inertia, self.com,
                        self.q, self.v, self.p, np.asarray(rows, dtype=np.int64))

    def get_state(self, i: int, terrain: Terrain | None = None) -> SimState:
        kw = {name: getattr(self, name)[i].copy() for name in self._STATE}
        if terrain is None:
            terrain = Terrain(tuple(self.heights[i]), self.cell, self.x0, float(self.mu[i]))
        return SimState(time=float(self.clock[i, 0]), terrain=terrain, **kw)

    def advance(self, targets: np.ndarray, nsub: int = 1, ext_start: np.ndarray | None = None,
                ext_end: np.ndarray | None = None) -> np.ndarray:
        """Integrate every robot ``nsub`` steps holding ``targets``; returns the status array."""
        ext_start = self._zero_force if ext_start is None else np.ascontiguousarray(ext_start, dtype=float)
        ext_end = ext_start if ext_end is None else np.ascontiguousarray(ext_end, dtype=float)
        a = self.arr
        K.simulate_batch(
            nsub, self.dt, a.gravity,
            a.jtype, a.parent, a.offset, self.mass, self.inertia, self.com,
            a.foot_body, a.foot_local, a.knee_body, a.knee_local, a.base_body, a.base_local,
            self.kp, self.kd, a.tau_lim, self.coulomb, self.viscous, a.qlo, a.qhi, self.delay,
            self.contact.k_n, self.contact.c_n, self.contact.k_t, self.mu, self.heights, self.x0, self.cell,
            ext_start, ext_end, np.ascontiguousarray(targets, dtype=float),
            self.q, self.v, self.p, self.qdd, self.tau, self.tau_friction, self.buffer,
            self.fn, self.ft, self.in_contact, self.t_air, self.last_air, self.touchdown, self.t_start,
            self.knee_hit, self.base_hit, self.clock, self.dyn_q, self.dyn_v, self.status,
        )
        return self.status


def step(model: RobotModel, actuator: ActuatorModel, state: SimState, action_command,
         contact: ContactModel | None = None, dt: float = DT, ext_force=(0.0, 0.0)) -> SimState:
    """One semi-implicit Euler step; returns a new state and leaves ``state`` untouched.

    ``action_command`` is the joint target pushed into the delay buffer this step.
    Raises :class:`SimulationDiverged` if the result is not finite.
    """
    target = check_dim("action_command", action_command, model.n_joints)
    terrain = state.terrain
    heights = np.asarray(terrain.heights, dtype=float)
    sim = BatchSim(model, 1, actuator, contact, dt, n_cells=heights.shape[0],
                   terrain_x0=terrain.x0, terrain_cell=terrain.cell)
    sim.configure(0, actuator=actuator, terrain=terrain)
    sim.load_state(0, state)
    f = np.asarray(ext_force, dtype=float).reshape(1, 2)
    sim.advance(target.reshape(1, -1), 1, f, f)
    if sim.status[0] != 0:
        raise SimulationDiverged(f"non-finite state at t={state.time + dt:.4f}s")
    return sim.get_state(0, terrain)


def _kin(model: RobotModel, q: np.ndarray):
    a = _packed(model)
    n = model.n_v
    phi, pos, S = np.empty(n), np.empty((n, 2)), np.empty((n, 3))
    K.forward_kinematics(a.jtype, a.parent, a.offset, q, phi, pos, S)
    Iw = np.empty((n, 3, 3))
    K.world_inertias(a.mass, a.inertia, a.com, phi, pos, Iw)
    return a, phi, pos, S, Iw


def _coords(model: RobotModel, q_full, name="q_full") -> np.ndarray:
    q = check_dim(name, q_full, model.n_v)
    check_finite(name, q)
    return q


def mass_matrix(model: RobotModel, q_full) -> np.ndarray:
    """Joint-space inertia matrix by the composite-rigid-body algorithm."""
    q = _coords(model, q_full)
    a, phi, pos, S, Iw = _kin(model, q)
    M = np.zeros((model.n_v, model.n_v))
    K.crba(a.parent, S, Iw, M)
    return M


def inverse_dynamics(model: RobotModel, q_full, v_full, qdd_full, gravity: bool = True) -> np.ndarray:
    """Generalized forces ``M(q) qdd + b(q, v)`` by recursive Newton-Euler."""
    q = _coords(model, q_full)
    v = _coords(model, v_full, "v_full")
    qdd = _coords(model, qdd_full, "qdd_full")
    a, phi, pos, S, Iw = _kin(model, q)
    tau = np.empty(model.n_v)
    K.rnea(a.parent, S, Iw, v, qdd, a.gravity if gravity else 0.0, tau)
    return tau


def bias_forces(model: RobotModel, q_full, v_full, gravity: bool = True) -> np.ndarray:
    """Coriolis, centrifugal and gravity terms ``b(q, v)``."""
    return inverse_dynamics(model, q_full, v_full, np.zeros(model.n_v), gravity)


def forward_dynamics(model: RobotModel, q_full, v_full, tau_full) -> np.ndarray:
    tau = _coords(model, tau_full, "tau_full")
    M = mass_matrix(model, q_full)
    b = bias_forces(model, q_full, v_full)
    return np.linalg.solve(M, tau - b)


def point_position(model: RobotModel, q_full, link: str, point=(0.0, 0.0)) -> np.ndarray:
    q = _coords(model, q_full)
    a, phi, pos, S, _ = _kin(model, q)
    body = _body_index(model, link)
    return np.array(K.point_world(body, np.asarray(point, dtype=float), phi, pos))


def _body_index(model: RobotModel, link: str) -> int:
    names = [model.links[0].name] if model.floating_base else []
    names += [j.child for j in model.joints]
    if link not in names:
        raise DynamicsInputError(f"unknown link {link!r}")
    return names.index(link) + (2 if model.floating_base else 0)


def point_jacobian(model: RobotModel, q_full, link: str, point=(0.0, 0.0)) -> np.ndarray:
    q = _coords(model, q_full)
    a, phi, pos, S, _ = _kin(model, q)
    body = _body_index(model, link)
    px, pz = K.point_world(body, np.asarray(point, dtype=float), phi, pos)
    J = np.empty((2, model.n_v))
    K.point_jacobian(a.parent, S, body, px, pz, J)
    return J


def foot_position(model: RobotModel, q_full, foot: int) -> np.ndarray:
    link, point = _foot(model, foot)
    return point_position(model, q_full, link, point)


def contact_jacobian(model: RobotModel, q_full, foot: int) -> np.ndarray:
    """2 x n_v Jacobian of foot ``foot``'s contact point (rows: x, z)."""
    link, point = _foot(model, foot)
    return point_jacobian(model, q_full, link, point)


def _foot(model: RobotModel, foot: int):
    if not isinstance(foot, (int, np.integer)) or not 0 <= foot < len(model.feet):
        raise DynamicsInputError(f"invalid foot index {foot!r}; model has {len(model.feet)} feet")
    return model.feet[int(foot)]


def contact_forces(model: RobotModel, state: SimState, terrain: Terrain | None = None,
                   contact: ContactModel | None = None) -> np.ndarray:
    """Explicit penalty forces ``(f_n, f_t)`` per foot at the state's current velocity.

    ``f_n = k_n d + c_n max(-vz, 0)`` for penetration ``d > 0`` (damping only
    while the foot moves into the ground), ``f_t = clamp(-k_t vx, +-mu f_n)``.
    The integrator uses the same normal law but evaluates the slip damping
    implicitly, at the end-of-step velocity.
    """
    terrain = terrain or state.terrain
    contact = contact or ContactModel()
    out = np.zeros((len(model.feet), 2))
    for i in range(len(model.feet)):
        p = foot_position(model, state.q, i)
        vel = contact_jacobian(model, state.q, i) @ state.v
        d = terrain.height_at(p[0]) - p[1]
        if d <= 0.0:
            continue
        f_n = contact.k_n * d + contact.c_n * max(-vel[1], 0.0)
        lim = terrain.mu * f_n
        out[i] = f_n, float(np.clip(-contact.k_t * vel[0], -lim, lim))
    return out


def pd_torque(actuator: ActuatorModel, q_target, q, qd, torque_limit) -> np.ndarray:
    """Net joint torque: saturated PD minus Coulomb and viscous friction (sign(0) = 0)."""
    q_target, q, qd = (np.asarray(x, dtype=float) for x in (q_target, q, qd))
    lim = np.broadcast_to(np.asarray(torque_limit, dtype=float), q.shape)
    pd = np.clip(actuator.kp * (q_target - q) - actuator.kd * qd, -lim, lim)
    coulomb = actuator.coulomb_array(q.shape[0]) if q.ndim else float(np.asarray(actuator.coulomb))
    return pd - (coulomb * np.sign(qd) + actuator.viscous * qd)


def kinetic_energy(model: RobotModel, q_full, v_full) -> float:
    v = _coords(model, v_full, "v_full")
    return 0.5 * float(v @ mass_matrix(model, q_full) @ v)


def potential_energy(model: RobotModel, q_full) -> float:
    q = _coords(model, q_full)
    a, phi, pos, S, _ = _kin(model, q)
    total = 0.0
    for i in range(model.n_v):
        dx, dz = K._rot(phi[i], a.com[i, 0], a.com[i, 1])
        total += a.mass[i] * a.gravity * (pos[i, 1] + dz)
    return total


def projected_gravity(pitch):
    """Unit gravity direction in the base frame as (x, z); upright gives (0, -1)."""
    return np.stack([-np.sin(pitch), -np.cos(pitch)], axis=-1)


def base_velocity_in_base_frame(pitch, xd, zd):
    c, s = np.cos(pitch), np.sin(pitch)
    return c * xd + s * zd, -s * xd + c * zd


def standing_height(model: RobotModel, q_joints) -> float:
    """Base height that puts the lowest foot exactly on flat ground (pitch 0)."""
    q = np.zeros(model.n_v)
    q[3:] = q_joints
    return -min(foot_position(model, q, i)[1] for i in range(len(model.feet)))


__all__ = [
    "DT", "ContactState", "SimState", "BatchSim", "initial_state", "step", "mass_matrix",
    "bias_forces", "inverse_dynamics", "forward_dynamics", "contact_jacobian", "contact_forces",
    "pd_torque", "point_position", "point_jacobian", "foot_position", "kinetic_energy",
    "potential_energy", "projected_gravity", "base_velocity_in_base_frame", "standing_height",
]
