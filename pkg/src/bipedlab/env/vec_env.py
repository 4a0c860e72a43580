"""Batched biped environment.

One :class:`BipedEnv` drives ``num_envs`` robots through a shared
:class:`~bipedlab.dynamics.BatchSim`. Each robot owns three random streams
(episode randomization and commands, sensor noise, termination draws) seeded
only from its own seed, so row ``i`` of a batch replays exactly like a
single environment built with ``seeds=[seeds[i]]``.

Observation layout (17 entries for the default biped)::

    [0]      commanded forward velocity v*
    [1]      commanded pitch-plane rate w* (always 0 for sagittal runs)
    [2]      base pitch rate * obs_scale_ang_vel
    [3:5]    projected gravity (x, z) in the base frame
    [5:9]    joint positions minus q_ref
    [9:13]   joint velocities * obs_scale_joint_vel
    [13:17]  previous action
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..dynamics import BatchSim, RobotModel, default_biped, initial_state
from ..dynamics import _kernels as K
from ..dynamics.sim import base_velocity_in_base_frame, projected_gravity
from .config import EnvConfig
from .constraints import (
    ConstraintInputs,
    ConstraintReport,
    build_specs,
    evaluate_constraints,
    termination_probability,
    update_running_max,
)
from .randomization import n_terrain_cells, sample_episode, sample_noise_bias, sample_push, sample_step_noise
from .reward import compute_reward

SIDES = ("left", "right")


def build_observation(pitch_rate, pitch, q, qd, command, prev_action, q_ref, cfg: EnvConfig,
                      noise: dict | None = None, bias: dict | None = None) -> np.ndarray:
    """Assemble observations for a batch; ``noise``/``bias`` are added when given."""
    pitch_rate = np.asarray(pitch_rate, dtype=float)
    grav = projected_gravity(np.asarray(pitch, dtype=float))
    q = np.asarray(q, dtype=float)
    qd = np.asarray(qd, dtype=float)
    if noise is not None:
        pitch_rate = pitch_rate + noise["ang_vel"]
        grav = grav + noise["gravity"]
        q = q + noise["joint_pos"]
        qd = qd + noise["joint_vel"]
    if bias is not None:
        grav = grav + bias["gravity_bias"]
        q = q + bias["joint_pos_bias"]
    return np.concatenate([
        np.asarray(command, dtype=float).reshape(-1, 2),
        (pitch_rate * cfg.obs_scale_ang_vel).reshape(-1, 1),
        grav.reshape(-1, 2),
        (q - q_ref).reshape(q.shape[0] if q.ndim > 1 else 1, -1),
        (qd * cfg.obs_scale_joint_vel).reshape(qd.shape[0] if qd.ndim > 1 else 1, -1),
        np.asarray(prev_action, dtype=float).reshape(q.shape[0] if q.ndim > 1 else 1, -1),
    ], axis=1)


@dataclass
class StepResult:
    obs: np.ndarray
    reward: np.ndarray
    delta: np.ndarray
    terminated: np.ndarray
    truncated: np.ndarray
    info: dict


class BipedEnv:
    """Vectorized sagittal biped with constraint-driven stochastic terminations.

    ``train=True`` enables the randomization config (dynamics, terrain,
    initial state, pushes, sensor noise) and stochastic terminations.
    ``train=False`` runs nominal dynamics on flat ground with clean
    observations and terminates only on hard-constraint violations.
    """

    def __init__(self, cfg: EnvConfig | None = None, model: RobotModel | None = None,
                 num_envs: int = 1, seed: int = 0, seeds=None, train: bool = True):
        self.cfg = cfg or EnvConfig()
        self.model = model or default_biped()
        self.train = train
        self.num_envs = n = int(num_envs)
        if seeds is None:
            seeds = [seed + i for i in range(n)]
        if len(seeds) != n:
            raise ValueError("need one seed per environment")
        self.seeds = [int(s) for s in seeds]
        streams = [np.random.SeedSequence(s).spawn(3) for s in self.seeds]
        self.rng_episode = [np.random.default_rng(ss[0]) for ss in streams]
        self.rng_noise = [np.random.default_rng(ss[1]) for ss in streams]
        self.rng_term = [np.random.default_rng(ss[2]) for ss in streams]

        rc = self.cfg.randomization
        self.randomize = train and rc.enabled
        self.noisy = train and rc.enabled and rc.observation_noise
        self.pushes = train and rc.enabled and rc.pushes
        self.stochastic = train and self.cfg.stochastic_termination
        self.specs = build_specs(self.cfg.constraints)

        m = self.model
        self.n_joints = m.n_joints
        self.q_ref = m.q_ref
        self.q_lo = np.array([j.lower for j in m.joints])
        self.q_hi = np.array([j.upper for j in m.joints])
        self.hip_idx = np.array([m.joint_index(name) for name in m.hip_joints], dtype=int)
        self.knee_idx = np.array([m.joint_index(name) for name in m.knee_joints], dtype=int)
        self.cells = n_terrain_cells(rc) if self.randomize else 0
        self.terrain_x0 = -0.5 * rc.terrain_length
        self.sim = BatchSim(m, n, self.cfg.actuator, self.cfg.contact, self.cfg.dt, n_cells=self.cells,
                            terrain_x0=self.terrain_x0, terrain_cell=rc.terrain_cell)
        # link -> body row in the packed model (rows 0, 1 are the massless base slides)
        self._link_body = np.array([2] + [3 + k for k in range(len(m.joints))]) if m.floating_base \
            else np.arange(len(m.links))
        self._nominal = (self.sim.mass[0].copy(), self.sim.inertia[0].copy(), self.sim.com[0].copy())

        self.obs_dim = 5 + 3 * self.n_joints
        self.act_dim = self.n_joints
        self.max_steps = self.cfg.max_steps
        self.command = np.zeros((n, 2))
        self.prev_action = np.zeros((n, self.n_joints))
        self.steps = np.zeros(n, dtype=np.int64)
        self.next_push = np.full(n, -1, dtype=np.int64)
        self.push_period = np.zeros(n)
        self.gravity_bias = np.zeros((n, 2))
        self.joint_pos_bias = np.zeros((n, self.n_joints))
        self.episode = [dict() for _ in range(n)]
        self.obs = np.zeros((n, self.obs_dim))
        self.record_rows: list[int] = []
        probe = self._inputs(np.zeros(n, dtype=bool))
        self.cost_names = evaluate_constraints(probe, self.specs, SIDES, m.joint_names).names
        self.running_max = np.zeros((n, len(self.cost_names)))
        for i in range(n):
            self._reset_one(i)
        self.obs = self._observe(np.arange(n))

    # ------------------------------------------------------------------ reset
    def reset(self) -> np.ndarray:
        """Re-seed every stream and start fresh episodes; returns the observation batch."""
        self.__init__(self.cfg, self.model, self.num_envs, seeds=self.seeds, train=self.train)
        return self.obs.copy()

    def _reset_one(self, i: int) -> None:
        cfg, rc, m = self.cfg, self.cfg.randomization, self.model
        sim = self.sim
        nominal_mass, nominal_inertia, nominal_com = self._nominal
        if self.randomize:
            p = {k: v[0] for k, v in sample_episode(self.rng_episode[i], rc, len(m.links), self.n_joints).items()}
            mass = nominal_mass.copy()
            inertia = nominal_inertia.copy()
            com = nominal_com.copy()
            mass[self._link_body] *= p["mass_scale"]
            inertia[self._link_body] *= p["inertia_scale"]
            com[self._link_body[0]] += p["base_com"]
            sim.mass[i], sim.inertia[i], sim.com[i] = mass, inertia, com
            sim.coulomb[i] = p["joint_friction"]
            sim.delay[i] = int(p["delay"])
            sim.mu[i] = p["friction"]
            sim.heights[i] = p["height_noise"]
            q_j = self.q_ref * p["joint_pos_scale"]
            qd_j = np.zeros(self.n_joints) * p["joint_vel_scale"]
            x0 = float(p["base_position"])
            base_v = np.array([p["base_lin_vel"][0], p["base_lin_vel"][1], p["base_ang_vel"]])
            self.push_period[i] = p["push_interval"]
        else:
            p = {}
            sim.mass[i], sim.inertia[i], sim.com[i] = nominal_mass, nominal_inertia, nominal_com
            sim.coulomb[i] = cfg.actuator.coulomb_array(self.n_joints)
            sim.delay[i] = cfg.nominal_delay
            sim.mu[i] = cfg.nominal_friction
            q_j = self.q_ref.copy()
            qd_j = np.zeros(self.n_joints)
            x0 = 0.0
            base_v = np.zeros(3)
            self.push_period[i] = 0.0
        self._load(i, x0, q_j, np.concatenate([base_v, qd_j]))

        self.command[i] = (self._sample_command(i), 0.0)
        self.prev_action[i] = 0.0
        self.steps[i] = 0
        if self.pushes and self.push_period[i] > 0:
            self.next_push[i] = int(round(self.push_period[i] / cfg.policy_dt))
        else:
            self.next_push[i] = -1
        if self.noisy:
            b = sample_noise_bias(self.rng_noise[i], rc, self.n_joints)
            self.gravity_bias[i] = b["gravity_bias"][0]
            self.joint_pos_bias[i] = b["joint_pos_bias"][0]
        else:
            self.gravity_bias[i] = 0.0
            self.joint_pos_bias[i] = 0.0
        self.episode[i] = {"params": p, "return": 0.0}

    def _load(self, i: int, x0: float, q_j: np.ndarray, v: np.ndarray) -> None:
        q_j = np.clip(q_j, self.q_lo, self.q_hi)
        z0 = self._ground_clearance(i, x0, q_j)
        q = np.concatenate([[x0, z0, 0.0], q_j])
        self.sim.load_state(i, initial_state(self.model, q, v, command=self.q_ref))

    def place(self, i: int, q_joints, v=None, x0: float = 0.0) -> None:
        """Restart row ``i`` from joint angles ``q_joints`` (feet on the ground) and
        generalized velocity ``v``; the episode counters are left untouched."""
        v = np.zeros(self.model.n_v) if v is None else np.asarray(v, dtype=float)
        self._load(i, float(x0), np.asarray(q_joints, dtype=float), v)
        self.obs[i] = self._observe(np.array([i]))[0]

    def _sample_command(self, i: int) -> float:
        lo, hi = self.cfg.command_range
        return float(self.rng_episode[i].uniform(lo, hi))

    def _ground_clearance(self, i: int, x0: float, q_j: np.ndarray) -> float:
        """Base height that rests the lowest foot on the terrain below it."""
        a = self.sim.arr
        q = np.concatenate([[x0, 0.0, 0.0], q_j])
        nv = q.shape[0]
        phi, pos, S = np.empty(nv), np.empty((nv, 2)), np.empty((nv, 3))
        K.forward_kinematics(a.jtype, a.parent, a.offset, q, phi, pos, S)
        z = 0.0
        for body, local in zip(a.foot_body, a.foot_local):
            px, pz = K.point_world(body, local, phi, pos)
            z = max(z, K.terrain_height(self.sim.heights[i], self.sim.x0, self.sim.cell, px) - pz)
        return z

    def set_command(self, command, rows=None) -> None:
        """Override the velocity command (``(v*, w*)`` or just ``v*``) and refresh observations."""
        rows = np.arange(self.num_envs) if rows is None else np.atleast_1d(rows)
        c = np.asarray(command, dtype=float)
        if c.ndim == 0 or c.shape[-1] != 2:
            c = np.stack(np.broadcast_arrays(c, 0.0), axis=-1)
        self.command[rows] = c
        self.obs[rows] = self._observe(rows)

    def set_friction(self, mu: float, rows=None) -> None:
        rows = np.arange(self.num_envs) if rows is None else np.atleast_1d(rows)
        self.sim.mu[rows] = mu

    # ------------------------------------------------------------------ step
    def _observe(self, rows: np.ndarray) -> np.ndarray:
        sim = self.sim
        noise = bias = None
        if self.noisy:
            parts = [sample_step_noise(self.rng_noise[i], self.cfg.randomization, self.n_joints) for i in rows]
            noise = {k: np.concatenate([p[k] for p in parts]) for k in parts[0]} if parts else None
            bias = {"gravity_bias": self.gravity_bias[rows], "joint_pos_bias": self.joint_pos_bias[rows]}
        q = np.nan_to_num(sim.q[rows])
        v = np.nan_to_num(sim.v[rows])
        return build_observation(v[:, 2], q[:, 2], q[:, 3:], v[:, 3:], self.command[rows],
                                 self.prev_action[rows], self.q_ref, self.cfg, noise, bias)

    def _inputs(self, diverged: np.ndarray) -> ConstraintInputs:
        sim = self.sim
        q = np.nan_to_num(sim.q)
        return ConstraintInputs(
            knee_hit=sim.knee_hit.copy(),
            base_hit=sim.base_hit[:, 0].copy(),
            gravity_z=np.where(diverged, 1.0, -np.cos(q[:, 2])),
            foot_fn=np.nan_to_num(sim.fn), foot_ft=np.nan_to_num(sim.ft),
            in_contact=sim.in_contact.copy(),
            torque=np.nan_to_num(sim.tau),
            qd=np.nan_to_num(sim.v[:, 3:]), qdd=np.nan_to_num(sim.qdd[:, 3:]),
            pitch=q[:, 2],
            hip=q[:, 3 + self.hip_idx], knee=q[:, 3 + self.knee_idx],
            touchdown=sim.touchdown.copy(), last_air=sim.last_air.copy(),
        )

    def targets(self, actions: np.ndarray) -> np.ndarray:
        a = np.clip(actions, -self.cfg.action_clip, self.cfg.action_clip)
        return np.clip(self.q_ref + self.cfg.action_scale * a, self.q_lo, self.q_hi)

    def step(self, actions, ext_force=None) -> StepResult:
        """Advance every robot one policy step.

        ``ext_force`` optionally gives base forces ``(N, 2, 2)``: the world
        (fx, fz) at the start and at the end of the step, interpolated linearly
        in between.
        """
        cfg, sim, n = self.cfg, self.sim, self.num_envs
        actions = np.asarray(actions, dtype=float).reshape(n, self.n_joints)
        actions = np.clip(actions, -cfg.action_clip, cfg.action_clip)
        target = self.targets(actions)

        pushed = np.zeros(n, dtype=bool)
        push_dv = np.zeros((n, 3))
        if self.pushes:
            due = np.nonzero(self.steps == self.next_push)[0]
            for i in due:
                dv = sample_push(self.rng_episode[i], cfg.randomization)[0]
                sim.v[i, :3] += dv
                push_dv[i] = dv
                pushed[i] = True
                self.next_push[i] += max(1, int(round(self.push_period[i] / cfg.policy_dt)))
            if due.size:
                sim.sync_momentum(due)

        sim.touchdown[:] = 0.0
        sim.knee_hit[:] = 0.0
        sim.base_hit[:] = 0.0
        if ext_force is None:
            sim.advance(target, cfg.decimation)
        else:
            f = np.asarray(ext_force, dtype=float).reshape(n, 2, 2)
            sim.advance(target, cfg.decimation, f[:, 0], f[:, 1])
        self.steps += 1
        diverged = sim.status != 0

        q = np.nan_to_num(sim.q)
        v = np.nan_to_num(sim.v)
        v_fwd, _ = base_velocity_in_base_frame(q[:, 2], v[:, 0], v[:, 1])
        reward = compute_reward(v_fwd, v[:, 2], self.command, cfg.reward)
        reward = np.where(diverged, 0.0, reward)

        report = evaluate_constraints(self._inputs(diverged), self.specs, SIDES, self.model.joint_names)
        ok = ~diverged
        rm = self.running_max[ok]
        self.running_max[ok] = update_running_max(rm, report.costs[ok], cfg.constraints.decay)
        delta = termination_probability(report.costs, self.running_max, report.hard, report.p_max)
        delta = np.where(diverged, 1.0, delta)
        report.delta = delta

        draws = np.array([r.random() for r in self.rng_term])
        if self.stochastic:
            terminated = draws < delta
        else:
            hard_hit = (report.costs[:, report.hard] > 0).any(axis=1) if report.hard.any() else np.zeros(n, bool)
            terminated = hard_hit
        terminated |= diverged
        truncated = (self.steps >= self.max_steps) & ~terminated

        self.prev_action[:] = actions
        # mid-episode command resampling
        if cfg.command_resample > 0:
            period = int(round(cfg.command_resample / cfg.policy_dt))
            for i in np.nonzero((self.steps % period == 0) & ~(terminated | truncated))[0]:
                self.command[i, 0] = self._sample_command(i)

        obs = self._observe(np.arange(n))
        for i in range(n):
            self.episode[i]["return"] += float(reward[i])

        done = terminated | truncated
        records = {}
        for i in self.record_rows:
            records[i] = self._record(i, actions[i], reward[i], delta[i], terminated[i], truncated[i],
                                      diverged[i], report, v_fwd[i], ext_force, push_dv[i] if pushed[i] else None)
        info = {
            "telemetry": records,
            "report": report,
            "diverged": diverged,
            "pushed": pushed,
            "push_dv": push_dv,
            "v_forward": v_fwd,
            "final_obs": None,
            "episode_length": None,
            "episode_return": None,
        }
        if done.any():
            rows = np.nonzero(done)[0]
            info["final_obs"] = obs.copy()
            info["episode_length"] = np.where(done, self.steps, 0)
            info["episode_return"] = np.array([self.episode[i]["return"] if done[i] else 0.0 for i in range(n)])
            for i in rows:
                sim.status[i] = 0
                self._reset_one(int(i))
            obs[rows] = self._observe(rows)
        self.obs = obs
        return StepResult(obs.copy(), reward, delta, terminated, truncated, info)

    # ------------------------------------------------------------------ telemetry
    def _record(self, i, action, reward, delta, terminated, truncated, diverged, report, v_fwd,
                ext_force, push_dv) -> dict:
        sim, nsub = self.sim, self.cfg.decimation
        push = None
        ext_last = [0.0, 0.0]
        if ext_force is not None:
            f = np.asarray(ext_force, dtype=float).reshape(self.num_envs, 2, 2)[i]
            if np.any(f != 0.0):
                push = f[1].tolist()
            ext_last = (f[0] + (f[1] - f[0]) * (nsub - 0.5) / nsub).tolist()
        q, v = sim.q[i], sim.v[i]
        return {
            "step": int(self.steps[i]),
            "t": float(self.steps[i] * self.cfg.policy_dt),
            "command": self.command[i].tolist(),
            "action": np.asarray(action).tolist(),
            "x": float(q[0]), "z": float(q[1]), "pitch": float(q[2]),
            "vx": float(v[0]), "vz": float(v[1]), "pitch_rate": float(v[2]),
            "v_forward": float(v_fwd),
            "q": q[3:].tolist(), "qd": v[3:].tolist(), "qdd": sim.qdd[i, 3:].tolist(),
            "tau": sim.tau[i].tolist(), "tau_friction": sim.tau_friction[i].tolist(),
            "contact": sim.in_contact[i].tolist(), "fn": sim.fn[i].tolist(), "ft": sim.ft[i].tolist(),
            "mu": float(sim.mu[i]),
            "reward": float(reward), "delta": float(delta),
            "terminated": bool(terminated), "truncated": bool(truncated), "diverged": bool(diverged),
            "costs": {name: float(c) for name, c in zip(report.names, report.costs[i])},
            "push_force": push,
            "push_dv": None if push_dv is None else np.asarray(push_dv).tolist(),
            "dyn": {
                "q_full": sim.dyn_q[i].tolist(), "v_full": sim.dyn_v[i].tolist(),
                "qdd_full": sim.qdd[i].tolist(), "ext_force": ext_last,
            },
        }


def episode_done(result: StepResult) -> np.ndarray:
    return result.terminated | result.truncated


__all__ = ["BipedEnv", "StepResult", "build_observation", "episode_done", "SIDES", "ConstraintReport"]
