"""Evaluation metrics: steady-state speed, Froude number, cost of transport,
ground reaction forces from inverse dynamics and push impulse."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..dynamics import ActuatorModel, RobotModel, bias_forces, contact_jacobian, mass_matrix, point_jacobian
from ..errors import MetricsInputError, UndefinedCoTError, UnsteadyError
from .log import ExperimentLog

MIN_COT_SPEED = 0.02  # m/s
GRF_RIDGE = 1e-9


def _mean(x: np.ndarray) -> float:
    """Mean taken about the first sample; exact for constant signals."""
    x = np.asarray(x, dtype=float)
    return float(x[0] + np.mean(x - x[0]))


# ---------------------------------------------------------------- steady state
@dataclass(frozen=True)
class SteadyStateResult:
    v_mean: float
    error: float
    start: int
    end: int  # exclusive
    froude: float
    command: float


def moving_average(x: np.ndarray, width: int) -> np.ndarray:
    """Centered moving average over ``width`` samples (odd); only full windows are returned."""
    x = np.asarray(x, dtype=float)
    if width < 1 or width % 2 == 0:
        raise MetricsInputError("moving-average width must be a positive odd sample count")
    c = np.concatenate([[0.0], np.cumsum(x - x[0])])
    return x[0] + (c[width:] - c[:-width]) / width


def steady_state_velocity(v, dt: float, command: float, window: float = 0.5, tolerance: float | None = None,
                          floor: float = 0.05, g: float = 9.81, leg_length: float = 0.4) -> SteadyStateResult:
    """Mean velocity over the longest stable suffix of a uniformly sampled signal.

    The signal is smoothed with a centered moving average of ``window``
    seconds. The stable segment is the longest suffix of the smoothed signal
    whose spread (max - min) stays below ``tolerance`` (default
    ``max(0.1 |command|, floor)``). Raw samples enter the mean only once the
    whole smoothing window of the first stable point lies behind them, which
    keeps transients out of the average.
    """
    v = np.asarray(v, dtype=float)
    if dt <= 0:
        raise MetricsInputError("sample spacing must be positive")
    width = max(1, int(round(window / dt)))
    if width % 2 == 0:
        width += 1
    if v.shape[0] * dt <= 2 * window or v.shape[0] < 2 * width:
        raise UnsteadyError(f"log of {v.shape[0] * dt:.3f}s is too short for a {window}s window")
    tol = tolerance if tolerance is not None else max(0.1 * abs(command), floor)
    f = moving_average(v, width)
    half = width // 2
    hi = np.maximum.accumulate(f[::-1])[::-1]
    lo = np.minimum.accumulate(f[::-1])[::-1]
    stable = np.nonzero(hi - lo < tol)[0]
    if stable.size == 0:
        raise UnsteadyError("no stable segment: smoothed velocity never settles within tolerance")
    k = int(stable[0])
    start = k + 2 * half  # last raw sample of the first stable window
    end = v.shape[0]
    if end - start < width:
        raise UnsteadyError("stable segment is shorter than the smoothing window")
    v_mean = _mean(v[start:end])
    return SteadyStateResult(v_mean, command - v_mean, start, end, froude(v_mean, g, leg_length), command)


def steady_state_from_log(log: ExperimentLog, model: RobotModel, window: float = 0.5, **kw) -> SteadyStateResult:
    command = float(log.command[-1, 0])
    return steady_state_velocity(log.vx, log.dt, command, window, g=model.gravity, leg_length=model.leg_length, **kw)


# ---------------------------------------------------------------- Froude
def froude(v, g: float = 9.81, leg_length: float = 0.4):
    """Dimensionless speed ``v / sqrt(g L)`` (sign preserved)."""
    if g <= 0 or leg_length <= 0:
        raise MetricsInputError("g and leg length must be positive")
    return v / math.sqrt(g * leg_length)


# ---------------------------------------------------------------- energy
def power_loss(actuator: ActuatorModel, tau, qd, coulomb=None):
    """Joule and friction loss per joint: ``R (tau/K_t)^2`` and ``|tau_c qd| + b_v qd^2``."""
    tau = np.asarray(tau, dtype=float)
    qd = np.asarray(qd, dtype=float)
    if coulomb is None:
        c = np.asarray(actuator.coulomb, dtype=float)
    else:
        c = np.asarray(coulomb, dtype=float)
    p_j = actuator.resistance * (tau / actuator.torque_constant) ** 2
    p_f = np.abs(c * qd) + actuator.viscous * qd * qd
    return p_j, p_f


@dataclass(frozen=True)
class CoTResult:
    cot: float  # summed loss power over N samples / (N m g |v|)
    cot_energy: float  # loss energy / (m g distance)
    energy: float  # J
    mean_speed: float
    distance: float
    joule: tuple[float, ...]  # mean Joule loss per joint, W
    friction: tuple[float, ...]  # mean friction loss per joint, W


def cost_of_transport(log: ExperimentLog, model: RobotModel, actuator: ActuatorModel, coulomb=None) -> CoTResult:
    """Cost of transport from logged motor torques and joint velocities.

    ``cot`` reads the per-sample losses as powers averaged over the run;
    ``cot_energy`` integrates them over time (``P dt`` per sample) and divides
    by the weight times the distance actually covered.
    """
    v_bar = abs(_mean(log.vx))
    if v_bar < MIN_COT_SPEED:
        raise UndefinedCoTError(f"mean speed {v_bar:.4f} m/s is below {MIN_COT_SPEED} m/s")
    p_j, p_f = power_loss(actuator, log.tau, log.qd, coulomb)
    per_sample = np.sum(p_j + p_f, axis=1)
    n = per_sample.shape[0]
    weight = model.mass * model.gravity
    cot = float(np.sum(per_sample)) / (n * weight * v_bar)
    energy = float(np.sum(per_sample) * log.dt)
    distance = abs(float(log.x[-1] - log.x[0])) if log.x is not None else v_bar * n * log.dt
    cot_energy = energy / (weight * distance) if distance > 0 else float("inf")
    return CoTResult(cot, cot_energy, energy, v_bar, distance,
                     tuple(float(x) for x in p_j.mean(axis=0)), tuple(float(x) for x in p_f.mean(axis=0)))


# ---------------------------------------------------------------- ground reaction
@dataclass(frozen=True)
class GrfSample:
    forces: np.ndarray  # (n_feet, 2) world (fx, fz); zero for feet not in contact
    residual: float
    flagged: bool


def estimate_grf(model: RobotModel, q_full, v_full, qdd_full, tau_joints, contact_set,
                 ext_force=None) -> GrfSample:
    """Least-squares contact forces from ``M qdd + b = tau_full + J_c^T f (+ J_base^T f_ext)``.

    ``tau_joints`` is the net joint torque (motor minus friction); the base
    rows of ``tau_full`` are zero. Solved with the normal equations plus a
    small ridge; a rank-deficient active set is flagged but still returned.
    """
    q = np.asarray(q_full, dtype=float)
    n_feet = len(model.feet)
    tau_full = np.zeros(model.n_v)
    tau_full[model.n_v - model.n_joints:] = tau_joints
    rhs = mass_matrix(model, q) @ np.asarray(qdd_full, dtype=float) + bias_forces(model, q, v_full) - tau_full
    if ext_force is not None and np.any(np.asarray(ext_force) != 0.0):
        jb = point_jacobian(model, q, model.links[0].name, (0.0, 0.0))
        rhs = rhs - jb.T @ np.asarray(ext_force, dtype=float)
    active = [i for i in range(n_feet) if contact_set[i]]
    forces = np.zeros((n_feet, 2))
    if not active:
        return GrfSample(forces, float(np.linalg.norm(rhs)), False)
    A = np.concatenate([contact_jacobian(model, q, i).T for i in active], axis=1)
    f = np.linalg.solve(A.T @ A + GRF_RIDGE * np.eye(A.shape[1]), A.T @ rhs)
    sv = np.linalg.svd(A, compute_uv=False)
    flagged = bool(sv[-1] < 1e-6 * sv[0])
    for k, i in enumerate(active):
        forces[i] = f[2 * k: 2 * k + 2]
    return GrfSample(forces, float(np.linalg.norm(A @ f - rhs)), flagged)


def estimate_grf_log(log: ExperimentLog, model: RobotModel) -> list[GrfSample]:
    """GRF for every record using the logged simulator state, acceleration and torques."""
    out = []
    for k in range(len(log)):
        out.append(estimate_grf(model, log.dyn_q[k], log.dyn_v[k], log.dyn_qdd[k],
                                log.tau[k] - log.tau_friction[k], log.contact[k] > 0, log.ext_force[k]))
    return out


def grf_summary(forces, model: RobotModel) -> tuple[float, float]:
    """Mean and std of per-sample ``|f| / (m g)`` in percent over stance samples.

    ``forces`` is a sequence of per-sample total contact force vectors (or
    magnitudes).
    """
    f = np.asarray(forces, dtype=float)
    if f.size == 0:
        raise MetricsInputError("no stance samples")
    mag = np.linalg.norm(f, axis=-1) if f.ndim > 1 else np.abs(f)
    ratio = 100.0 * mag / (model.mass * model.gravity)
    return float(np.mean(ratio)), float(np.std(ratio))


# ---------------------------------------------------------------- impulse
def push_impulse(forces, dt: float):
    """Trapezoidal integral of uniformly sampled force (scalar or vector samples)."""
    f = np.asarray(forces, dtype=float)
    if f.shape[0] < 2:
        raise MetricsInputError("push impulse needs at least two samples")
    if dt <= 0:
        raise MetricsInputError("sample spacing must be positive")
    return dt * np.sum((f[1:] + f[:-1]) * 0.5, axis=0)
