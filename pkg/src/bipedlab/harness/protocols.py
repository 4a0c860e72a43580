"""Evaluation protocols over a fixed policy.

Every protocol reduces to a batch of independent trials run by
:func:`run_trials`: one robot per trial in a shared evaluation env (nominal
dynamics, clean observations, hard-constraint terminations only), each with
its own seed, command, optional push and optional friction event. Trials are
bit-identical whether they run alone or batched.

A policy is any callable mapping an observation batch ``(N, obs_dim)`` to
actions ``(N, act_dim)``.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..dynamics import RobotModel
from ..env import BipedEnv, EnvConfig
from ..errors import ConfigError, UndefinedCoTError, UnsteadyError
from ..metrics import ExperimentLog, cost_of_transport, froude, push_impulse, steady_state_velocity
from ..ppo import PolicyParams, policy_forward
from .config import ExperimentSpec, JumpSpec, PushSpec, SlipSpec

Policy = Callable[[np.ndarray], np.ndarray]
SAGITTAL_ANGLES = (0.0, 180.0)


def params_policy(params: PolicyParams) -> Policy:
    """Deterministic (mean-action) policy from network parameters."""

    def act(obs):
        return policy_forward(params, obs)[0]

    return act


def trial_seed(base: int, *keys: int) -> int:
    return int(np.random.SeedSequence([int(base), *[int(k) for k in keys]]).generate_state(1)[0])


# ---------------------------------------------------------------- trials
@dataclass(frozen=True)
class PushEvent:
    angle: float  # deg, 0 pushes the back of the robot (towards +x)
    force: float  # N
    start: float  # s
    duration: float  # s

    def vector(self) -> np.ndarray:
        if self.angle not in SAGITTAL_ANGLES:
            raise ConfigError(f"planar model only supports push angles {SAGITTAL_ANGLES}, got {self.angle}")
        return np.array([self.force * math.cos(math.radians(self.angle)), 0.0])


@dataclass(frozen=True)
class SlipEvent:
    start: float  # s
    duration: float  # s
    mu_low: float
    mu_nominal: float


@dataclass(frozen=True)
class TrialSpec:
    seed: int
    command: float
    duration: float  # s
    init_noise: tuple[float, float] = (0.0, 0.0)
    push: PushEvent | None = None
    slip: SlipEvent | None = None
    mu: float | None = None  # ground friction before any event (default: env nominal)


@dataclass
class TrialResult:
    spec: TrialSpec
    records: list[dict]
    fell: bool
    fall_time: float | None
    steps: int

    def log(self, start: int = 0, end: int | None = None) -> ExperimentLog:
        return ExperimentLog.from_records(self.records[start:end])


def _eval_config(env_cfg: EnvConfig, horizon: int) -> EnvConfig:
    dt = env_cfg.policy_dt
    return dataclasses.replace(env_cfg, command_resample=0.0, episode_length=(horizon + 1) * dt)


def run_trials(policy: Policy, trials: list[TrialSpec], env_cfg: EnvConfig, model: RobotModel | None = None
               ) -> list[TrialResult]:
    """Run every trial to its duration or first termination, recording each policy step."""
    if not trials:
        return []
    dt = env_cfg.policy_dt
    steps = np.array([int(round(t.duration / dt)) for t in trials])
    if np.any(steps < 1):
        raise ConfigError("trial duration shorter than one policy step")
    horizon = int(steps.max())
    n = len(trials)
    env = BipedEnv(_eval_config(env_cfg, horizon), model, num_envs=n, seeds=[t.seed for t in trials], train=False)
    env.record_rows = list(range(n))
    for i, t in enumerate(trials):
        a, b = t.init_noise
        if a > 0 or b > 0:
            rng = np.random.default_rng(np.random.SeedSequence([t.seed, 0xB1A5]))
            q = env.q_ref + rng.uniform(-a, a, env.n_joints)
            v = np.zeros(env.model.n_v)
            v[0] = rng.uniform(-b, b)
            env.place(i, q, v)
        if t.mu is not None:
            env.set_friction(t.mu, i)
        if t.slip is not None:
            env.set_friction(t.slip.mu_nominal, i)
    env.set_command(np.array([[t.command, 0.0] for t in trials]))

    push_rows = [i for i, t in enumerate(trials) if t.push is not None]
    push_win = {i: (int(round(trials[i].push.start / dt)), int(round(trials[i].push.duration / dt)),
                    trials[i].push.vector()) for i in push_rows}
    slip_win = {i: (int(round(t.slip.start / dt)), int(round(t.slip.duration / dt)))
                for i, t in enumerate(trials) if t.slip is not None}

    records: list[list[dict]] = [[] for _ in range(n)]
    active = np.ones(n, dtype=bool)
    fell = np.zeros(n, dtype=bool)
    fall_time: list[float | None] = [None] * n
    for k in range(1, horizon + 1):
        events: dict[int, dict] = {}
        for i, (k0, m) in slip_win.items():
            s = trials[i].slip
            if k == k0 + 1 and m > 0:
                env.set_friction(s.mu_low, i)
                events[i] = {"type": "slip", "t_start": k0 * dt, "t_end": (k0 + m) * dt,
                             "mu_low": s.mu_low, "mu_nominal": s.mu_nominal}
            elif k == k0 + m + 1 and m > 0:
                env.set_friction(s.mu_nominal, i)
                events[i] = {"type": "slip_end", "t": (k0 + m) * dt, "mu": s.mu_nominal}
        ext = None
        if push_rows:
            ext = np.zeros((n, 2, 2))
            for i, (k0, m, f) in push_win.items():
                if k0 < k <= k0 + m:
                    ext[i, :] = f
                if k == k0 + 1:
                    p = trials[i].push
                    events[i] = {"type": "push", "t_start": k0 * dt, "duration": m * dt,
                                 "force": p.force, "angle": p.angle}
        res = env.step(policy(env.obs), ext)
        tel = res.info["telemetry"]
        for i in np.nonzero(active)[0]:
            rec = tel[i]
            if i in events:
                rec["event"] = events[i]
            records[i].append(rec)
            if res.terminated[i]:
                active[i] = False
                fell[i] = True
                fall_time[i] = k * dt
            elif k >= steps[i]:
                active[i] = False
        if not active.any():
            break
    return [TrialResult(trials[i], records[i], bool(fell[i]), fall_time[i], len(records[i])) for i in range(n)]


# ---------------------------------------------------------------- per-trial metrics
def trial_metrics(result: TrialResult, model: RobotModel, env_cfg: EnvConfig, window: float) -> dict:
    """Steady-state speed and cost of transport over the stable segment of one trial."""
    g, L = model.gravity, model.leg_length
    cmd = result.spec.command
    row = {"command": cmd, "seed": result.spec.seed, "fell": result.fell, "fall_time": result.fall_time,
           "steady": False, "v_mean": None, "error": None, "command_froude": froude(cmd, g, L),
           "error_froude": None, "froude": None, "stable_start": None, "stable_end": None,
           "cot": None, "cot_energy": None}
    if result.fell or result.steps < 2:
        return row
    log = result.log()
    try:
        ss = steady_state_velocity(log.vx, log.dt, cmd, window, g=g, leg_length=L)
    except UnsteadyError:
        return row
    row.update(steady=True, v_mean=ss.v_mean, error=ss.error, error_froude=froude(ss.error, g, L),
               froude=ss.froude, stable_start=ss.start, stable_end=ss.end)
    try:
        c = cost_of_transport(result.log(ss.start, ss.end), model, env_cfg.actuator)
        row.update(cot=c.cot, cot_energy=c.cot_energy)
    except UndefinedCoTError:
        pass
    return row


def _stats(values) -> tuple[float | None, float | None]:
    v = [x for x in values if x is not None]
    if not v:
        return None, None
    a = np.asarray(v, dtype=float)
    return float(np.mean(a)), float(np.std(a))


# ---------------------------------------------------------------- velocity sweep
VELOCITY_TRIAL_COLUMNS = [
    "command", "repetition", "seed", "fell", "fall_time", "steady", "success", "v_mean", "error",
    "command_froude", "error_froude", "froude", "stable_start", "stable_end", "cot", "cot_energy",
]
VELOCITY_SUMMARY_COLUMNS = [
    "command", "command_froude", "repetitions", "successes", "falls", "v_mean", "v_std", "error", "error_std",
    "error_froude", "error_froude_std", "cot", "cot_std",
]


@dataclass
class SweepReport:
    trials: list[dict]
    summary: list[dict]
    results: list[TrialResult] = field(repr=False, default_factory=list)


def _success(row: dict, tol: float) -> bool:
    if row["fell"] or not row["steady"]:
        return False
    if row["command"] == 0.0:
        return abs(row["v_mean"]) < tol
    return True


def run_velocity_sweep(policy: Policy, spec: ExperimentSpec, env_cfg: EnvConfig, model: RobotModel,
                       seed: int = 0) -> SweepReport:
    grid = spec.grid()
    trials = [TrialSpec(trial_seed(seed, ci, r), v, spec.duration, spec.init_noise)
              for ci, v in enumerate(grid) for r in range(spec.repetitions)]
    results = run_trials(policy, trials, env_cfg, model)
    rows = []
    for k, res in enumerate(results):
        row = trial_metrics(res, model, env_cfg, spec.window)
        row["repetition"] = k % spec.repetitions
        row["success"] = _success(row, spec.zero_speed_tol)
        rows.append(row)
    g, L = model.gravity, model.leg_length
    summary = []
    for ci, v in enumerate(grid):
        group = rows[ci * spec.repetitions:(ci + 1) * spec.repetitions]
        ok = [r for r in group if r["steady"]]
        vm, vs = _stats(r["v_mean"] for r in ok)
        em, es = _stats(r["error"] for r in ok)
        fm, fs = _stats(r["error_froude"] for r in ok)
        cm, cs = _stats(r["cot"] for r in ok)
        summary.append({
            "command": v, "command_froude": froude(v, g, L), "repetitions": len(group),
            "successes": sum(r["success"] for r in group), "falls": sum(r["fell"] for r in group),
            "v_mean": vm, "v_std": vs, "error": em, "error_std": es, "error_froude": fm, "error_froude_std": fs,
            "cot": cm, "cot_std": cs,
        })
    return SweepReport(rows, summary, results)


# ---------------------------------------------------------------- max velocity
@dataclass
class MaxVelocityResult:
    v_min: float | None  # most negative command passed; None when -step already fails
    v_max: float | None
    fr_min: float | None
    fr_max: float | None
    below_grid_backward: bool
    below_grid_forward: bool
    trials: list[dict] = field(default_factory=list)

    def row(self) -> dict:
        return {"v_min": self.v_min, "v_max": self.v_max, "fr_min": self.fr_min, "fr_max": self.fr_max,
                "below_grid_backward": self.below_grid_backward, "below_grid_forward": self.below_grid_forward}


MAX_VELOCITY_COLUMNS = ["v_min", "v_max", "fr_min", "fr_max", "below_grid_backward", "below_grid_forward"]


def find_max_velocity(policy: Policy, spec: ExperimentSpec, env_cfg: EnvConfig, model: RobotModel,
                      seed: int = 0) -> MaxVelocityResult:
    """Walk the command grid outwards from zero in both directions; a level
    passes when every repetition reaches steady state without falling."""
    grid = spec.grid()
    forward = sorted(v for v in grid if v > 0)
    backward = sorted((v for v in grid if v < 0), reverse=True)
    best = {1: None, -1: None}
    searching = {1: bool(forward), -1: bool(backward)}
    levels = {1: forward, -1: backward}
    rows: list[dict] = []
    j = 0
    while searching[1] or searching[-1]:
        batch = []
        for d in (1, -1):
            if searching[d] and j < len(levels[d]):
                v = levels[d][j]
                ci = grid.index(v)
                batch += [(d, r, TrialSpec(trial_seed(seed, ci, r), v, spec.duration, spec.init_noise))
                          for r in range(spec.repetitions)]
            else:
                searching[d] = False
        if not batch:
            break
        results = run_trials(policy, [b[2] for b in batch], env_cfg, model)
        passed = {1: True, -1: True}
        for (d, r, _), res in zip(batch, results):
            row = trial_metrics(res, model, env_cfg, spec.window)
            row["repetition"] = r
            row["success"] = not row["fell"] and row["steady"]
            passed[d] &= row["success"]
            rows.append(row)
        for d in (1, -1):
            if not searching[d]:
                continue
            if passed[d]:
                best[d] = levels[d][j]
            else:
                searching[d] = False
        j += 1
    g, L = model.gravity, model.leg_length
    fr = lambda v: None if v is None else froude(v, g, L)  # noqa: E731
    return MaxVelocityResult(best[-1], best[1], fr(best[-1]), fr(best[1]),
                             bool(backward) and best[-1] is None, bool(forward) and best[1] is None, rows)


# ---------------------------------------------------------------- pushes
PUSH_COLUMNS = ["angle", "status", "max_force", "impulse", "impulse_pct", "first_failure_force", "levels"]
PUSH_TRIAL_COLUMNS = ["angle", "force", "repetition", "seed", "survived", "fall_time", "impulse"]


@dataclass
class PushReport:
    rows: list[dict]
    trials: list[dict]
    results: list[TrialResult] = field(repr=False, default_factory=list)


def logged_impulse(result: TrialResult) -> float:
    """Impulse of the force profile as it appears in the telemetry."""
    log = result.log()
    return float(np.linalg.norm(push_impulse(log.push_force, log.dt)))


def run_push_sweep(policy: Policy, spec: PushSpec, env_cfg: EnvConfig, model: RobotModel,
                   seed: int = 0) -> PushReport:
    """Force ladder per direction; a level is survived when every repetition stays up."""
    weight = model.mass * model.gravity
    duration = spec.push_time + spec.duration + spec.recovery
    rows, trial_rows, kept = [], [], []
    for ai, angle in enumerate(spec.angles):
        row = {"angle": angle, "status": "ok", "max_force": None, "impulse": None, "impulse_pct": None,
               "first_failure_force": None, "levels": 0}
        if angle not in SAGITTAL_ANGLES:
            row["status"] = "not-sagittal"
            rows.append(row)
            continue
        for force in spec.forces:
            trials = [TrialSpec(trial_seed(seed, ai, r), spec.command, duration, spec.init_noise,
                                push=PushEvent(angle, force, spec.push_time, spec.duration))
                      for r in range(spec.repetitions)]
            results = run_trials(policy, trials, env_cfg, model)
            kept += results
            row["levels"] += 1
            lam = []
            for r, res in enumerate(results):
                imp = None if res.fell else logged_impulse(res)
                if imp is not None:
                    lam.append(imp)
                trial_rows.append({"angle": angle, "force": force, "repetition": r, "seed": res.spec.seed,
                                   "survived": not res.fell, "fall_time": res.fall_time, "impulse": imp})
            if any(res.fell for res in results):
                row["first_failure_force"] = force
                break
            row["max_force"] = force
            row["impulse"] = float(np.mean(lam))
            row["impulse_pct"] = 100.0 * row["impulse"] / weight
        if row["max_force"] is None:
            row["status"] = "below-schedule"
        rows.append(row)
    return PushReport(rows, trial_rows, kept)


# ---------------------------------------------------------------- slip
SLIP_COLUMNS = ["seed", "survived", "fall_time", "pre_event_fall", "baseline_survived", "baseline_fall_time"]
SLIP_SUMMARY_COLUMNS = ["seeds", "survival_rate", "baseline_rate", "mu_nominal", "mu_low", "slip_duration",
                        "event_time", "observe"]


@dataclass
class SlipReport:
    rows: list[dict]
    summary: dict
    results: list[TrialResult] = field(repr=False, default_factory=list)


def run_slip_test(policy: Policy, spec: SlipSpec, env_cfg: EnvConfig, model: RobotModel,
                  seed: int = 0) -> SlipReport:
    """Friction step during walking; success means no termination within
    ``observe`` seconds after the event. A baseline without the event runs on
    the same seeds."""
    duration = spec.event_time + spec.observe
    seeds = [trial_seed(seed, k) for k in range(spec.seeds)]
    slip = SlipEvent(spec.event_time, spec.slip_duration, spec.mu_low, spec.mu_nominal)
    trials = [TrialSpec(s, spec.command, duration, spec.init_noise, slip=slip) for s in seeds]
    trials += [TrialSpec(s, spec.command, duration, spec.init_noise, mu=spec.mu_nominal) for s in seeds]
    results = run_trials(policy, trials, env_cfg, model)
    ev, base = results[:len(seeds)], results[len(seeds):]
    rows = []
    for s, r, b in zip(seeds, ev, base):
        rows.append({"seed": s, "survived": not r.fell, "fall_time": r.fall_time,
                     "pre_event_fall": r.fell and r.fall_time <= spec.event_time,
                     "baseline_survived": not b.fell, "baseline_fall_time": b.fall_time})
    n = len(rows)
    summary = {"seeds": n, "survival_rate": sum(r["survived"] for r in rows) / n,
               "baseline_rate": sum(r["baseline_survived"] for r in rows) / n,
               "mu_nominal": spec.mu_nominal, "mu_low": spec.mu_low, "slip_duration": spec.slip_duration,
               "event_time": spec.event_time, "observe": spec.observe}
    return SlipReport(rows, summary, results)


# ---------------------------------------------------------------- jumps
@dataclass
class JumpStats:
    jumps: int
    consecutive: int
    duration: float  # s, first take-off to last landing of the longest series
    flights: list[tuple[float, float]]  # (take-off, landing) times

    def row(self) -> dict:
        return {"jumps": self.jumps, "consecutive": self.consecutive, "duration": self.duration}


JUMP_COLUMNS = ["jumps", "consecutive", "duration", "fell", "fall_time"]


def count_jumps(contact, dt: float, min_flight: float = 0.05, max_stance: float = 0.5,
                t0: float = 0.0) -> JumpStats:
    """Completed stance-flight-stance cycles in a sampled contact log.

    A jump is a run of samples with every foot airborne, at least
    ``min_flight`` long, with ground contact on both sides. Flights separated
    by no more than ``max_stance`` of ground time form one series.
    """
    c = np.asarray(contact, dtype=float)
    if c.ndim == 1:
        c = c[:, None]
    air = ~np.any(c > 0, axis=1)
    flights = []
    k, n = 0, air.shape[0]
    while k < n:
        if not air[k]:
            k += 1
            continue
        s = k
        while k < n and air[k]:
            k += 1
        if s > 0 and k < n and (k - s) * dt >= min_flight - 1e-9:
            flights.append((s, k))
    best, best_dur = 0, 0.0
    run_start = 0
    for j in range(len(flights)):
        if j > 0 and (flights[j][0] - flights[j - 1][1]) * dt > max_stance + 1e-9:
            run_start = j
        count = j - run_start + 1
        dur = (flights[j][1] - flights[run_start][0]) * dt
        if count > best:
            best, best_dur = count, dur
    return JumpStats(len(flights), best, best_dur, [(t0 + s * dt, t0 + e * dt) for s, e in flights])


def run_jump_eval(policy: Policy, spec: JumpSpec, env_cfg: EnvConfig, model: RobotModel,
                  seed: int = 0) -> tuple[JumpStats, TrialResult]:
    res = run_trials(policy, [TrialSpec(trial_seed(seed, 0), spec.command, spec.duration, spec.init_noise)],
                     env_cfg, model)[0]
    contact = np.array([r["contact"] for r in res.records]) if res.records else np.zeros((0, 2))
    dt = env_cfg.policy_dt
    return count_jumps(contact, dt, spec.min_flight, spec.max_stance, t0=dt), res
