"""Rollout collection and PPO updates with termination-probability bootstrapping."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import warnings
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from ..errors import ConfigError, TrainingError
from .adam import Adam, clip_grad_norm
from .checkpoint import save_checkpoint
from .gae import compute_gae
from .loss import Minibatch, ppo_loss
from .network import PolicyParams, gaussian_log_prob, init_policy, policy_forward


@dataclass(frozen=True)
class TrainConfig:
    gamma: float = 0.99
    lam: float = 0.95
    clip: float = 0.2
    learning_rate: float = 1e-3
    adaptive_lr: bool = True
    desired_kl: float = 0.01
    epochs: int = 5
    minibatches: int = 4
    entropy_coef: float = 0.005
    value_coef: float = 1.0
    max_grad_norm: float = 1.0
    total_steps: int = 10_000_000
    num_envs: int = 512
    horizon: int = 32
    seed: int = 0
    hidden: tuple[int, ...] = (128, 64)
    init_log_std: float = 0.0
    action_scale: float = 1.0
    checkpoint_every: int = 50

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigError("gamma must lie in [0, 1)")
        if not 0.0 < self.clip < 1.0:
            raise ConfigError("clip ratio must lie in (0, 1)")
        if self.epochs < 1 or self.minibatches < 1 or self.horizon < 1 or self.num_envs < 1:
            raise ConfigError("epochs, minibatches, horizon and num_envs must be positive")
        if self.learning_rate <= 0:
            raise ConfigError("learning rate must be positive")

    @property
    def steps_per_iteration(self) -> int:
        return self.num_envs * self.horizon

    @property
    def iterations(self) -> int:
        # whole iterations only; total_steps is a budget, never exceeded unless it is below one iteration
        return max(1, self.total_steps // self.steps_per_iteration)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def train_config_from_dict(data: dict) -> TrainConfig:
    names = {f.name for f in dataclasses.fields(TrainConfig)}
    for key in data:
        if key not in names:
            raise ConfigError(f"TrainConfig: unknown key {key!r}")
    return TrainConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in data.items()})


def config_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class RolloutBuffer:
    obs: np.ndarray
    actions: np.ndarray
    log_prob: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    next_values: np.ndarray
    deltas: np.ndarray  # effective termination probability (1 on terminated steps)
    terminated: np.ndarray
    dones: np.ndarray
    means: np.ndarray
    advantages: np.ndarray = field(default=None)
    returns: np.ndarray = field(default=None)

    @classmethod
    def empty(cls, horizon: int, n: int, obs_dim: int, act_dim: int) -> "RolloutBuffer":
        z = lambda *s: np.zeros((horizon, n, *s))  # noqa: E731
        return cls(z(obs_dim), z(act_dim), z(), z(), z(), z(), z(), z(), z(), z(act_dim))


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".10g")


class StatsWriter:
    """CSV with a fixed column order and deterministic number formatting."""

    def __init__(self, path, columns: list[str]):
        self.path = Path(path) if path is not None else None
        self.columns = columns
        self.rows: list[dict] = []
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text(",".join(columns) + "\n")

    def write(self, row: dict) -> None:
        self.rows.append(row)
        if self.path is not None:
            with self.path.open("a") as fh:
                fh.write(",".join(_fmt(row[c]) for c in self.columns) + "\n")


@dataclass
class TrainResult:
    params: PolicyParams
    stats: list[dict]
    iterations: int
    steps: int


def _kinds(names: list[str]) -> list[str]:
    out = []
    for nm in names:
        k = nm.split("/")[0]
        if k not in out:
            out.append(k)
    return out


class Trainer:
    """PPO over any batched env exposing ``num_envs``, ``obs_dim``, ``act_dim``,
    ``obs``, ``cost_names`` and ``step(actions) -> StepResult``."""

    def __init__(self, env, cfg: TrainConfig, params: PolicyParams | None = None,
                 stats_path=None, checkpoint_path=None, meta: dict | None = None):
        self.env = env
        self.cfg = cfg
        self.params = params or init_policy(env.obs_dim, env.act_dim, cfg.hidden, seed=cfg.seed,
                                            init_log_std=cfg.init_log_std, action_scale=cfg.action_scale)
        self.rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x5EED]))
        self.opt = Adam(self.params.arrays(), lr=cfg.learning_rate)
        self.kinds = _kinds(list(env.cost_names))
        self.kind_cols = [np.array([nm.split("/")[0] == k for nm in env.cost_names]) for k in self.kinds]
        cols = ["iteration", "steps", "mean_reward", "mean_ep_len", "delta_mean", "terminated_rate"]
        cols += [f"viol_{k}" for k in self.kinds]
        cols += ["policy_loss", "value_loss", "entropy", "approx_kl", "clip_fraction", "learning_rate", "action_std"]
        self.stats = StatsWriter(stats_path, cols)
        self.checkpoint_path = checkpoint_path
        self.meta = dict(meta or {})
        self.ep_lens: deque = deque(maxlen=200)
        self.iteration = 0
        self.steps = 0

    # ---------------------------------------------------------------- collection
    def collect(self) -> tuple[RolloutBuffer, dict]:
        env, cfg, p = self.env, self.cfg, self.params
        T, n = cfg.horizon, env.num_envs
        buf = RolloutBuffer.empty(T, n, env.obs_dim, env.act_dim)
        obs = env.obs.copy()
        viol = np.zeros(len(self.kinds))
        delta_sum = 0.0
        term_sum = 0.0
        for t in range(T):
            mean, std, value = policy_forward(p, obs)
            actions = mean + std * self.rng.standard_normal(mean.shape)
            res = env.step(actions)
            buf.obs[t] = obs
            buf.actions[t] = actions
            buf.means[t] = mean
            buf.log_prob[t] = gaussian_log_prob(actions, mean, p.log_std)
            buf.values[t] = value
            buf.rewards[t] = res.reward
            done = res.terminated | res.truncated
            buf.terminated[t] = res.terminated
            buf.dones[t] = done
            buf.deltas[t] = np.where(res.terminated, 1.0, res.delta)
            succ = res.obs
            if done.any():
                succ = res.obs.copy()
                succ[done] = res.info["final_obs"][done]
                self.ep_lens.extend(int(x) for x in res.info["episode_length"][done])
            buf.next_values[t] = p.critic.forward(succ)[:, 0]
            report = res.info.get("report")
            if report is not None and report.costs.shape[1]:
                v = report.costs > 0.0
                viol += [float(np.mean(v[:, c].any(axis=1))) for c in self.kind_cols]
            delta_sum += float(np.mean(res.delta))
            term_sum += float(np.mean(res.terminated))
            obs = res.obs
        self.steps += T * n
        info = {
            "violation": viol / T,
            "delta_mean": delta_sum / T,
            "terminated_rate": term_sum / T,
            "mean_reward": float(np.mean(buf.rewards)),
        }
        return buf, info

    # ---------------------------------------------------------------- update
    def update(self, buf: RolloutBuffer) -> dict:
        cfg, p = self.cfg, self.params
        buf.advantages, buf.returns = compute_gae(buf.rewards, buf.values, buf.next_values, buf.deltas,
                                                  buf.dones, cfg.gamma, cfg.lam)
        if not np.all(np.isfinite(buf.advantages)):
            raise TrainingError("non-finite advantages")
        N = buf.rewards.size
        flat = lambda a: a.reshape(N, *a.shape[2:])  # noqa: E731
        obs, act, old_lp, old_mu = flat(buf.obs), flat(buf.actions), flat(buf.log_prob), flat(buf.means)
        rollout_log_std = p.log_std.copy()
        adv, ret = flat(buf.advantages), flat(buf.returns)
        size = N // cfg.minibatches
        agg = {"policy_loss": 0.0, "value_loss": 0.0, "entropy": 0.0, "approx_kl": 0.0, "clip_fraction": 0.0}
        count = 0
        for _ in range(cfg.epochs):
            perm = self.rng.permutation(N)
            for k in range(cfg.minibatches):
                idx = perm[k * size:(k + 1) * size]
                mb = Minibatch(obs[idx], act[idx], old_lp[idx], adv[idx], ret[idx])
                if cfg.adaptive_lr:
                    # step size follows the divergence from the rollout-time policy
                    kl = _gaussian_kl(old_mu[idx], rollout_log_std, p.action_scale * p.actor.forward(mb.obs),
                                      p.log_std)
                    if kl > 2.0 * cfg.desired_kl:
                        self.opt.lr = max(1e-5, self.opt.lr / 1.5)
                    elif 0.0 < kl < 0.5 * cfg.desired_kl:
                        self.opt.lr = min(1e-2, self.opt.lr * 1.5)
                info, grads = ppo_loss(p, mb, cfg.clip, cfg.value_coef, cfg.entropy_coef)
                clip_grad_norm(grads, cfg.max_grad_norm)
                self.opt.step(grads)
                p.clamp_log_std()
                for key in agg:
                    agg[key] += getattr(info, key)
                count += 1
        for a in p.arrays():
            if not np.all(np.isfinite(a)):
                raise TrainingError("non-finite parameters after update")
        return {k: v / count for k, v in agg.items()}

    # ---------------------------------------------------------------- loop
    def run(self, iterations: int | None = None, callback: Callable[[dict], None] | None = None) -> TrainResult:
        total = iterations if iterations is not None else self.cfg.iterations
        for _ in range(total):
            buf, cinfo = self.collect()
            try:
                uinfo = self.update(buf)
            except TrainingError as exc:
                self._dump(buf, exc)
                raise
            self.iteration += 1
            row = {
                "iteration": self.iteration,
                "steps": self.steps,
                "mean_reward": cinfo["mean_reward"],
                "mean_ep_len": float(np.mean(self.ep_lens)) if self.ep_lens else float("nan"),
                "delta_mean": cinfo["delta_mean"],
                "terminated_rate": cinfo["terminated_rate"],
                **{f"viol_{k}": v for k, v in zip(self.kinds, cinfo["violation"])},
                **uinfo,
                "learning_rate": self.opt.lr,
                "action_std": float(np.mean(np.exp(self.params.log_std))),
            }
            self.stats.write(row)
            if callback is not None:
                callback(row)
            if self.checkpoint_path is not None and (
                self.iteration % self.cfg.checkpoint_every == 0 or self.iteration == total
            ):
                self.save(self.checkpoint_path)
        return TrainResult(self.params, self.stats.rows, self.iteration, self.steps)

    def save(self, path) -> None:
        meta = dict(self.meta)
        meta.update({"iteration": self.iteration, "steps": self.steps})
        save_checkpoint(path, self.params, meta)

    def _dump(self, buf: RolloutBuffer, exc: Exception) -> None:
        if self.checkpoint_path is None:
            return
        path = Path(self.checkpoint_path).with_suffix(".diverged.json")
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)  # all-NaN buffers are expected here
            ranges = [[float(np.nanmin(a)), float(np.nanmax(a))] for a in (buf.rewards, buf.values)]
        diag = {
            "error": str(exc),
            "iteration": self.iteration,
            "reward_range": ranges[0],
            "value_range": ranges[1],
            "log_std": self.params.log_std.tolist(),
            "learning_rate": self.opt.lr,
        }
        path.write_text(json.dumps(diag, indent=2, sort_keys=True))


def _gaussian_kl(mean0, log_std0, mean1, log_std1) -> float:
    var0 = np.exp(2 * log_std0)
    var1 = np.exp(2 * log_std1)
    kl = log_std1 - log_std0 + (var0 + (mean0 - mean1) ** 2) / (2.0 * var1) - 0.5
    return float(np.mean(np.sum(kl, axis=-1)))


def train(env, cfg: TrainConfig, **kwargs) -> TrainResult:
    return Trainer(env, cfg, **kwargs).run()
