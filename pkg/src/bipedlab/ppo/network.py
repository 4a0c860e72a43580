"""Actor-critic MLPs with hand-written reverse-mode gradients.

Both networks use tanh hidden layers and a linear output layer. The actor
outputs the Gaussian mean (times ``action_scale``) and owns a
state-independent log standard deviation; the critic outputs a scalar value.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DynamicsInputError

LOG_STD_MIN = -5.0
LOG_STD_MAX = 1.0


@dataclass
class MLP:
    weights: list[np.ndarray]  # W_l with shape (out, in)
    biases: list[np.ndarray]

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    def forward(self, x: np.ndarray, keep: bool = False):
        """Batch forward pass; with ``keep`` also returns the per-layer activations."""
        acts = [x]
        h = x
        last = len(self.weights) - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w.T + b
            if k < last:
                h = np.tanh(h)
            acts.append(h)
        return (h, acts) if keep else h

    def backward(self, acts: list[np.ndarray], grad_out: np.ndarray):
        """Gradients of ``sum(grad_out * output)`` w.r.t. weights and biases."""
        gw = [None] * len(self.weights)
        gb = [None] * len(self.weights)
        g = grad_out
        for k in range(len(self.weights) - 1, -1, -1):
            gw[k] = g.T @ acts[k]
            gb[k] = g.sum(axis=0)
            if k > 0:
                g = (g @ self.weights[k]) * (1.0 - acts[k] ** 2)
        return gw, gb

    def copy(self) -> "MLP":
        return MLP([w.copy() for w in self.weights], [b.copy() for b in self.biases])


def _orthogonal(rng: np.random.Generator, rows: int, cols: int, gain: float) -> np.ndarray:
    a = rng.normal(size=(max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


def init_mlp(rng: np.random.Generator, sizes, out_gain: float) -> MLP:
    ws, bs = [], []
    for k in range(len(sizes) - 1):
        gain = out_gain if k == len(sizes) - 2 else np.sqrt(2.0)
        ws.append(_orthogonal(rng, sizes[k + 1], sizes[k], gain))
        bs.append(np.zeros(sizes[k + 1]))
    return MLP(ws, bs)


@dataclass
class PolicyParams:
    actor: MLP
    critic: MLP
    log_std: np.ndarray
    action_scale: float = 1.0
    activation: str = field(default="tanh")

    @property
    def obs_dim(self) -> int:
        return self.actor.sizes[0]

    @property
    def act_dim(self) -> int:
        return self.actor.sizes[-1]

    def arrays(self) -> list[np.ndarray]:
        """All trainable arrays in a fixed order (actor W/b, critic W/b, log_std)."""
        out = []
        for net in (self.actor, self.critic):
            for w, b in zip(net.weights, net.biases):
                out += [w, b]
        out.append(self.log_std)
        return out

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def set_flat(self, vec: np.ndarray) -> None:
        i = 0
        for a in self.arrays():
            a[...] = vec[i: i + a.size].reshape(a.shape)
            i += a.size

    def copy(self) -> "PolicyParams":
        return PolicyParams(self.actor.copy(), self.critic.copy(), self.log_std.copy(),
                            self.action_scale, self.activation)

    def clamp_log_std(self) -> None:
        np.clip(self.log_std, LOG_STD_MIN, LOG_STD_MAX, out=self.log_std)


def init_policy(obs_dim: int, act_dim: int, hidden=(128, 64), seed: int = 0, init_log_std: float = 0.0,
                action_scale: float = 1.0, critic_hidden=None) -> PolicyParams:
    rng = np.random.default_rng(seed)
    actor = init_mlp(rng, [obs_dim, *hidden, act_dim], 0.01)
    critic = init_mlp(rng, [obs_dim, *(critic_hidden or hidden), 1], 1.0)
    return PolicyParams(actor, critic, np.full(act_dim, float(init_log_std)), action_scale)


def zero_policy(obs_dim: int, act_dim: int, hidden=(128, 64)) -> PolicyParams:
    def z(sizes):
        return MLP([np.zeros((sizes[k + 1], sizes[k])) for k in range(len(sizes) - 1)],
                   [np.zeros(sizes[k + 1]) for k in range(len(sizes) - 1)])
    return PolicyParams(z([obs_dim, *hidden, act_dim]), z([obs_dim, *hidden, 1]), np.zeros(act_dim))


def policy_forward(params: PolicyParams, obs):
    """Return ``(mean, std, value)`` for a single observation or a batch."""
    obs = np.asarray(obs, dtype=float)
    single = obs.ndim == 1
    x = obs[None, :] if single else obs
    if x.shape[-1] != params.obs_dim:
        raise DynamicsInputError(f"observation has {x.shape[-1]} entries, policy expects {params.obs_dim}")
    mean = params.action_scale * params.actor.forward(x)
    value = params.critic.forward(x)[:, 0]
    std = np.exp(params.log_std)
    if single:
        return mean[0], std, value[0]
    return mean, np.broadcast_to(std, mean.shape), value


def gaussian_log_prob(actions, mean, log_std) -> np.ndarray:
    z = (actions - mean) * np.exp(-log_std)
    return np.sum(-0.5 * z * z - log_std - 0.5 * np.log(2.0 * np.pi), axis=-1)


def gaussian_entropy(log_std) -> float:
    return float(np.sum(log_std + 0.5 * np.log(2.0 * np.pi * np.e)))
