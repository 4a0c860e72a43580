"""Generalized advantage estimation with a termination-probability bootstrap."""

from __future__ import annotations

import numpy as np


def compute_gae(rewards, values, next_values, deltas, dones, gamma: float, lam: float):
    """Advantages and return targets for a ``(T, N)`` rollout.

    ``d_t = r_t + gamma * (1 - delta_t) * V(s_{t+1}) - V_t`` and
    ``A_t = d_t + gamma * lam * A_{t+1}``, with the recursion cut where
    ``dones`` marks the last step of an episode. ``next_values`` holds the
    value of the true successor state, including the final state of an
    episode that ended on a time limit.
    """
    rewards = np.asarray(rewards, dtype=float)
    T = rewards.shape[0]
    adv = np.zeros_like(rewards)
    last = np.zeros(rewards.shape[1:])
    for t in range(T - 1, -1, -1):
        d = rewards[t] + gamma * (1.0 - deltas[t]) * next_values[t] - values[t]
        last = d + gamma * lam * (1.0 - dones[t]) * last
        adv[t] = last
    return adv, adv + values


def compute_gae_vanilla(rewards, values, next_values, terminated, dones, gamma: float, lam: float):
    """Textbook GAE: bootstrap removed only on true terminations."""
    rewards = np.asarray(rewards, dtype=float)
    term = np.asarray(terminated, dtype=float)
    T = rewards.shape[0]
    adv = np.zeros_like(rewards)
    last = np.zeros(rewards.shape[1:])
    for t in range(T - 1, -1, -1):
        d = rewards[t] + gamma * (1.0 - term[t]) * next_values[t] - values[t]
        last = d + gamma * lam * (1.0 - dones[t]) * last
        adv[t] = last
    return adv, adv + values
