"""Clipped-surrogate PPO loss and its exact gradient."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import TrainingError
from .network import PolicyParams, gaussian_entropy, gaussian_log_prob

ADV_STD_FLOOR = 1e-8


@dataclass
class Minibatch:
    obs: np.ndarray
    actions: np.ndarray
    old_log_prob: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray


@dataclass
class LossInfo:
    loss: float
    policy_loss: float
    value_loss: float
    entropy: float
    clip_fraction: float
    approx_kl: float


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    return (adv - adv.mean()) / max(float(adv.std()), ADV_STD_FLOOR)


def ppo_loss(params: PolicyParams, mb: Minibatch, clip: float, value_coef: float, entropy_coef: float,
             normalize: bool = True, with_grad: bool = True):
    """Loss ``L = L_clip + value_coef * mean((V - R)^2) - entropy_coef * H``.

    Returns ``(LossInfo, grads)``, ``grads`` being a list aligned with
    :meth:`PolicyParams.arrays` (``None`` when ``with_grad`` is false).
    """
    n = mb.obs.shape[0]
    adv = normalize_advantages(mb.advantages) if normalize else mb.advantages
    out, acts_a = params.actor.forward(mb.obs, keep=True)
    mean = params.action_scale * out
    value_out, acts_c = params.critic.forward(mb.obs, keep=True)
    value = value_out[:, 0]
    log_std = params.log_std

    logp = gaussian_log_prob(mb.actions, mean, log_std)
    log_ratio = logp - mb.old_log_prob
    ratio = np.exp(log_ratio)
    clipped = np.clip(ratio, 1.0 - clip, 1.0 + clip)
    surr1 = ratio * adv
    surr2 = clipped * adv
    policy_loss = -float(np.mean(np.minimum(surr1, surr2)))
    value_err = value - mb.returns
    value_loss = float(np.mean(value_err**2))
    entropy = gaussian_entropy(log_std)
    loss = policy_loss + value_coef * value_loss - entropy_coef * entropy
    if not np.isfinite(loss):
        raise TrainingError(
            f"non-finite PPO loss (policy={policy_loss}, value={value_loss}, entropy={entropy}, "
            f"max|log_ratio|={np.nanmax(np.abs(log_ratio)) if log_ratio.size else 0.0})"
        )
    info = LossInfo(
        loss=loss, policy_loss=policy_loss, value_loss=value_loss, entropy=entropy,
        clip_fraction=float(np.mean(np.abs(ratio - 1.0) > clip)),
        approx_kl=float(np.mean((ratio - 1.0) - log_ratio)),
    )
    if not with_grad:
        return info, None

    # d(-min(surr1, surr2))/dlogp: the unclipped branch is active when it is the
    # minimum or when the ratio lies inside the clip band (then both coincide)
    inside = (ratio > 1.0 - clip) & (ratio < 1.0 + clip)
    active = (surr1 <= surr2) | inside
    g_logp = np.where(active, -adv * ratio, 0.0) / n

    inv_var = np.exp(-2.0 * log_std)
    diff = mb.actions - mean
    g_mean = g_logp[:, None] * diff * inv_var
    g_log_std = np.sum(g_logp[:, None] * (diff * diff * inv_var - 1.0), axis=0) - entropy_coef

    gwa, gba = params.actor.backward(acts_a, g_mean * params.action_scale)
    g_value = (value_coef * 2.0 / n) * value_err
    gwc, gbc = params.critic.backward(acts_c, g_value[:, None])
    grads = []
    for gw, gb in ((gwa, gba), (gwc, gbc)):
        for w, b in zip(gw, gb):
            grads += [w, b]
    grads.append(g_log_std)
    return info, grads
