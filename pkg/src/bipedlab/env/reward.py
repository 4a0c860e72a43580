"""Velocity-tracking reward."""

from __future__ import annotations

import numpy as np

from .config import RewardParams


def compute_reward(v_base, omega, command, params: RewardParams):
    """Gaussian tracking reward for forward velocity and pitch-plane angular rate.

    ``v_base`` is the base-frame forward velocity, ``omega`` the base angular
    rate and ``command`` an array ``(..., 2)`` of ``(v*, omega*)``. Works on
    scalars or batches; the result lies in ``(0, w_lin + w_yaw]``.
    """
    command = np.asarray(command, dtype=float)
    err_v = command[..., 0] - np.asarray(v_base, dtype=float)
    err_w = command[..., 1] - np.asarray(omega, dtype=float)
    lin = params.w_lin * np.exp(-(err_v * err_v) / params.sigma_lin**2)
    ang = params.w_yaw * np.exp(-(err_w * err_w) / params.sigma_yaw**2)
    return lin + ang
