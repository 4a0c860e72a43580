"""Sampling of per-episode physical parameters, initial states, pushes and sensor noise."""

from __future__ import annotations

import numpy as np

from .config import RandomizationConfig


def _u(rng: np.random.Generator, rng_pair, size):
    lo, hi = rng_pair
    return rng.uniform(lo, hi, size)


def n_terrain_cells(cfg: RandomizationConfig) -> int:
    return int(round(cfg.terrain_length / cfg.terrain_cell))


def sample_terrain(rng: np.random.Generator, cfg: RandomizationConfig, n: int = 1) -> np.ndarray:
    """Piecewise-constant heights on the configured step grid, shape ``(n, cells)``."""
    lo, hi = cfg.height_noise
    k_lo = int(np.ceil(lo / cfg.height_step - 1e-9))
    k_hi = int(np.floor(hi / cfg.height_step + 1e-9))
    k = rng.integers(k_lo, k_hi + 1, size=(n, n_terrain_cells(cfg)))
    return k * cfg.height_step


def sample_episode(rng: np.random.Generator, cfg: RandomizationConfig, n_links: int,
                   n_joints: int, n: int = 1) -> dict[str, np.ndarray]:
    """Draw every per-episode quantity for ``n`` episodes from one stream.

    Draw order is fixed so that a single environment and row ``i`` of a batch
    reproduce each other when handed the same generator state.
    """
    out = {
        "friction": _u(rng, cfg.friction, n),
        "mass_scale": _u(rng, cfg.mass_scale, (n, n_links)),
        "inertia_scale": _u(rng, cfg.inertia_scale, (n, n_links)),
        "base_com": _u(rng, cfg.base_com, (n, 2)),
        "joint_friction": _u(rng, cfg.joint_friction, (n, n_joints)),
        "delay": rng.integers(cfg.delay[0], cfg.delay[1] + 1, size=n),
        "base_position": _u(rng, cfg.base_position, n),
        "base_yaw": _u(rng, cfg.base_yaw, n),
        "base_lin_vel": _u(rng, cfg.base_lin_vel, (n, 2)),
        "base_ang_vel": _u(rng, cfg.base_ang_vel, n),
        "joint_pos_scale": _u(rng, cfg.joint_scale, (n, n_joints)),
        "joint_vel_scale": _u(rng, cfg.joint_scale, (n, n_joints)),
        "push_interval": _u(rng, cfg.push_interval, n),
        "height_noise": sample_terrain(rng, cfg, n),
    }
    return out


def sample_push(rng: np.random.Generator, cfg: RandomizationConfig, n: int = 1) -> np.ndarray:
    """Base velocity offsets ``(dx, dz, dpitch_rate)`` per push, shape ``(n, 3)``."""
    return np.stack([_u(rng, cfg.push_lin_x, n), _u(rng, cfg.push_lin_z, n), _u(rng, cfg.push_ang, n)], axis=1)


def sample_noise_bias(rng: np.random.Generator, cfg: RandomizationConfig, n_joints: int,
                      n: int = 1) -> dict[str, np.ndarray]:
    """Per-episode sensor offsets, held fixed until the next reset."""
    return {
        "gravity_bias": _u(rng, cfg.noise_gravity_bias, (n, 2)),
        "joint_pos_bias": _u(rng, cfg.noise_joint_pos_bias, (n, n_joints)),
    }


def sample_step_noise(rng: np.random.Generator, cfg: RandomizationConfig, n_joints: int,
                      n: int = 1) -> dict[str, np.ndarray]:
    return {
        "ang_vel": _u(rng, cfg.noise_ang_vel, n),
        "gravity": rng.normal(0.0, cfg.noise_gravity_std, (n, 2)),
        "joint_pos": _u(rng, cfg.noise_joint_pos, (n, n_joints)),
        "joint_vel": _u(rng, cfg.noise_joint_vel, (n, n_joints)),
    }
