"""Sagittal biped RL environment: observations, reward, constraints and randomization."""

from .config import ConstraintConfig, EnvConfig, RandomizationConfig, RewardParams, env_config_from_dict
from .constraints import (
    ConstraintInputs,
    ConstraintReport,
    ConstraintSpec,
    Kind,
    build_specs,
    cat_termination,
    evaluate_constraints,
    gait_cost,
    termination_probability,
    update_running_max,
)
from .reward import compute_reward
from .vec_env import SIDES, BipedEnv, StepResult, build_observation, episode_done

__all__ = [name for name in dir() if not name.startswith("_")]
