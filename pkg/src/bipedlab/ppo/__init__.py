"""PPO with constraint-driven terminations: networks, losses, GAE, training, checkpoints."""

from .adam import Adam, clip_grad_norm
from .checkpoint import checkpoint_bytes, load_checkpoint, parse_checkpoint, save_checkpoint
from .gae import compute_gae, compute_gae_vanilla
from .loss import LossInfo, Minibatch, normalize_advantages, ppo_loss
from .network import (
    LOG_STD_MAX,
    LOG_STD_MIN,
    MLP,
    PolicyParams,
    gaussian_entropy,
    gaussian_log_prob,
    init_policy,
    policy_forward,
    zero_policy,
)
from .trainer import RolloutBuffer, StatsWriter, TrainConfig, Trainer, TrainResult, config_hash, train, train_config_from_dict

__all__ = [name for name in dir() if not name.startswith("_")]
