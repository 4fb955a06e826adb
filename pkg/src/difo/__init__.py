"""Diffusion-model discriminators for imitation learning from observation."""

from .diffusion import make_schedule, forward_noise, denoising_loss, sample_next_state
from .discriminators import (DiffusionDiscriminator, DiscriminatorConfig, MlpDiscriminator,
                             Variant, make_discriminator, reward_stability)
from .envs import make_env, generate_expert, read_dataset, write_dataset, sine_sample
from .ppo import GaussianPolicy, PpoConfig, PpoTrainer, ValueNet, collect_rollout
from .trainer import TrainConfig, evaluate, load_config, parse_config, pretrain_na, train

__all__ = [
    "make_schedule", "forward_noise", "denoising_loss", "sample_next_state",
    "DiffusionDiscriminator", "DiscriminatorConfig", "MlpDiscriminator", "Variant",
    "make_discriminator", "reward_stability", "make_env", "generate_expert", "read_dataset",
    "write_dataset", "sine_sample", "GaussianPolicy", "PpoConfig", "PpoTrainer", "ValueNet",
    "collect_rollout", "TrainConfig", "evaluate", "load_config", "parse_config", "pretrain_na", "train",
]
__version__ = "0.1.0"
