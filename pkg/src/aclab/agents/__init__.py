from .evaluate import assembly_expected_return, assembly_policy_return, evaluate_returns
from .losses import clipped_surrogate, combine, normalize_advantages, ppg_aux_loss, ppo_policy_loss, ppo_value_loss
from .model import ActorCriticModel, Forward
from .rollout import ReturnNormalizer, RolloutBuffer, RunningMeanStd, VecEnv, collect_rollout, compute_gae
from .train import ALGORITHMS, COUPLINGS, ConfigError, TrainConfig, TrainResult, build_model, train

__all__ = [
    "ActorCriticModel", "Forward", "RolloutBuffer", "VecEnv", "collect_rollout", "compute_gae",
    "ReturnNormalizer", "RunningMeanStd", "clipped_surrogate", "normalize_advantages", "ppo_policy_loss",
    "ppo_value_loss", "ppg_aux_loss", "combine", "TrainConfig", "TrainResult", "ConfigError", "train",
    "build_model", "ALGORITHMS", "COUPLINGS", "evaluate_returns", "assembly_policy_return",
    "assembly_expected_return",
]
