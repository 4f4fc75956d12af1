"""Test-time training of a tokenized policy with accumulative progress rewards."""
from .config import dump_config, from_dict, load_config, save_config, to_dict, with_overrides
from .critic import CriticConfig, ProgressCritic
from .curriculum import HorizonSchedule, default_schedule, horizon_at
from .envsim import ChainWorld, EnvConfig, Observation, TaskSpec, Trajectory, chain_task, scripted_expert
from .evalbench import FScoreReport, build_validation_set, critic_fscore, run_ablation_table
from .exceptions import ConfigError, GenerationError, StateError
from .grpo import GroupBatch, GrpoConfig, compute_advantages, surrogate_gradient, update
from .policy import PolicyParams, TokenPolicy, featurize, load_params, save_params
from .progress import MilestoneBuffer, ProgressConfig, accumulate, final_reward
from .ttt import RunConfig, TestTimeTrainer, eval_success_rate, pretrain_bc, run_ttt

__version__ = "0.1.0"

__all__ = [
    "ChainWorld",
    "ConfigError",
    "CriticConfig",
    "EnvConfig",
    "FScoreReport",
    "GenerationError",
    "GroupBatch",
    "GrpoConfig",
    "HorizonSchedule",
    "MilestoneBuffer",
    "Observation",
    "PolicyParams",
    "ProgressConfig",
    "ProgressCritic",
    "RunConfig",
    "StateError",
    "TaskSpec",
    "TestTimeTrainer",
    "TokenPolicy",
    "Trajectory",
    "accumulate",
    "build_validation_set",
    "chain_task",
    "compute_advantages",
    "critic_fscore",
    "default_schedule",
    "dump_config",
    "eval_success_rate",
    "featurize",
    "final_reward",
    "from_dict",
    "horizon_at",
    "load_config",
    "load_params",
    "pretrain_bc",
    "run_ablation_table",
    "run_ttt",
    "save_config",
    "save_params",
    "scripted_expert",
    "surrogate_gradient",
    "to_dict",
    "update",
    "with_overrides",
]
