"""Test-time training loop: behavior-cloning warm start, grouped rollouts
scored by the progress estimator, and GRPO updates under a horizon schedule.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import check_int, check_real, check_seed
from .critic import CriticConfig, ProgressCritic
from .curriculum import HorizonSchedule, default_schedule, horizon_at
from .envsim import (
    GRIP,
    NOOP,
    NUM_ACTIONS,
    ChainWorld,
    EnvConfig,
    Observation,
    Step,
    TaskSpec,
    Trajectory,
    chain_task,
    scripted_expert,
    shortest_path_actions,
)
from .exceptions import ConfigError
from .grpo import GroupBatch, GrpoConfig, compute_advantages, update
from .policy import PolicyParams, TokenPolicy, featurize, greedy_chunk, sample_chunk
from .progress import ProgressConfig, check_estimator_name, make_estimator
from .seeding import derive_seed, make_rng

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AblationConfig:
    variants: tuple[str, ...] = ()
    seeds: tuple[int, ...] = (0,)
    validation_success: int = 100
    validation_failure: int = 100

    def __post_init__(self):
        object.__setattr__(self, "variants", tuple(str(v) for v in self.variants))
        object.__setattr__(self, "seeds", tuple(check_seed(s, "ablation.seeds[]") for s in self.seeds))
        check_int(self.validation_success, "ablation.validation_success", minimum=1)
        check_int(self.validation_failure, "ablation.validation_failure", minimum=1)


@dataclass(frozen=True)
class RunConfig:
    """Everything needed to reproduce one run.

    ``gamma`` is carried for completeness of the MDP description; the
    trajectory-level GRPO update does not discount.
    """

    env: EnvConfig = field(default_factory=EnvConfig)
    task: TaskSpec | None = None
    critic: CriticConfig = field(default_factory=CriticConfig)
    progress: ProgressConfig = field(default_factory=ProgressConfig)
    grpo: GrpoConfig = field(default_factory=GrpoConfig)
    schedule: HorizonSchedule | None = None
    temperature: float = 1.2
    gamma: float = 1.0
    num_iterations: int = 100
    bc_demos: int = 1
    bc_epochs: int = 50
    bc_step_size: float = 0.1
    master_seed: int = 0
    estimator: str = "accumulative"
    num_slots: int = 1
    eval_interval: int = 5
    eval_episodes: int = 50
    ablation: AblationConfig = field(default_factory=AblationConfig)

    def __post_init__(self):
        if self.task is None:
            object.__setattr__(self, "task", chain_task(self.env.grid_size, self.env.num_stages))
        self.task.validate_for(self.env)
        if self.schedule is None:
            object.__setattr__(self, "schedule", HorizonSchedule(((self.env.max_horizon_cap, None),)))
        if self.schedule.final_horizon != self.env.max_horizon_cap:
            raise ConfigError(
                f"schedule final h_max ({self.schedule.final_horizon}) must equal "
                f"env.max_horizon_cap ({self.env.max_horizon_cap})"
            )
        check_real(self.temperature, "temperature", low=0.0, low_open=True)
        check_real(self.gamma, "gamma", low=0.0, high=1.0)
        check_int(self.num_iterations, "num_iterations", minimum=0)
        check_int(self.bc_demos, "bc_demos", minimum=0)
        check_int(self.bc_epochs, "bc_epochs", minimum=0)
        check_real(self.bc_step_size, "bc_step_size", low=0.0, low_open=True)
        check_seed(self.master_seed, "master_seed")
        check_estimator_name(self.estimator)
        check_int(self.num_slots, "num_slots", minimum=1)
        if self.progress.delta_check % self.num_slots:
            raise ConfigError(
                f"progress.delta_check ({self.progress.delta_check}) must be a multiple of num_slots ({self.num_slots})"
            )
        check_int(self.eval_interval, "eval_interval", minimum=0)
        check_int(self.eval_episodes, "eval_episodes", minimum=1)

    @property
    def feature_dim(self) -> int:
        return self.env.feature_dim

    def initial_params(self) -> PolicyParams:
        return PolicyParams.zeros(self.num_slots, NUM_ACTIONS, self.feature_dim)


def _chunk_actions(actions: list[int], num_slots: int) -> list[tuple[int, ...]]:
    padded = actions + [NOOP] * (-len(actions) % num_slots)
    return [tuple(padded[i : i + num_slots]) for i in range(0, len(padded), num_slots)]


def demonstrations(config: RunConfig) -> list[Trajectory]:
    return [
        scripted_expert(config.env, config.task, derive_seed(config.master_seed, "demo", i))
        for i in range(config.bc_demos)
    ]


def bc_dataset(config: RunConfig, demos: list[Trajectory]) -> tuple[np.ndarray, np.ndarray]:
    """Features at each chunk start and the expert tokens of that chunk."""
    X, y = [], []
    for demo in demos:
        actions = [tok for s in demo.steps for tok in s.tokens]
        frames = demo.frames
        for j, chunk in enumerate(_chunk_actions(actions, config.num_slots)):
            X.append(featurize(frames[j * config.num_slots], config.env))
            y.append(chunk)
    return np.array(X).reshape(-1, config.feature_dim), np.array(y, dtype=np.int64).reshape(-1, config.num_slots)


def pretrain_bc(config: RunConfig) -> PolicyParams:
    """Behavior cloning from ``bc_demos`` scripted demonstrations.

    Returns the zero (uniform) policy when there are no demonstrations.
    """
    if config.bc_demos == 0 or config.bc_epochs == 0:
        return config.initial_params()
    X, y = bc_dataset(config, demonstrations(config))
    model = TokenPolicy(
        vocab_size=NUM_ACTIONS, num_slots=config.num_slots, n_epochs=config.bc_epochs, step_size=config.bc_step_size
    ).fit(X, y)
    return model.params_


class _FeatureCache:
    """Memoizes featurization; observations are hashable and featurization is pure."""

    def __init__(self, env: EnvConfig):
        self.env = env
        self._cache: dict = {}

    def __call__(self, obs: Observation) -> np.ndarray:
        key = (obs.agent_pos, obs.stage_index, obs.item_flags, obs.gripper)
        phi = self._cache.get(key)
        if phi is None:
            phi = featurize(obs, self.env)
            phi.flags.writeable = False
            self._cache[key] = phi
        return phi


def run_rollout(
    params: PolicyParams,
    config: RunConfig,
    h_max: int,
    episode_seed: int,
    rng: np.random.Generator,
    critic: Callable,
    features: Callable | None = None,
    env_config: EnvConfig | None = None,
    trace: list | None = None,
) -> Trajectory:
    """One closed-loop rollout that stops on estimated completion or at ``h_max``."""
    if h_max > config.env.max_horizon_cap:
        raise ConfigError(f"h_max={h_max} exceeds env.max_horizon_cap={config.env.max_horizon_cap}")
    env = ChainWorld(env_config or config.env, config.task)
    features = features or _FeatureCache(config.env)
    obs = env.reset(episode_seed)
    estimator = make_estimator(config.estimator, config.progress, critic, obs, trace=trace)
    steps: list[Step] = []
    terminated = False
    while obs.step_index < h_max:
        phi = features(obs)
        chunk = sample_chunk(params, phi, config.temperature, rng)
        steps.append(Step(obs, chunk.tokens, chunk.log_prob, phi))
        obs, _ = env.step(chunk.tokens[: h_max - obs.step_index])
        if estimator.observe(obs):
            terminated = True
            break
    estimator.finish(obs)
    traj = Trajectory(steps=steps, final_observation=obs, terminated_by_progress=terminated)
    traj.critic_calls = estimator.calls_made
    traj.assign_reward(estimator.reward)
    traj.info["oracle_success"] = env.success(obs)
    traj.info["oracle_progress"] = env.progress(obs)
    traj.info["episode_seed"] = episode_seed
    return traj


def rollout_group(
    params: PolicyParams,
    config: RunConfig,
    h_max: int,
    group_seed: int,
    critic_log: list | None = None,
    features: Callable | None = None,
) -> GroupBatch:
    """G rollouts from one shared initial state with independent sampling noise."""
    seed = config.master_seed
    episode_seed = derive_seed(seed, "episode", group_seed)
    features = features or _FeatureCache(config.env)
    trajectories = []
    for i in range(config.grpo.group_size):
        critic = ProgressCritic(
            config.critic, config.env, config.task, stream=derive_seed(seed, "critic", group_seed, i), log=critic_log
        )
        rng = make_rng(seed, "sample", group_seed, i)
        trajectories.append(run_rollout(params, config, h_max, episode_seed, rng, critic, features))
    return GroupBatch(trajectories=trajectories, temperature=config.temperature)


def greedy_policy(params: PolicyParams, env: EnvConfig) -> Callable[[Observation], tuple[int, ...]]:
    features = _FeatureCache(env)
    return lambda obs: greedy_chunk(params, features(obs))


def expert_policy(task: TaskSpec) -> Callable[[Observation], tuple[int, ...]]:
    """State-feedback expert: walk to the current target, then grip."""

    def act(obs: Observation) -> tuple[int, ...]:
        if obs.stage_index >= len(task.stage_targets):
            return (NOOP,)
        moves = shortest_path_actions(obs.agent_pos, task.stage_targets[obs.stage_index])
        return (moves[0],) if moves else (GRIP,)

    return act


def eval_success_rate(policy, config: RunConfig, episodes: int | None = None, tag: str = "eval") -> float:
    """Fraction of deterministic episodes that end in oracle success.

    ``policy`` is either :class:`PolicyParams` (decoded greedily) or a
    callable mapping an observation to a token chunk that depends only on the
    observation's state. Episodes run with the success-criterion mismatch
    disabled, stop on success or at the step cap, and stop early when the
    state repeats (a deterministic policy then loops forever).
    """
    episodes = config.eval_episodes if episodes is None else episodes
    if episodes < 1:
        raise ValueError("episodes must be positive")
    if isinstance(policy, PolicyParams):
        policy = greedy_policy(policy, config.env)
    env_config = replace(config.env, mismatch_enabled=False)
    env = ChainWorld(env_config, config.task)
    wins = 0
    for e in range(episodes):
        obs = env.reset(derive_seed(config.master_seed, tag, e))
        seen = set()
        done = False
        while not env.success(obs) and not done:
            state = (obs.agent_pos, obs.stage_index, obs.gripper)
            if state in seen:
                break
            seen.add(state)
            obs, done = env.step(policy(obs))
        wins += env.success(obs)
    return wins / episodes


def run_ttt(
    params: PolicyParams,
    config: RunConfig,
    sink: Callable[[dict], None] | None = None,
    critic_log: list | None = None,
) -> tuple[PolicyParams, list[dict]]:
    """Iterate rollout_group -> advantages -> GRPO update for ``num_iterations``.

    Each iteration's metrics dict is appended to the returned list and passed
    to ``sink`` immediately, so an aborted run leaves its partial log behind.
    """
    metrics: list[dict] = []
    features = _FeatureCache(config.env)
    for it in range(config.num_iterations):
        h = horizon_at(config.schedule, it)
        batch = rollout_group(params, config, h, group_seed=it, critic_log=critic_log, features=features)
        batch.advantages = compute_advantages(batch.rewards, config.grpo.std_floor)
        stats: dict = {}
        params = update(batch, params, config.grpo, stats)
        row = {
            "iteration": it,
            "h_max": h,
            "mean_reward": stats["mean_reward"],
            "reward_std": stats["reward_std"],
            "critic_calls": int(sum(tr.critic_calls for tr in batch.trajectories)),
            "clip_fraction": stats["clip_fraction"],
            "grad_norm": stats["grad_norm"],
            "mean_length": float(np.mean([len(tr) for tr in batch.trajectories])),
            "oracle_sr": float(np.mean([tr.info["oracle_success"] for tr in batch.trajectories])),
            "mismatch": sum(
                tr.reward > config.progress.tau_threshold and not tr.info["oracle_success"]
                for tr in batch.trajectories
            ),
        }
        if config.eval_interval and (it + 1) % config.eval_interval == 0:
            row["eval_sr"] = eval_success_rate(params, config)
        logger.debug("iteration %d: %s", it, row)
        metrics.append(row)
        if sink is not None:
            sink(row)
    return params, metrics


class TestTimeTrainer(BaseEstimator):
    """Estimator-style front end: ``fit`` = BC warm start + test-time training.

    Parameters
    ----------
    config : RunConfig
        Full run description; a default 3-stage ChainWorld run when None.
    warm_start : PolicyParams or None
        Skip behavior cloning and start test-time training from these params.
    """

    __test__ = False

    def __init__(self, config=None, warm_start=None):
        self.config = config
        self.warm_start = warm_start

    def _config(self) -> RunConfig:
        return self.config if self.config is not None else RunConfig()

    def fit(self, X=None, y=None):
        cfg = self._config()
        start = self.warm_start if self.warm_start is not None else pretrain_bc(cfg)
        self.initial_params_ = start
        self.params_, self.metrics_ = run_ttt(start, cfg)
        return self

    def predict(self, observations) -> np.ndarray:
        """Greedy token chunks for a sequence of observations."""
        cfg = self._config()
        act = greedy_policy(self.params_, cfg.env)
        return np.array([act(obs) for obs in observations], dtype=np.int64)

    def score(self, X=None, y=None) -> float:
        return eval_success_rate(self.params_, self._config())
