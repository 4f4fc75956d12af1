"""Group Relative Policy Optimization for the tokenized policy.

Advantages are trajectory rewards standardized within the group (population
std, floored). The surrogate is the PPO clipped objective averaged over steps
of each trajectory and then over the group; there is no value network and no
KL term.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._validation import check_int, check_real
from .envsim import Trajectory
from .exceptions import StateError
from .policy import PolicyParams, apply_update, log_softmax


@dataclass(frozen=True)
class GrpoConfig:
    group_size: int = 8
    clip_epsilon: float = 0.2
    step_size: float = 0.05
    epochs_per_batch: int = 2
    std_floor: float = 1e-6

    def __post_init__(self):
        check_int(self.group_size, "grpo.group_size", minimum=2)
        check_real(self.clip_epsilon, "grpo.clip_epsilon", low=0.0, high=1.0, low_open=True, high_open=True)
        check_real(self.step_size, "grpo.step_size", low=0.0)
        check_int(self.epochs_per_batch, "grpo.epochs_per_batch", minimum=0)
        check_real(self.std_floor, "grpo.std_floor", low=0.0, low_open=True)


@dataclass
class GroupBatch:
    trajectories: list[Trajectory]
    temperature: float
    advantages: np.ndarray | None = None

    @property
    def rewards(self) -> np.ndarray:
        if any(tr.reward is None for tr in self.trajectories):
            raise StateError("every trajectory needs a reward before computing advantages")
        return np.array([tr.reward for tr in self.trajectories], dtype=np.float64)


def compute_advantages(rewards, std_floor: float = 1e-6) -> np.ndarray:
    rewards = np.asarray(rewards, dtype=np.float64)
    if rewards.ndim != 1 or rewards.shape[0] < 2:
        raise ValueError("need a 1-d group of at least 2 rewards")
    if np.all(rewards == rewards[0]):
        return np.zeros_like(rewards)
    return (rewards - rewards.mean()) / max(rewards.std(), std_floor)


def _stack(trajectory: Trajectory):
    if not trajectory.steps:
        return None
    if any(s.features is None for s in trajectory.steps):
        raise StateError("trajectory steps are missing cached features")
    phi = np.stack([s.features for s in trajectory.steps])
    tokens = np.array([s.tokens for s in trajectory.steps], dtype=np.int64)
    behavior = np.array([s.log_prob for s in trajectory.steps], dtype=np.float64)
    if not np.all(np.isfinite(behavior)):
        raise StateError("trajectory steps are missing behavior log-probabilities")
    return phi, tokens, behavior


def surrogate_gradient(
    batch: GroupBatch, params: PolicyParams, config: GrpoConfig, stats: dict | None = None
) -> np.ndarray:
    """Ascent direction of the clipped surrogate at ``params``.

    A step contributes ``A * r * grad log pi`` unless the min in the clipped
    objective selects the constant clipped branch, in which case it
    contributes nothing.
    """
    if batch.advantages is None:
        raise StateError("compute advantages before the surrogate gradient")
    eps = config.clip_epsilon
    temp = batch.temperature
    grad = np.zeros_like(params.weights)
    n_steps = n_clipped = 0
    group = len(batch.trajectories)
    for adv, tr in zip(batch.advantages, batch.trajectories):
        stacked = _stack(tr)
        if stacked is None or adv == 0.0:
            if stacked is not None:
                n_steps += len(tr.steps)
            continue
        phi, tokens, behavior = stacked
        n = phi.shape[0]
        logp = log_softmax(np.einsum("svd,nd->nsv", params.weights, phi) / temp, axis=-1)
        taken = np.take_along_axis(logp, tokens[:, :, None], axis=-1)[:, :, 0].sum(axis=1)
        ratio = np.exp(taken - behavior)
        clipped = ratio > 1 + eps if adv > 0 else ratio < 1 - eps
        n_steps += n
        n_clipped += int(np.count_nonzero(clipped))
        weight = np.where(clipped, 0.0, adv * ratio) / (n * group)
        score = -np.exp(logp)
        score[np.arange(n)[:, None], np.arange(tokens.shape[1])[None, :], tokens] += 1.0
        grad += np.einsum("nsv,nd->svd", weight[:, None, None] * score, phi) / temp
    if stats is not None:
        stats["clip_fraction"] = n_clipped / n_steps if n_steps else 0.0
        stats["grad_norm"] = float(np.linalg.norm(grad))
    return grad


def update(batch: GroupBatch, params: PolicyParams, config: GrpoConfig, stats: dict | None = None) -> PolicyParams:
    """Run ``epochs_per_batch`` ascent steps on the surrogate.

    When ``stats`` is given it receives the clip fraction and gradient norm of
    the first epoch, plus the mean and std of the group rewards.
    """
    if batch.advantages is None:
        batch.advantages = compute_advantages(batch.rewards, config.std_floor)
    if stats is not None:
        rewards = batch.rewards
        stats.update(mean_reward=float(rewards.mean()), reward_std=float(rewards.std()),
                     advantage_std=float(np.std(batch.advantages)), clip_fraction=0.0, grad_norm=0.0)
    for epoch in range(config.epochs_per_batch):
        grad = surrogate_gradient(batch, params, config, stats if epoch == 0 else None)
        params = apply_update(params, grad, config.step_size)
    return params
