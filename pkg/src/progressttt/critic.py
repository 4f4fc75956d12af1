"""Noisy pairwise progress critic.

The critic answers "how much of the *remaining* task does frame b complete
relative to frame a", in [-100, 100]. Under this semantics the noiseless
critic values telescope through the diminishing-returns accumulation exactly
to the oracle progress of the last frame.

Noise is a pure function of ``(seed, call_index)``: a sign flip with
probability ``flip_prob`` and a Gaussian whose variance grows with the
temporal gap between the two frames.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._validation import check_real, check_seed
from .envsim import EnvConfig, Observation, TaskSpec, oracle_progress
from .exceptions import ConfigError

_STREAM_SHIFT = 32


@dataclass(frozen=True)
class CriticConfig:
    sigma: float = 0.0
    bias: float = 0.0
    drift_per_step: float = 0.0
    flip_prob: float = 0.0
    seed: int = 0

    def __post_init__(self):
        check_real(self.sigma, "critic.sigma", low=0.0)
        check_real(self.bias, "critic.bias")
        check_real(self.drift_per_step, "critic.drift_per_step", low=0.0)
        check_real(self.flip_prob, "critic.flip_prob", low=0.0, high=1.0, high_open=True)
        check_seed(self.seed, "critic.seed")

    @property
    def noiseless(self) -> bool:
        return self.sigma == 0 and self.bias == 0 and self.drift_per_step == 0 and self.flip_prob == 0


def increment_from_progress(p_a: float, p_b: float) -> float:
    """``100 * (p_b - p_a) / (100 - p_a)``, defined as 0 once ``p_a`` is 100."""
    if p_a >= 100.0:
        return 0.0
    return 100.0 * (p_b - p_a) / (100.0 - p_a)


def true_increment(frame_a: Observation, frame_b: Observation, config: EnvConfig, task: TaskSpec) -> float:
    if frame_a == frame_b:
        return 0.0
    return increment_from_progress(oracle_progress(frame_a, config, task), oracle_progress(frame_b, config, task))


def noise_std(config: CriticConfig, gap: int) -> float:
    return math.sqrt(config.sigma**2 + (config.drift_per_step * gap) ** 2)


def estimate(
    config: CriticConfig,
    frame_a: Observation,
    frame_b: Observation,
    task: TaskSpec,
    call_index: int,
    env_config: EnvConfig,
) -> float:
    """One critic query. Replays bit-exactly for equal ``(config, frames, call_index)``."""
    value = true_increment(frame_a, frame_b, env_config, task)
    if not config.noiseless:
        gap = abs(frame_b.step_index - frame_a.step_index)
        rng = np.random.default_rng([config.seed, call_index])
        flip = rng.random() < config.flip_prob
        eps = rng.standard_normal() * noise_std(config, gap)
        value = value + config.bias + eps
        if flip:
            value = -value
    return min(max(value, -100.0), 100.0)


class ProgressCritic:
    """Callable critic handle bound to one environment and task.

    Each handle owns the call-index range ``stream << 32 + [0, 2**32)`` so
    concurrent rollouts draw independent, schedule-free noise. Every call
    increments :attr:`calls`; when ``log`` is a list, ``(call_index, gap,
    value)`` records are appended to it.
    """

    def __init__(
        self,
        config: CriticConfig,
        env_config: EnvConfig,
        task: TaskSpec,
        stream: int = 0,
        log: list | None = None,
    ):
        if stream < 0:
            raise ConfigError("critic stream must be nonnegative")
        self.config = config
        self.env_config = env_config
        self.task = task
        self.stream = stream
        self.calls = 0
        self.log = log

    def __call__(self, frame_a: Observation, frame_b: Observation) -> float:
        call_index = (self.stream << _STREAM_SHIFT) + self.calls
        value = estimate(self.config, frame_a, frame_b, self.task, call_index, self.env_config)
        self.calls += 1
        if self.log is not None:
            self.log.append((call_index, abs(frame_b.step_index - frame_a.step_index), value))
        return value
