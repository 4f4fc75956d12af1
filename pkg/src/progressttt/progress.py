"""Accumulative milestone-based progress estimation and its baselines.

All estimators share a rollout-facing interface: ``observe(obs, t)`` is
called after every environment step and returns True when the estimate says
the task is done, ``finish(obs)`` closes the rollout, ``reward`` is the
trajectory reward in [0, 1] and ``calls_made`` counts critic queries.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ._validation import check_int, check_real
from .envsim import Observation
from .exceptions import ConfigError, StateError

Critic = Callable[[Observation, Observation], float]


@dataclass(frozen=True)
class ProgressConfig:
    delta_milestone: int = 64
    delta_check: int = 16
    tau_threshold: float = 0.95

    def __post_init__(self):
        check_int(self.delta_milestone, "progress.delta_milestone", minimum=1)
        check_int(self.delta_check, "progress.delta_check", minimum=1)
        check_real(self.tau_threshold, "progress.tau_threshold", low=0.0, high=1.0, low_open=True)
        if self.delta_check > self.delta_milestone or self.delta_milestone % self.delta_check:
            raise ConfigError(
                "progress.delta_check must divide progress.delta_milestone and not exceed it "
                f"(delta_check={self.delta_check}, delta_milestone={self.delta_milestone})"
            )


def accumulate(v: float, c: float) -> float:
    """One diminishing-returns step ``v + (100 - v) * c / 100``, clamped to [0, 100]."""
    return min(max(v + (100.0 - v) * c / 100.0, 0.0), 100.0)


def accumulate_sequence(critic_values: Sequence[float]) -> list[float]:
    """Values ``[v_0 = 0, v_1, ...]`` produced by folding ``critic_values``."""
    values = [0.0]
    for c in critic_values:
        values.append(accumulate(values[-1], c))
    return values


class _Estimator:
    def __init__(self, config: ProgressConfig, critic: Critic, first_frame: Observation):
        self.config = config
        self.critic = critic
        self.first_frame = first_frame
        self.calls_made = 0
        self.last_t = first_frame.step_index

    def _advance(self, obs: Observation, t: int | None) -> int:
        t = obs.step_index if t is None else t
        if t <= self.last_t:
            raise StateError(f"observe called with t={t} after t={self.last_t}")
        if obs.step_index != t:
            raise StateError(f"observation step_index {obs.step_index} does not match t={t}")
        self.last_t = t
        return t

    def _query(self, frame_a: Observation, frame_b: Observation) -> float:
        self.calls_made += 1
        return self.critic(frame_a, frame_b)

    def finish(self, obs: Observation) -> None:
        pass


class MilestoneBuffer(_Estimator):
    """Accumulative progress over milestone frames.

    The critic is queried every ``delta_check`` steps against the most
    recently stored milestone. At multiples of ``delta_milestone`` the frame
    becomes a new milestone and the value is folded into ``v_current``. At
    intermediate checks a provisional value (the fold of the latest critic
    value) drives termination; when it fires, the frame is committed as a
    closing milestone so the reward reflects the completion that ended the
    rollout.
    """

    def __init__(self, config: ProgressConfig, critic: Critic, first_frame: Observation, trace: list | None = None):
        super().__init__(config, critic, first_frame)
        self.milestones: list[Observation] = [first_frame]
        self.critic_history: list[float] = []
        self.values: list[float] = [0.0]
        self.v_current = 0.0
        self.trace = trace

    def _commit(self, obs: Observation, c: float, v: float) -> None:
        self.milestones.append(obs)
        self.critic_history.append(c)
        self.values.append(v)
        self.v_current = v

    def observe(self, obs: Observation, t: int | None = None) -> bool:
        t = self._advance(obs, t)
        if t % self.config.delta_check:
            return False
        c = self._query(self.milestones[-1], obs)
        v_provisional = accumulate(self.v_current, c)
        terminate = v_provisional / 100.0 > self.config.tau_threshold
        if t % self.config.delta_milestone == 0 or terminate:
            self._commit(obs, c, v_provisional)
        if self.trace is not None:
            self.trace.append({"t": t, "c": c, "v_current": self.v_current, "calls_made": self.calls_made})
        return terminate

    @property
    def reward(self) -> float:
        return final_reward(self)


def final_reward(buffer: MilestoneBuffer) -> float:
    return buffer.v_current / 100.0


class BinaryOutcome(MilestoneBuffer):
    """Thresholded accumulative estimate: reward 1 when done, else 0."""

    @property
    def reward(self) -> float:
        return float(self.v_current / 100.0 > self.config.tau_threshold)


def vanilla_reward(critic: Critic, first_frame: Observation, last_frame: Observation) -> float:
    """Two-frame critic value mapped from [-100, 100] to [0, 1]."""
    return (critic(first_frame, last_frame) + 100.0) / 200.0


class VanillaEstimator(_Estimator):
    """Compares the current frame with the initial frame at every check."""

    def __init__(self, config: ProgressConfig, critic: Critic, first_frame: Observation):
        super().__init__(config, critic, first_frame)
        self._reward: float | None = None
        self._reward_t = -1

    def _evaluate(self, obs: Observation) -> float:
        self._reward = (self._query(self.first_frame, obs) + 100.0) / 200.0
        self._reward_t = obs.step_index
        return self._reward

    def observe(self, obs: Observation, t: int | None = None) -> bool:
        t = self._advance(obs, t)
        if t % self.config.delta_check:
            return False
        return self._evaluate(obs) > self.config.tau_threshold

    def finish(self, obs: Observation) -> None:
        if obs.step_index != self._reward_t:
            self._evaluate(obs)

    @property
    def reward(self) -> float:
        if self._reward is None:
            raise StateError("no critic evaluation yet; call finish()")
        return self._reward


def uniform_frame_indices(t: int, num_frames: int) -> np.ndarray:
    return np.rint(np.linspace(0, t, num_frames)).astype(int)


def uniform_multiframe_reward(critic: Critic, frames: Sequence[Observation]) -> float:
    """Fold consecutive-pair critic values over ``frames`` (N-1 calls)."""
    if len(frames) < 2:
        raise ValueError("uniform multi-frame estimation needs at least 2 frames")
    v = 0.0
    for a, b in zip(frames[:-1], frames[1:]):
        v = accumulate(v, critic(a, b))
    return v / 100.0


class UniformEstimator(_Estimator):
    """At every check, accumulate over ``num_frames`` frames spread evenly over [0, t]."""

    def __init__(self, config: ProgressConfig, critic: Critic, first_frame: Observation, num_frames: int):
        super().__init__(config, critic, first_frame)
        if num_frames < 2:
            raise ValueError("num_frames must be >= 2")
        self.num_frames = num_frames
        self._frames = {first_frame.step_index: first_frame}
        self._reward: float | None = None
        self._reward_t = -1

    def _evaluate(self, obs: Observation) -> float:
        t = obs.step_index
        frames = [self._frames[i] for i in uniform_frame_indices(t, self.num_frames)]
        self._reward = uniform_multiframe_reward(self._query, frames)
        self._reward_t = t
        return self._reward

    def observe(self, obs: Observation, t: int | None = None) -> bool:
        t = self._advance(obs, t)
        self._frames[t] = obs
        if t % self.config.delta_check:
            return False
        return self._evaluate(obs) > self.config.tau_threshold

    def finish(self, obs: Observation) -> None:
        if obs.step_index != self._reward_t:
            self._evaluate(obs)

    @property
    def reward(self) -> float:
        if self._reward is None:
            raise StateError("no critic evaluation yet; call finish()")
        return self._reward


ESTIMATORS = ("accumulative", "vanilla", "binary", "uniform-4", "uniform-8")


def check_estimator_name(name: str) -> str:
    if name in ("accumulative", "vanilla", "binary"):
        return name
    if name.startswith("uniform-"):
        try:
            n = int(name.split("-", 1)[1])
        except ValueError:
            n = 0
        if n >= 2:
            return name
    raise ConfigError(f"unknown estimator {name!r}; expected one of accumulative, vanilla, binary, uniform-N (N >= 2)")


def make_estimator(name: str, config: ProgressConfig, critic: Critic, first_frame: Observation, trace=None):
    name = check_estimator_name(name)
    if name == "accumulative":
        return MilestoneBuffer(config, critic, first_frame, trace=trace)
    if name == "binary":
        return BinaryOutcome(config, critic, first_frame, trace=trace)
    if name == "vanilla":
        return VanillaEstimator(config, critic, first_frame)
    return UniformEstimator(config, critic, first_frame, int(name.split("-", 1)[1]))
