"""Progressive horizon extension: a staged schedule of maximum rollout lengths."""
from __future__ import annotations

import math
from dataclasses import dataclass

from ._validation import check_int
from .exceptions import ConfigError


@dataclass(frozen=True)
class HorizonSchedule:
    """Ordered ``(h_max, iterations)`` stages; ``iterations=None`` means unbounded.

    Stage ``k`` covers the half-open iteration range ``[start_k, start_k + iterations_k)``.
    """

    stages: tuple[tuple[int, int | None], ...]

    def __post_init__(self):
        stages = tuple((int(h), None if it is None else int(it)) for h, it in self.stages)
        object.__setattr__(self, "stages", stages)
        if not stages:
            raise ConfigError("schedule.stages must not be empty")
        for i, (h, it) in enumerate(stages):
            check_int(h, f"schedule.stages[{i}].h_max", minimum=1)
            if it is not None:
                check_int(it, f"schedule.stages[{i}].iterations", minimum=1)
            elif i != len(stages) - 1:
                raise ConfigError("only the final schedule stage may have unbounded iterations")
        hs = [h for h, _ in stages]
        if any(b <= a for a, b in zip(hs, hs[1:])):
            raise ConfigError(f"schedule h_max values must strictly increase, got {hs}")

    @property
    def final_horizon(self) -> int:
        return self.stages[-1][0]

    @property
    def is_fixed(self) -> bool:
        return len(self.stages) == 1


def horizon_at(schedule: HorizonSchedule, iteration: int) -> int:
    if iteration < 0:
        raise ValueError("iteration must be nonnegative")
    start = 0
    for h, its in schedule.stages:
        if its is None or iteration < start + its:
            return h
        start += its
    return schedule.final_horizon


def default_schedule(full_horizon: int, num_stages: int, iterations_per_stage: int) -> HorizonSchedule:
    """Geometric doubling ladder ending at ``full_horizon``."""
    check_int(num_stages, "num_stages", minimum=1)
    check_int(iterations_per_stage, "iterations_per_stage", minimum=1)
    stages = [
        (math.ceil(full_horizon / 2 ** (num_stages - k)), iterations_per_stage if k < num_stages else None)
        for k in range(1, num_stages + 1)
    ]
    return HorizonSchedule(tuple(stages))
