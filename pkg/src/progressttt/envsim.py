"""ChainWorld: a seedable multi-stage gridworld with oracle progress.

The agent walks an ``grid_size x grid_size`` grid and must visit a sequence of
``num_stages`` target cells in order, toggling the gripper on each one to
complete that stage. Coordinates are ``(x, y)`` with ``x`` the column.

Action tokens
-------------
- 0 = up    (y - 1, clamped)
- 1 = down  (y + 1, clamped)
- 2 = left  (x - 1, clamped)
- 3 = right (x + 1, clamped)
- 4 = grip-toggle (completes the current stage when on its target)
- 5 = no-op

Oracle progress is ``100 * stage / K`` plus a shaping term that grows as the
agent approaches the current target. The shaping term is capped at half of one
stage interval, which keeps the remaining-fraction increment between any two
frames of an episode inside [-100, 100].
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ._validation import check_int, check_seed
from .exceptions import ConfigError, GenerationError, StateError

UP, DOWN, LEFT, RIGHT, GRIP, NOOP = range(6)
NUM_ACTIONS = 6
MOVES = {UP: (0, -1), DOWN: (0, 1), LEFT: (-1, 0), RIGHT: (1, 0)}
ACTION_NAMES = ("up", "down", "left", "right", "grip", "noop")

# fraction of one stage interval reachable by approaching the target
SHAPING_CAP = 0.5


@dataclass(frozen=True)
class EnvConfig:
    grid_size: int = 8
    num_stages: int = 3
    max_horizon_cap: int = 512
    mismatch_enabled: bool = False
    seed: int = 0
    start_jitter: int = 1

    def __post_init__(self):
        check_int(self.grid_size, "env.grid_size", minimum=4)
        check_int(self.num_stages, "env.num_stages", minimum=1)
        check_int(self.max_horizon_cap, "env.max_horizon_cap", minimum=16 * self.num_stages)
        check_int(self.start_jitter, "env.start_jitter", minimum=0)
        check_seed(self.seed, "env.seed")
        if not isinstance(self.mismatch_enabled, bool):
            raise ConfigError("env.mismatch_enabled must be a boolean")

    @property
    def feature_dim(self) -> int:
        return self.grid_size**2 + (self.num_stages + 1) + self.num_stages + 1


@dataclass(frozen=True)
class TaskSpec:
    """Task layout: ordered stage targets, start cell, and terminal cell.

    ``terminal_cell`` only matters when the environment injects the
    success-criterion mismatch; it defaults to the start cell ("return home").
    """

    task_id: str
    instruction: str
    stage_targets: tuple[tuple[int, int], ...]
    start: tuple[int, int] = (0, 0)
    terminal_cell: tuple[int, int] | None = None

    def __post_init__(self):
        object.__setattr__(self, "stage_targets", tuple(tuple(int(c) for c in t) for t in self.stage_targets))
        object.__setattr__(self, "start", tuple(int(c) for c in self.start))
        if self.terminal_cell is None:
            object.__setattr__(self, "terminal_cell", self.start)
        else:
            object.__setattr__(self, "terminal_cell", tuple(int(c) for c in self.terminal_cell))
        if not self.stage_targets:
            raise ConfigError("task.stage_targets must contain at least one target")
        for cell in (*self.stage_targets, self.start, self.terminal_cell):
            if len(cell) != 2:
                raise ConfigError(f"task cells must be (x, y) pairs, got {cell!r}")

    def validate_for(self, config: EnvConfig) -> None:
        if len(self.stage_targets) != config.num_stages:
            raise ConfigError(
                f"task.stage_targets has {len(self.stage_targets)} entries "
                f"but env.num_stages = {config.num_stages}"
            )
        n = config.grid_size
        for name, cell in [("stage_targets", t) for t in self.stage_targets] + [
            ("start", self.start),
            ("terminal_cell", self.terminal_cell),
        ]:
            if not (0 <= cell[0] < n and 0 <= cell[1] < n):
                raise ConfigError(f"task.{name} cell {cell} lies outside the {n}x{n} grid")


@dataclass(frozen=True, slots=True)
class Observation:
    agent_pos: tuple[int, int]
    stage_index: int
    item_flags: tuple[bool, ...]
    gripper: bool
    step_index: int


@dataclass(slots=True)
class Step:
    """One decision: the observation acted on, the tokens emitted, and their
    behavior log-probability. ``features`` caches the policy encoding."""

    observation: Observation
    tokens: tuple[int, ...]
    log_prob: float
    features: np.ndarray | None = None


@dataclass
class Trajectory:
    steps: list[Step]
    final_observation: Observation
    reward: float | None = None
    terminated_by_progress: bool = False
    critic_calls: int = 0
    info: dict = field(default_factory=dict)

    @property
    def final_step_index(self) -> int:
        return self.final_observation.step_index

    @property
    def frames(self) -> list[Observation]:
        return [s.observation for s in self.steps] + [self.final_observation]

    def __len__(self) -> int:
        return len(self.steps)

    def assign_reward(self, reward: float) -> None:
        if self.reward is not None:
            raise StateError("trajectory reward already assigned")
        self.reward = float(reward)


def chain_task(grid_size: int = 8, num_stages: int = 3, task_id: str | None = None) -> TaskSpec:
    """Default layout: targets spread along a boustrophedon sweep of the grid.

    The sweep visits rows top to bottom, alternating direction, and the targets
    sit at evenly spaced positions along it so consecutive stages head to
    different regions of the grid.
    """
    cells = []
    for y in range(grid_size):
        xs = range(grid_size) if y % 2 == 0 else range(grid_size - 1, -1, -1)
        cells.extend((x, y) for x in xs)
    n = len(cells)
    idx = np.linspace(0, n - 1, num_stages + 1)[1:]
    targets = tuple(cells[int(round(i))] for i in idx)
    return TaskSpec(
        task_id=task_id or f"chain-{num_stages}",
        instruction=f"visit and grip {num_stages} items in order",
        stage_targets=targets,
    )


def oracle_progress(obs: Observation, config: EnvConfig, task: TaskSpec) -> float:
    """Semantic task completion in [0, 100]; exactly 100 iff every stage is done."""
    k = config.num_stages
    if obs.stage_index >= k:
        return 100.0
    interval = 100.0 / k
    tx, ty = task.stage_targets[obs.stage_index]
    dist = abs(obs.agent_pos[0] - tx) + abs(obs.agent_pos[1] - ty)
    max_dist = 2 * (config.grid_size - 1)
    return obs.stage_index * interval + SHAPING_CAP * interval * (1.0 - dist / max_dist)


def oracle_success(obs: Observation, config: EnvConfig, task: TaskSpec) -> bool:
    if not all(obs.item_flags):
        return False
    if config.mismatch_enabled:
        return obs.agent_pos == task.terminal_cell
    return True


class ChainWorld:
    """Single-episode simulator. One instance per rollout; not thread-shared."""

    def __init__(self, config: EnvConfig, task: TaskSpec):
        task.validate_for(config)
        self.config = config
        self.task = task
        self._obs: Observation | None = None

    @property
    def observation(self) -> Observation:
        if self._obs is None:
            raise StateError("environment has not been reset")
        return self._obs

    def start_cell(self, episode_seed: int) -> tuple[int, int]:
        j = self.config.start_jitter
        sx, sy = self.task.start
        if j == 0:
            return (sx, sy)
        rng = np.random.default_rng([self.config.seed, episode_seed])
        dx, dy = rng.integers(-j, j + 1, size=2)
        n = self.config.grid_size
        return (min(max(sx + int(dx), 0), n - 1), min(max(sy + int(dy), 0), n - 1))

    def reset(self, episode_seed: int = 0) -> Observation:
        k = self.config.num_stages
        self._obs = Observation(
            agent_pos=self.start_cell(check_seed(episode_seed, "episode_seed")),
            stage_index=0,
            item_flags=(False,) * k,
            gripper=False,
            step_index=0,
        )
        return self._obs

    def step(self, tokens) -> tuple[Observation, bool]:
        """Apply a chunk of action tokens in order.

        Returns the new observation and whether the step cap was reached.
        Tokens past the cap are dropped.
        """
        obs = self.observation
        cap = self.config.max_horizon_cap
        if obs.step_index >= cap:
            raise StateError(f"step called after reaching max_horizon_cap={cap}")
        n = self.config.grid_size
        x, y = obs.agent_pos
        stage, gripper, t = obs.stage_index, obs.gripper, obs.step_index
        flags = obs.item_flags
        for tok in tokens:
            if t >= cap:
                break
            tok = int(tok)
            if tok in MOVES:
                dx, dy = MOVES[tok]
                x = min(max(x + dx, 0), n - 1)
                y = min(max(y + dy, 0), n - 1)
            elif tok == GRIP:
                gripper = not gripper
                if stage < len(flags) and (x, y) == self.task.stage_targets[stage]:
                    flags = flags[:stage] + (True,) + flags[stage + 1 :]
                    stage += 1
            elif tok != NOOP:
                raise ValueError(f"action token {tok} outside [0, {NUM_ACTIONS})")
            t += 1
        self._obs = Observation((x, y), stage, flags, gripper, t)
        return self._obs, t >= cap

    def progress(self, obs: Observation | None = None) -> float:
        return oracle_progress(obs or self.observation, self.config, self.task)

    def success(self, obs: Observation | None = None) -> bool:
        return oracle_success(obs or self.observation, self.config, self.task)


def shortest_path_actions(src, dst, rng: np.random.Generator | None = None) -> list[int]:
    """Manhattan shortest path from ``src`` to ``dst``.

    Without ``rng`` all horizontal moves come first; with ``rng`` the moves
    are shuffled, which keeps the path shortest but varies its order.
    """
    dx, dy = dst[0] - src[0], dst[1] - src[1]
    moves = [RIGHT if dx > 0 else LEFT] * abs(dx) + [DOWN if dy > 0 else UP] * abs(dy)
    if rng is not None:
        rng.shuffle(moves)
    return moves


def scripted_expert(
    config: EnvConfig,
    task: TaskSpec,
    episode_seed: int = 0,
    *,
    order_jitter_seed: int | None = None,
) -> Trajectory:
    """Greedy shortest-path demonstration that completes every stage.

    The demonstration always runs with the mismatch disabled. Pass
    ``order_jitter_seed`` to shuffle the move order within each leg.
    """
    config = replace(config, mismatch_enabled=False)
    env = ChainWorld(config, task)
    obs = env.reset(episode_seed)
    rng = None if order_jitter_seed is None else np.random.default_rng(order_jitter_seed)
    steps: list[Step] = []
    for target in task.stage_targets:
        for tok in shortest_path_actions(obs.agent_pos, target, rng) + [GRIP]:
            if obs.step_index >= config.max_horizon_cap:
                raise GenerationError(
                    f"expert for task {task.task_id!r} cannot reach target {target} "
                    f"within {config.max_horizon_cap} steps"
                )
            steps.append(Step(obs, (tok,), 0.0))
            obs, _ = env.step((tok,))
    if not env.success(obs):
        raise GenerationError(f"expert failed to complete task {task.task_id!r}")
    return Trajectory(steps=steps, final_observation=obs)
