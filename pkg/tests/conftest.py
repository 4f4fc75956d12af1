import numpy as np
import pytest

from progressttt.envsim import EnvConfig, Observation, chain_task


@pytest.fixture
def env3():
    return EnvConfig(grid_size=8, num_stages=3, max_horizon_cap=512, start_jitter=0)


@pytest.fixture
def task3(env3):
    return chain_task(env3.grid_size, env3.num_stages)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_obs(pos=(0, 0), stage=0, k=3, gripper=False, t=0):
    flags = tuple(i < stage for i in range(k))
    return Observation(agent_pos=pos, stage_index=stage, item_flags=flags, gripper=gripper, step_index=t)


ACCEPTANCE_RESULTS: dict[int, tuple[bool, str]] = {}


def record_acceptance(number: int, passed: bool, detail: str) -> None:
    ACCEPTANCE_RESULTS[number] = (bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        passed, detail = ACCEPTANCE_RESULTS[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
