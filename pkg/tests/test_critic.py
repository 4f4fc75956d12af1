import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from progressttt.critic import (
    CriticConfig,
    ProgressCritic,
    estimate,
    increment_from_progress,
    noise_std,
    true_increment,
)
from progressttt.envsim import ChainWorld, EnvConfig, oracle_progress, scripted_expert
from progressttt.exceptions import ConfigError
from progressttt.progress import accumulate_sequence

from conftest import make_obs


class TestConfig:
    @pytest.mark.parametrize("kwargs", [{"sigma": -1}, {"drift_per_step": -0.1}, {"flip_prob": 1.0}, {"seed": -3}])
    def test_invalid(self, kwargs):
        with pytest.raises(ConfigError):
            CriticConfig(**kwargs)

    def test_noiseless_flag(self):
        assert CriticConfig().noiseless
        assert not CriticConfig(bias=1.0).noiseless


class TestIncrement:
    @pytest.mark.parametrize("pa,pb,expected", [(0, 100, 100), (50, 75, 50), (40, 40, 0), (100, 30, 0), (50, 25, -50)])
    def test_values(self, pa, pb, expected):
        assert increment_from_progress(pa, pb) == pytest.approx(expected)

    def test_identical_frames(self, env3, task3):
        obs = make_obs((3, 3), 1)
        assert true_increment(obs, obs, env3, task3) == 0.0

    def test_bounded_within_episode(self, env3, task3):
        # any pair of reachable frames stays in [-100, 100]
        frames = [make_obs((x, y), s) for s in range(4) for x in range(8) for y in range(8)]
        vals = [true_increment(a, b, env3, task3) for a in frames[::7] for b in frames[::5]
                if b.stage_index >= a.stage_index]
        assert min(vals) >= -100 - 1e-9 and max(vals) <= 100 + 1e-9


class TestEstimate:
    def test_zero_noise_identity(self, env3, task3):
        a, b = make_obs((0, 0), 0), make_obs((5, 5), 1, t=30)
        assert estimate(CriticConfig(), a, b, task3, 17, env3) == true_increment(a, b, env3, task3)

    @given(st.floats(0, 500), st.floats(-200, 200), st.floats(0, 5), st.floats(0, 0.99), st.integers(0, 2**40))
    def test_clamped(self, sigma, bias, drift, flip, idx):
        cfg = CriticConfig(sigma=sigma, bias=bias, drift_per_step=drift, flip_prob=flip)
        env, task = EnvConfig(), ChainWorld(EnvConfig(), __import__("progressttt").chain_task(8, 3)).task
        v = estimate(cfg, make_obs((0, 0), 0), make_obs((7, 7), 2, t=300), task, idx, env)
        assert -100 <= v <= 100

    def test_replay(self, env3, task3):
        cfg = CriticConfig(sigma=3, drift_per_step=0.2, flip_prob=0.1, seed=4)
        a, b = make_obs((0, 0), 0), make_obs((4, 2), 0, t=20)
        assert estimate(cfg, a, b, task3, 99, env3) == estimate(cfg, a, b, task3, 99, env3)
        assert estimate(cfg, a, b, task3, 99, env3) != estimate(cfg, a, b, task3, 100, env3)

    @pytest.mark.parametrize("gap,expected", [(200, 20.0), (10, 1.0)])
    def test_drift_std(self, env3, task3, gap, expected):
        cfg = CriticConfig(drift_per_step=0.1, seed=1)
        a, b = make_obs((3, 3), 1, t=0), make_obs((3, 3), 1, t=gap)
        base = true_increment(a, b, env3, task3)
        vals = np.array([estimate(cfg, a, b, task3, i, env3) for i in range(10_000)]) - base
        assert noise_std(cfg, gap) == pytest.approx(expected)
        assert np.std(vals) == pytest.approx(expected, rel=0.05)

    def test_combined_variance(self, env3, task3):
        cfg = CriticConfig(sigma=4.0, drift_per_step=0.05, seed=2)
        a, b = make_obs((3, 3), 1, t=0), make_obs((3, 3), 1, t=60)
        vals = np.array([estimate(cfg, a, b, task3, i, env3) for i in range(10_000)])
        assert np.var(vals) == pytest.approx(16 + 9, rel=0.06)

    def test_flip_rate(self, env3, task3):
        cfg = CriticConfig(flip_prob=0.3, seed=5)
        a, b = make_obs((0, 0), 0), make_obs((0, 0), 3, t=10)
        vals = np.array([estimate(cfg, a, b, task3, i, env3) for i in range(5000)])
        assert set(np.unique(vals)) == {-100.0, 100.0}
        assert np.mean(vals < 0) == pytest.approx(0.3, abs=0.03)


class TestHandle:
    def test_counts_and_logs(self, env3, task3):
        log = []
        critic = ProgressCritic(CriticConfig(sigma=1), env3, task3, stream=3, log=log)
        a, b = make_obs((0, 0), 0), make_obs((1, 0), 0, t=16)
        critic(a, b)
        critic(a, b)
        assert critic.calls == 2
        assert [r[0] for r in log] == [(3 << 32), (3 << 32) + 1] and log[0][1] == 16

    def test_streams_independent(self, env3, task3):
        a, b = make_obs((0, 0), 0), make_obs((1, 0), 0, t=16)
        x = ProgressCritic(CriticConfig(sigma=5), env3, task3, stream=0)(a, b)
        y = ProgressCritic(CriticConfig(sigma=5), env3, task3, stream=1)(a, b)
        assert x != y

    def test_telescoping(self, env3, task3):
        traj = scripted_expert(env3, task3, order_jitter_seed=1)
        frames = traj.frames[:-1:3] + [traj.frames[-1]]
        critic = ProgressCritic(CriticConfig(), env3, task3)
        values = accumulate_sequence([critic(a, b) for a, b in zip(frames, frames[1:])])
        p0 = oracle_progress(frames[0], env3, task3)
        for j, v in enumerate(values):
            pj = oracle_progress(frames[j], env3, task3)
            assert 100 - v == pytest.approx((100 - pj) * 100 / (100 - p0), abs=1e-9)
        assert values[-1] == pytest.approx(100.0, abs=1e-9)
