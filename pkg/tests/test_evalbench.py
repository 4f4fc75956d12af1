import csv
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from progressttt.critic import CriticConfig
from progressttt.envsim import EnvConfig
from progressttt.evalbench import (
    ABLATION_HEADER,
    FScoreReport,
    build_validation_set,
    critic_fscore,
    estimator_rewards,
    mismatch_cases,
    reward_calls,
    run_ablation_table,
    variant_config,
)
from progressttt.exceptions import ConfigError
from progressttt.progress import ProgressConfig
from progressttt.ttt import RunConfig


@pytest.fixture(scope="module")
def small_cfg():
    return RunConfig(env=EnvConfig(max_horizon_cap=128), progress=ProgressConfig(delta_milestone=32, delta_check=8))


@pytest.fixture(scope="module")
def small_set(small_cfg):
    return build_validation_set(small_cfg, 20, 20)


class TestFScore:
    @given(st.integers(0, 50), st.integers(0, 50), st.integers(0, 50), st.integers(0, 50))
    def test_formula(self, tp, fp, fn, tn):
        predicted = [True] * tp + [True] * fp + [False] * fn + [False] * tn
        labels = [True] * tp + [False] * fp + [True] * fn + [False] * tn
        r = FScoreReport.from_predictions(predicted, labels, 0.5)
        p = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        assert r.precision == pytest.approx(p) and r.recall == pytest.approx(rec)
        assert r.f1 == pytest.approx(2 * p * rec / (p + rec) if p + rec else 0.0)

    @given(st.integers(1, 200))
    def test_always_positive_balanced(self, n):
        r = FScoreReport.from_predictions([True] * (2 * n), [True] * n + [False] * n, 0.0)
        assert (r.precision, r.recall) == (0.5, 1.0)
        assert r.f1 == pytest.approx(2 / 3, abs=1e-15)

    def test_always_positive_through_estimator(self, small_cfg, small_set):
        r = critic_fscore("accumulative", CriticConfig(), small_set, threshold=-1.0, config=small_cfg)
        assert r.f1 == pytest.approx(2 / 3)

    def test_zero_noise_accumulative_perfect(self, small_cfg, small_set):
        r = critic_fscore("accumulative", CriticConfig(), small_set, config=small_cfg)
        assert r.f1 == 1.0 and r.threshold_used == 0.95

    def test_single_class_rejected(self, small_cfg, small_set):
        positives = [t for t in small_set if t.info["label"]]
        with pytest.raises(ValueError):
            critic_fscore("accumulative", CriticConfig(), positives, config=small_cfg)


class TestValidationSet:
    def test_counts_and_labels(self, small_cfg, small_set):
        assert len(small_set) == 40
        assert sum(t.info["label"] for t in small_set) == 20

    def test_progress_consistent_with_labels(self, small_set):
        for t in small_set:
            assert (t.info["oracle_progress"] == 100.0) == t.info["label"]

    def test_full_length_and_mixed_failures(self, small_cfg, small_set):
        assert all(len(t) == small_cfg.env.max_horizon_cap for t in small_set)
        kinds = {t.info["kind"] for t in small_set if not t.info["label"]}
        assert kinds == {"truncated", "random"}

    def test_deterministic(self, small_cfg, small_set):
        again = build_validation_set(small_cfg, 20, 20)
        assert [t.frames for t in again] == [t.frames for t in small_set]

    def test_mismatch_ignored_for_labels(self, small_cfg):
        cfg = replace(small_cfg, env=replace(small_cfg.env, mismatch_enabled=True))
        assert sum(t.info["label"] for t in build_validation_set(cfg, 5, 5)) == 5

    def test_nonpositive_counts(self, small_cfg):
        with pytest.raises(ValueError):
            build_validation_set(small_cfg, 0, 3)

    def test_shared_noise_per_trajectory(self, small_cfg, small_set):
        noisy = CriticConfig(sigma=5, seed=1)
        a = estimator_rewards("accumulative", noisy, small_set[:5], small_cfg)
        b = estimator_rewards("accumulative", noisy, small_set[:5], small_cfg)
        np.testing.assert_array_equal(a, b)


class TestRewardCalls:
    @pytest.mark.parametrize("estimator,expected", [
        ("accumulative", 32), ("binary", 32), ("vanilla", 32), ("uniform-4", 96), ("uniform-8", 224),
    ])
    def test_full_horizon(self, estimator, expected):
        assert reward_calls(RunConfig(env=EnvConfig(max_horizon_cap=512)), estimator) == expected

    @pytest.mark.parametrize("cap,dc", [(96, 16), (200, 8), (64, 4)])
    def test_floor_formula(self, cap, dc):
        cfg = RunConfig(env=EnvConfig(max_horizon_cap=cap), progress=ProgressConfig(delta_milestone=4 * dc, delta_check=dc))
        assert reward_calls(cfg) == cap // dc


class TestMismatch:
    def test_found_and_logged(self, caplog):
        cfg = RunConfig(env=EnvConfig(max_horizon_cap=128, mismatch_enabled=True),
                        progress=ProgressConfig(delta_milestone=32, delta_check=8))
        with caplog.at_level("WARNING"):
            cases = mismatch_cases(cfg, episodes=5)
        assert cases and all(c["reward"] > 0.95 and not c["oracle_success"] for c in cases)
        assert "criterion mismatch" in caplog.text

    def test_none_without_injection(self):
        cfg = RunConfig(env=EnvConfig(max_horizon_cap=128), progress=ProgressConfig(delta_milestone=32, delta_check=8))
        assert mismatch_cases(cfg, episodes=5) == []


class TestAblation:
    def tiny(self, **kw):
        return RunConfig(env=EnvConfig(grid_size=6, num_stages=1, max_horizon_cap=32),
                         progress=ProgressConfig(delta_milestone=8, delta_check=4), num_iterations=2,
                         eval_episodes=5, eval_interval=0, **kw)

    def test_empty_variants(self, tmp_path):
        rows = run_ablation_table(self.tiny(), variants=[], out_path=tmp_path / "t.csv")
        assert rows == []
        with open(tmp_path / "t.csv") as f:
            assert list(csv.reader(f)) == [list(ABLATION_HEADER)]

    def test_rows_and_logs(self, tmp_path):
        cfg = self.tiny()
        rows = run_ablation_table(cfg, ["vanilla-2-frame", "accumulative"], seeds=[0, 1],
                                  out_path=tmp_path / "t.csv", log_dir=tmp_path / "logs")
        assert [r["variant"] for r in rows] == ["vanilla-2-frame", "accumulative"]
        assert rows[1]["reward_calls"] == 32 // 4 and rows[1]["seeds"] == "0 1"
        assert all(0 <= r["sr"] <= 1 and 0 <= r["f1"] <= 1 for r in rows)
        assert len(list((tmp_path / "logs").glob("*.jsonl"))) == 4

    def test_failed_variant_marked(self, caplog):
        rows = run_ablation_table(self.tiny(), ["accumulative", "no-such-variant"], seeds=[0])
        assert rows[1]["sr"] == "failed" and rows[0]["sr"] != "failed"

    def test_variant_schedules_share_budget(self):
        cfg = replace(self.tiny(), num_iterations=9)
        fixed = variant_config(cfg, "fixed-horizon", 3)
        prog = variant_config(cfg, "progressive", 3)
        assert fixed.schedule.stages == ((32, None),)
        assert prog.schedule.stages == ((8, 3), (16, 3), (32, None))
        assert prog.master_seed == 3 and prog.critic.seed == 3 and prog.num_iterations == fixed.num_iterations

    def test_unknown_variant(self):
        with pytest.raises(ConfigError):
            variant_config(self.tiny(), "bogus", 0)
