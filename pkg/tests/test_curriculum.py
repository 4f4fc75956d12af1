import pytest
from hypothesis import given
from hypothesis import strategies as st

from progressttt.curriculum import HorizonSchedule, default_schedule, horizon_at
from progressttt.exceptions import ConfigError

LADDER = HorizonSchedule(((128, 10), (256, 10), (512, None)))


class TestHorizonAt:
    @pytest.mark.parametrize("iteration,expected", [(0, 128), (9, 128), (10, 256), (19, 256), (20, 512), (10**6, 512)])
    def test_boundaries(self, iteration, expected):
        assert horizon_at(LADDER, iteration) == expected

    def test_finite_final_stage_persists(self):
        assert horizon_at(HorizonSchedule(((64, 2), (128, 3))), 100) == 128

    def test_negative_iteration(self):
        with pytest.raises(ValueError):
            horizon_at(LADDER, -1)

    @given(st.lists(st.tuples(st.integers(1, 50), st.integers(1, 20)), min_size=1, max_size=5, unique_by=lambda s: s[0]))
    def test_monotone_and_terminal(self, raw):
        stages = tuple(sorted(raw))
        schedule = HorizonSchedule(stages)
        total = sum(it for _, it in stages)
        hs = [horizon_at(schedule, i) for i in range(total + 5)]
        assert all(b >= a for a, b in zip(hs, hs[1:]))
        assert hs[total:] == [schedule.final_horizon] * 5


class TestDefaultSchedule:
    @pytest.mark.parametrize("args,expected", [
        ((512, 3, 10), ((128, 10), (256, 10), (512, None))),
        ((512, 1, 10), ((512, None),)),
        ((100, 2, 5), ((50, 5), (100, None))),
    ])
    def test_ladders(self, args, expected):
        assert default_schedule(*args).stages == expected

    def test_fixed_flag(self):
        assert default_schedule(64, 1, 3).is_fixed
        assert not default_schedule(64, 2, 3).is_fixed


class TestValidation:
    @pytest.mark.parametrize("stages", [(), ((64, None), (128, 1)), ((128, 1), (64, None)), ((0, None),), ((64, 0),)])
    def test_invalid(self, stages):
        with pytest.raises(ConfigError):
            HorizonSchedule(stages)
