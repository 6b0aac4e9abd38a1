import numpy as np
import pytest

from config.settings import PostprocessConfig
from conftest import make_series
from forecaster.postprocess import (
    apply_daily_fluctuation,
    fit_daily_profile,
    load_profile,
    rotate,
    save_profile,
    start_slot_of,
)
from models.entities import DailyProfile, StepRange
from models.errors import EmptySlot, ProfileNotFitted, RangeTooShort

PLAIN = PostprocessConfig(boost_enabled=False, clamp_enabled=False)


def _power_series(power: np.ndarray, valid: np.ndarray | None = None, records_per_day: int = 144):
    power = np.asarray(power, dtype=np.float64)
    return make_series(
        {"wind_speed": np.ones_like(power), "wind_direction": np.ones_like(power),
         "target_power": power},
        valid=valid,
        records_per_day=records_per_day,
    )


def _profile(values, multiplier: float = 36.0) -> DailyProfile:
    values = np.asarray(values, dtype=np.float64)
    return DailyProfile(
        values=values, multiplier=multiplier, source_range=StepRange(start=0, stop=values.size)
    )


def _random_profile(seed: int = 0) -> DailyProfile:
    return _profile(np.random.default_rng(seed).uniform(0, 36, size=144))


class TestFitDailyProfile:
    def test_three_slot_day(self):
        series = _power_series([[100.0, 400.0, 250.0]], records_per_day=3)
        profile = fit_daily_profile(series, StepRange(start=0, stop=3))
        np.testing.assert_allclose(profile.values, [0.0, 36.0, 18.0])

    def test_constant_means_give_flat_profile(self):
        series = _power_series(np.full((2, 288), 700.0))
        profile = fit_daily_profile(series, StepRange(start=0, stop=288))
        np.testing.assert_array_equal(profile.values, 0.0)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(0)
        power = rng.uniform(1, 1500, size=(2, 288))
        valid = rng.random((2, 288)) > 0.2
        valid[0, :144] = True
        power[~valid] = rng.choice([np.nan, -5.0, 0.0], size=int((~valid).sum()))
        series = _power_series(power, valid=valid)

        sums, counts = np.zeros(144), np.zeros(144)
        for row in range(2):
            for step in range(288):
                if valid[row, step]:
                    sums[step % 144] += power[row, step]
                    counts[step % 144] += 1
        means = sums / counts
        expected = (means - means.min()) / (means.max() - means.min()) * 36

        profile = fit_daily_profile(series, StepRange(start=0, stop=288))
        np.testing.assert_allclose(profile.values, expected, rtol=1e-12, atol=1e-12)

    def test_range_is_zero_to_multiplier(self):
        profile = fit_daily_profile(
            _power_series(np.random.default_rng(1).uniform(1, 1500, size=(3, 432))),
            StepRange(start=0, stop=432),
        )
        assert len(profile) == 144
        assert profile.values.min() == pytest.approx(0.0, abs=1e-9)
        assert profile.values.max() == pytest.approx(36.0, abs=1e-9)

    def test_only_fit_range_is_used(self):
        power = np.random.default_rng(2).uniform(1, 1500, size=(1, 432))
        base = fit_daily_profile(_power_series(power.copy()), StepRange(start=0, stop=288))
        power[:, 288:] = 1e4
        changed = fit_daily_profile(_power_series(power), StepRange(start=0, stop=288))
        np.testing.assert_array_equal(base.values, changed.values)

    def test_scales_with_multiplier(self):
        series = _power_series(np.random.default_rng(3).uniform(1, 1500, size=(2, 144)))
        day = StepRange(start=0, stop=144)
        small = fit_daily_profile(series, day, PostprocessConfig(multiplier=10))
        large = fit_daily_profile(series, StepRange(start=0, stop=144))
        np.testing.assert_allclose(large.values, small.values * 3.6, rtol=1e-12, atol=1e-12)
        assert large.multiplier == 36.0

    def test_centered(self):
        series = _power_series(np.random.default_rng(4).uniform(1, 1500, size=(2, 144)))
        profile = fit_daily_profile(
            series, StepRange(start=0, stop=144), PostprocessConfig(center_profile=True)
        )
        assert abs(profile.values.mean()) < 1e-12
        assert profile.values.max() - profile.values.min() == pytest.approx(36.0)

    def test_empty_slot(self):
        power = np.random.default_rng(5).uniform(1, 1500, size=(2, 288))
        valid = np.ones_like(power, dtype=bool)
        valid[:, [5, 149]] = False
        with pytest.raises(EmptySlot) as info:
            fit_daily_profile(_power_series(power, valid=valid), StepRange(start=0, stop=288))
        assert info.value.slot == 5

    def test_range_shorter_than_a_day(self):
        series = _power_series(np.ones((1, 288)))
        with pytest.raises(RangeTooShort) as info:
            fit_daily_profile(series, StepRange(start=0, stop=100))
        assert (info.value.needed, info.value.got) == (144, 100)
        with pytest.raises(RangeTooShort):
            fit_daily_profile(series, StepRange(start=0, stop=432))

    def test_range_off_day_boundary(self):
        rng = np.random.default_rng(6)
        power = rng.uniform(1, 1500, size=(2, 432))
        series = _power_series(power)
        fit_range = StepRange(start=72, stop=360)

        sums, counts = np.zeros(144), np.zeros(144)
        for row in range(2):
            for step in range(fit_range.start, fit_range.stop):
                sums[step % 144] += power[row, step]
                counts[step % 144] += 1
        means = sums / counts
        expected = (means - means.min()) / (means.max() - means.min()) * 36

        profile = fit_daily_profile(series, fit_range)
        np.testing.assert_allclose(profile.values, expected, rtol=1e-12, atol=1e-12)
        # 不足整天的尾巴也参与统计
        assert len(profile) == 144
        assert fit_daily_profile(series, StepRange(start=0, stop=200)).values.max() == 36.0


class TestApplyDailyFluctuation:
    def test_zero_profile_is_identity(self):
        pred = np.random.default_rng(0).uniform(0, 500, size=288)
        config = PostprocessConfig(clamp_enabled=False)
        out = apply_daily_fluctuation(pred, 17, _profile(np.zeros(144)), config)
        np.testing.assert_array_equal(out, pred)

    def test_adds_rotated_profile(self):
        profile = _random_profile()
        pred = np.random.default_rng(1).uniform(0, 500, size=288)
        out = apply_daily_fluctuation(pred, 6, profile, PLAIN)
        expected = pred + np.tile(rotate(profile.values, 6), 2)
        np.testing.assert_array_equal(out, expected)
        assert out[0] == pred[0] + profile.values[6]
        assert out[140] == pred[140] + profile.values[2]

    def test_rotation_property(self):
        profile = _random_profile(2)
        pred = np.random.default_rng(3).uniform(-100, 1700, size=288)
        for k in range(144):
            shifted = _profile(rotate(profile.values, k))
            np.testing.assert_array_equal(
                apply_daily_fluctuation(pred, k, profile),
                apply_daily_fluctuation(pred, 0, shifted),
            )

    def test_clamp(self):
        profile = _profile(np.linspace(0, 36, 144))
        out = apply_daily_fluctuation(np.full(288, 1600.0), 0, profile)
        assert out.max() <= 1620.0
        low = apply_daily_fluctuation(np.full(288, -200.0), 0, profile)
        np.testing.assert_array_equal(low, 0.0)

    def test_boost_large_values(self):
        profile = _profile(np.zeros(144))
        out = apply_daily_fluctuation(np.array([900.0, 800.0]), 0, profile)
        np.testing.assert_allclose(out, [990.0, 800.0])
        off = PostprocessConfig(boost_enabled=False)
        np.testing.assert_array_equal(
            apply_daily_fluctuation(np.array([900.0]), 0, profile, off), [900.0]
        )

    def test_batched_matches_rows(self):
        profile = _random_profile(4)
        pred = np.random.default_rng(5).uniform(0, 1500, size=(3, 50))
        slots = np.array([0, 71, 143])
        batched = apply_daily_fluctuation(pred, slots, profile)
        for row, slot in enumerate(slots):
            np.testing.assert_array_equal(
                batched[row], apply_daily_fluctuation(pred[row], int(slot), profile)
            )

    def test_input_not_modified(self):
        pred = np.full(10, 1000.0)
        apply_daily_fluctuation(pred, 3, _random_profile())
        np.testing.assert_array_equal(pred, 1000.0)

    def test_profile_not_fitted(self):
        with pytest.raises(ProfileNotFitted):
            apply_daily_fluctuation(np.zeros(5), 0, None)

    def test_slot_out_of_range(self):
        with pytest.raises(ValueError):
            apply_daily_fluctuation(np.zeros(5), 144, _random_profile())


class TestStartSlot:
    def test_examples(self):
        assert start_slot_of(288) == 0
        assert start_slot_of(144 * 10 + 6) == 6

    def test_array_matches_modulo(self):
        indices = np.random.default_rng(0).integers(0, 10**7, size=1000)
        np.testing.assert_array_equal(start_slot_of(indices), indices % 144)


def test_profile_save_load(tmp_path):
    profile = DailyProfile(
        values=np.random.default_rng(0).uniform(0, 36, size=144),
        multiplier=36.0,
        source_range=StepRange(start=0, stop=288),
    )
    loaded = load_profile(save_profile(profile, tmp_path / "profile.txt"))
    np.testing.assert_array_equal(loaded.values, profile.values)
    assert loaded.multiplier == profile.multiplier
    assert loaded.source_range == profile.source_range
