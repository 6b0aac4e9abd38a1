import numpy as np
import pytest

from conftest import make_series
from ingestion.preprocess import (
    MinMaxScaler,
    WindowIndex,
    fit_scaler,
    forward_fill,
    make_windows,
    temporal_split,
)
from models.entities import StepRange, WindowSpec
from models.errors import AllMissing, InsufficientDays, RangeTooShort, UnfittedRole, UnknownRole


def _random_series(rng, n_turbines=2, n_days=2, gap_rate=0.3):
    shape = (n_turbines, n_days * 144)
    values = {}
    for role in ("wind_speed", "wind_direction", "target_power"):
        data = rng.uniform(1, 100, size=shape)
        data[rng.random(shape) < gap_rate] = np.nan
        data[:, shape[1] // 2] = rng.uniform(1, 100, size=n_turbines)
        values[role] = data
    return make_series(values)


def _scan_fill(row: np.ndarray) -> np.ndarray:
    out = row.copy()
    last = np.nan
    for i, v in enumerate(row):
        if np.isnan(v):
            out[i] = last
        else:
            last = v
    first = next(v for v in row if not np.isnan(v))
    for i in range(len(out)):
        if np.isnan(out[i]):
            out[i] = first
        else:
            break
    return out


class TestForwardFill:
    def test_matches_scan_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            series = _random_series(rng)
            filled = forward_fill(series)
            for role in series.roles:
                for row in range(series.n_turbines):
                    expected = _scan_fill(series.role(role)[row])
                    np.testing.assert_array_equal(filled.role(role)[row], expected)

    def test_masks_preserved(self):
        series = _random_series(np.random.default_rng(1))
        filled = forward_fill(series)
        np.testing.assert_array_equal(filled.valid_mask, series.valid_mask)
        np.testing.assert_array_equal(filled.present_mask, series.present_mask)

    def test_no_gaps_is_identity(self):
        rng = np.random.default_rng(2)
        series = _random_series(rng, gap_rate=0.0)
        filled = forward_fill(series)
        for role in series.roles:
            np.testing.assert_array_equal(filled.role(role), series.role(role))

    def test_fill_invalid_replaces_flagged_values(self):
        power = np.arange(1, 145, dtype=float)[None, :]
        valid = np.ones_like(power, dtype=bool)
        valid[0, 10] = False
        series = make_series(
            {"wind_speed": power.copy(), "wind_direction": power.copy(), "target_power": power},
            valid=valid,
        )
        assert forward_fill(series).role("wind_speed")[0, 10] == 11.0
        assert forward_fill(series, fill_invalid=True).role("wind_speed")[0, 10] == 10.0

    def test_all_missing(self):
        power = np.full((1, 144), 5.0)
        speed = np.full((1, 144), np.nan)
        series = make_series(
            {"wind_speed": speed, "wind_direction": power.copy(), "target_power": power}
        )
        with pytest.raises(AllMissing) as info:
            forward_fill(series)
        assert info.value.role == "wind_speed"
        assert info.value.turbine == 1

    def test_stopped_turbine_keeps_present_inputs(self):
        speed = np.random.default_rng(6).uniform(1, 20, size=(2, 144))
        speed[1, 7] = np.nan
        power = np.full((2, 144), 300.0)
        power[1] = 0.0
        valid = np.ones((2, 144), dtype=bool)
        valid[1] = False
        valid[0, 3] = False
        series = make_series(
            {"wind_speed": speed, "wind_direction": speed.copy(), "target_power": power},
            valid=valid,
        )
        filled = forward_fill(series, fill_invalid=True)
        stopped = filled.role("wind_speed")[1]
        np.testing.assert_array_equal(stopped, _scan_fill(speed[1]))
        np.testing.assert_array_equal(filled.role("target_power")[1], 0.0)
        # 其余风机仍按无效步填充
        assert filled.role("wind_speed")[0, 3] == speed[0, 2]


class TestMinMaxScaler:
    def _series(self):
        rng = np.random.default_rng(3)
        return forward_fill(_random_series(rng, n_days=3))

    def test_fit_range_maps_to_unit_interval(self):
        series = self._series()
        fit_range = StepRange(start=0, stop=288)
        scaler = fit_scaler(series, ["wind_speed", "wind_direction"], fit_range)
        scaled = scaler.transform(series)
        block = scaled.role("wind_speed")[:, :288]
        assert block.min() == pytest.approx(0.0, abs=1e-15)
        assert block.max() == pytest.approx(1.0)

    def test_round_trip(self):
        series = self._series()
        scaler = fit_scaler(series, ["wind_speed", "wind_direction"], StepRange(start=0, stop=144))
        back = scaler.inverse_transform(scaler.transform(series))
        for role in ("wind_speed", "wind_direction"):
            np.testing.assert_allclose(back.role(role), series.role(role), rtol=0, atol=1e-12)

    def test_target_never_touched(self):
        series = self._series()
        scaler = fit_scaler(series, ["wind_speed", "wind_direction"], StepRange(start=0, stop=144))
        scaled = scaler.transform(series, roles=["wind_speed", "wind_direction", "target_power"])
        np.testing.assert_array_equal(scaled.role("target_power"), series.role("target_power"))

    def test_target_cannot_be_fitted(self):
        with pytest.raises(ValueError):
            fit_scaler(self._series(), ["target_power"], StepRange(start=0, stop=144))

    def test_role_missing_in_fit_range(self):
        power = np.full((2, 288), 100.0)
        speed = power.copy()
        speed[:, :144] = np.nan
        series = make_series(
            {"wind_speed": speed, "wind_direction": power.copy(), "target_power": power}
        )
        with pytest.raises(AllMissing) as info:
            fit_scaler(series, ["wind_speed"], StepRange(start=0, stop=144))
        assert info.value.role == "wind_speed"
        assert info.value.turbine is None
        with pytest.raises(ValueError):
            MinMaxScaler(minimum={"target_power": 0.0}, maximum={"target_power": 1.0})

    def test_degenerate_role_maps_to_zero(self):
        scaler = MinMaxScaler(minimum={"wind_speed": 4.0}, maximum={"wind_speed": 4.0})
        scaled = scaler.scale_array("wind_speed", np.array([4.0, 5.0]))
        np.testing.assert_array_equal(scaled, [0.0, 0.0])

    def test_unfitted_role(self):
        scaler = MinMaxScaler(minimum={"wind_speed": 0.0}, maximum={"wind_speed": 1.0})
        with pytest.raises(UnfittedRole):
            scaler.transform(self._series(), roles=["wind_direction"])

    def test_save_load(self, tmp_path):
        series = self._series()
        scaler = fit_scaler(series, ["wind_speed", "wind_direction"], StepRange(start=0, stop=144))
        loaded = MinMaxScaler.load(scaler.save(tmp_path / "scaler.txt"))
        assert loaded == scaler


class TestWindows:
    def test_count_formula(self):
        rng = np.random.default_rng(4)
        series = forward_fill(_random_series(rng, n_turbines=3, n_days=4, gap_rate=0.0))
        for _ in range(50):
            in_len = int(rng.integers(1, 60))
            out_len = int(rng.integers(1, 60))
            stride = int(rng.integers(1, 10))
            length = int(rng.integers(in_len + out_len, series.n_steps + 1))
            start = int(rng.integers(0, series.n_steps - length + 1))
            spec = WindowSpec(input_length=in_len, output_length=out_len, stride=stride)
            step_range = StepRange(start=start, stop=start + length)
            index = WindowIndex(series, spec, step_range=step_range)
            assert index.per_turbine == (length - in_len - out_len) // stride + 1
            assert len(index) == 3 * index.per_turbine

    def test_gather_contents(self):
        rng = np.random.default_rng(5)
        series = forward_fill(_random_series(rng, n_days=3, gap_rate=0.0))
        spec = WindowSpec(input_length=10, output_length=5, stride=3)
        index = WindowIndex(series, spec, step_range=StepRange(start=140, stop=300))
        batch = index.gather(np.array([0, index.per_turbine + 2]))

        assert batch.inputs.shape == (2, 10, 2)
        np.testing.assert_array_equal(batch.inputs[0, :, 0], series.role("wind_speed")[0, 140:150])
        direction = series.role("wind_direction")
        np.testing.assert_array_equal(batch.inputs[1, :, 1], direction[1, 146:156])
        np.testing.assert_array_equal(batch.targets[1], series.role("target_power")[1, 156:161])
        np.testing.assert_array_equal(batch.target_start, [150, 156])
        np.testing.assert_array_equal(batch.start_slot, [6, 12])
        np.testing.assert_array_equal(batch.turbine_id, [1, 2])

    def test_make_windows_equals_gather_all(self):
        series = forward_fill(_random_series(np.random.default_rng(6), gap_rate=0.0))
        spec = WindowSpec(input_length=20, output_length=20, stride=7)
        batch = make_windows(series, spec)
        assert len(batch) == 2 * ((288 - 40) // 7 + 1)
        assert batch.target_valid.dtype == bool

    def test_range_too_short(self):
        series = forward_fill(_random_series(np.random.default_rng(7), n_days=1, gap_rate=0.0))
        with pytest.raises(RangeTooShort):
            WindowIndex(series, WindowSpec(input_length=100, output_length=100))

    def test_unknown_feature_role(self):
        series = forward_fill(_random_series(np.random.default_rng(8), gap_rate=0.0))
        with pytest.raises(UnknownRole):
            WindowIndex(series, WindowSpec(input_length=4, output_length=4), ["pitch1"])


class TestTemporalSplit:
    def test_default_days(self):
        power = np.ones((1, 245 * 144))
        series = make_series({"wind_speed": power, "wind_direction": power, "target_power": power})
        train, validation = temporal_split(series)
        assert (train.start, train.stop) == (0, 181 * 144)
        assert (validation.start, validation.stop) == (230 * 144, 245 * 144)

    def test_insufficient_days(self):
        power = np.ones((1, 200 * 144))
        series = make_series({"wind_speed": power, "wind_direction": power, "target_power": power})
        with pytest.raises(InsufficientDays) as info:
            temporal_split(series)
        assert (info.value.needed, info.value.got) == (245, 200)
