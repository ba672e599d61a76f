from datetime import datetime, timedelta

import numpy as np
import pytest

from app.core.data import Scaler, calendar_indices, chronological_split, make_windows, prepare_data
from app.core.exceptions import ConfigurationError, DimensionError


class TestSplit:
    def test_boundaries(self):
        ranges = chronological_split(100, 6, 3)
        assert ranges.get("train") == range(0, 70)
        assert ranges.get("val") == range(70, 85)
        assert ranges.get("test") == range(85, 100)

    @pytest.mark.parametrize("num_steps", [100, 137, 400, 1001])
    def test_ranges_partition_the_series(self, num_steps):
        ranges = chronological_split(num_steps, 2, 1)
        covered = [t for split in ("train", "val", "test") for t in ranges.get(split)]
        assert covered == list(range(num_steps))

    def test_split_shorter_than_window(self):
        with pytest.raises(ConfigurationError, match="val"):
            chronological_split(100, 12, 12)

    def test_bad_fractions(self):
        with pytest.raises(ConfigurationError):
            chronological_split(100, 2, 1, fractions=(0.5, 0.5, 0.0))


class TestWindows:
    @pytest.mark.parametrize("length,expected", [(400, 377), (24, 1), (30, 7)])
    def test_window_count(self, length, expected):
        values = np.zeros((1, 2, length, 1))
        batch = make_windows(values, range(0, length), 12, 12, datetime(2016, 4, 1), 30)
        assert len(batch) == expected
        assert batch.history.shape == (expected, 1, 2, 12, 1)
        assert batch.target.shape == (expected, 1, 2, 12, 1)

    def test_contents_and_no_leakage(self, rng):
        values = rng.standard_normal((2, 3, 60, 2))
        window_range = range(20, 45)
        batch = make_windows(values, window_range, 5, 3, datetime(2016, 4, 1), 30)
        for b, anchor in enumerate(batch.anchors):
            assert anchor - 4 >= window_range.start
            assert anchor + 3 < window_range.stop
            np.testing.assert_array_equal(batch.history[b], values[:, :, anchor - 4:anchor + 1, :])
            np.testing.assert_array_equal(batch.target[b], values[:, :, anchor + 1:anchor + 4, :])

    def test_split_windows_stay_inside_their_split(self, small_data):
        for split in ("train", "val", "test"):
            span = small_data.ranges.get(split)
            anchors = small_data.windows[split].anchors
            assert anchors.min() - 5 == span.start
            assert anchors.max() + 3 == span.stop - 1


class TestCalendar:
    def test_half_past_midnight(self):
        tod, dow = calendar_indices(datetime(2016, 4, 1), 30, np.array([1]))
        assert tod.tolist() == [1]
        # 2016-04-01 is a Friday
        assert dow.tolist() == [4]

    def test_against_datetime(self):
        start = datetime(2016, 4, 3, 22, 45)
        positions = np.arange(0, 500, 7)
        tod, dow = calendar_indices(start, 15, positions)
        for p, slot, day in zip(positions, tod, dow):
            stamp = start + timedelta(minutes=15 * int(p))
            assert slot == (stamp.hour * 60 + stamp.minute) // 30
            assert day == stamp.weekday()


class TestScaler:
    def test_population_statistics(self):
        values = np.array([0.0, 2.0, 0.0, 2.0]).reshape(1, 1, 4, 1)
        scaler = Scaler.fit(values, range(0, 4))
        assert scaler.mean.item() == 1.0
        assert scaler.std.item() == 1.0

    def test_constant_channel_scales_to_zero(self):
        values = np.full((1, 2, 10, 1), 4.0)
        scaler = Scaler.fit(values, range(0, 10))
        np.testing.assert_array_equal(scaler.apply(values), 0.0)

    def test_invert_recovers_values(self, rng):
        values = rng.uniform(0, 50, size=(2, 3, 40, 2))
        scaler = Scaler.fit(values, range(0, 30))
        np.testing.assert_allclose(scaler.invert(scaler.apply(values)), values, atol=1e-9)

    def test_statistics_use_training_range_only(self, rng, make_dataset):
        values = rng.uniform(0, 5, size=(2, 3, 100, 1))
        altered = values.copy()
        altered[:, :, 70:] += 1000.0
        first = prepare_data(make_dataset(values), 6, 3).scaler
        second = prepare_data(make_dataset(altered), 6, 3).scaler
        np.testing.assert_array_equal(first.mean, second.mean)
        np.testing.assert_array_equal(first.std, second.std)
        assert first.mean.shape == (2, 1, 1, 1)

    def test_foreign_scaler_shape(self, rng, make_dataset):
        dataset = make_dataset(rng.uniform(size=(2, 3, 100, 1)))
        wrong = Scaler(mean=np.zeros((3, 1, 1, 1)), std=np.ones((3, 1, 1, 1)))
        with pytest.raises(DimensionError):
            prepare_data(dataset, 6, 3, scaler=wrong)
