import datetime as dt

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tapcast.core import (
    DailySeries,
    DataError,
    DayIndex,
    InsufficientHistoryError,
    SplitSpec,
    align,
    fit_normalizer,
    window_samples,
)

D1 = DayIndex(10)
D2 = DayIndex(11)
D3 = DayIndex(12)


class TestDayIndex:
    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            DayIndex(-1)

    @given(st.dates(min_value=dt.date(2018, 1, 1), max_value=dt.date(2100, 1, 1)))
    def test_date_roundtrip(self, day):
        idx = DayIndex.from_date(day)
        assert idx.to_date() == day
        assert DayIndex.parse(day.isoformat()) == idx

    def test_arithmetic(self):
        assert DayIndex(5) + 3 == DayIndex(8)
        assert DayIndex(8) - DayIndex(5) == 3
        assert DayIndex(8) - 2 == DayIndex(6)


class TestAlign:
    def test_missing_days_are_zero(self):
        s = align([(D2, 5)], D1, D3)
        assert list(s.values) == [0, 5, 0]

    def test_duplicates_sum(self):
        s = align([(D1, 2), (D1, 3)], D1, D1)
        assert list(s.values) == [5]

    def test_empty_records(self):
        s = align([], D1, D1 + 6)
        assert list(s.values) == [0] * 7

    def test_iso_dates(self):
        s = align([("2018-01-02", 4), (dt.date(2018, 1, 3), 1)], DayIndex(0), DayIndex(3))
        assert list(s.values) == [0, 4, 1, 0]

    def test_negative_value_names_row(self):
        with pytest.raises(DataError, match="-1"):
            align([(D1, -1)], D1, D2)

    def test_bad_date_names_row(self):
        with pytest.raises(DataError, match="2019-13-01"):
            align([("2019-13-01", 1)], D1, D2)

    @given(st.lists(st.tuples(st.integers(0, 20), st.integers(0, 50)), max_size=30))
    def test_idempotent(self, rows):
        first, last = DayIndex(0), DayIndex(20)
        once = align([(DayIndex(d), v) for d, v in rows], first, last)
        twice = align([(first + i, v) for i, v in enumerate(once.values)], first, last)
        assert np.array_equal(once.values, twice.values)


class TestDailySeries:
    def test_rejects_negative(self):
        with pytest.raises(DataError):
            DailySeries("s", "f", D1, [1, -2])

    def test_rejects_nan(self):
        with pytest.raises(DataError):
            DailySeries("s", "f", D1, [1, float("nan")])

    def test_immutable(self):
        s = DailySeries("s", "f", D1, [1, 2])
        with pytest.raises(ValueError):
            s.values[0] = 3

    def test_slice(self):
        s = DailySeries("s", "f", D1, [1, 2, 3, 4])
        assert list(s.slice(D2, D3)) == [2, 3]
        with pytest.raises(DataError):
            s.slice(D1 - 1, D2)


class TestSplit:
    def test_weeks_and_validation(self):
        sp = SplitSpec(DayIndex(0), DayIndex(52), DayIndex(53), 3)
        assert sp.week_starts == [DayIndex(53), DayIndex(60), DayIndex(67)]
        assert sp.validation_week(1) == (DayIndex(53), DayIndex(59))
        assert sp.test_end == DayIndex(73)
        for k in range(3):
            v0, v1 = sp.validation_week(k)
            assert v1 + 1 == sp.week_starts[k]
            assert v1 - v0 == 6

    def test_test_must_follow_train(self):
        with pytest.raises(ValueError):
            SplitSpec(DayIndex(0), DayIndex(10), DayIndex(10))


class TestNormalizer:
    def test_midpoint(self):
        norm = fit_normalizer(np.array([[0.0], [10.0]]))
        assert norm.apply([[5.0]])[0, 0] == 0.5

    def test_constant_feature(self):
        norm = fit_normalizer(np.array([[7.0], [7.0]]))
        assert norm.apply([[7.0]])[0, 0] == 0.0
        assert norm.invert([[0.0]])[0, 0] == 7.0

    def test_roundtrip_value(self):
        norm = fit_normalizer(np.array([[1.0], [9.0]]))
        assert norm.invert(norm.apply([[3.25]]))[0, 0] == pytest.approx(3.25, abs=1e-12)

    def test_out_of_range_not_clamped(self):
        norm = fit_normalizer(np.array([[0.0], [10.0]]))
        assert norm.apply([[20.0]])[0, 0] == 2.0

    def test_roundtrip_bulk(self, rng):
        train = rng.uniform(-50, 300, size=(200, 5))
        norm = fit_normalizer(train)
        x = rng.uniform(train.min(0), train.max(0), size=(10_000, 5))
        assert np.max(np.abs(norm.invert(norm.apply(x)) - x)) < 1e-9


class TestWindows:
    def test_count_60_14_7(self):
        assert len(window_samples(np.zeros((60, 2)), np.zeros(60), 14, 7)) == 40

    def test_boundary(self):
        assert len(window_samples(np.zeros((10, 1)), np.zeros(10), 7, 3)) == 1

    def test_insufficient(self):
        with pytest.raises(InsufficientHistoryError, match="insufficient history.*topic_x.*10"):
            window_samples(np.zeros((9, 1)), np.zeros(9), 7, 3, topic="topic_x")

    @settings(max_examples=60)
    @given(st.integers(1, 15), st.integers(1, 8), st.integers(0, 30))
    def test_count_formula_and_adjacency(self, m, n, extra):
        L = m + n + extra
        y = np.arange(L, dtype=float)
        samples = window_samples(y[:, None], y, m, n, start=DayIndex(100))
        assert len(samples) == L - m - n + 1
        for i, s in enumerate(samples):
            assert list(s.inputs[:, 0]) == list(range(i, i + m))
            assert list(s.target) == list(range(i + m, i + m + n))
            assert s.end == DayIndex(100 + i + m - 1)

    def test_accepts_daily_series(self):
        s = DailySeries("p", "shares", DayIndex(3), np.arange(12), "t1")
        out = window_samples(np.arange(12)[:, None], s, 7, 3)
        assert out[0].topic == "t1" and out[0].end == DayIndex(9)
