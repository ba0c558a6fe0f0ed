"""Calendar-aligned daily series, splits, min-max scaling and window extraction."""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

DEFAULT_EPOCH = dt.date(2018, 1, 1)


class DataError(ValueError):
    """Input data violates a precondition (bad row, missing series, ...)."""


class InsufficientHistoryError(DataError):
    pass


@dataclass(frozen=True, order=True)
class DayIndex:
    """Whole days since an epoch date."""

    ordinal: int

    def __post_init__(self):
        if self.ordinal < 0:
            raise ValueError(f"day ordinal must be >= 0, got {self.ordinal}")

    @classmethod
    def from_date(cls, day: dt.date, epoch: dt.date = DEFAULT_EPOCH) -> "DayIndex":
        return cls((day - epoch).days)

    @classmethod
    def parse(cls, text: str, epoch: dt.date = DEFAULT_EPOCH) -> "DayIndex":
        return cls.from_date(parse_date(text), epoch)

    def to_date(self, epoch: dt.date = DEFAULT_EPOCH) -> dt.date:
        return epoch + dt.timedelta(days=self.ordinal)

    def isoformat(self, epoch: dt.date = DEFAULT_EPOCH) -> str:
        return self.to_date(epoch).isoformat()

    def __add__(self, days: int) -> "DayIndex":
        return DayIndex(self.ordinal + int(days))

    def __sub__(self, other):
        if isinstance(other, DayIndex):
            return self.ordinal - other.ordinal
        return DayIndex(self.ordinal - int(other))

    def __int__(self):
        return self.ordinal


def parse_date(text: str) -> dt.date:
    try:
        return dt.date.fromisoformat(str(text).strip())
    except ValueError as exc:
        raise DataError(f"unparseable date {text!r}") from exc


def _frozen(values) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class DailySeries:
    """Gap-free daily counts for one (source, feature, topic) stream."""

    source: str
    feature: str
    start: DayIndex
    values: np.ndarray
    topic: str | None = None

    def __post_init__(self):
        arr = _frozen(self.values)
        if arr.ndim != 1:
            raise ValueError("DailySeries values must be one-dimensional")
        if not np.all(np.isfinite(arr)):
            raise DataError(f"{self.key}: non-finite values")
        if np.any(arr < 0):
            raise DataError(f"{self.key}: negative values")
        object.__setattr__(self, "values", arr)

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.source, self.feature, self.topic or "")

    @property
    def end(self) -> DayIndex:
        """Last covered day (inclusive)."""
        return self.start + (len(self.values) - 1)

    def __len__(self):
        return len(self.values)

    def slice(self, first: DayIndex, last: DayIndex) -> np.ndarray:
        """Values for the inclusive day range ``[first, last]``."""
        lo = first - self.start
        hi = last - self.start + 1
        if lo < 0 or hi > len(self.values) or hi < lo:
            raise DataError(
                f"{self.key}: range {first.ordinal}..{last.ordinal} outside "
                f"{self.start.ordinal}..{self.end.ordinal}"
            )
        return self.values[lo:hi]


def align(
    records: Iterable[tuple],
    first: DayIndex,
    last: DayIndex,
    *,
    source: str = "",
    feature: str = "",
    topic: str | None = None,
    epoch: dt.date = DEFAULT_EPOCH,
) -> DailySeries:
    """Bin ``(date, value)`` records onto every day of ``[first, last]``.

    Days without records are 0 and duplicate days are summed. Dates may be
    ISO strings, ``datetime.date`` or ``DayIndex``. Records outside the range
    are ignored.
    """
    n_days = last - first + 1
    if n_days < 1:
        raise ValueError("empty day range")
    out = np.zeros(n_days)
    for row in records:
        day, value = row[0], row[1]
        if isinstance(day, DayIndex):
            idx = day
        else:
            if not isinstance(day, dt.date):
                day = parse_date(day)
            if day < epoch:
                raise DataError(f"date before epoch in row {row!r}")
            idx = DayIndex((day - epoch).days)
        try:
            value = float(value)
        except (TypeError, ValueError) as exc:
            raise DataError(f"non-numeric value in row {row!r}") from exc
        if not np.isfinite(value) or value < 0:
            raise DataError(f"negative or non-finite value in row {row!r}")
        pos = idx - first
        if 0 <= pos < n_days:
            out[pos] += value
    return DailySeries(source, feature, first, out, topic)


@dataclass(frozen=True)
class SplitSpec:
    """Training range plus consecutive 7-day test weeks.

    The validation week of each test week is the 7 days right before it.
    """

    train_start: DayIndex
    train_end: DayIndex
    test_start: DayIndex
    n_weeks: int = 3

    def __post_init__(self):
        if self.train_end < self.train_start:
            raise ValueError("train range is empty")
        if self.n_weeks < 1:
            raise ValueError("need at least one test week")
        if self.test_start <= self.train_end:
            raise ValueError("test weeks must start after the training range")

    @property
    def week_starts(self) -> list[DayIndex]:
        return [self.test_start + 7 * k for k in range(self.n_weeks)]

    def test_week(self, k: int) -> tuple[DayIndex, DayIndex]:
        start = self.week_starts[k]
        return start, start + 6

    def validation_week(self, k: int) -> tuple[DayIndex, DayIndex]:
        start = self.week_starts[k]
        return start - 7, start - 1

    @property
    def test_end(self) -> DayIndex:
        return self.test_start + 7 * self.n_weeks - 1


@dataclass(frozen=True)
class Normalizer:
    """Per-column min-max scaling fit on training rows."""

    mins: np.ndarray
    maxs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mins", _frozen(self.mins))
        object.__setattr__(self, "maxs", _frozen(self.maxs))

    @property
    def spans(self) -> np.ndarray:
        span = self.maxs - self.mins
        return np.where(span > 0, span, 1.0)

    def apply(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        out = (x - self.mins) / self.spans
        # constant columns collapse to 0
        return np.where(self.maxs > self.mins, out, 0.0)

    def invert(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return np.where(self.maxs > self.mins, x * self.spans + self.mins, self.mins)

    def column(self, j: int) -> "Normalizer":
        return Normalizer(self.mins[j : j + 1], self.maxs[j : j + 1])


def fit_normalizer(train) -> Normalizer:
    train = np.asarray(train, dtype=np.float64)
    if train.ndim == 1:
        train = train[:, None]
    return Normalizer(train.min(axis=0), train.max(axis=0))


@dataclass(frozen=True)
class WindowSample:
    inputs: np.ndarray
    target: np.ndarray
    topic: str | None = None
    end: DayIndex | None = None


def window_samples(
    features,
    targets,
    m: int,
    n: int,
    stride: int = 1,
    *,
    topic: str | None = None,
    start: DayIndex | None = None,
) -> list[WindowSample]:
    """Slice aligned ``(L, F)`` features and ``(L,)`` targets into windows.

    Sample ``i`` reads inputs from days ``[i, i+m)`` and targets from
    ``[i+m, i+m+n)``. ``targets`` may be a ``DailySeries``.
    """
    if m < 1 or n < 1 or stride < 1:
        raise ValueError("m, n and stride must be >= 1")
    if isinstance(targets, DailySeries):
        if start is None:
            start = targets.start
        topic = topic if topic is not None else targets.topic
        targets = targets.values
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if len(X) != len(y):
        raise ValueError("features and targets must cover the same days")
    L = len(y)
    if L < m + n:
        raise InsufficientHistoryError(
            f"insufficient history for topic {topic!r}: {L} days, need at least {m + n}"
        )
    out = []
    for i in range(0, L - m - n + 1, stride):
        end = start + (i + m - 1) if start is not None else None
        out.append(WindowSample(X[i : i + m], y[i + m : i + m + n], topic, end))
    return out


def stack_samples(samples: Sequence[WindowSample]) -> tuple[np.ndarray, np.ndarray]:
    """Batch samples into ``(B, m, F)`` inputs and ``(B, n)`` targets."""
    X = np.stack([s.inputs for s in samples])
    Y = np.stack([s.target for s in samples])
    return X, Y
