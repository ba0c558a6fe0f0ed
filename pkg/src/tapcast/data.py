"""Feature catalog, CSV dataset I/O and planted-driver synthetic scenarios.

Datasets on disk are a directory of long-format CSV files with header
``date,source,feature,topic,value`` (``topic`` empty for global features)
and an optional ``manifest.json`` holding the epoch, date range and topic
order.
"""

from __future__ import annotations

import csv
import datetime as dt
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .core import DEFAULT_EPOCH, DailySeries, DataError, DayIndex, parse_date

log = logging.getLogger(__name__)

CSV_HEADER = ["date", "source", "feature", "topic", "value"]

# CAMEO root event codes
GDELT_EVENTS = (
    "make_public_statement",
    "appeal",
    "express_intent_to_cooperate",
    "consult",
    "engage_in_diplomatic_cooperation",
    "engage_in_material_cooperation",
    "provide_aid",
    "yield",
    "investigate",
    "demand",
    "disapprove",
    "reject",
    "threaten",
    "protest",
    "exhibit_force_posture",
    "reduce_relations",
    "coerce",
    "assault",
    "fight",
    "use_unconventional_mass_violence",
)
ACLED_SCALES = ("local", "regional", "national", "international")
ACLED_EVENTS = (
    "battles",
    "explosions_remote_violence",
    "violence_against_civilians",
    "protests",
    "riots",
    "strategic_developments",
)

# source-group names, in the fixed order used for pool building and tie-breaks
NEWS_GDELT = "news_gdelt"
REDDIT = "reddit"
ACLED = "acled"
ENDOGENOUS = "endogenous"
GROUPS = (NEWS_GDELT, REDDIT, ACLED, ENDOGENOUS)
EXOGENOUS_GROUPS = (NEWS_GDELT, REDDIT, ACLED)


@dataclass(frozen=True)
class CatalogEntry:
    group: str
    source: str
    feature: str
    per_topic: bool

    def key(self, topic: str) -> tuple[str, str, str]:
        return (self.source, self.feature, topic if self.per_topic else "")


def _build_catalog() -> tuple[CatalogEntry, ...]:
    rows = [CatalogEntry(NEWS_GDELT, "gdelt", f"cameo_{k + 1:02d}_{name}", False) for k, name in enumerate(GDELT_EVENTS)]
    rows.append(CatalogEntry(NEWS_GDELT, "news", "articles", True))
    rows += [CatalogEntry(REDDIT, "reddit", f, True) for f in ("posts", "comments")]
    rows += [CatalogEntry(ACLED, "acled", f"scale_{s}", False) for s in ACLED_SCALES]
    rows += [CatalogEntry(ACLED, "acled", f"event_{e}", False) for e in ACLED_EVENTS]
    rows += [CatalogEntry(ENDOGENOUS, "platform", f, True) for f in ("new_users", "shares")]
    return tuple(rows)


CATALOG: tuple[CatalogEntry, ...] = _build_catalog()
TARGET_DEFAULT = ("platform", "shares")


def group_entries(group: str) -> list[CatalogEntry]:
    return [e for e in CATALOG if e.group == group]


@dataclass(frozen=True)
class Dataset:
    """Aligned daily series for one platform, keyed by ``(source, feature, topic)``.

    Global features use ``""`` as topic. ``groups`` lists the source groups
    whose catalog entries are all present.
    """

    series: Mapping[tuple[str, str, str], DailySeries]
    topics: tuple[str, ...]
    start: DayIndex
    end: DayIndex
    epoch: dt.date = DEFAULT_EPOCH
    platform: str = "platform"
    groups: tuple[str, ...] = GROUPS
    target: tuple[str, str] = TARGET_DEFAULT

    def __post_init__(self):
        for key, s in self.series.items():
            if s.start != self.start or s.end != self.end:
                raise DataError(f"series {key} is not aligned to {self.start.ordinal}..{self.end.ordinal}")

    @property
    def n_days(self) -> int:
        return self.end - self.start + 1

    def day(self, text_or_date) -> DayIndex:
        if isinstance(text_or_date, DayIndex):
            return text_or_date
        if isinstance(text_or_date, dt.date):
            return DayIndex.from_date(text_or_date, self.epoch)
        return DayIndex.parse(text_or_date, self.epoch)

    def date(self, day: DayIndex) -> dt.date:
        return day.to_date(self.epoch)

    def target_key(self, topic: str) -> tuple[str, str, str]:
        return (self.target[0], self.target[1], topic)

    def get(self, key: tuple[str, str, str]) -> DailySeries:
        try:
            return self.series[key]
        except KeyError:
            raise DataError(f"missing series {key}") from None

    def window(self, key, first: DayIndex, last: DayIndex) -> np.ndarray:
        return self.get(key).slice(first, last)

    def logical_series(self, topic: str) -> list[tuple[str, tuple[str, str, str]]]:
        """``(role, key)`` pairs a model for ``topic`` can draw on: target first."""
        out = [("target", self.target_key(topic))]
        for e in CATALOG:
            if e.group in self.groups:
                out.append((e.group, e.key(topic)))
        return out

    def with_groups(self, groups: Iterable[str]) -> "Dataset":
        keep = tuple(g for g in GROUPS if g in set(groups) and g in self.groups)
        return Dataset(self.series, self.topics, self.start, self.end, self.epoch, self.platform, keep, self.target)


def _check_catalog(keys: set, topics: Iterable[str], target: tuple[str, str]) -> tuple[str, ...]:
    """Return the source groups that are fully present; raise on partial ones."""
    topics = list(topics)
    present = []
    for g in GROUPS:
        expected = [e.key(t) for e in group_entries(g) for t in (topics if e.per_topic else [""])]
        missing = [k for k in expected if k not in keys]
        if not missing:
            present.append(g)
            continue
        have_any = any(k[:2] == (e.source, e.feature) for k in keys for e in group_entries(g))
        if g == ENDOGENOUS or have_any:
            raise DataError("missing catalog entries: " + ", ".join("/".join(k) for k in missing))
        log.warning("source group %r absent; its models are disabled", g)
    missing_target = [(target[0], target[1], t) for t in topics if (target[0], target[1], t) not in keys]
    if missing_target:
        raise DataError("missing target series: " + ", ".join("/".join(k) for k in missing_target))
    return tuple(present)


def read_rows(path: Path) -> Iterable[tuple[int, dict]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [c.strip() for c in reader.fieldnames] != CSV_HEADER:
            raise DataError(f"{path}: header must be {','.join(CSV_HEADER)}, got {reader.fieldnames}")
        for lineno, row in enumerate(reader, start=2):
            yield lineno, row


def load_dataset(directory, target: tuple[str, str] = TARGET_DEFAULT) -> Dataset:
    """Read every ``*.csv`` under ``directory`` into an aligned ``Dataset``."""
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"{directory} is not a directory")
    manifest = {}
    if (directory / "manifest.json").exists():
        manifest = json.loads((directory / "manifest.json").read_text())
    epoch = parse_date(manifest.get("epoch", DEFAULT_EPOCH.isoformat()))
    files = sorted(directory.glob("*.csv"))
    if not files:
        raise DataError(f"{directory}: no CSV files")

    raw: dict[tuple[str, str, str], dict[int, float]] = {}
    for path in files:
        for lineno, row in read_rows(path):
            where = f"{path.name}:{lineno}"
            try:
                day = parse_date(row["date"])
            except DataError as exc:
                raise DataError(f"{where}: {exc}") from None
            if day < epoch:
                raise DataError(f"{where}: date {day} before epoch {epoch}")
            try:
                value = float(row["value"])
            except (TypeError, ValueError):
                raise DataError(f"{where}: non-numeric value {row['value']!r}") from None
            if not math.isfinite(value) or value < 0:
                raise DataError(f"{where}: negative or non-finite value {row['value']!r}")
            key = (row["source"].strip(), row["feature"].strip(), (row["topic"] or "").strip())
            bucket = raw.setdefault(key, {})
            o = (day - epoch).days
            bucket[o] = bucket.get(o, 0.0) + value
    if not raw:
        raise DataError(f"{directory}: no data rows")

    if "start" in manifest:
        start = DayIndex.from_date(parse_date(manifest["start"]), epoch)
        end = DayIndex.from_date(parse_date(manifest["end"]), epoch)
    else:
        days = [d for b in raw.values() for d in b]
        start, end = DayIndex(min(days)), DayIndex(max(days))
    if "topics" in manifest:
        topics = tuple(manifest["topics"])
    else:
        topics = tuple(sorted({k[2] for k in raw if k[2]}))
    if not topics:
        raise DataError(f"{directory}: no topics")

    n = end - start + 1
    series = {}
    for key, bucket in raw.items():
        if key[2] and key[2] not in topics:
            continue
        values = np.zeros(n)
        for o, v in bucket.items():
            pos = o - start.ordinal
            if 0 <= pos < n:
                values[pos] += v
        series[key] = DailySeries(key[0], key[1], start, values, key[2] or None)
    groups = _check_catalog(set(series), topics, target)
    return Dataset(
        series,
        topics,
        start,
        end,
        epoch,
        manifest.get("platform", "platform"),
        groups,
        target,
    )


def _fmt(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))


def save_dataset(ds: Dataset, directory, extra_manifest: dict | None = None) -> Path:
    """Write ``ds`` as ``activity.csv`` + ``manifest.json``; zero days are omitted."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / "activity.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for key in sorted(ds.series):
            s = ds.series[key]
            for i, v in enumerate(s.values):
                if v != 0:
                    w.writerow([ds.date(s.start + i).isoformat(), key[0], key[1], key[2], _fmt(v)])
    manifest = {
        "epoch": ds.epoch.isoformat(),
        "start": ds.date(ds.start).isoformat(),
        "end": ds.date(ds.end).isoformat(),
        "topics": list(ds.topics),
        "platform": ds.platform,
    }
    manifest.update(extra_manifest or {})
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return directory


# -- synthetic scenarios -------------------------------------------------------

# per-group driver series: which catalog feature carries the planted signal
DRIVER_FEATURE = {
    NEWS_GDELT: ("news", "articles", True),
    REDDIT: ("reddit", "posts", True),
    ACLED: ("acled", "event_protests", False),
}


@dataclass(frozen=True)
class Driver:
    group: str
    lag: int = 1
    gain: float = 5.0

    def __post_init__(self):
        if self.group not in DRIVER_FEATURE:
            raise ValueError(f"driver group must be one of {sorted(DRIVER_FEATURE)}")
        if self.lag < 1:
            raise ValueError("driver lag must be >= 1")
        if not math.isfinite(self.gain):
            raise ValueError("driver gain must be finite")


@dataclass(frozen=True)
class ScenarioSpec:
    """Recipe for a synthetic multi-topic dataset.

    ``drivers`` maps a topic index to its planted exogenous driver; other
    topics follow an AR(1) count process around their base rate.
    """

    n_topics: int = 4
    n_days: int = 300
    drivers: Mapping[int, Driver] = field(default_factory=lambda: {0: Driver(REDDIT, 1, 5.0)})
    noise: float = 1.0
    base_rate: float = 20.0
    ar_phi: float = 0.6
    exo_rate: float = 8.0
    seed: int = 0
    start: str = "2019-01-01"
    epoch: str = DEFAULT_EPOCH.isoformat()
    platform: str = "synthetic"

    def __post_init__(self):
        if self.n_topics < 1:
            raise ValueError("scenario needs at least one topic")
        if self.n_days < 90:
            raise ValueError("scenario needs at least 90 days")
        for k in self.drivers:
            if not 0 <= k < self.n_topics:
                raise ValueError(f"driver assigned to unknown topic index {k}")

    @property
    def topics(self) -> tuple[str, ...]:
        return tuple(f"topic_{k:02d}" for k in range(self.n_topics))

    def to_dict(self) -> dict:
        return {
            "n_topics": self.n_topics,
            "n_days": self.n_days,
            "drivers": {str(k): {"group": d.group, "lag": d.lag, "gain": d.gain} for k, d in sorted(self.drivers.items())},
            "noise": self.noise,
            "base_rate": self.base_rate,
            "ar_phi": self.ar_phi,
            "exo_rate": self.exo_rate,
            "seed": self.seed,
            "start": self.start,
            "epoch": self.epoch,
            "platform": self.platform,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioSpec":
        d = dict(d)
        if "drivers" in d:
            d["drivers"] = {int(k): Driver(**v) for k, v in d["drivers"].items()}
        return cls(**d)


def self_exciting_counts(n: int, mu: float, alpha: float, beta: float, rng) -> np.ndarray:
    """Discrete-day self-exciting Poisson counts (intensity decays as exp(-beta*k))."""
    out = np.zeros(n)
    decay = math.exp(-beta)
    state = 0.0
    for t in range(n):
        out[t] = rng.poisson(mu + alpha * state)
        state = decay * (state + out[t])
    return out


def _ar1_counts(n: int, base: float, phi: float, sigma: float, rng) -> np.ndarray:
    out = np.zeros(n)
    level = base
    for t in range(n):
        level = base + phi * (level - base) + rng.normal(0.0, sigma)
        out[t] = max(0.0, round(level))
    return out


def synth_generate(spec: ScenarioSpec) -> tuple[Dataset, dict]:
    """Generate a dataset and the planted driver map ``topic -> driver``.

    Every series is a non-negative integer count. A driven topic follows
    ``round(max(0, base + gain * x[t - lag] + noise))`` where ``x`` is its
    driver series.
    """
    rng = np.random.default_rng(spec.seed)
    epoch = parse_date(spec.epoch)
    start = DayIndex.from_date(parse_date(spec.start), epoch)
    L = spec.n_days
    topics = spec.topics
    # warm-up days let lagged drivers and AR processes settle
    burn = 30
    N = L + burn
    raw: dict[tuple[str, str, str], np.ndarray] = {}

    for e in CATALOG:
        if e.group == ENDOGENOUS:
            continue
        for topic in topics if e.per_topic else [""]:
            rate = spec.exo_rate * rng.uniform(0.5, 1.5)
            if e.feature in ("articles", "posts", "event_protests"):
                # bursty drivers: mu / (1 - branching) = rate
                series = self_exciting_counts(N, rate * 0.5, 0.4, 0.7, rng)
            elif e.feature == "comments":
                posts = raw[("reddit", "posts", topic)]
                series = rng.poisson(3.0 * posts + 1.0).astype(float)
            else:
                series = rng.poisson(rate, N).astype(float)
            raw[e.key(topic)] = series

    driver_map = {}
    for k, topic in enumerate(topics):
        base = spec.base_rate * (1.0 + 0.5 * k)
        drv = spec.drivers.get(k)
        if drv is None:
            shares = _ar1_counts(N, base, spec.ar_phi, spec.noise * 3.0 + 1.0, rng)
        else:
            src, feat, per_topic = DRIVER_FEATURE[drv.group]
            x = raw[(src, feat, topic if per_topic else "")]
            lagged = np.concatenate([np.zeros(drv.lag), x[:-drv.lag]])
            noise = rng.normal(0.0, spec.noise, N)
            shares = np.maximum(0.0, np.round(base + drv.gain * lagged + noise))
            driver_map[topic] = {"group": drv.group, "source": src, "feature": feat, "lag": drv.lag, "gain": drv.gain}
        raw[("platform", "shares", topic)] = shares
        raw[("platform", "new_users", topic)] = rng.binomial(shares.astype(np.int64), 0.1).astype(float)

    series = {
        key: DailySeries(key[0], key[1], start, values[burn:], key[2] or None) for key, values in sorted(raw.items())
    }
    end = start + (L - 1)
    ds = Dataset(series, topics, start, end, epoch, spec.platform, GROUPS, TARGET_DEFAULT)
    return ds, driver_map
