"""The per-platform model pool: build, train, forecast, select, ensemble."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Protocol, Sequence

import numpy as np

from . import nn
from .core import (
    DataError,
    DayIndex,
    InsufficientHistoryError,
    Normalizer,
    SplitSpec,
    fit_normalizer,
    window_samples,
)
from .data import ENDOGENOUS, EXOGENOUS_GROUPS, GROUPS, Dataset, group_entries

log = logging.getLogger(__name__)

DEFAULT_COMBOS: tuple[tuple[int, int], ...] = ((14, 7), (7, 3), (3, 1))
FULL_GRID: tuple[tuple[int, int], ...] = tuple((m, n) for m in (14, 7, 3) for n in (7, 3, 1))
WEEK = 7

TAP_EXO = "TAP-Exo"
TAP_ENDO = "TAP-Endo"
TAP_ENS = "TAP-Ens"


@dataclass(frozen=True)
class WindowCombo:
    m: int
    n: int

    def __post_init__(self):
        if self.m < 1 or self.n < 1:
            raise ValueError("lookback and horizon must be >= 1")


@dataclass(frozen=True)
class ModelSpec:
    platform: str
    group: str
    combo: WindowCombo
    n_topics: int
    seed: int

    @property
    def name(self) -> str:
        return f"{self.group}_m{self.combo.m}_n{self.combo.n}"

    @property
    def exogenous(self) -> bool:
        return self.group != ENDOGENOUS

    def tie_key(self) -> tuple[int, int, int]:
        return (self.combo.m, self.combo.n, GROUPS.index(self.group))

    def to_dict(self) -> dict:
        return {
            "platform": self.platform,
            "group": self.group,
            "m": self.combo.m,
            "n": self.combo.n,
            "n_topics": self.n_topics,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(d["platform"], d["group"], WindowCombo(d["m"], d["n"]), d["n_topics"], d["seed"])


def spec_seed(base_seed: int, platform: str, group: str, combo: WindowCombo) -> int:
    text = f"{base_seed}|{platform}|{group}|{combo.m}|{combo.n}".encode()
    return int.from_bytes(hashlib.sha256(text).digest()[:4], "little")


def build_pool(
    platform: str,
    topics: Sequence[str],
    base_seed: int = 0,
    groups: Iterable[str] = GROUPS,
    combos: Iterable[tuple[int, int]] = DEFAULT_COMBOS,
) -> list[ModelSpec]:
    """One spec per (source group, window combo), groups in fixed order."""
    if not topics:
        raise ValueError("need at least one topic")
    wanted = set(groups)
    unknown = wanted - set(GROUPS)
    if unknown:
        raise ValueError(f"unknown source groups: {sorted(unknown)}")
    out = []
    for g in GROUPS:
        if g not in wanted:
            continue
        for m, n in combos:
            combo = WindowCombo(m, n)
            out.append(ModelSpec(platform, g, combo, len(topics), spec_seed(base_seed, platform, g, combo)))
    return out


# -- feature assembly ------------------------------------------------------------


class DataView(Protocol):
    topics: tuple[str, ...]

    def window(self, key, first: DayIndex, last: DayIndex) -> np.ndarray: ...

    def target_key(self, topic: str) -> tuple[str, str, str]: ...


class AuditedView:
    """Read-through wrapper that logs every ``window`` call."""

    def __init__(self, data: DataView):
        self._data = data
        self.topics = data.topics
        self.reads: list[tuple[tuple[str, str, str], DayIndex, DayIndex]] = []

    def window(self, key, first: DayIndex, last: DayIndex) -> np.ndarray:
        self.reads.append((tuple(key), first, last))
        return self._data.window(key, first, last)

    def target_key(self, topic: str) -> tuple[str, str, str]:
        return self._data.target_key(topic)

    def last_day_read(self, key) -> DayIndex | None:
        days = [last for k, _, last in self.reads if k == tuple(key)]
        return max(days) if days else None


def feature_keys(spec: ModelSpec, data: DataView, topic: str) -> list[tuple[str, str, str]]:
    """Series keys behind the non-one-hot columns: own history first."""
    keys = [data.target_key(topic)]
    keys += [e.key(topic) for e in group_entries(spec.group)]
    return keys


def feature_names(spec: ModelSpec, data: DataView, topic: str) -> list[str]:
    names = ["target"] + ["/".join(k[:2]) for k in feature_keys(spec, data, topic)[1:]]
    return names + [f"onehot/{t}" for t in data.topics]


def one_hot(data: DataView, topic: str) -> np.ndarray:
    vec = np.zeros(len(data.topics))
    vec[data.topics.index(topic)] = 1.0
    return vec


def assemble_features(spec: ModelSpec, data: DataView, topic: str, first: DayIndex, last: DayIndex) -> np.ndarray:
    """Raw ``(days, F)`` feature matrix for ``topic`` over ``[first, last]``.

    Columns: the topic's own target history, then the spec's source-group
    features in catalog order, then the one-hot topic block.
    """
    if topic not in data.topics:
        raise DataError(f"unknown topic {topic!r}")
    if len(data.topics) != spec.n_topics:
        raise DataError(f"{spec.name} expects {spec.n_topics} topics, data has {len(data.topics)}")
    cols, missing = [], []
    for key in feature_keys(spec, data, topic):
        try:
            cols.append(data.window(key, first, last))
        except DataError:
            missing.append(key)
    if missing:
        raise DataError("missing series (source, feature, topic): " + ", ".join(map(str, missing)))
    n_days = last - first + 1
    block = np.tile(one_hot(data, topic), (n_days, 1))
    return np.column_stack(cols + [block])


# -- training --------------------------------------------------------------------


@dataclass
class PoolMember:
    spec: ModelSpec
    model: nn.TrainedModel

    @property
    def name(self) -> str:
        return self.spec.name


def _sample_sets(spec: ModelSpec, data: Dataset, split: SplitSpec):
    m, n = spec.combo.m, spec.combo.n
    val_start, val_end = split.validation_week(0)
    raw_train = {t: assemble_features(spec, data, t, split.train_start, split.train_end) for t in data.topics}
    normalizer = fit_normalizer(np.vstack(list(raw_train.values())))
    train, valid = [], []
    fit_last = min(split.train_end, val_start - 1)
    for t in data.topics:
        if fit_last - split.train_start + 1 < m + n:
            raise InsufficientHistoryError(
                f"insufficient history for {spec.name}, topic {t!r}: "
                f"{fit_last - split.train_start + 1} training days, need at least {m + n}"
            )
        rows = normalizer.apply(assemble_features(spec, data, t, split.train_start, fit_last))
        train += window_samples(rows, rows[:, 0], m, n, topic=t, start=split.train_start)
        v_first = val_start - m
        if v_first < data.start or val_end - v_first + 1 < m + n:
            continue
        vrows = normalizer.apply(assemble_features(spec, data, t, v_first, val_end))
        valid += window_samples(vrows, vrows[:, 0], m, n, topic=t, start=v_first)
    return train, valid, normalizer


def train_member(spec: ModelSpec, data: Dataset, split: SplitSpec, config: nn.TrainConfig) -> PoolMember:
    train, valid, normalizer = _sample_sets(spec, data, split)
    target_norm = normalizer.column(0)
    cfg = nn.TrainConfig(
        epochs=config.epochs,
        learning_rate=config.learning_rate,
        hidden_candidates=config.hidden_candidates,
        batch_size=config.batch_size,
        seed=spec.seed,
        shuffle=config.shuffle,
    )
    model = nn.train(train, cfg, valid, denormalize=lambda a: target_norm.invert(a[..., None])[..., 0])
    model.normalizer = normalizer
    model.meta = {"spec": spec.to_dict(), "features": feature_names(spec, data, data.topics[0])}
    return PoolMember(spec, model)


def _train_one(spec, data, split, config):
    try:
        return train_member(spec, data, split, config)
    except (DataError, nn.DivergenceError, ValueError) as exc:
        log.warning("training %s failed: %s", spec.name, exc)
        return exc


def train_pool(
    specs: Sequence[ModelSpec],
    data: Dataset,
    split: SplitSpec,
    config: nn.TrainConfig,
    jobs: int = 1,
) -> tuple[list[PoolMember], dict[str, Exception]]:
    """Train every spec; failures are collected without stopping siblings."""
    if jobs > 1:
        from joblib import Parallel, delayed

        results = Parallel(n_jobs=jobs)(delayed(_train_one)(s, data, split, config) for s in specs)
    else:
        results = [_train_one(s, data, split, config) for s in specs]
    members, failures = [], {}
    for spec, res in zip(specs, results):
        if isinstance(res, Exception):
            failures[spec.name] = res
        else:
            members.append(res)
    return members, failures


# -- forecasting -------------------------------------------------------------------


def recursive_forecast(member: PoolMember, topic: str, week_start: DayIndex, data: DataView, days: int = WEEK) -> np.ndarray:
    """Cover ``days`` days from ``week_start`` with repeated ``n``-day model calls.

    Inside the week, columns fed by the target series take earlier
    predictions; all other columns use actuals up to the day before each
    block. Target actuals dated ``>= week_start`` are never read.
    """
    spec, model = member.spec, member.model
    m, n = spec.combo.m, spec.combo.n
    keys = feature_keys(spec, data, topic)
    tkey = data.target_key(topic)
    fed_back = [j for j, k in enumerate(keys) if k == tkey]
    other = [j for j, k in enumerate(keys) if k != tkey]
    norm: Normalizer = model.normalizer
    target_norm = norm.column(0)
    hist = assemble_features(spec, data, topic, week_start - m, week_start - 1)
    onehot = one_hot(data, topic)
    preds = np.zeros(0)
    while len(preds) < days:
        o = len(preds)
        if o == 0:
            window = hist
        else:
            inweek = np.empty((o, hist.shape[1]))
            for j in fed_back:
                inweek[:, j] = preds
            for j in other:
                inweek[:, j] = data.window(keys[j], week_start, week_start + (o - 1))
            inweek[:, len(keys) :] = onehot
            window = np.vstack([hist, inweek])[-m:]
        out = np.asarray(model.predict(norm.apply(window)), dtype=np.float64).reshape(-1)
        if len(out) != n:
            raise ValueError(f"{spec.name} returned {len(out)} values, expected {n}")
        block = np.maximum(target_norm.invert(out[:, None])[:, 0], 0.0)
        preds = np.concatenate([preds, block[: days - o]])
    return preds


def _rmse(a, b) -> float:
    return float(np.sqrt(np.mean((np.asarray(a, float) - np.asarray(b, float)) ** 2)))


@dataclass
class ForecastProvenance:
    topic: str
    week: int
    variant: str
    chosen: list[str]
    validation_rmse: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "topic": self.topic,
            "week": self.week,
            "variant": self.variant,
            "chosen": list(self.chosen),
            "validation_rmse": dict(self.validation_rmse),
        }


def validation_scores(
    candidates: Sequence[PoolMember], topic: str, validation_start: DayIndex, data: DataView
) -> tuple[dict[str, float], dict[str, np.ndarray]]:
    """Validation-week RMSE (and forecast) of every candidate."""
    actual = data.window(data.target_key(topic), validation_start, validation_start + (WEEK - 1))
    scores, fcs = {}, {}
    for c in candidates:
        fc = recursive_forecast(c, topic, validation_start, data)
        fcs[c.name] = fc
        scores[c.name] = _rmse(fc, actual)
    return scores, fcs


def pick(candidates: Sequence[PoolMember], scores: dict[str, float]) -> PoolMember:
    """Lowest score; ties go to smaller m, then smaller n, then group order."""
    if not candidates:
        raise ValueError("empty candidate set")
    return min(candidates, key=lambda c: (scores[c.name], c.spec.tie_key()))


def select_best(
    candidates: Sequence[PoolMember], topic: str, validation_start: DayIndex, data: DataView, week: int = 0, variant: str = ""
) -> tuple[PoolMember, ForecastProvenance]:
    if not candidates:
        raise ValueError("empty candidate set")
    scores, _ = validation_scores(candidates, topic, validation_start, data)
    winner = pick(candidates, scores)
    return winner, ForecastProvenance(topic, week, variant, [winner.name], scores)


def exogenous_members(pool: Sequence[PoolMember]) -> list[PoolMember]:
    return [p for p in pool if p.spec.exogenous]


def endogenous_members(pool: Sequence[PoolMember]) -> list[PoolMember]:
    return [p for p in pool if not p.spec.exogenous]


def _selected(variant, members, topic, week_start, data, week):
    winner, prov = select_best(members, topic, week_start - WEEK, data, week, variant)
    return recursive_forecast(winner, topic, week_start, data), prov


def tap_exo(pool, topic, week_start, data, week: int = 0):
    """Best exogenous model on the previous week, forecasting this week."""
    return _selected(TAP_EXO, exogenous_members(pool), topic, week_start, data, week)


def tap_endo(pool, topic, week_start, data, week: int = 0):
    return _selected(TAP_ENDO, endogenous_members(pool), topic, week_start, data, week)


def tap_ens(pool, topic, week_start, data, week: int = 0, mode: str = "all"):
    """Mean forecast of the exogenous models.

    ``mode="all"`` averages every exogenous model; ``"per-source-best"``
    first picks the best model of each source group on validation.
    """
    members = exogenous_members(pool)
    if not members:
        raise ValueError("empty candidate set")
    if mode == "all":
        chosen, scores = members, {}
    elif mode == "per-source-best":
        scores, _ = validation_scores(members, topic, week_start - WEEK, data)
        chosen = []
        for g in EXOGENOUS_GROUPS:
            group = [p for p in members if p.spec.group == g]
            if group:
                chosen.append(pick(group, scores))
    else:
        raise ValueError(f"unknown ensemble mode {mode!r}")
    fcs = np.stack([recursive_forecast(c, topic, week_start, data) for c in chosen])
    prov = ForecastProvenance(topic, week, TAP_ENS, [c.name for c in chosen], scores)
    return fcs.mean(axis=0), prov


def tap_forecasts(pool, topic, week_start, data, week: int = 0, mode: str = "all"):
    """All three variants for one (topic, week), sharing validation runs.

    Returns ``{variant: (values, provenance)}`` for the variants whose
    candidate sets are non-empty.
    """
    exo, endo = exogenous_members(pool), endogenous_members(pool)
    val_start = week_start - WEEK
    scores, _ = validation_scores(list(pool), topic, val_start, data)
    cache: dict[str, np.ndarray] = {}

    def fc(member):
        if member.name not in cache:
            cache[member.name] = recursive_forecast(member, topic, week_start, data)
        return cache[member.name]

    out = {}
    if exo:
        w = pick(exo, scores)
        out[TAP_EXO] = (fc(w), ForecastProvenance(topic, week, TAP_EXO, [w.name], {c.name: scores[c.name] for c in exo}))
    if endo:
        w = pick(endo, scores)
        out[TAP_ENDO] = (fc(w), ForecastProvenance(topic, week, TAP_ENDO, [w.name], {c.name: scores[c.name] for c in endo}))
    if exo:
        if mode == "all":
            chosen = exo
        elif mode == "per-source-best":
            chosen = [pick([p for p in exo if p.spec.group == g], scores) for g in EXOGENOUS_GROUPS if any(p.spec.group == g for p in exo)]
        else:
            raise ValueError(f"unknown ensemble mode {mode!r}")
        mean = np.mean([fc(c) for c in chosen], axis=0)
        out[TAP_ENS] = (mean, ForecastProvenance(topic, week, TAP_ENS, [c.name for c in chosen], {c.name: scores[c.name] for c in exo}))
    return out


# -- persistence -------------------------------------------------------------------


def save_pool(
    members: Sequence[PoolMember],
    out_dir,
    *,
    platform: str,
    base_seed: int,
    config: nn.TrainConfig,
    failures: dict[str, Exception] | None = None,
) -> Path:
    """Write one ``.npz`` per member and ``pool_manifest.json``."""
    out_dir = Path(out_dir)
    (out_dir / "models").mkdir(parents=True, exist_ok=True)
    entries = []
    for mbr in members:
        rel = f"models/{mbr.name}.npz"
        nn.save(mbr.model, out_dir / rel)
        trace = np.asarray(mbr.model.loss_trace)
        entries.append(
            {
                "name": mbr.name,
                "spec": mbr.spec.to_dict(),
                "seed": mbr.spec.seed,
                "path": rel,
                "hidden_size": mbr.model.hidden_size,
                "validation_rmse_by_hidden": {str(k): v for k, v in mbr.model.validation_rmse.items()},
                "loss": {
                    "first": float(trace[0]) if trace.size else None,
                    "last": float(trace[-1]) if trace.size else None,
                    "min": float(trace.min()) if trace.size else None,
                    "epochs": int(trace.size),
                },
            }
        )
    manifest = {
        "platform": platform,
        "base_seed": base_seed,
        "train_config": {
            "epochs": config.epochs,
            "learning_rate": config.learning_rate,
            "hidden_candidates": list(config.hidden_candidates),
            "batch_size": config.batch_size,
            "shuffle": config.shuffle,
        },
        "models": entries,
        "failures": {k: str(v) for k, v in sorted((failures or {}).items())},
    }
    path = out_dir / "pool_manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_pool(manifest_path) -> tuple[list[PoolMember], dict]:
    manifest_path = Path(manifest_path)
    manifest = json.loads(manifest_path.read_text())
    members = []
    for entry in manifest["models"]:
        path = manifest_path.parent / entry["path"]
        if not path.exists():
            raise FileNotFoundError(f"model file {path} listed in manifest is missing")
        members.append(PoolMember(ModelSpec.from_dict(entry["spec"]), nn.load(path)))
    return members, manifest
