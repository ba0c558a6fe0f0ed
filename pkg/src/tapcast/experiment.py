"""Experiment configuration and the train / forecast / evaluate / rank steps."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import jsonschema
import numpy as np

from . import baselines, evaluation, nn, pool
from .core import DataError, DayIndex, SplitSpec, parse_date
from .data import ACLED, ENDOGENOUS, GROUPS, NEWS_GDELT, REDDIT, Dataset, load_dataset

log = logging.getLogger(__name__)

BASELINES = ("ARIMA", "Hawkes", "Persistent")
MODEL_ORDER = (pool.TAP_EXO, pool.TAP_ENDO, pool.TAP_ENS) + BASELINES

SOURCE_ALIASES = {
    "news": NEWS_GDELT,
    "gdelt": NEWS_GDELT,
    "news_gdelt": NEWS_GDELT,
    "reddit": REDDIT,
    "acled": ACLED,
    "endo": ENDOGENOUS,
    "endogenous": ENDOGENOUS,
}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "data_dir": {"type": "string"},
        "out_dir": {"type": "string"},
        "epoch": {"type": "string"},
        "train_start": {"type": "string"},
        "train_end": {"type": "string"},
        "test_start": {"type": "string"},
        "n_weeks": {"type": "integer", "minimum": 1, "maximum": 52},
        "sources": {"type": "array", "items": {"enum": sorted(SOURCE_ALIASES)}, "minItems": 1},
        "window_combos": {
            "type": "array",
            "minItems": 1,
            "items": {"type": "array", "items": {"type": "integer", "minimum": 1, "maximum": 60}, "minItems": 2, "maxItems": 2},
        },
        "hidden_candidates": {"type": "array", "items": {"type": "integer", "minimum": 1, "maximum": 512}, "minItems": 1},
        "epochs": {"type": "integer", "minimum": 1, "maximum": 100000},
        "learning_rate": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "batch_size": {"type": "integer", "minimum": 1},
        "base_seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "ensemble_mode": {"enum": ["all", "per-source-best"]},
        "jobs": {"type": "integer", "minimum": 1},
        "baselines": {"type": "boolean"},
        "context": {"type": "string"},
    },
}


@dataclass
class ExperimentConfig:
    data_dir: str = "data"
    out_dir: str = "out"
    epoch: str | None = None
    train_start: str | None = None
    train_end: str | None = None
    test_start: str | None = None
    n_weeks: int = 3
    sources: list[str] = field(default_factory=lambda: ["news", "reddit", "acled", "endo"])
    window_combos: list[list[int]] = field(default_factory=lambda: [list(c) for c in pool.DEFAULT_COMBOS])
    hidden_candidates: list[int] = field(default_factory=lambda: [30, 10, 5])
    epochs: int = 200
    learning_rate: float = 1e-3
    batch_size: int = 32
    base_seed: int = 0
    ensemble_mode: str = "all"
    jobs: int = 1
    baselines: bool = True
    context: str = ""

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        try:
            jsonschema.validate(d, CONFIG_SCHEMA)
        except jsonschema.ValidationError as exc:
            raise DataError(f"invalid config: {exc.message}") from None
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            d = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(d)

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def groups(self) -> tuple[str, ...]:
        return tuple(g for g in GROUPS if g in {SOURCE_ALIASES[s] for s in self.sources})

    def train_config(self) -> nn.TrainConfig:
        return nn.TrainConfig(
            epochs=self.epochs,
            learning_rate=self.learning_rate,
            hidden_candidates=tuple(self.hidden_candidates),
            batch_size=self.batch_size,
            seed=self.base_seed,
        )

    def split(self, data: Dataset) -> SplitSpec:
        """Dates from the config, else the last ``7 * n_weeks`` days are test."""
        def day(text):
            return DayIndex.from_date(parse_date(text), data.epoch)

        test_start = day(self.test_start) if self.test_start else data.end - (7 * self.n_weeks - 1)
        train_start = day(self.train_start) if self.train_start else data.start
        train_end = day(self.train_end) if self.train_end else test_start - 1
        split = SplitSpec(train_start, train_end, test_start, self.n_weeks)
        if split.test_end > data.end or train_start < data.start:
            raise DataError("train/test ranges fall outside the dataset")
        if split.validation_week(0)[0] < data.start:
            raise DataError("first validation week starts before the dataset")
        return split


def load_data(cfg: ExperimentConfig) -> Dataset:
    data = load_dataset(cfg.data_dir)
    if cfg.epoch and parse_date(cfg.epoch) != data.epoch:
        raise DataError(f"config epoch {cfg.epoch} disagrees with dataset epoch {data.epoch}")
    return data.with_groups(cfg.groups)


def run_train(cfg: ExperimentConfig, data: Dataset | None = None) -> tuple[Path, list[pool.PoolMember], dict]:
    data = data if data is not None else load_data(cfg)
    split = cfg.split(data)
    specs = pool.build_pool(data.platform, data.topics, cfg.base_seed, data.groups, [tuple(c) for c in cfg.window_combos])
    members, failures = pool.train_pool(specs, data, split, cfg.train_config(), jobs=cfg.jobs)
    manifest = pool.save_pool(
        members, Path(cfg.out_dir) / "pool", platform=data.platform, base_seed=cfg.base_seed, config=cfg.train_config(), failures=failures
    )
    return manifest, members, failures


# -- forecasting ---------------------------------------------------------------------

FORECAST_HEADER = ["model", "topic", "week", "week_start"] + [f"d{k}" for k in range(1, 8)]


def baseline_forecasts(data: Dataset, topic: str, week: int, week_start: DayIndex, history_start: DayIndex):
    """Persistent, validation-tuned ARIMA and Hawkes for one (topic, week)."""
    tkey = data.target_key(topic)
    hist = data.window(tkey, history_start, week_start - 1)
    val_len = 7
    search = baselines.arima_fit(hist[:-val_len], hist[-val_len:])
    out = {}
    prov = {"topic": topic, "week": week}
    out["ARIMA"] = (
        search.forecast(hist),
        {**prov, "variant": "ARIMA", "chosen": [str(search.model.order) if search.model else "persistent-fallback"],
         "validation_rmse": {str(search.model.order): search.scores[search.model.order]} if search.model else {},
         "fallback": search.fallback},
    )
    hk = baselines.hawkes_fit(hist)
    out["Hawkes"] = (
        baselines.hawkes_forecast(hk, hist),
        {**prov, "variant": "Hawkes", "chosen": [f"mu={hk.mu:.6g},alpha={hk.alpha:.6g},beta={hk.beta:.6g}"], "validation_rmse": {}},
    )
    out["Persistent"] = (baselines.persistent_forecast(hist), {**prov, "variant": "Persistent", "chosen": [], "validation_rmse": {}})
    return out


def run_forecast(cfg: ExperimentConfig, members: Sequence[pool.PoolMember], data: Dataset | None = None) -> tuple[Path, list, list]:
    """Write ``forecasts.csv`` and ``provenance.json`` into the output dir."""
    data = data if data is not None else load_data(cfg)
    if not members:
        raise DataError("no trained models")
    split = cfg.split(data)
    rows, provenance = [], []
    for topic in data.topics:
        for k, ws in enumerate(split.week_starts):
            tap = pool.tap_forecasts(members, topic, ws, data, k, cfg.ensemble_mode)
            for variant, (values, prov) in tap.items():
                rows.append((variant, topic, k, ws, values))
                provenance.append(prov.to_dict())
            if cfg.baselines:
                for name, (values, prov) in baseline_forecasts(data, topic, k, ws, split.train_start).items():
                    rows.append((name, topic, k, ws, values))
                    provenance.append(prov)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "forecasts.csv"
    order = {m: i for i, m in enumerate(MODEL_ORDER)}
    rows.sort(key=lambda r: (order.get(r[0], 99), r[0], r[1], r[2]))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FORECAST_HEADER)
        for model, topic, k, ws, values in rows:
            w.writerow([model, topic, k, data.date(ws).isoformat()] + [f"{v:.6f}" for v in values])
    (out / "provenance.json").write_text(json.dumps(provenance, indent=2, sort_keys=True) + "\n")
    return path, rows, provenance


def read_forecasts(path) -> dict[tuple[str, str, int], tuple[str, np.ndarray]]:
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != FORECAST_HEADER:
            raise DataError(f"{path}: unexpected header {reader.fieldnames}")
        for r in reader:
            out[(r["model"], r["topic"], int(r["week"]))] = (r["week_start"], np.array([float(r[f"d{k}"]) for k in range(1, 8)]))
    return out


# -- evaluation ----------------------------------------------------------------------


def run_evaluate(forecasts_path, data: Dataset, out_dir, context: str = "", figures: bool = True) -> dict[str, Path]:
    """Scores, metric tables, plot-ready series CSV and figures."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    fc = read_forecasts(forecasts_path)
    actuals, starts = {}, {}
    for (model, topic, week), (ws_text, _) in fc.items():
        ws = data.day(ws_text)
        starts[(topic, week)] = ws
        try:
            actuals[(topic, week)] = data.window(data.target_key(topic), ws, ws + 6)
        except DataError as exc:
            raise evaluation.CoverageError(f"actuals missing for topic {topic!r} week {week}: {exc}") from None
    models = [m for m in MODEL_ORDER if any(k[0] == m for k in fc)] + sorted({k[0] for k in fc} - set(MODEL_ORDER))
    scores = evaluation.week_scores({k: v[1] for k, v in fc.items()}, actuals)
    report = evaluation.weekly_report(scores, models)
    paths = {}
    evaluation.write_week_scores(scores, out_dir / "week_scores.csv")
    paths["week_scores"] = out_dir / "week_scores.csv"
    for p in evaluation.write_report(report, out_dir, context):
        paths[p.stem + p.suffix] = p
    plot_path = out_dir / "plot_series.csv"
    topics = sorted({t for t, _ in actuals})
    weeks = sorted({w for _, w in actuals})
    with open(plot_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "topic", "actual", *models])
        for t in topics:
            for wk in weeks:
                ws = starts[(t, wk)]
                for d in range(7):
                    row = [data.date(ws + d).isoformat(), t, f"{actuals[(t, wk)][d]:.6f}"]
                    row += [f"{fc[(m, t, wk)][1][d]:.6f}" for m in models]
                    w.writerow(row)
    paths["plot_series"] = plot_path
    if figures:
        from . import plotting

        for p in plotting.plot_series_file(plot_path, out_dir / "figures"):
            paths[p.name] = p
        paths["metrics_figure"] = plotting.plot_metric_table(report, out_dir / "figures" / "metrics.png")
    return paths


def run_rank(topic_metrics_path, out_dir, context: str = "", figures: bool = True) -> dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    per_topic = evaluation.read_topic_metrics(topic_metrics_path)
    table = evaluation.rank_models(per_topic, ("rmse", "ape", "smape"))
    paths = {p.name: p for p in evaluation.write_ranks(table, out_dir, context)}
    if figures:
        from . import plotting

        paths["rank_figure"] = plotting.plot_ranks(table, out_dir / "figures" / "ranks.png")
    return paths
