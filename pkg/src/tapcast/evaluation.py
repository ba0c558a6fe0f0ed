"""Weekly forecast metrics, topic/week averaging, rank tables."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

METRICS = ("ape", "smape", "rmse")


def _pair(pred, actual):
    p = np.asarray(pred, dtype=np.float64)
    a = np.asarray(actual, dtype=np.float64)
    if p.shape != a.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {a.shape}")
    return p, a


def ape(pred, actual) -> float:
    """Percent error of the aggregated volume; the actual total is floored at 1."""
    p, a = _pair(pred, actual)
    return float(100.0 * abs(p.sum() - a.sum()) / max(a.sum(), 1.0))


def rmse(pred, actual) -> float:
    p, a = _pair(pred, actual)
    return float(np.sqrt(np.mean((p - a) ** 2)))


def smape(pred, actual) -> float:
    """Symmetric MAPE in [0, 200]; days where both are 0 contribute 0."""
    p, a = _pair(pred, actual)
    denom = (np.abs(p) + np.abs(a)) / 2.0
    terms = np.divide(np.abs(p - a), denom, out=np.zeros_like(p), where=denom > 0)
    return float(100.0 * terms.mean())


METRIC_FUNCS = {"ape": ape, "smape": smape, "rmse": rmse}


@dataclass(frozen=True)
class WeekScore:
    topic: str
    week: int
    model: str
    ape: float
    smape: float
    rmse: float


def score_week(model: str, topic: str, week: int, pred, actual) -> WeekScore:
    return WeekScore(topic, week, model, ape(pred, actual), smape(pred, actual), rmse(pred, actual))


class CoverageError(KeyError):
    pass


def week_scores(forecasts: Mapping[tuple[str, str, int], Sequence[float]], actuals: Mapping[tuple[str, int], Sequence[float]]) -> list[WeekScore]:
    """Score ``forecasts[(model, topic, week)]`` against ``actuals[(topic, week)]``."""
    out = []
    for (model, topic, week), pred in sorted(forecasts.items()):
        if (topic, week) not in actuals:
            raise CoverageError(f"no actuals for topic {topic!r}, week {week}")
        out.append(score_week(model, topic, week, pred, actuals[(topic, week)]))
    return out


@dataclass
class WeeklyReport:
    """Per (model, topic) means over weeks, and per model means over topics."""

    per_topic: dict[tuple[str, str], dict[str, float]]
    per_model: dict[str, dict[str, float]]
    models: list[str]
    topics: list[str]

    def table_rows(self) -> list[dict]:
        return [{"model": m, **{k: self.per_model[m][k] for k in METRICS}} for m in self.models]


def weekly_report(scores: Sequence[WeekScore], models: Sequence[str] | None = None) -> WeeklyReport:
    """Average each metric over weeks per topic, then over topics per model.

    Every (model, topic) must have the same week set.
    """
    models = list(models) if models is not None else sorted({s.model for s in scores})
    topics = sorted({s.topic for s in scores})
    weeks = sorted({s.week for s in scores})
    cells = {(s.model, s.topic, s.week): s for s in scores}
    missing = [(m, t, w) for m in models for t in topics for w in weeks if (m, t, w) not in cells]
    if missing:
        raise CoverageError("missing forecast cells (model, topic, week): " + ", ".join(map(str, missing)))
    per_topic = {}
    for m in models:
        for t in topics:
            rows = [cells[(m, t, w)] for w in weeks]
            per_topic[(m, t)] = {k: float(np.mean([getattr(r, k) for r in rows])) for k in METRICS}
    per_model = {m: {k: float(np.mean([per_topic[(m, t)][k] for t in topics])) for k in METRICS} for m in models}
    return WeeklyReport(per_topic, per_model, models, topics)


@dataclass
class RankTable:
    """Average rank per model for each metric (1 = best)."""

    average: dict[str, dict[str, float]]  # metric -> model -> mean rank
    per_topic: dict[str, dict[str, dict[str, float]]]  # metric -> topic -> model -> rank

    def ordered(self, metric: str) -> list[tuple[str, float]]:
        return sorted(self.average[metric].items(), key=lambda kv: (kv[1], kv[0]))


def rank_models(per_topic: Mapping[tuple[str, str], Mapping[str, float]], metrics: Sequence[str] = METRICS) -> RankTable:
    """Rank models within each topic (ascending metric, ties share the mean rank)."""
    models = sorted({m for m, _ in per_topic})
    topics = sorted({t for _, t in per_topic})
    missing = [(m, t) for m in models for t in topics if (m, t) not in per_topic]
    if missing:
        raise CoverageError("model not scored on every topic: " + ", ".join(map(str, missing)))
    average, detail = {}, {}
    for k in metrics:
        detail[k] = {}
        for t in topics:
            ranks = rankdata([per_topic[(m, t)][k] for m in models], method="average")
            detail[k][t] = dict(zip(models, map(float, ranks)))
        average[k] = {m: float(np.mean([detail[k][t][m] for t in topics])) for m in models}
    return RankTable(average, detail)


def relative_improvement(baseline_score: float, model_score: float) -> float:
    if baseline_score == 0:
        raise ZeroDivisionError("baseline score is 0")
    return 100.0 * (baseline_score - model_score) / baseline_score


# -- report files ------------------------------------------------------------------


def _round(x: float) -> float:
    return float(f"{x:.6f}")


def write_week_scores(scores: Sequence[WeekScore], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "topic", "week", *METRICS])
        for s in sorted(scores, key=lambda s: (s.model, s.topic, s.week)):
            w.writerow([s.model, s.topic, s.week] + [f"{getattr(s, k):.6f}" for k in METRICS])


def read_week_scores(path) -> list[WeekScore]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [
            WeekScore(r["topic"], int(r["week"]), r["model"], float(r["ape"]), float(r["smape"]), float(r["rmse"]))
            for r in csv.DictReader(fh)
        ]


def write_report(report: WeeklyReport, out_dir, context: str = "") -> list[Path]:
    """Metric table (model x APE/SMAPE/RMSE) plus per-topic means, CSV and JSON."""
    out_dir = Path(out_dir)
    paths = []
    table = out_dir / "metrics_table.csv"
    with open(table, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["context", "model", "APE", "SMAPE", "RMSE"])
        for row in report.table_rows():
            w.writerow([context, row["model"]] + [f"{row[k]:.2f}" for k in METRICS])
    paths.append(table)
    topic_csv = out_dir / "metrics_by_topic.csv"
    with open(topic_csv, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "topic", *METRICS])
        for (m, t), vals in sorted(report.per_topic.items()):
            w.writerow([m, t] + [f"{vals[k]:.6f}" for k in METRICS])
    paths.append(topic_csv)
    js = out_dir / "metrics_table.json"
    payload = {
        "context": context,
        "models": {m: {k: _round(v) for k, v in report.per_model[m].items()} for m in report.models},
        "per_topic": [
            {"model": m, "topic": t, **{k: _round(v) for k, v in vals.items()}} for (m, t), vals in sorted(report.per_topic.items())
        ],
    }
    js.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    paths.append(js)
    return paths


def read_topic_metrics(path) -> dict[tuple[str, str], dict[str, float]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return {(r["model"], r["topic"]): {k: float(r[k]) for k in METRICS} for r in csv.DictReader(fh)}


def write_ranks(table: RankTable, out_dir, context: str = "") -> list[Path]:
    """Rank table: one row per position, (rank, model) pairs per metric."""
    out_dir = Path(out_dir)
    metrics = list(table.average)
    csv_path = out_dir / "rank_table.csv"
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        header = ["context", "position"]
        for k in metrics:
            header += [f"rank_{k}", f"model_{k}"]
        w.writerow(header)
        ordered = {k: table.ordered(k) for k in metrics}
        for pos in range(len(ordered[metrics[0]])):
            row = [context, pos + 1]
            for k in metrics:
                model, r = ordered[k][pos]
                row += [f"{r:.2f}", model]
            w.writerow(row)
    js = out_dir / "rank_table.json"
    js.write_text(
        json.dumps(
            {
                "context": context,
                "average_rank": {k: {m: _round(v) for m, v in table.average[k].items()} for k in metrics},
                "per_topic": {k: {t: {m: _round(r) for m, r in v.items()} for t, v in table.per_topic[k].items()} for k in metrics},
            },
            indent=2,
            sort_keys=True,
        )
        + "\n"
    )
    return [csv_path, js]


def scores_as_dicts(scores: Sequence[WeekScore]) -> list[dict]:
    return [asdict(s) for s in scores]
