"""Figures rendered next to the CSV reports."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 7,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 100,
    "savefig.dpi": 120,
}

# actual in black; TAP variants red/green/blue; baselines in greys
COLORS = {
    "actual": "black",
    "TAP-Exo": "tab:red",
    "TAP-Endo": "tab:green",
    "TAP-Ens": "tab:blue",
    "ARIMA": "0.45",
    "Hawkes": "0.6",
    "Persistent": "0.75",
}
# PNG metadata stripped so reruns are byte-identical
_META = {"Software": None}


def size(scale: float = 1.0, ratio: float = 0.55):
    width = 6.4 * scale
    return width, width * ratio


def _save(fig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, metadata=_META)
    plt.close(fig)
    return path


def plot_series_file(plot_csv, out_dir) -> list[Path]:
    """One figure per topic: actual counts against every model's forecasts."""
    with open(plot_csv, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        models = [c for c in reader.fieldnames if c not in ("date", "topic", "actual")]
        rows = list(reader)
    by_topic: dict[str, list[dict]] = {}
    for r in rows:
        by_topic.setdefault(r["topic"], []).append(r)
    out = []
    with plt.rc_context(STYLE):
        for topic, trs in sorted(by_topic.items()):
            fig, ax = plt.subplots(figsize=size())
            x = range(len(trs))
            ax.plot(x, [float(r["actual"]) for r in trs], color=COLORS["actual"], lw=1.8, label="actual")
            for m in models:
                ls = "-" if m.startswith("TAP") else "--"
                ax.plot(x, [float(r[m]) for r in trs], ls, color=COLORS.get(m), lw=1.1, label=m)
            ticks = list(range(0, len(trs), 7))
            ax.set_xticks(ticks)
            ax.set_xticklabels([trs[i]["date"] for i in ticks])
            ax.set_ylabel("daily activity")
            ax.set_title(topic)
            ax.legend(ncol=7, frameon=False, loc="upper center", bbox_to_anchor=(0.5, -0.12))
            fig.tight_layout()
            out.append(_save(fig, Path(out_dir) / f"forecast_{topic}.png"))
    return out


def plot_metric_table(report, path) -> Path:
    """Grouped bars of the cross-topic mean of each metric."""
    metrics = ("ape", "smape", "rmse")
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 3, figsize=size(1.2, 0.35))
        for ax, k in zip(axes, metrics):
            vals = [report.per_model[m][k] for m in report.models]
            ax.bar(range(len(vals)), vals, color=[COLORS.get(m, "0.5") for m in report.models])
            ax.set_xticks(range(len(vals)))
            ax.set_xticklabels(report.models, rotation=60, ha="right")
            ax.set_title(k.upper())
        fig.tight_layout()
        return _save(fig, Path(path))


def plot_ranks(table, path) -> Path:
    """Horizontal bars of average rank per metric; lower is better."""
    metrics = list(table.average)
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(metrics), figsize=size(1.2, 0.35), sharey=False)
        for ax, k in zip(axes, metrics):
            ordered = table.ordered(k)
            names = [m for m, _ in ordered][::-1]
            vals = [r for _, r in ordered][::-1]
            ax.barh(names, vals, color=[COLORS.get(m, "0.5") for m in names])
            ax.set_xlim(0, max(vals) + 0.5)
            ax.set_title(f"rank ({k})")
        fig.tight_layout()
        return _save(fig, Path(path))
