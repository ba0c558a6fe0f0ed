"""``tapcast`` command line: train, forecast, evaluate, rank, synth, gradcheck.

Exit codes: 0 success, 1 runtime failure, 2 input or validation failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from . import data as datamod
from . import experiment, nn, pool
from .core import DataError
from .evaluation import CoverageError

log = logging.getLogger("tapcast")

GRADCHECK_TOL = 1e-4


class UsageError(DataError):
    pass


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="experiment config JSON")
    p.add_argument("--data-dir", type=Path)
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--seed", type=int, help="base seed")
    p.add_argument("--jobs", type=int, help="worker processes for pool training")
    p.add_argument("--sources", help="comma list of news,reddit,acled,endo")
    p.add_argument("--ensemble-mode", choices=["all", "per-source-best"])
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tapcast", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train the model pool")
    _common(p)

    p = sub.add_parser("forecast", help="forecast every test week with TAP variants and baselines")
    _common(p)
    p.add_argument("--manifest", type=Path, help="pool manifest (default OUT/pool/pool_manifest.json)")

    p = sub.add_parser("evaluate", help="score forecasts against actuals")
    _common(p)
    p.add_argument("--forecasts", type=Path, help="forecasts CSV (default OUT/forecasts.csv)")

    p = sub.add_parser("rank", help="average-rank table from per-topic metrics")
    _common(p)
    p.add_argument("--evaluations", type=Path, help="metrics_by_topic.csv (default OUT/evaluation/metrics_by_topic.csv)")

    p = sub.add_parser("run", help="train, forecast, evaluate and rank in one go")
    _common(p)

    p = sub.add_parser("synth", help="write a synthetic planted-driver dataset")
    _common(p)
    p.add_argument("--scenario", type=Path, help="scenario JSON")
    p.add_argument("--topics", type=int)
    p.add_argument("--days", type=int)

    p = sub.add_parser("gradcheck", help="finite-difference check of LSTM gradients")
    p.add_argument("--configs", type=int, default=20)
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path)
    p.add_argument("-v", "--verbose", action="store_true")
    return parser


def _config(args) -> experiment.ExperimentConfig:
    cfg = experiment.ExperimentConfig.load(args.config) if args.config else experiment.ExperimentConfig()
    if args.data_dir is not None:
        cfg.data_dir = str(args.data_dir)
    if args.out is not None:
        cfg.out_dir = str(args.out)
    if args.seed is not None:
        cfg.base_seed = args.seed
    if args.jobs is not None:
        cfg.jobs = args.jobs
    if args.sources:
        names = [s.strip() for s in args.sources.split(",") if s.strip()]
        bad = [s for s in names if s not in experiment.SOURCE_ALIASES]
        if bad:
            raise UsageError(f"unknown sources: {', '.join(bad)}")
        cfg.sources = names
    if args.ensemble_mode:
        cfg.ensemble_mode = args.ensemble_mode
    return cfg


def cmd_train(args) -> int:
    cfg = _config(args)
    manifest, members, failures = experiment.run_train(cfg)
    for name, exc in failures.items():
        print(f"failed {name}: {exc}", file=sys.stderr)
    print(f"trained {len(members)} models -> {manifest}")
    return 0 if members else 1


def cmd_forecast(args) -> int:
    cfg = _config(args)
    manifest = args.manifest or Path(cfg.out_dir) / "pool" / "pool_manifest.json"
    if not Path(manifest).exists():
        raise FileNotFoundError(f"pool manifest {manifest} not found; run `tapcast train` first")
    members, _ = pool.load_pool(manifest)
    path, rows, _ = experiment.run_forecast(cfg, members)
    print(f"{len(rows)} forecast rows -> {path}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    forecasts = args.forecasts or Path(cfg.out_dir) / "forecasts.csv"
    data = experiment.load_data(cfg)
    paths = experiment.run_evaluate(forecasts, data, Path(cfg.out_dir) / "evaluation", cfg.context)
    print(f"evaluation -> {paths['metrics_table.csv'].parent}")
    return 0


def cmd_rank(args) -> int:
    cfg = _config(args)
    evals = args.evaluations or Path(cfg.out_dir) / "evaluation" / "metrics_by_topic.csv"
    paths = experiment.run_rank(evals, Path(cfg.out_dir) / "ranking", cfg.context)
    print(f"ranking -> {paths['rank_table.csv']}")
    return 0


def cmd_run(args) -> int:
    cfg = _config(args)
    data = experiment.load_data(cfg)
    _, members, failures = experiment.run_train(cfg, data)
    if not members:
        raise RuntimeError("no model trained: " + "; ".join(f"{k}: {v}" for k, v in failures.items()))
    path, _, _ = experiment.run_forecast(cfg, members, data)
    out = Path(cfg.out_dir)
    experiment.run_evaluate(path, data, out / "evaluation", cfg.context)
    experiment.run_rank(out / "evaluation" / "metrics_by_topic.csv", out / "ranking", cfg.context)
    print(f"pipeline outputs -> {out}")
    return 0


def cmd_synth(args) -> int:
    spec_dict = json.loads(args.scenario.read_text()) if args.scenario else {}
    if args.seed is not None:
        spec_dict["seed"] = args.seed
    if args.topics is not None:
        spec_dict["n_topics"] = args.topics
    if args.days is not None:
        spec_dict["n_days"] = args.days
    try:
        spec = datamod.ScenarioSpec.from_dict(spec_dict)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid scenario: {exc}") from None
    out = args.out or Path("data")
    ds, drivers = datamod.synth_generate(spec)
    datamod.save_dataset(ds, out)
    (out / "drivers.json").write_text(json.dumps(drivers, indent=2, sort_keys=True) + "\n")
    (out / "scenario.json").write_text(json.dumps(spec.to_dict(), indent=2, sort_keys=True) + "\n")
    print(f"synthetic dataset ({len(ds.topics)} topics, {ds.n_days} days) -> {out}")
    return 0


def cmd_gradcheck(args) -> int:
    t0 = time.perf_counter()
    rows = nn.gradcheck_suite(args.configs, args.seed, args.eps)
    worst = max(r["max_rel_error"] for r in rows)
    for r in rows:
        flag = "ok" if r["max_rel_error"] < GRADCHECK_TOL else "FAIL"
        print(f"config {r['config']:2d} H={r['hidden']} F={r['features']} m={r['m']} n={r['n']} max_rel_error={r['max_rel_error']:.3e} {flag}")
    print(f"max relative error {worst:.3e} over {len(rows)} configs ({time.perf_counter() - t0:.1f}s)")
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "gradcheck.json").write_text(json.dumps({"eps": args.eps, "max_rel_error": worst, "configs": rows}, indent=2) + "\n")
    return 0 if worst < GRADCHECK_TOL else 1


COMMANDS = {
    "train": cmd_train,
    "forecast": cmd_forecast,
    "evaluate": cmd_evaluate,
    "rank": cmd_rank,
    "run": cmd_run,
    "synth": cmd_synth,
    "gradcheck": cmd_gradcheck,
}


def _report(kind: str, exc: BaseException) -> None:
    print(json.dumps({"error": kind, "type": type(exc).__name__, "message": str(exc)}), file=sys.stderr)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (DataError, CoverageError, FileNotFoundError) as exc:
        _report("input", exc)
        return 2
    except Exception as exc:  # noqa: BLE001
        _report("runtime", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
