"""Command-line entry point: ``deepsharpe {synth,train,backtest,sensitivity,report}``.

Exit codes: 0 success, 2 io/data, 3 config, 4 numeric or training failure.
Failures print one JSON line ``{"error": <category>, "message": ...}`` on stderr.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .backtest import (
    STRATEGIES,
    MarketData,
    load_split_params,
    run_walk_forward,
    train_splits,
    weight_shift_series,
    write_run,
)
from .config import RunConfig, load_config
from .errors import ConfigError, DeepSharpeError, InsufficientDataError, IOFailure
from .market_data import dump_table, load_prices, walk_forward_splits
from .metrics import METRIC_HEADERS, MetricBundle, format_table
from .sensitivity import SensitivityMap, sensitivity_map
from .synthetic import SyntheticSpec, generate, planted_signal_spec

logger = logging.getLogger("deepsharpe")

LABELS = {
    "alloc1": "Allocation 1",
    "alloc2": "Allocation 2",
    "alloc3": "Allocation 3",
    "alloc4": "Allocation 4",
    "mv": "MV",
    "md": "MD",
    "dwp": "DWP",
    "dls": "DLS",
}


def _resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg = cfg.override("train", seed=args.seed)
    bt = {}
    if getattr(args, "sigma_target", None) is not None:
        bt["sigma_target"] = args.sigma_target
    if getattr(args, "cost_rate", None) is not None:
        bt["cost_rate"] = args.cost_rate
    if getattr(args, "no_scaling", False):
        bt["scaling_enabled"] = False
    if bt:
        cfg = cfg.override("backtest", **bt)
    if getattr(args, "epochs", None) is not None:
        cfg = cfg.override("train", epochs=args.epochs)
    if getattr(args, "test_start", None):
        cfg = cfg.override("walk_forward", first_test_start=args.test_start)
    if getattr(args, "strategy", None):
        cfg = cfg.override(strategies=tuple(args.strategy))
    return cfg


def _load_data(args, cfg: RunConfig) -> MarketData:
    if not args.data:
        raise ConfigError("--data is required")
    if not Path(args.data).exists():
        raise IOFailure(f"data file not found: {args.data}")
    prices = load_prices(args.data, cfg.data.assets)
    data = MarketData.from_prices(prices, cfg.backtest.vol_span, cfg.backtest.annualization_factor)
    if getattr(args, "dump", None):
        d = Path(args.dump)
        d.mkdir(parents=True, exist_ok=True)
        dump_table(d / "prices.csv", prices.dates, prices.closes, prices.asset_names)
        dump_table(d / "returns.csv", data.returns.dates, data.returns.returns, prices.asset_names)
        dump_table(d / "volatility.csv", data.vols.dates, data.vols.sigma, prices.asset_names)
    return data


def _splits(data: MarketData, cfg: RunConfig):
    start = cfg.walk_forward.first_test_start
    if start is None:
        raise ConfigError("walk_forward.first_test_start is not set (use --test-start)")
    return walk_forward_splits(
        data.returns.dates,
        start,
        cfg.walk_forward.retrain_every_years,
        cfg.train.validation_fraction,
    )


def _write_config(out: Path, cfg: RunConfig) -> None:
    out.mkdir(parents=True, exist_ok=True)
    tmp = out / "config.json.tmp"
    tmp.write_text(json.dumps(cfg.to_dict(), indent=2) + "\n", encoding="utf-8")
    os.replace(tmp, out / "config.json")


def cmd_synth(args) -> int:
    names = tuple(args.assets.split(",")) if args.assets else None
    n = len(names) if names else args.n_assets
    if args.planted_asset is not None:
        spec = planted_signal_spec(args.planted_asset, args.sharpe, n_assets=n, volatility=args.vol,
                                   days=args.days, seed=args.seed or 0, asset_names=names, start=args.start)
    else:
        spec = SyntheticSpec(n, args.days, args.drift, args.vol, None, args.seed or 0,
                             start=args.start, asset_names=names)
    prices = generate(spec)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    dump_table(out, prices.dates, prices.closes, prices.asset_names)
    print(f"wrote {len(prices)} rows x {prices.n_assets} assets to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    data = _load_data(args, cfg)
    splits = _splits(data, cfg)
    out = Path(args.out)
    _write_config(out, cfg)
    results = train_splits(data, splits, cfg.train, cfg.features, cfg.train.seed, out)
    for split, res in zip(splits, results):
        print(f"split {split.index}: test {split.test_range[0]}..{split.test_range[1]} "
              f"best epoch {res.best_epoch} validation L {res.best_validation_L:.4f}")
    return 0


def _comparison_rows(results) -> list[list]:
    rows = []
    for r in results:
        vals = r.metrics.values()
        rows.append([r.strategy, LABELS.get(r.strategy, r.strategy), *(repr(float(v)) for v in vals)])
    return rows


def cmd_backtest(args) -> int:
    cfg = _resolve_config(args)
    if not cfg.strategies:
        raise ConfigError("strategy list is empty")
    data = _load_data(args, cfg)
    splits = _splits(data, cfg)
    out = Path(args.out)
    _write_config(out, cfg)
    split_params = None
    if "dls" in cfg.strategies and args.checkpoints:
        split_params = load_split_params(args.checkpoints, splits)
    echo = cfg.to_dict()
    results = []
    for name in cfg.strategies:
        logger.info("running %s", name)
        res = run_walk_forward(
            name, data, splits, cfg.train, cfg.backtest, cfg.train.seed,
            feature_config=cfg.features, baseline_config=cfg.baselines,
            split_params=split_params if name == "dls" else None,
            checkpoint_dir=(out / name) if name == "dls" and split_params is None else None,
        )
        (out / name).mkdir(parents=True, exist_ok=True)
        write_run(res, out / name, echo, cfg.train.seed)
        if args.shift_from or args.shift_to:
            table = weight_shift_series(res.weights, res.positions, (args.shift_from, args.shift_to))
            table.write_csv(out / name / "weight_shift.csv")
        results.append(res)
    tmp = out / "comparison.csv.tmp"
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["strategy", "label", *METRIC_HEADERS])
        w.writerows(_comparison_rows(results))
    os.replace(tmp, out / "comparison.csv")
    print(format_table([(LABELS.get(r.strategy, r.strategy), r.metrics) for r in results]))
    return 0


def cmd_sensitivity(args) -> int:
    cfg = _resolve_config(args)
    data = _load_data(args, cfg)
    splits = _splits(data, cfg)
    out = Path(args.out)
    _write_config(out, cfg)
    if args.checkpoints:
        params = load_split_params(args.checkpoints, splits)
    else:
        params = {s.index: r.params for s, r in
                  zip(splits, train_splits(data, splits, cfg.train, cfg.features, cfg.train.seed, out))}
    maps = []
    for split in splits:
        try:
            maps.append(sensitivity_map(params[split.index], data.closes, data.returns,
                                        split.test.start, split.test.stop - 1, cfg.features,
                                        cfg.train.batch_size))
        except InsufficientDataError:
            logger.warning("split %d: test window shorter than one block", split.index)
    if not maps:
        raise InsufficientDataError("no test window long enough for a sensitivity block")
    merged = SensitivityMap(
        np.concatenate([m.dates for m in maps]),
        np.vstack([m.values for m in maps]),
        maps[0].labels,
        np.concatenate([m.flagged for m in maps]),
    )
    merged.write_csv(out / "sensitivity.csv")
    print(f"wrote {len(merged.dates)} rows x {len(merged.labels)} features to {out / 'sensitivity.csv'}")
    return 0


def _read_report(path: Path) -> MetricBundle:
    try:
        with open(path, encoding="utf-8") as fh:
            report = json.load(fh)
        return report.get("strategy", path.parent.name), MetricBundle.from_json(report["metrics"])
    except FileNotFoundError:
        raise IOFailure(f"missing report file {path}") from None
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise IOFailure(f"corrupt report file {path}: {exc}") from None


def cmd_report(args) -> int:
    run = Path(args.run_dir)
    if not run.is_dir():
        raise IOFailure(f"run directory not found: {run}")
    if (run / "report.json").exists():
        paths = [run / "report.json"]
    else:
        subdirs = [p for p in run.iterdir() if p.is_dir() and (p / "report.json").exists()]
        order = {s: i for i, s in enumerate(STRATEGIES)}
        subdirs.sort(key=lambda p: (order.get(p.name, len(order)), p.name))
        paths = [p / "report.json" for p in subdirs]
    if not paths:
        raise IOFailure(f"no report.json found under {run}")
    rows = []
    for p in paths:
        name, bundle = _read_report(p)
        rows.append((LABELS.get(name, name), bundle))
    print(format_table(rows))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="deepsharpe", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def shared(p, data=True):
        p.add_argument("--config", help="JSON run configuration")
        if data:
            p.add_argument("--data", help="price CSV (date,<asset>,...)")
        p.add_argument("--out", required=True, help="output path")
        p.add_argument("--seed", type=int)

    def run_flags(p):
        p.add_argument("--strategy", action="append", help=f"one of {', '.join(STRATEGIES)} (repeatable)")
        p.add_argument("--sigma-target", type=float)
        p.add_argument("--cost-rate", type=float)
        p.add_argument("--no-scaling", action="store_true")
        p.add_argument("--epochs", type=int)
        p.add_argument("--test-start", help="first test date (ISO)")
        p.add_argument("--checkpoints", help="directory of split_XX.npz checkpoints")
        p.add_argument("--dump", help="directory to dump price/return/volatility tables")

    p = sub.add_parser("synth", help="write a synthetic price CSV")
    shared(p, data=False)
    p.add_argument("--days", type=int, default=4000)
    p.add_argument("--n-assets", type=int, default=4)
    p.add_argument("--assets", help="comma-separated asset names")
    p.add_argument("--drift", type=float, default=0.0)
    p.add_argument("--vol", type=float, default=0.10)
    p.add_argument("--planted-asset", type=int, help="index of the asset carrying the signal")
    p.add_argument("--sharpe", type=float, default=2.0)
    p.add_argument("--start", default="2000-01-03")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train one model per walk-forward split")
    shared(p)
    run_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("backtest", help="walk-forward backtest of one or more strategies")
    shared(p)
    run_flags(p)
    p.add_argument("--shift-from", help="write weight_shift.csv from this date")
    p.add_argument("--shift-to", help="write weight_shift.csv up to this date")
    p.set_defaults(func=cmd_backtest)

    p = sub.add_parser("sensitivity", help="export normalized input sensitivities")
    shared(p)
    run_flags(p)
    p.set_defaults(func=cmd_sensitivity)

    p = sub.add_parser("report", help="print the metric table of a run directory")
    p.add_argument("run_dir")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except DeepSharpeError as exc:
        print(json.dumps({"error": exc.category, "message": str(exc)}), file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(json.dumps({"error": "io", "message": str(exc)}), file=sys.stderr)
        return IOFailure.exit_code


if __name__ == "__main__":
    sys.exit(main())
