"""Command-line entry point: ``sdcf {label,train,evaluate,benchmark}``.

Settings come from built-in defaults, then an optional JSON ``--config``
file, then command-line flags. Exit status is 0 on success, 2 for
configuration or input errors and 3 for numerical failures.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import marketdata as md
from . import metrics
from . import model as sdcf
from . import presets
from .errors import ConfigError, DivergenceError, FormatError, SingularTransformError
from .trainer import OptimConfig, train, train_cnn_baseline, write_loss_csv

logger = logging.getLogger("sdcf")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
WINDOWS = (5, 10, 20)


@dataclass
class RunConfig:
    data_path: str | None = None
    symbols: list[str] = field(default_factory=list)
    window: int = 10
    presets: list[str] = field(default_factory=lambda: ["sdcf3l"])
    optim: OptimConfig = field(default_factory=OptimConfig)
    invert_labels: bool = False
    output_dir: str = "out"
    seed: int = 0
    grid: list[float] = field(default_factory=lambda: list(md.DEFAULT_GRID))
    fusion_out: int | None = None
    train_years: int = 10
    test_years: int = 1
    periods_per_year: int = md.TRADING_DAYS
    capital: float = md.CAPITAL
    fee: float = md.FEE

    def validate(self):
        if self.window not in WINDOWS:
            raise ConfigError(f"window must be one of {WINDOWS}, got {self.window}")
        for p in self.presets:
            # raises ConfigError for unknown presets or windows that do not survive pooling
            presets.preset_arch(p, self.window, fusion_out=self.fusion_out)
        if not self.grid:
            raise ConfigError("holding-percentage grid is empty")

    @property
    def out(self) -> Path:
        return Path(self.output_dir)


_OPTIM_FIELDS = {f.name for f in dataclasses.fields(OptimConfig)} - {"seed"}


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    return doc


def build_config(args) -> RunConfig:
    values = {}
    if getattr(args, "config", None):
        values.update(load_config(args.config))
    optim = {k: values.pop(k) for k in list(values) if k in _OPTIM_FIELDS}
    if "preset" in values:
        values["presets"] = values.pop("preset")
    for flag, key in [
        ("data", "data_path"),
        ("window", "window"),
        ("seed", "seed"),
        ("out", "output_dir"),
        ("fusion_out", "fusion_out"),
        ("preset", "presets"),
        ("symbols", "symbols"),
        ("grid", "grid"),
    ]:
        v = getattr(args, flag, None)
        if v is not None:
            values[key] = v
    if getattr(args, "invert_labels", False):
        values["invert_labels"] = True
    for flag in ("epochs", "batch_size", "learning_rate", "weight_decay", "mu", "lam"):
        v = getattr(args, flag, None)
        if v is not None:
            optim[flag] = v
    if isinstance(values.get("presets"), str):
        values["presets"] = [p for p in values["presets"].split(",") if p]
    if isinstance(values.get("symbols"), str):
        values["symbols"] = [s for s in values["symbols"].split(",") if s]
    if isinstance(values.get("grid"), str):
        try:
            values["grid"] = [float(g) for g in values["grid"].split(",") if g]
        except ValueError:
            raise ConfigError(f"bad grid {values['grid']!r}") from None
    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")
    try:
        cfg = RunConfig(**values)
        cfg.optim = OptimConfig(seed=cfg.seed, **optim)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    cfg.validate()
    return cfg


def fold_seed(seed: int, symbol: str, fold: int) -> int:
    """Stable per-(symbol, fold) seed: ``seed XOR crc32(symbol:fold)``."""
    return (seed ^ zlib.crc32(f"{symbol}:{fold}".encode())) & 0xFFFFFFFFFFFFFFFF


# --------------------------------------------------------------------------
# data


def _has_labels(path) -> bool:
    with open(path, newline="") as fh:
        header = fh.readline().strip().split(",")
    return all(c in header for c in md.LABEL_COLUMNS)


def load_series(cfg: RunConfig) -> list[md.LabeledSeries]:
    if not cfg.data_path:
        raise ConfigError("no data file given (--data)")
    if not Path(cfg.data_path).exists():
        raise ConfigError(f"data file {cfg.data_path} not found")
    if _has_labels(cfg.data_path):
        series = md.read_labeled_csv(cfg.data_path)
    else:
        raw, _ = md.parse_csv(cfg.data_path)
        series = [
            md.label_bars(
                sym, bars, cfg.grid, cfg.invert_labels,
                capital=cfg.capital, fee=cfg.fee, periods_per_year=cfg.periods_per_year,
            )
            for sym, bars in raw
            if len(bars) >= 2
        ]
    if cfg.symbols:
        wanted = set(cfg.symbols)
        series = [s for s in series if s.symbol in wanted]
        missing = wanted - {s.symbol for s in series}
        if missing:
            raise ConfigError(f"symbol(s) not in data: {', '.join(sorted(missing))}")
    return series


def _folds(cfg: RunConfig, series: md.LabeledSeries):
    folds = md.walk_forward_splits(series, cfg.window, cfg.train_years, cfg.test_years)
    for i, fold in enumerate(folds):
        leaks = md.fold_leaks(fold)
        if leaks:
            raise AssertionError(f"fold {i} of {series.symbol} leaks: {leaks[0]}")
    return folds


def _artifact_stem(symbol, fold, preset):
    return f"{symbol}_{fold}_{preset}"


def train_fold(cfg: RunConfig, series, fold_index: int, fold: md.Fold, preset: str):
    if not fold.train:
        raise ConfigError(f"{series.symbol} fold {fold_index}: no training samples")
    arch = presets.preset_arch(
        preset, cfg.window, num_channels=len(md.CHANNELS), num_classes=3,
        fusion_out=cfg.fusion_out, mu=cfg.optim.mu, lam=cfg.optim.lam,
    )
    optim = dataclasses.replace(cfg.optim, seed=fold_seed(cfg.seed, series.symbol, fold_index))
    runner = train_cnn_baseline if preset in presets.BASELINE_PRESETS else train
    return runner(md.stack_windows(fold.train), arch, optim)


def _save_model(cfg, stem, report):
    models = cfg.out / "models"
    models.mkdir(parents=True, exist_ok=True)
    (models / f"{stem}.json").write_text(sdcf.model_to_json(report.model))
    write_loss_csv(models / f"{stem}_loss.csv", report.loss_curve)
    return models / f"{stem}.json"


# --------------------------------------------------------------------------
# commands


def cmd_label(cfg: RunConfig):
    if not cfg.data_path:
        raise ConfigError("no data file given (--data)")
    raw, dropped = md.parse_csv(cfg.data_path)
    if cfg.symbols:
        raw = [(s, b) for s, b in raw if s in set(cfg.symbols)]
    labeled = []
    for sym, bars in raw:
        if len(bars) < 2:
            logger.warning("%s: fewer than two bars, skipped", sym)
            continue
        labeled.append(
            md.label_bars(
                sym, bars, cfg.grid, cfg.invert_labels,
                capital=cfg.capital, fee=cfg.fee, periods_per_year=cfg.periods_per_year,
            )
        )
    cfg.out.mkdir(parents=True, exist_ok=True)
    md.write_labeled_csv(cfg.out / "labeled.csv", labeled)
    rows = []
    for s in labeled:
        counts = np.bincount(s.labels, minlength=3)
        rows.append([s.symbol, len(s.bars), format(s.hold_percentage, "g"), f"{s.best_ar:.6f}", *counts])
    metrics.write_csv(
        cfg.out / "label_summary.csv",
        ["symbol", "days", "hold_percentage", "best_ar", "n_buy", "n_hold", "n_sell"],
        rows,
    )
    print(f"labeled {len(labeled)} series ({dropped} row(s) dropped) -> {cfg.out / 'labeled.csv'}")
    return labeled


def _one_series(cfg, symbol):
    series = load_series(cfg)
    if symbol is None:
        if len(series) != 1:
            raise ConfigError("several symbols in data; pick one with --symbol")
        return series[0]
    for s in series:
        if s.symbol == symbol:
            return s
    raise ConfigError(f"symbol {symbol} not in data")


def _pick_fold(cfg, series, fold):
    folds = _folds(cfg, series)
    if not 0 <= fold < len(folds):
        raise ConfigError(f"fold must be in [0, {len(folds) - 1}], got {fold}")
    return folds[fold]


def cmd_train(cfg: RunConfig, symbol=None, fold=0):
    series = _one_series(cfg, symbol)
    f = _pick_fold(cfg, series, fold)
    preset = cfg.presets[0]
    report = train_fold(cfg, series, fold, f, preset)
    stem = _artifact_stem(series.symbol, fold, preset)
    path = _save_model(cfg, stem, report)
    print(f"trained {stem}: final loss {report.loss_curve[-1] if len(report.loss_curve) else report.initial_loss:.6g} -> {path}")
    return report


def _fold_predictions(model, fold):
    S, y = md.stack_windows(fold.test)
    return y, sdcf.predict(model, S)


def cmd_evaluate(cfg: RunConfig, symbol=None, fold=0, model_path=None):
    series = _one_series(cfg, symbol)
    f = _pick_fold(cfg, series, fold)
    preset = cfg.presets[0]
    stem = _artifact_stem(series.symbol, fold, preset)
    path = Path(model_path) if model_path else cfg.out / "models" / f"{stem}.json"
    if not path.exists():
        raise ConfigError(f"model {path} not found; run `train` first")
    model = sdcf.model_from_json(path.read_text())
    if model.arch.window != cfg.window:
        raise ConfigError(f"model window {model.arch.window} != --window {cfg.window}")
    y, pred = _fold_predictions(model, f)
    rep = metrics.class_report(metrics.confusion(y, pred, 3))
    closes = np.array([series.bars[s.index].close for s in f.test])
    true_ar = md.annualized_return(y, closes, cfg.capital, cfg.fee, cfg.periods_per_year)
    pred_ar = md.annualized_return(pred, closes, cfg.capital, cfg.fee, cfg.periods_per_year)
    cfg.out.mkdir(parents=True, exist_ok=True)
    metrics.write_csv(
        cfg.out / f"{stem}_predictions.csv",
        ["date", "close", "true", "predicted"],
        [[s.date.isoformat(), format(series.bars[s.index].close, ".10g"), t, p]
         for s, t, p in zip(f.test, y, pred)],
    )
    metrics.write_csv(
        cfg.out / f"{stem}_metrics.csv",
        metrics.classification_header() + ["true_ar", "predicted_ar", "abs_diff"],
        [metrics.classification_row(series.symbol, preset, rep)
         + [f"{true_ar:.6f}", f"{pred_ar:.6f}", f"{abs(true_ar - pred_ar):.6f}"]],
    )
    print(
        f"{stem}: weighted F1 {rep.weighted_f1:.4f}, AR true {true_ar:.2f}% "
        f"predicted {pred_ar:.2f}%"
    )
    return rep


def _benchmark_symbol(cfg, series, preset):
    """Train/evaluate every fold; returns pooled (dates, closes, y_true, y_pred, folds)."""
    folds = _folds(cfg, series)
    dates, closes, ys, preds, fold_ids = [], [], [], [], []
    for i, f in enumerate(folds):
        if not f.test:
            continue
        report = train_fold(cfg, series, i, f, preset)
        _save_model(cfg, _artifact_stem(series.symbol, i, preset), report)
        y, pred = _fold_predictions(report.model, f)
        dates += [s.date for s in f.test]
        closes += [series.bars[s.index].close for s in f.test]
        ys.append(y)
        preds.append(pred)
        fold_ids += [i] * len(y)
    if not ys:
        raise ConfigError(f"{series.symbol}: no test samples in any fold")
    return dates, np.array(closes), np.concatenate(ys), np.concatenate(preds), fold_ids


def cmd_benchmark(cfg: RunConfig):
    series_list = load_series(cfg)
    if not series_list:
        raise ConfigError("no series to benchmark")
    cfg.out.mkdir(parents=True, exist_ok=True)
    class_rows, conf_rows, pred_rows, fail_rows = [], [], [], []
    finance = {p: {} for p in cfg.presets}
    reports = {p: {} for p in cfg.presets}
    numeric_failures = 0
    for preset in cfg.presets:
        for series in series_list:
            try:
                dates, closes, y, pred, fold_ids = _benchmark_symbol(cfg, series, preset)
            except (SingularTransformError, DivergenceError, ConfigError) as exc:
                logger.error("%s/%s failed: %s", series.symbol, preset, exc)
                fail_rows.append([series.symbol, preset, type(exc).__name__, str(exc)])
                numeric_failures += not isinstance(exc, ConfigError)
                continue
            cm = metrics.confusion(y, pred, 3)
            rep = metrics.class_report(cm)
            reports[preset][series.symbol] = rep
            class_rows.append(metrics.classification_row(series.symbol, preset, rep))
            for t in range(3):
                for p in range(3):
                    conf_rows.append([series.symbol, preset, md.CLASS_NAMES[t], md.CLASS_NAMES[p], int(cm.counts[t, p])])
            sim = dict(capital=cfg.capital, fee=cfg.fee, periods_per_year=cfg.periods_per_year)
            finance[preset][series.symbol] = (
                md.annualized_return(y, closes, **sim),
                md.annualized_return(pred, closes, **sim),
            )
            for d, c, t, p, k in zip(dates, closes, y, pred, fold_ids):
                pred_rows.append([series.symbol, preset, k, d.isoformat(), format(c, ".10g"), int(t), int(p)])

    fin_rows, summary_rows = [], []
    for preset in cfg.presets:
        if not finance[preset]:
            continue
        fr = metrics.finance_report(finance[preset])
        for s, t, p, d in zip(fr.symbols, fr.true_ar, fr.predicted_ar, fr.abs_diff):
            fin_rows.append([s, preset, f"{t:.6f}", f"{p:.6f}", f"{d:.6f}"])
        fin_rows.append(["MAE", preset, "", "", f"{fr.mae:.6f}"])
        reps = list(reports[preset].values())
        avg = lambda get: float(np.mean([get(r) for r in reps]))
        row = [preset, len(reps)]
        for c in range(3):
            row += [f"{avg(lambda r: r.f1[c]):.6f}", f"{avg(lambda r: r.precision[c]):.6f}", f"{avg(lambda r: r.recall[c]):.6f}"]
        row += [
            f"{avg(lambda r: r.weighted_f1):.6f}",
            f"{avg(lambda r: r.weighted_precision):.6f}",
            f"{avg(lambda r: r.weighted_recall):.6f}",
            f"{fr.mae:.6f}",
        ]
        summary_rows.append(row)

    metrics.write_csv(cfg.out / "classification.csv", metrics.classification_header(), class_rows)
    metrics.write_csv(cfg.out / "confusion.csv", ["symbol", "method", "true", "predicted", "count"], conf_rows)
    metrics.write_csv(cfg.out / "finance.csv", ["symbol", "method", "true_ar", "predicted_ar", "abs_diff"], fin_rows)
    metrics.write_csv(
        cfg.out / "predictions.csv",
        ["symbol", "method", "fold", "date", "close", "true", "predicted"],
        pred_rows,
    )
    summary_header = ["method", "symbols"]
    for name in md.CLASS_NAMES:
        n = name.lower()
        summary_header += [f"avg_{n}_f1", f"avg_{n}_precision", f"avg_{n}_recall"]
    summary_header += ["avg_weighted_f1", "avg_weighted_precision", "avg_weighted_recall", "mae_ar"]
    metrics.write_csv(cfg.out / "summary.csv", summary_header, summary_rows)
    metrics.write_csv(cfg.out / "failures.csv", ["symbol", "method", "error", "message"], fail_rows)
    for row in summary_rows:
        print(f"{row[0]}: weighted F1 {row[-4]}, MAE AR {row[-1]} over {row[1]} symbol(s)")
    if not class_rows:
        return EXIT_NUMERIC if numeric_failures else EXIT_CONFIG
    return EXIT_OK


# --------------------------------------------------------------------------
# argument parsing


def _common(p):
    p.add_argument("--config", help="JSON file with RunConfig / OptimConfig keys")
    p.add_argument("--data", help="input CSV (raw or labeled)")
    p.add_argument("--symbols", help="comma-separated symbol filter")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--invert-labels", action="store_true", help="swap Buy and Sell labels")
    p.add_argument("--grid", help="comma-separated holding percentages")


def _training(p):
    p.add_argument("--preset", help=f"one of {', '.join(presets.PRESETS)} (comma list for benchmark)")
    p.add_argument("--window", type=int, help="time steps per sample (5, 10 or 20)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--mu", type=float)
    p.add_argument("--lam", type=float)
    p.add_argument("--fusion-out", type=int)


def make_parser():
    parser = argparse.ArgumentParser(prog="sdcf", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("label", help="label a raw CSV by holding-percentage grid search")
    _common(p)

    for name, help_ in [
        ("train", "train one walk-forward fold of one symbol"),
        ("evaluate", "evaluate a trained fold model on its test year"),
    ]:
        p = sub.add_parser(name, help=help_)
        _common(p)
        _training(p)
        p.add_argument("--symbol")
        p.add_argument("--fold", type=int, default=0)
        if name == "evaluate":
            p.add_argument("--model", help="model JSON (default: the train artifact)")

    p = sub.add_parser("benchmark", help="run every fold of every symbol and write reports")
    _common(p)
    _training(p)
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = build_config(args)
        if args.command == "label":
            cmd_label(cfg)
        elif args.command == "train":
            cmd_train(cfg, args.symbol, args.fold)
        elif args.command == "evaluate":
            cmd_evaluate(cfg, args.symbol, args.fold, args.model)
        else:
            return cmd_benchmark(cfg)
    except (ConfigError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SingularTransformError, DivergenceError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
