"""Daily bars: ingestion, labeling, trading simulation, windows and walk-forward folds.

Labels follow the threshold rule used to build the dataset: a day whose
next-day absolute percentage move exceeds the holding percentage is labeled
Sell if the price rises and Buy if it falls; otherwise Hold. The holding
percentage is picked from a grid to maximize the simulated annualized return.
Pass ``invert=True`` to swap Buy and Sell.
"""

from __future__ import annotations

import csv
import datetime as dt
import logging
import math
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, FormatError

logger = logging.getLogger(__name__)

BUY, HOLD, SELL = 0, 1, 2
CLASS_NAMES = ("BUY", "HOLD", "SELL")

INPUT_COLUMNS = ("date", "symbol", "adj_close", "open", "low", "high", "nav")
LABEL_COLUMNS = ("label", "hold_percentage")
CHANNELS = ("close", "open", "high", "low", "nav")

DEFAULT_GRID = (0.5, 1.0, 2.0, 3.0, 4.0, 5.0, 7.0, 10.0)
CAPITAL = 1e8
FEE = 10.0
TRADING_DAYS = 252


@dataclass(frozen=True)
class Bar:
    date: dt.date
    open: float
    high: float
    low: float
    close: float
    nav: float


@dataclass
class LabeledSeries:
    symbol: str
    bars: list[Bar]
    labels: np.ndarray
    hold_percentage: float
    best_ar: float = float("nan")

    @property
    def closes(self) -> np.ndarray:
        return np.array([b.close for b in self.bars])

    @property
    def dates(self) -> list[dt.date]:
        return [b.date for b in self.bars]


@dataclass(frozen=True)
class WindowSample:
    channels: np.ndarray  # (5, W): close, open, high, low, nav
    label: int
    symbol: str
    index: int  # day n of the series; the window covers n-W+1 .. n
    start_date: dt.date
    date: dt.date
    label_date: dt.date  # day n+1, whose close decides the label

    @property
    def origin(self):
        return (self.symbol, self.date)


@dataclass
class Fold:
    train_start: int
    train_end: int
    test_start: int
    test_end: int
    train: list[WindowSample]
    test: list[WindowSample]

    @property
    def train_years(self) -> tuple[int, int]:
        return (self.train_start, self.train_end)

    @property
    def test_year(self) -> int:
        return self.test_start


# --------------------------------------------------------------------------
# ingestion


def _read_rows(path, required):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise FormatError("empty file", line=1) from None
        missing = [c for c in required if c not in header]
        if missing:
            raise FormatError(f"header lacks column(s) {', '.join(missing)}", line=1)
        pos = {name: header.index(name) for name in header}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            yield lineno, {name: (row[i].strip() if i < len(row) else "") for name, i in pos.items()}


def _parse_bar(rec, lineno):
    try:
        date = dt.date.fromisoformat(rec["date"])
    except ValueError:
        raise FormatError(f"bad date {rec['date']!r}", line=lineno) from None
    values = {}
    for col in ("adj_close", "open", "low", "high", "nav"):
        raw = rec[col]
        if raw == "":
            return None
        try:
            v = float(raw)
        except ValueError:
            raise FormatError(f"bad number {raw!r} in column {col}", line=lineno) from None
        if not math.isfinite(v):
            return None
        if v <= 0:
            raise FormatError(f"non-positive value {v} in column {col}", line=lineno)
        values[col] = v
    return Bar(date, values["open"], values["high"], values["low"], values["adj_close"], values["nav"])


def _group(records):
    by_symbol = defaultdict(list)
    for lineno, sym, bar, extra in records:
        by_symbol[sym].append((bar.date, lineno, bar, extra))
    out = []
    for sym in sorted(by_symbol):
        items = sorted(by_symbol[sym], key=lambda t: t[0])
        for a, b in zip(items, items[1:]):
            if a[0] == b[0]:
                raise FormatError(f"duplicate date {b[0]} for symbol {sym}", line=b[1])
        out.append((sym, items))
    return out


def parse_csv(path):
    """Read daily bars grouped by symbol.

    Rows with an empty numeric field are dropped and counted.

    Returns
    -------
    series : list of (symbol, list of Bar)
        Sorted by symbol, bars sorted by date.
    dropped : int
    """
    records, dropped = [], 0
    for lineno, rec in _read_rows(path, INPUT_COLUMNS):
        bar = _parse_bar(rec, lineno)
        if bar is None:
            dropped += 1
            continue
        if not rec["symbol"]:
            raise FormatError("empty symbol", line=lineno)
        records.append((lineno, rec["symbol"], bar, None))
    if dropped:
        logger.warning("%s: dropped %d row(s) with missing values", path, dropped)
    return [(sym, [t[2] for t in items]) for sym, items in _group(records)], dropped


def read_labeled_csv(path) -> list[LabeledSeries]:
    """Read a file written by :func:`write_labeled_csv`."""
    records = []
    for lineno, rec in _read_rows(path, INPUT_COLUMNS + LABEL_COLUMNS):
        bar = _parse_bar(rec, lineno)
        if bar is None:
            raise FormatError("missing value in labeled data", line=lineno)
        try:
            label = int(rec["label"])
            hold = float(rec["hold_percentage"])
        except ValueError:
            raise FormatError("bad label or hold_percentage", line=lineno) from None
        if label not in (BUY, HOLD, SELL):
            raise FormatError(f"label {label} not in 0..2", line=lineno)
        records.append((lineno, rec["symbol"], bar, (label, hold)))
    out = []
    for sym, items in _group(records):
        labels = np.array([t[3][0] for t in items], dtype=np.intp)
        out.append(LabeledSeries(sym, [t[2] for t in items], labels, items[0][3][1]))
    return out


def _fmt(x):
    return format(x, ".10g")


def write_labeled_csv(path, series_list):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(INPUT_COLUMNS + LABEL_COLUMNS)
        for s in series_list:
            for bar, label in zip(s.bars, s.labels):
                w.writerow(
                    [
                        bar.date.isoformat(),
                        s.symbol,
                        _fmt(bar.close),
                        _fmt(bar.open),
                        _fmt(bar.low),
                        _fmt(bar.high),
                        _fmt(bar.nav),
                        int(label),
                        _fmt(s.hold_percentage),
                    ]
                )


# --------------------------------------------------------------------------
# trading simulation and labeling


def annualized_return(
    labels, close, capital=CAPITAL, fee=FEE, periods_per_year=TRADING_DAYS, return_final=False
):
    """Simulate a single-position, all-in strategy and annualize its growth.

    Starting from ``capital`` in cash, a Buy with no open position buys as
    many whole shares as the cash allows after the fee; a Sell with an open
    position sells everything. Any position left on the last day is sold at
    that day's close. Every trade pays ``fee``.

    Returns the annualized return in percent (and the final capital when
    ``return_final``).
    """
    labels = np.asarray(labels)
    close = np.asarray(close, dtype=np.float64)
    if labels.shape != close.shape:
        raise ValueError("labels and closes must have the same length")
    if close.size == 0:
        raise ValueError("empty price series")
    if np.any(close <= 0):
        raise ValueError("prices must be positive")
    cash, shares = float(capital), 0
    for label, price in zip(labels.tolist(), close.tolist()):
        if label == BUY and shares == 0:
            n = math.floor((cash - fee) / price)
            if n > 0:
                shares = n
                cash -= n * price + fee
        elif label == SELL and shares > 0:
            cash += shares * price - fee
            shares = 0
    if shares > 0:
        cash += shares * float(close[-1]) - fee
    final = cash
    if final <= 0:
        ar = -100.0
    else:
        ar = ((final / capital) ** (periods_per_year / close.size) - 1.0) * 100.0
    return (ar, final) if return_final else ar


def threshold_labels(close, threshold, invert=False):
    """Label each day from its next-day move; the last day is Hold."""
    close = np.asarray(close, dtype=np.float64)
    change = np.abs((close[1:] - close[:-1]) / close[:-1]) * 100.0
    up_label, down_label = (BUY, SELL) if invert else (SELL, BUY)
    moved = np.where(close[1:] > close[:-1], up_label, down_label)
    labels = np.where(change > threshold, moved, HOLD)
    return np.append(labels, HOLD).astype(np.intp)


def label_series(
    close,
    grid=DEFAULT_GRID,
    invert=False,
    capital=CAPITAL,
    fee=FEE,
    periods_per_year=TRADING_DAYS,
):
    """Grid-search the holding percentage that maximizes simulated return.

    Ties go to the smallest threshold.

    Returns
    -------
    labels : ndarray of int
    hold_percentage : float
    best_ar : float
    """
    close = np.asarray(close, dtype=np.float64)
    if close.size < 2:
        raise ValueError("need at least two closing prices")
    grid = [float(g) for g in grid]
    if not grid:
        raise ValueError("holding-percentage grid is empty")
    best = None
    for x in sorted(grid):
        labels = threshold_labels(close, x, invert)
        ar = annualized_return(labels, close, capital, fee, periods_per_year)
        if best is None or ar > best[2]:
            best = (labels, x, ar)
    return best


def label_bars(symbol, bars, grid=DEFAULT_GRID, invert=False, **sim) -> LabeledSeries:
    closes = np.array([b.close for b in bars])
    labels, hold, ar = label_series(closes, grid, invert=invert, **sim)
    return LabeledSeries(symbol, list(bars), labels, hold, ar)


# --------------------------------------------------------------------------
# windows and folds


def _normalize_rows(a):
    norms = np.linalg.norm(a, axis=-1, keepdims=True)
    return np.divide(a, norms, out=np.zeros_like(a), where=norms > 0)


def make_windows(series: LabeledSeries, window: int) -> list[WindowSample]:
    """One sample per day ``n`` in ``[W-1, len-2]``, labeled with ``labels[n]``.

    The last day is skipped because its label has no next-day move behind it.
    Each channel of each window is scaled to unit L2 norm.
    """
    bars = series.bars
    n_days = len(bars)
    if window < 1:
        raise ValueError("window must be >= 1")
    if n_days <= window:
        return []
    data = np.array([[b.close, b.open, b.high, b.low, b.nav] for b in bars]).T  # (5, n)
    out = []
    for n in range(window - 1, n_days - 1):
        chans = _normalize_rows(data[:, n - window + 1 : n + 1].copy())
        out.append(
            WindowSample(
                chans,
                int(series.labels[n]),
                series.symbol,
                n,
                bars[n - window + 1].date,
                bars[n].date,
                bars[n + 1].date,
            )
        )
    return out


def stack_windows(samples):
    """Samples -> ``(S, y)`` with ``S`` of shape (5, K, W)."""
    if not samples:
        raise ValueError("no samples")
    S = np.stack([s.channels for s in samples], axis=1)
    y = np.array([s.label for s in samples], dtype=np.intp)
    return S, y


def walk_forward_splits(
    series: LabeledSeries, window: int, train_years=10, test_years=1, step=1
) -> list[Fold]:
    """Sliding walk-forward folds over calendar years.

    Training samples are windows lying wholly inside the training years whose
    label-deciding next day also falls inside them. Test samples are days in
    the test years, minus the first ``window`` samples of every test year.
    """
    if train_years < 1 or test_years < 1 or step < 1:
        raise ConfigError("train_years, test_years and step must be >= 1")
    if not series.bars:
        raise ConfigError(f"{series.symbol}: no data")
    first, last = series.bars[0].date.year, series.bars[-1].date.year
    span = last - first + 1
    if span < train_years + test_years:
        raise ConfigError(
            f"{series.symbol}: {span} year(s) of data, walk-forward needs at least "
            f"{train_years + test_years}"
        )
    samples = make_windows(series, window)
    folds = []
    start = first
    while start + train_years + test_years - 1 <= last:
        tr_end = start + train_years - 1
        te_start, te_end = tr_end + 1, tr_end + test_years
        train = [
            s
            for s in samples
            if start <= s.start_date.year and s.label_date.year <= tr_end
        ]
        test = []
        for year in range(te_start, te_end + 1):
            test.extend([s for s in samples if s.date.year == year][window:])
        folds.append(Fold(start, tr_end, te_start, te_end, train, test))
        start += step
    return folds


def fold_leaks(fold: Fold) -> list[str]:
    """Describe every sample that would leak information across the fold boundary."""
    problems = []
    for s in fold.train:
        if s.start_date.year < fold.train_start or s.label_date.year > fold.train_end:
            problems.append(f"train sample {s.symbol}@{s.date} reaches outside training years")
    for s in fold.test:
        if not fold.test_start <= s.start_date.year <= s.date.year <= fold.test_end:
            problems.append(f"test sample {s.symbol}@{s.date} window leaves the test year")
        if s.start_date.year != s.date.year:
            problems.append(f"test sample {s.symbol}@{s.date} window spans the year boundary")
    return problems
