"""Seeded synthetic data: a planted classification task and a fake market."""

from __future__ import annotations

import csv
import datetime as dt

import numpy as np

PLANTED_FILTER = np.array([1.0, -2.0, 1.0])


def planted_dataset(n, window=8, seed=0, filt=PLANTED_FILTER):
    """Two-channel windows whose class is the sign of a fixed filter response.

    Both channels are white noise, each window scaled to unit L2 norm per
    channel (as market windows are). The class is 1 when the 3-tap filter
    applied to the last three steps of channel 0 is positive, else 0;
    channel 1 carries no signal.

    Returns ``(S, y)`` with ``S`` of shape (2, n, window).
    """
    filt = np.asarray(filt, dtype=np.float64)
    rng = np.random.default_rng(seed)
    S = rng.standard_normal((2, n, window))
    S /= np.linalg.norm(S, axis=2, keepdims=True)
    response = S[0, :, -len(filt):] @ filt
    y = (response > 0).astype(np.intp)
    return S, y


def business_days(start: dt.date, end: dt.date):
    d = start
    one = dt.timedelta(days=1)
    while d <= end:
        if d.weekday() < 5:
            yield d
        d += one


def synthetic_market(symbols=("SYN.NS",), first_year=1998, last_year=2018, seed=0):
    """Geometric random-walk bars on business days, as CSV-ready rows.

    Returns a list of dicts with the input CSV columns.
    """
    rows = []
    days = list(business_days(dt.date(first_year, 1, 1), dt.date(last_year, 12, 31)))
    for j, sym in enumerate(symbols):
        rng = np.random.default_rng([seed, j])
        rets = rng.normal(0.0003, 0.02, size=len(days))
        close = 100.0 * np.exp(np.cumsum(rets))
        opn = close * np.exp(rng.normal(0, 0.005, size=len(days)))
        high = np.maximum(opn, close) * (1 + np.abs(rng.normal(0, 0.005, size=len(days))))
        low = np.minimum(opn, close) * (1 - np.abs(rng.normal(0, 0.005, size=len(days))))
        nav = close * (1 + rng.normal(0, 0.01, size=len(days)))
        for i, d in enumerate(days):
            rows.append(
                {
                    "date": d.isoformat(),
                    "symbol": sym,
                    "adj_close": f"{close[i]:.6f}",
                    "open": f"{opn[i]:.6f}",
                    "low": f"{low[i]:.6f}",
                    "high": f"{high[i]:.6f}",
                    "nav": f"{abs(nav[i]):.6f}",
                }
            )
    return rows


def write_market_csv(path, rows):
    cols = ["date", "symbol", "adj_close", "open", "low", "high", "nav"]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
