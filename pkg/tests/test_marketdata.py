import datetime as dt

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sdcf import marketdata as md
from sdcf import synthetic
from sdcf.errors import ConfigError, FormatError

from oracles import brute_force_labels, simulate_ar

HEADER = "date,symbol,adj_close,open,low,high,nav\n"


def write(tmp_path, body, name="d.csv"):
    p = tmp_path / name
    p.write_text(HEADER + body)
    return p


def bars_from_closes(closes, start=dt.date(2000, 1, 3)):
    days = synthetic.business_days(start, start + dt.timedelta(days=10 * len(closes)))
    return [md.Bar(d, c, c, c, c, c) for d, c in zip(days, closes)]


@pytest.fixture(scope="module")
def market(tmp_path_factory):
    path = tmp_path_factory.mktemp("m") / "m.csv"
    synthetic.write_market_csv(path, synthetic.synthetic_market(("AAA",), 1998, 2018, seed=3))
    series, _ = md.parse_csv(path)
    ((sym, bars),) = series
    return md.label_bars(sym, bars, invert=True)


# parsing -------------------------------------------------------------------


def test_parse_three_rows(tmp_path):
    p = write(
        tmp_path,
        "2020-01-02,A,10,9,8,11,10\n2020-01-03,A,11,10,9,12,11\n2020-01-06,A,12,11,10,13,12\n",
    )
    series, dropped = md.parse_csv(p)
    assert dropped == 0 and len(series) == 1
    sym, bars = series[0]
    assert sym == "A" and len(bars) == 3
    assert bars[1] == md.Bar(dt.date(2020, 1, 3), 10.0, 12.0, 9.0, 11.0, 11.0)


def test_parse_drops_missing_nav(tmp_path):
    p = write(tmp_path, "2020-01-02,A,10,9,8,11,\n2020-01-03,A,11,10,9,12,11\n")
    series, dropped = md.parse_csv(p)
    assert dropped == 1 and len(series[0][1]) == 1


def test_parse_sorts_interleaved_symbols(tmp_path):
    rows = [
        "2020-01-03,B,2,2,2,2,2",
        "2020-01-03,A,1,1,1,1,1",
        "2020-01-02,B,3,3,3,3,3",
        "2020-01-06,A,4,4,4,4,4",
        "2020-01-02,A,5,5,5,5,5",
    ]
    series, _ = md.parse_csv(write(tmp_path, "\n".join(rows) + "\n"))
    assert [s for s, _ in series] == ["A", "B"]
    for _, bars in series:
        dates = [b.date for b in bars]
        assert dates == sorted(dates)
    assert [b.close for b in series[0][1]] == [5, 1, 4]


@pytest.mark.parametrize(
    "body, line",
    [
        ("2020-01-02,A,10,9,8,11,10\n2020-13-01,A,1,1,1,1,1\n", 3),
        ("2020-01-02,A,ten,9,8,11,10\n", 2),
        ("2020-01-02,A,-1,9,8,11,10\n", 2),
        ("2020-01-02,A,1,1,1,1,1\n2020-01-02,A,1,1,1,1,1\n", 3),
    ],
)
def test_parse_errors_carry_line_numbers(tmp_path, body, line):
    with pytest.raises(FormatError) as info:
        md.parse_csv(write(tmp_path, body))
    assert info.value.line == line
    assert f"line {line}" in str(info.value)


def test_parse_bad_header(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("date,symbol,close\n2020-01-02,A,1\n")
    with pytest.raises(FormatError):
        md.parse_csv(p)


def test_labeled_round_trip(tmp_path, market):
    md.write_labeled_csv(tmp_path / "l.csv", [market])
    (back,) = md.read_labeled_csv(tmp_path / "l.csv")
    assert back.symbol == market.symbol
    np.testing.assert_array_equal(back.labels, market.labels)
    assert back.hold_percentage == market.hold_percentage
    np.testing.assert_allclose(back.closes, market.closes, rtol=1e-9)


# labeling --------------------------------------------------------------------


def test_label_examples():
    labels, hold, _ = md.label_series([100, 105], [3])
    assert labels[0] == md.SELL and hold == 3
    labels, _, _ = md.label_series([100, 101], [3])
    assert labels[0] == md.HOLD
    labels, _, _ = md.label_series([100, 95], [3])
    assert labels[0] == md.BUY
    assert md.label_series([100, 105], [3], invert=True)[0][0] == md.BUY


def test_last_day_is_hold():
    labels = md.threshold_labels([100, 50, 200], 1.0)
    assert labels[-1] == md.HOLD and len(labels) == 3


def test_label_needs_two_closes():
    with pytest.raises(ValueError):
        md.label_series([100], [1])
    with pytest.raises(ValueError):
        md.label_series([100, 101], [])


def test_label_small_grid_oracle():
    close = [100, 90, 99, 80]
    labels, hold, ar = md.label_series(close, [2, 5, 15])
    want = brute_force_labels(close, [2, 5, 15])
    assert list(labels) == want[0] and hold == want[1]
    assert ar == pytest.approx(want[2], rel=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.booleans())
def test_label_random_paths_oracle(seed, invert):
    rng = np.random.default_rng(seed)
    close = 100 * np.exp(np.cumsum(rng.normal(0, 0.03, size=30)))
    labels, hold, ar = md.label_series(close, md.DEFAULT_GRID, invert=invert)
    want = brute_force_labels(close, md.DEFAULT_GRID, invert)
    assert list(labels) == want[0] and hold == want[1]
    assert ar == pytest.approx(want[2], rel=1e-12, abs=1e-12)
    assert ar == max(simulate_ar(md.threshold_labels(close, x, invert), close) for x in md.DEFAULT_GRID)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.01, 1e4))
def test_labels_scale_invariant(seed, scale):
    close = 100 * np.exp(np.cumsum(np.random.default_rng(seed).normal(0, 0.03, size=20)))
    for x in (0.5, 2.0, 5.0):
        a = md.threshold_labels(close, x)
        b = md.threshold_labels(close * scale, x)
        # exact ties at the threshold may flip by rounding; skip those days
        change = np.abs(np.diff(close) / close[:-1]) * 100
        ok = np.append(np.abs(change - x) > 1e-9, True)
        np.testing.assert_array_equal(a[ok], b[ok])


def test_ties_go_to_smallest_threshold():
    # nothing crosses either threshold: every grid point gives AR 0
    _, hold, ar = md.label_series([100, 100.1, 100.2], [4, 2, 3])
    assert hold == 2 and ar == 0


# simulator -------------------------------------------------------------------


def test_single_round_trip():
    close = np.full(252, 105.0)
    close[0], close[-1] = 100.0, 110.0
    labels = np.full(252, md.HOLD)
    labels[0], labels[-1] = md.BUY, md.SELL
    ar, final = md.annualized_return(labels, close, return_final=True)
    assert final == 109_999_970
    assert ar == pytest.approx(9.99997, rel=1e-6)


def test_all_hold_and_fee_drag():
    close = np.array([50.0, 50.0, 50.0])
    assert md.annualized_return([1, 1, 1], close) == 0.0
    assert md.annualized_return([0, 2, 1], close) < 0


def test_force_liquidation_on_last_day():
    close = np.array([100.0, 120.0])
    _, final = md.annualized_return([md.BUY, md.HOLD], close, return_final=True)
    assert final == pytest.approx(1e8 + 999_999 * 20 - 20)


@settings(max_examples=30, deadline=None)
@given(st.floats(1, 1000), st.floats(1, 1000), st.integers(2, 600))
def test_zero_fee_round_trip_closed_form(p0, p1, n):
    close = np.full(n, p0)
    close[-1] = p1
    labels = np.full(n, md.HOLD)
    labels[0] = md.BUY
    ar = md.annualized_return(labels, close, capital=1e8, fee=0.0)
    shares = np.floor(1e8 / p0)
    final = 1e8 - shares * p0 + shares * p1
    want = ((final / 1e8) ** (252 / n) - 1) * 100
    assert ar == pytest.approx(want, rel=1e-9, abs=1e-9)


def test_simulator_rejects_bad_prices():
    with pytest.raises(ValueError):
        md.annualized_return([0, 1], [100.0, 0.0])
    with pytest.raises(ValueError):
        md.annualized_return([0], [100.0, 1.0])


# windows ---------------------------------------------------------------------


def _series(closes, labels=None):
    bars = bars_from_closes(closes)
    labels = md.threshold_labels(closes, 1.0) if labels is None else np.asarray(labels)
    return md.LabeledSeries("T", bars, labels, 1.0)


def test_window_count_and_norm():
    s = _series([3.0, 4.0, 5.0])
    (w,) = md.make_windows(s, 2)
    np.testing.assert_allclose(w.channels[0], [0.6, 0.8])
    assert md.make_windows(_series([1.0, 2.0]), 2) == []


def test_window_alignment_and_norms():
    rng = np.random.default_rng(0)
    closes = 100 + rng.random(40)
    s = _series(closes)
    W = 5
    samples = md.make_windows(s, W)
    assert len(samples) == len(closes) - W
    for w in samples:
        n = w.index
        assert w.label == s.labels[n]
        assert w.date == s.bars[n].date and w.start_date == s.bars[n - W + 1].date
        assert w.label_date == s.bars[n + 1].date
        np.testing.assert_allclose(np.linalg.norm(w.channels, axis=1), 1.0, atol=1e-12)
        np.testing.assert_allclose(w.channels[0] * np.linalg.norm(closes[n - W + 1 : n + 1]),
                                   closes[n - W + 1 : n + 1])
    S, y = md.stack_windows(samples)
    assert S.shape == (5, len(samples), W) and y.shape == (len(samples),)


# walk-forward ------------------------------------------------------------------


def test_eleven_folds_over_21_years(market):
    folds = md.walk_forward_splits(market, 10)
    assert len(folds) == 11
    assert folds[0].train_years == (1998, 2007) and folds[0].test_year == 2008
    assert folds[-1].train_years == (2008, 2017) and folds[-1].test_year == 2018
    for f in folds:
        assert md.fold_leaks(f) == []
        assert f.train and f.test


def test_first_window_days_of_test_year_dropped(market):
    W = 10
    for f in md.walk_forward_splits(market, W):
        year_days = [i for i, b in enumerate(market.bars) if b.date.year == f.test_year]
        admitted = [s.index for s in f.test]
        # every day of the year that can carry a label, minus the first W
        labelled = [i for i in year_days if W - 1 <= i <= len(market.bars) - 2]
        assert admitted == labelled[W:]
        assert all(s.start_date.year == f.test_year for s in f.test)


def test_train_never_sees_test_year(market):
    for f in md.walk_forward_splits(market, 5):
        assert max(s.label_date for s in f.train).year <= f.train_end
        assert min(s.start_date for s in f.train).year >= f.train_start


def test_short_history_is_config_error():
    s = _series(100 + np.arange(300.0))
    with pytest.raises(ConfigError):
        md.walk_forward_splits(s, 5)


def test_leak_check_catches_planted_leak(market):
    f = md.walk_forward_splits(market, 5)[0]
    late = md.walk_forward_splits(market, 5)[1].train[-1]
    f.train.append(late)
    assert md.fold_leaks(f)
