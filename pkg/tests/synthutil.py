"""Synthetic market builders and independent oracles shared by the tests."""

import csv
from datetime import date, timedelta
from fractions import Fraction

import numpy as np

from qtrader.actionspace import encode
from qtrader.marketdata import MarketSeries, align_series

HEADER = ["date", "open", "high", "low", "close", "volume"]


def span_dates(years, days_per_year):
    """Consecutive calendar dates, days_per_year per listed year."""
    out = []
    for y in years:
        out.extend(date(y, 1, 1) + timedelta(days=k) for k in range(days_per_year))
    return out


def write_ohlcv_csv(path, series, header=HEADER):
    """Dump a MarketSeries to CSV in the default column layout."""
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        rows = zip(series.dates, series.open, series.high, series.low,
                   series.close, series.volume)
        for row in rows:
            writer.writerow([row[0].isoformat()] + [repr(float(v)) for v in row[1:]])


def trend_series(name, daily, dates, start=100.0, volume=1e6):
    """Deterministic compounding series: every close moves by ``daily``.

    Opens equal the prior close, extremes hug open/close, volume is
    constant, so the derived features are constant over time.
    """
    closes = start * (1.0 + daily) ** np.arange(1, len(dates) + 1)
    opens = np.concatenate([[start], closes[:-1]])
    highs = np.maximum(opens, closes)
    lows = np.minimum(opens, closes)
    vols = np.full(len(dates), volume)
    return MarketSeries(name, list(dates), opens, highs, lows, closes, vols)


def random_walk_series(name, dates, seed, start=100.0, vol=0.01, drift=0.0):
    rng = np.random.default_rng(seed)
    closes = start * np.cumprod(1.0 + drift + vol * rng.standard_normal(len(dates)))
    opens = np.concatenate([[start], closes[:-1]])
    highs = np.maximum(opens, closes) * (1.0 + 0.2 * vol * rng.random(len(dates)))
    lows = np.minimum(opens, closes) * (1.0 - 0.2 * vol * rng.random(len(dates)))
    vols = 1e6 * (1.0 + 0.5 * rng.random(len(dates)))
    return MarketSeries(name, list(dates), opens, highs, lows, closes, vols)


def planted_market(daily=0.02, years=(2018, 2019, 2020), days_per_year=50):
    """Two-asset market with one steady riser and one mirrored faller."""
    dates = span_dates(years, days_per_year)
    return align_series([
        trend_series("riser", daily, dates),
        trend_series("faller", -daily, dates),
    ])


def random_market(n_assets=2, years=(2019, 2020), days_per_year=40, seed=0):
    dates = span_dates(years, days_per_year)
    return align_series([
        random_walk_series(f"asset{i}", dates, seed + i) for i in range(n_assets)
    ])


# -- independent oracles -------------------------------------------------------


class HoldingsOracle:
    """Portfolio reference tracking per-asset currency amounts, not weights.

    Cash is entry 0. Trades and market moves act on the amounts directly,
    which is an independent formulation of the same dynamics the package
    expresses with (weights, value).
    """

    def __init__(self, weights, value):
        self.amounts = np.asarray(weights, dtype=np.float64) * value

    @property
    def value(self):
        return self.amounts.sum()

    @property
    def weights(self):
        return self.amounts / self.amounts.sum()

    def trade(self, action, size, sell_cost, buy_cost):
        for i, a in enumerate(action, start=1):
            if a == -1:
                self.amounts[i] -= size
                self.amounts[0] += size * (1.0 - sell_cost)
            elif a == 1:
                self.amounts[i] += size
                self.amounts[0] -= size * (1.0 + buy_cost)

    def advance(self, rates):
        self.amounts[1:] *= 1.0 + np.asarray(rates)


def fraction_feasible(weights, value, action, size, sell_cost, buy_cost):
    """Exact-arithmetic feasibility: holdings cover sells, cash stays >= 0."""
    w = [Fraction(float(x)) for x in weights]
    value = Fraction(float(value))
    size = Fraction(float(size))
    cash = w[0] * value
    for i, a in enumerate(action, start=1):
        if a == -1:
            if w[i] * value < size:
                return False
            cash += size * (1 - Fraction(float(sell_cost)))
        elif a == 1:
            cash -= size * (1 + Fraction(float(buy_cost)))
    return cash >= 0


def enumeration_map_oracle(ctx, action, q):
    """Reference for the feasibility mapping by exhaustive search.

    Unaffordable sells become holds; then every subset of the remaining
    non-hold legs is tried as holds, and the feasible candidate closest
    in Hamming distance wins, ties by larger q then smaller index.
    Returns None when any candidate sits too close to the cash boundary
    for float and exact arithmetic to be trusted to agree.
    """
    from itertools import combinations

    a = np.asarray(action, dtype=np.int64).copy()
    for i in range(a.size):
        if a[i] == -1 and ctx.weights[i + 1] * ctx.value < ctx.trading_size:
            a[i] = 0
    nonzero = np.flatnonzero(a != 0)
    candidates = []
    for k in range(nonzero.size + 1):
        for subset in combinations(nonzero, k):
            cand = a.copy()
            cand[list(subset)] = 0
            candidates.append((k, cand))
    boundary = 1e-9 * ctx.value
    best = None
    for dist, cand in candidates:
        cash = ctx.weights[0] * ctx.value + ctx.trading_size * (
            (1.0 - ctx.sell_cost) * np.count_nonzero(cand == -1)
            - (1.0 + ctx.buy_cost) * np.count_nonzero(cand == 1)
        )
        if abs(cash) < boundary:
            return None
        if not fraction_feasible(ctx.weights, ctx.value, cand,
                                 ctx.trading_size, ctx.sell_cost, ctx.buy_cost):
            continue
        idx = encode(cand)
        key = (dist, -float(q[idx]), idx)
        if best is None or key < best[0]:
            best = (key, cand)
    return best[1]
