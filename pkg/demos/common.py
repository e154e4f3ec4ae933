"""Small synthetic-market builders shared by the demo scripts."""

from datetime import date, timedelta

import numpy as np

from qtrader.marketdata import MarketSeries, align_series


def make_dates(years, days_per_year):
    out = []
    for y in years:
        out.extend(date(y, 1, 1) + timedelta(days=k) for k in range(days_per_year))
    return out


def trend_series(name, daily, dates, start=100.0):
    """Compounding series; every close moves by the same daily rate."""
    closes = start * (1.0 + daily) ** np.arange(1, len(dates) + 1)
    opens = np.concatenate([[start], closes[:-1]])
    return MarketSeries(name, list(dates), opens,
                        np.maximum(opens, closes), np.minimum(opens, closes),
                        closes, np.full(len(dates), 1e6))


def walk_series(name, dates, seed, start=100.0, vol=0.01):
    rng = np.random.default_rng(seed)
    closes = start * np.cumprod(1.0 + vol * rng.standard_normal(len(dates)))
    opens = np.concatenate([[start], closes[:-1]])
    highs = np.maximum(opens, closes) * (1.0 + 0.2 * vol * rng.random(len(dates)))
    lows = np.minimum(opens, closes) * (1.0 - 0.2 * vol * rng.random(len(dates)))
    return MarketSeries(name, list(dates), opens, highs, lows, closes,
                        1e6 * (1.0 + 0.5 * rng.random(len(dates))))


def planted_market(daily=0.03, years=(2018, 2019, 2020), days_per_year=50):
    """One steady riser and one mirrored faller; the ideal test signal."""
    dates = make_dates(years, days_per_year)
    return align_series([trend_series("riser", daily, dates),
                         trend_series("faller", -daily, dates)])


def random_market(n_assets=2, years=(2019, 2020), days_per_year=40, seed=0):
    dates = make_dates(years, days_per_year)
    return align_series([walk_series(f"asset{i}", dates, seed + i)
                         for i in range(n_assets)])
