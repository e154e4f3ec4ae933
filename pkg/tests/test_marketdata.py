from datetime import date
from fractions import Fraction

import numpy as np
import pytest

from qtrader.errors import InsufficientDataError, ParseError, ValidationError
from qtrader.marketdata import (FEATURE_NAMES, align_series, compute_indicators,
                                feature_tensor, load_series, write_indicator_csv)
from synthutil import span_dates, trend_series


def write_rows(path, rows, header=None):
    header = header or "date,open,high,low,close,volume"
    path.write_text(header + "\n" + "\n".join(rows) + "\n", encoding="utf-8")


GOOD_ROWS = [
    "2020-01-02,100,101,99,100,1000",
    "2020-01-03,102,106,101,105,1500",
    "2020-01-06,104,105,100,101,900",
]


class TestLoadSeries:
    def test_loads_and_sorts_columns(self, tmp_path):
        p = tmp_path / "a.csv"
        write_rows(p, GOOD_ROWS)
        s = load_series(p, name="a")
        assert len(s) == 3
        assert s.dates[0] == date(2020, 1, 2)
        assert s.close.tolist() == [100.0, 105.0, 101.0]
        assert s.volume.tolist() == [1000.0, 1500.0, 900.0]

    def test_schema_mapping(self, tmp_path):
        p = tmp_path / "a.csv"
        write_rows(p, ["2020-01-02,100,101,99,100,1000",
                       "2020-01-03,102,106,101,105,1500",
                       "2020-01-06,104,105,100,101,900"],
                   header="Date,Open,High,Low,Close,Volume")
        schema = {k: k.capitalize() for k in ("date", "open", "high", "low", "close", "volume")}
        s = load_series(p, schema=schema)
        assert s.close.tolist() == [100.0, 105.0, 101.0]

    def test_unknown_schema_key(self, tmp_path):
        p = tmp_path / "a.csv"
        write_rows(p, GOOD_ROWS)
        with pytest.raises(ValidationError, match="unknown schema"):
            load_series(p, schema={"adj_close": "x"})

    def test_parse_error_carries_line_number(self, tmp_path):
        p = tmp_path / "a.csv"
        write_rows(p, GOOD_ROWS[:1] + ["2020-01-03,oops,106,101,105,1500"])
        with pytest.raises(ParseError, match=r":3:.*not numeric"):
            load_series(p)

    def test_bad_date_line_number(self, tmp_path):
        p = tmp_path / "a.csv"
        write_rows(p, GOOD_ROWS[:1] + ["03/01/2020,102,106,101,105,1500"])
        with pytest.raises(ParseError, match=r":3:.*bad date"):
            load_series(p)

    def test_missing_column(self, tmp_path):
        p = tmp_path / "a.csv"
        write_rows(p, ["2020-01-02,100,101,99,100"], header="date,open,high,low,close")
        with pytest.raises(ParseError, match="missing columns"):
            load_series(p)

    def test_empty_file(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text("", encoding="utf-8")
        with pytest.raises(ParseError, match="empty file"):
            load_series(p)

    def test_duplicate_and_backwards_dates(self, tmp_path):
        p = tmp_path / "a.csv"
        write_rows(p, GOOD_ROWS[:2] + ["2020-01-03,102,106,101,105,1500"])
        with pytest.raises(ValidationError, match="strictly increasing"):
            load_series(p)
        write_rows(p, GOOD_ROWS[:2] + ["2019-12-31,102,106,101,105,1500"])
        with pytest.raises(ValidationError, match="strictly increasing"):
            load_series(p)

    def test_price_ordering_violation(self, tmp_path):
        p = tmp_path / "a.csv"
        write_rows(p, GOOD_ROWS[:1] + ["2020-01-03,102,103,104,105,1500"])  # low > high
        with pytest.raises(ValidationError, match="price ordering"):
            load_series(p)

    def test_nonpositive_price_and_negative_volume(self, tmp_path):
        p = tmp_path / "a.csv"
        write_rows(p, GOOD_ROWS[:1] + ["2020-01-03,102,106,-1,105,1500"])
        with pytest.raises(ValidationError, match="positive"):
            load_series(p)
        write_rows(p, GOOD_ROWS[:1] + ["2020-01-03,102,106,101,105,-5"])
        with pytest.raises(ValidationError, match="volume"):
            load_series(p)

    def test_too_short(self, tmp_path):
        p = tmp_path / "a.csv"
        write_rows(p, GOOD_ROWS[:2])
        with pytest.raises(InsufficientDataError):
            load_series(p, min_rows=3)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ParseError, match="cannot open"):
            load_series(tmp_path / "nope.csv")


class TestIndicators:
    def test_frozen_example(self, tmp_path):
        p = tmp_path / "a.csv"
        write_rows(p, GOOD_ROWS[:2])
        result = compute_indicators(load_series(p, min_rows=2))
        row = result.values[0]
        exact = [
            Fraction(105 - 100, 100),   # close change
            Fraction(102 - 100, 100),   # open over prior close
            Fraction(105 - 106, 106),   # close vs high
            Fraction(105 - 101, 101),   # close vs low
            Fraction(1500 - 1000, 1000),
        ]
        assert row == pytest.approx([float(v) for v in exact], rel=0, abs=1e-15)
        assert result.values.shape == (1, 5)
        assert len(FEATURE_NAMES) == 5

    def test_zero_previous_volume_flagged(self, tmp_path):
        p = tmp_path / "a.csv"
        write_rows(p, ["2020-01-02,100,101,99,100,0",
                       "2020-01-03,102,106,101,105,1500"])
        result = compute_indicators(load_series(p, min_rows=2))
        assert result.values[0, 4] == 0.0
        assert result.zero_volume_rows == [0]


class TestAlignment:
    def test_intersection_and_dropped(self):
        d1 = span_dates((2020,), 10)
        d2 = d1[:4] + d1[6:]  # misses two dates
        a = trend_series("a", 0.01, d1)
        b = trend_series("b", 0.02, d2)
        market = align_series([a, b])
        assert market.dates == d2
        assert market.dropped_dates["a"] == d1[4:6]
        assert market.dropped_dates["b"] == []
        assert market.indicators.shape == (2, len(d2) - 1, 5)

    def test_gap_uses_aligned_previous_close(self):
        d1 = span_dates((2020,), 6)
        d2 = d1[:2] + d1[3:]  # drop the third date
        a = trend_series("a", 0.01, d1)
        b = trend_series("b", 0.02, d2)
        market = align_series([a, b])
        i = market.dates.index(d1[3])
        # close change across the gap spans two raw bars of asset a
        expected = a.close[3] / a.close[1] - 1.0
        assert market.indicators[0, i - 1, 0] == pytest.approx(expected, rel=1e-12)

    def test_duplicate_names_rejected(self):
        d = span_dates((2020,), 5)
        with pytest.raises(ValidationError, match="duplicate"):
            align_series([trend_series("a", 0.01, d), trend_series("a", 0.02, d)])

    def test_too_little_overlap(self):
        a = trend_series("a", 0.01, span_dates((2020,), 5))
        b = trend_series("b", 0.01, span_dates((2021,), 5))
        with pytest.raises(InsufficientDataError):
            align_series([a, b])

    def test_arrays_read_only(self, small_market):
        with pytest.raises(ValueError):
            small_market.indicators[0, 0, 0] = 1.0
        with pytest.raises(ValueError):
            small_market.closes[0, 0] = 1.0


class TestFeatureTensor:
    def test_window_contents_and_order(self, small_market):
        ind = small_market.indicators
        X = feature_tensor(ind, t=7, n=4)
        assert X.shape == (small_market.n_assets, 4, 5)
        # columns oldest -> newest: last column is row t-1
        assert np.array_equal(X[:, -1, :], ind[:, 6, :])
        assert np.array_equal(X[:, 0, :], ind[:, 3, :])

    def test_window_is_a_view(self, small_market):
        X = feature_tensor(small_market.indicators, t=7, n=4)
        assert np.shares_memory(X, small_market.indicators)
        with pytest.raises(ValueError):
            X[0, 0, 0] = 1.0

    def test_underflow_and_bounds(self, small_market):
        with pytest.raises(ValidationError, match="underflow"):
            feature_tensor(small_market.indicators, t=3, n=4)
        with pytest.raises(ValidationError):
            feature_tensor(small_market.indicators, t=10**6, n=4)
        with pytest.raises(ValidationError):
            feature_tensor(small_market.indicators, t=7, n=0)

    def test_market_helpers(self, small_market):
        assert np.array_equal(small_market.window(7, 4),
                              feature_tensor(small_market.indicators, 7, 4))
        assert np.array_equal(small_market.close_change(5),
                              small_market.indicators[:, 4, 0])


def test_indicator_csv_roundtrip(tmp_path, small_market):
    out = tmp_path / "ind.csv"
    name = small_market.assets[0]
    write_indicator_csv(small_market, name, out)
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "date," + ",".join(FEATURE_NAMES)
    assert len(lines) == small_market.indicators.shape[1] + 1
    first = lines[1].split(",")
    assert first[0] == small_market.dates[1].isoformat()
    assert [float(v) for v in first[1:]] == small_market.indicators[0, 0].tolist()
    with pytest.raises(ValidationError, match="unknown asset"):
        write_indicator_csv(small_market, "ghost", out)
