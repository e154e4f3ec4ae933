"""OHLCV ingestion, technical-indicator computation, and windowed feature tensors.

Each asset is loaded from one CSV (header row, ISO-8601 dates). Five
dimensionless rate features are derived per bar from the prior bar:
close-to-close change, open-over-prior-close, close-vs-high, close-vs-low,
and volume change. Multiple assets are aligned on the intersection of
their trading dates so the whole portfolio steps synchronously.

Indexing convention used throughout the package: bars of an aligned
dataset are numbered t = 0..T-1 by date. The first bar yields no
indicator row, so indicator row j corresponds to bar j+1 and the
feature window ending at bar t (the n most recent rows) is
``indicators[:, t-n:t, :]``, defined for t >= n.
"""

import csv
from dataclasses import dataclass, field
from datetime import date, datetime

import numpy as np

from .errors import InsufficientDataError, ParseError, ValidationError

__all__ = [
    "DEFAULT_SCHEMA",
    "FEATURE_NAMES",
    "MarketSeries",
    "IndicatorResult",
    "AlignedMarket",
    "load_series",
    "compute_indicators",
    "align_series",
    "feature_tensor",
    "write_indicator_csv",
]

DEFAULT_SCHEMA = {
    "date": "date",
    "open": "open",
    "high": "high",
    "low": "low",
    "close": "close",
    "volume": "volume",
}

# Feature order of the last tensor axis.
FEATURE_NAMES = ("kc", "ko", "kh", "kl", "kv")


@dataclass
class MarketSeries:
    """Validated, date-sorted OHLCV history for one asset."""

    name: str
    dates: list
    open: np.ndarray
    high: np.ndarray
    low: np.ndarray
    close: np.ndarray
    volume: np.ndarray

    def __len__(self) -> int:
        return len(self.dates)


@dataclass
class IndicatorResult:
    """Per-bar indicator rows for one asset.

    values: shape (T-1, 5), row j belongs to bar j+1, columns FEATURE_NAMES
    zero_volume_rows: row indices where the previous bar had zero volume
        (the volume-change entry was set to 0 there)
    """

    values: np.ndarray
    zero_volume_rows: list


@dataclass
class AlignedMarket:
    """Multi-asset dataset aligned on common trading dates.

    indicators has shape (I, T-1, 5); row j of an asset belongs to date
    index j+1. Arrays are frozen after construction and safe to share
    across workers.
    """

    assets: list
    dates: list
    closes: np.ndarray
    indicators: np.ndarray
    dropped_dates: dict = field(default_factory=dict)
    quality_flags: list = field(default_factory=list)

    def __post_init__(self):
        self.closes = np.ascontiguousarray(self.closes, dtype=np.float64)
        self.indicators = np.ascontiguousarray(self.indicators, dtype=np.float64)
        self.closes.flags.writeable = False
        self.indicators.flags.writeable = False

    @property
    def n_assets(self) -> int:
        return len(self.assets)

    @property
    def n_dates(self) -> int:
        return len(self.dates)

    def close_change(self, t: int) -> np.ndarray:
        """Close-to-close rate vector (length I) realized at date index t >= 1."""
        return self.indicators[:, t - 1, 0]

    def window(self, t: int, n: int) -> np.ndarray:
        """Feature tensor view for the window ending at date index t."""
        return feature_tensor(self.indicators, t, n)

    def year_of(self, t: int) -> int:
        return self.dates[t].year


def _parse_float(raw: str, column: str, path: str, line_no: int) -> float:
    try:
        return float(raw)
    except (TypeError, ValueError):
        raise ParseError(f"{path}:{line_no}: column '{column}' is not numeric: {raw!r}") from None


def load_series(path, schema: dict | None = None, name: str | None = None,
                min_rows: int = 3) -> MarketSeries:
    """Load and validate one asset's OHLCV CSV.

    schema maps the logical column names (date/open/high/low/close/volume)
    to the file's header names; omitted entries use the defaults. Raises
    ParseError with the offending line number for malformed rows,
    ValidationError for invariant violations (price ordering, duplicate or
    backwards dates), and InsufficientDataError for too-short files.
    """
    colmap = dict(DEFAULT_SCHEMA)
    if schema:
        unknown = set(schema) - set(DEFAULT_SCHEMA)
        if unknown:
            raise ValidationError(f"unknown schema keys: {sorted(unknown)}")
        colmap.update(schema)

    path = str(path)
    dates: list[date] = []
    cols = {k: [] for k in ("open", "high", "low", "close", "volume")}
    try:
        handle = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot open {path}: {exc}") from exc
    with handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames is None:
            raise ParseError(f"{path}: empty file, expected a header row")
        missing = [c for c in colmap.values() if c not in reader.fieldnames]
        if missing:
            raise ParseError(f"{path}: header is missing columns {missing}")
        for row in reader:
            line_no = reader.line_num
            raw_date = row[colmap["date"]]
            try:
                d = datetime.strptime(raw_date.strip(), "%Y-%m-%d").date()
            except (TypeError, ValueError, AttributeError):
                raise ParseError(f"{path}:{line_no}: bad date {raw_date!r}, expected YYYY-MM-DD") from None
            dates.append(d)
            for key in cols:
                cols[key].append(_parse_float(row[colmap[key]], colmap[key], path, line_no))

            o, h, l, c, v = (cols[k][-1] for k in ("open", "high", "low", "close", "volume"))
            if min(o, h, l, c) <= 0.0:
                raise ValidationError(f"{path}:{line_no}: prices must be positive")
            if v < 0.0:
                raise ValidationError(f"{path}:{line_no}: volume must be non-negative")
            if not (l <= o <= h and l <= c <= h):
                raise ValidationError(
                    f"{path}:{line_no}: price ordering violated "
                    f"(low={l}, open={o}, close={c}, high={h})"
                )
            if len(dates) > 1 and dates[-1] <= dates[-2]:
                raise ValidationError(
                    f"{path}:{line_no}: dates must be strictly increasing "
                    f"({dates[-2]} then {dates[-1]})"
                )

    if len(dates) < min_rows:
        raise InsufficientDataError(f"{path}: {len(dates)} rows, need at least {min_rows}")

    return MarketSeries(
        name=name or path,
        dates=dates,
        open=np.array(cols["open"]),
        high=np.array(cols["high"]),
        low=np.array(cols["low"]),
        close=np.array(cols["close"]),
        volume=np.array(cols["volume"]),
    )


def compute_indicators(series: MarketSeries) -> IndicatorResult:
    """Compute the five rate features for bars 1..T-1 of one series.

    Row j of the result belongs to bar j+1: close change and open ratio
    are relative to the prior close, the high/low features compare the
    close to the same bar's extremes, and the volume change is relative
    to the prior volume (0 with a quality flag when that volume is 0).
    """
    if len(series) < 2:
        raise InsufficientDataError(f"{series.name}: need at least 2 bars for indicators")
    if np.any(series.close <= 0) or np.any(series.high <= 0) or np.any(series.low <= 0):
        raise ValidationError(f"{series.name}: prices must be positive")

    prev_close = series.close[:-1]
    prev_volume = series.volume[:-1]
    kc = (series.close[1:] - prev_close) / prev_close
    ko = (series.open[1:] - prev_close) / prev_close
    kh = (series.close[1:] - series.high[1:]) / series.high[1:]
    kl = (series.close[1:] - series.low[1:]) / series.low[1:]

    zero_prev = prev_volume == 0.0
    safe_prev = np.where(zero_prev, 1.0, prev_volume)
    kv = np.where(zero_prev, 0.0, (series.volume[1:] - prev_volume) / safe_prev)

    values = np.column_stack([kc, ko, kh, kl, kv])
    return IndicatorResult(values=values, zero_volume_rows=list(np.flatnonzero(zero_prev)))


def align_series(series_list) -> AlignedMarket:
    """Align several series on the intersection of their trading dates.

    Dates missing from any asset are dropped portfolio-wide and recorded
    per asset in ``dropped_dates``. Indicators are computed once on the
    aligned bars and cached in the result.
    """
    if not series_list:
        raise ValidationError("align_series needs at least one series")
    names = [s.name for s in series_list]
    if len(set(names)) != len(names):
        raise ValidationError(f"duplicate asset names: {names}")

    common = set(series_list[0].dates)
    for s in series_list[1:]:
        common &= set(s.dates)
    if len(common) < 3:
        raise InsufficientDataError(
            f"only {len(common)} common dates across {names}; need at least 3"
        )
    common_dates = sorted(common)

    dropped = {}
    aligned = []
    for s in series_list:
        keep = np.array([d in common for d in s.dates])
        dropped[s.name] = [d for d in s.dates if d not in common]
        aligned.append(
            MarketSeries(
                name=s.name,
                dates=common_dates,
                open=s.open[keep],
                high=s.high[keep],
                low=s.low[keep],
                close=s.close[keep],
                volume=s.volume[keep],
            )
        )

    flags = []
    per_asset = []
    for s in aligned:
        result = compute_indicators(s)
        per_asset.append(result.values)
        for row in result.zero_volume_rows:
            flags.append((s.name, common_dates[row + 1], "zero_prev_volume"))

    return AlignedMarket(
        assets=names,
        dates=common_dates,
        closes=np.stack([s.close for s in aligned]),
        indicators=np.stack(per_asset),
        dropped_dates=dropped,
        quality_flags=flags,
    )


def feature_tensor(indicators: np.ndarray, t: int, n: int) -> np.ndarray:
    """Windowed feature view of shape (I, n, 5) ending at date index t.

    Column j of the window is date index t-n+1+j (oldest first). Returns
    a read-only view into ``indicators``; no data is copied.
    """
    if n < 1:
        raise ValidationError(f"window size must be >= 1, got {n}")
    if t < n:
        raise ValidationError(f"window underflow: t={t} < n={n}")
    if t > indicators.shape[1]:
        raise ValidationError(f"t={t} beyond available indicator rows ({indicators.shape[1]})")
    view = indicators[:, t - n : t, :]
    view.flags.writeable = False
    return view


def write_indicator_csv(market: AlignedMarket, asset: str, path) -> None:
    """Dump one asset's indicator rows as an audit CSV (date,kc,ko,kh,kl,kv)."""
    try:
        i = market.assets.index(asset)
    except ValueError:
        raise ValidationError(f"unknown asset {asset!r}; have {market.assets}") from None
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["date", *FEATURE_NAMES])
        for j in range(market.indicators.shape[1]):
            row = market.indicators[i, j]
            writer.writerow([market.dates[j + 1].isoformat(), *(repr(float(v)) for v in row)])
