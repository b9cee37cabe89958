"""Module for working with tables of hourly OHLCV bars

A bar table is a pandas DataFrame with a UTC DatetimeIndex named 'timestamp'
and columns 'open', 'high', 'low', 'close', 'volume'. The currency pair is
stored in the attrs as 'pair'.
"""
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import pandas as pd

from fxrl.base_classes import TimeTable
from fxrl.errors import ConfigError, DataError

logger = logging.getLogger(__name__)

COL_TIMESTAMP = 'timestamp'
PRICE_COLUMNS = ['open', 'high', 'low', 'close']
BAR_COLUMNS = PRICE_COLUMNS + ['volume']
CSV_COLUMNS = [COL_TIMESTAMP] + BAR_COLUMNS

DEFAULT_PAIR = 'EURUSD'

# Number of base-currency units in one standard lot
LOT_SIZE = 100_000

SYNTHETIC_REGIMES = ('random_walk', 'trend', 'mean_reverting')


def pip_size_for_pair(pair):
    """Return the pip size for a currency pair, 0.01 for JPY quotes"""
    if pair is not None and str(pair).upper().endswith('JPY'):
        return 0.01
    return 0.0001


@pd.api.extensions.register_dataframe_accessor("bars")
class BarTable(TimeTable):
    """Accessor for a table of OHLCV bars

    Duplicate timestamps are allowed until dedup_last is applied. Prices
    must be positive and each bar must satisfy low <= min(open, close) and
    high >= max(open, close).
    """
    def __init__(self, pandas_obj):
        super().__init__(pandas_obj)
        self._validate(pandas_obj)

    @staticmethod
    def _validate(obj):
        """Check the columns and the OHLC invariants"""
        TimeTable._validate(obj)

        missing = [c for c in BAR_COLUMNS if c not in obj.columns]
        if missing:
            raise DataError(f"Bar table is missing columns {missing}")

        values = obj[BAR_COLUMNS].to_numpy(dtype=float)
        if not np.isfinite(values).all():
            raise DataError("Bar table has non-finite values")

        if (obj[PRICE_COLUMNS] <= 0.0).any().any():
            raise DataError("Bar prices must be positive")

        if (obj['volume'] < 0.0).any():
            raise DataError("Bar volume must be non-negative")

        bad = ohlc_violations(obj)
        if bad.any():
            first = obj.index[bad.to_numpy()][0]
            raise DataError(f"OHLC invariant violated at {first}")

    @property
    def pair(self):
        """The currency pair, defaulting to EURUSD"""
        return self._obj.attrs.get('pair', DEFAULT_PAIR)

    @property
    def pip_size(self):
        """The pip size for this pair"""
        return pip_size_for_pair(self.pair)

    def log_returns(self):
        """One-bar log returns of the close"""
        return np.log(self._obj['close']).diff().rename('log_return')


def ohlc_violations(dataframe):
    """Return a boolean Series, True where a bar breaks the OHLC invariant"""
    top = dataframe[['open', 'close']].max(axis=1)
    bottom = dataframe[['open', 'close']].min(axis=1)
    return (dataframe['high'] < top) | (dataframe['low'] > bottom) | \
        (dataframe['high'] < dataframe['low'])


def from_df(dataframe, pair=DEFAULT_PAIR):
    """Create a validated bar table from a DataFrame

    :param dataframe: (pandas.DataFrame) with a 'timestamp' column or a
    datetime index, and the columns open, high, low, close, volume

    :param pair: (str) currency pair stored in attrs

    :returns: (pandas.DataFrame) compatible with the accessor bars, sorted
    ascending with a stable sort so duplicates keep their file order
    """
    if COL_TIMESTAMP in dataframe.columns:
        dataframe = dataframe.set_index(COL_TIMESTAMP)

    index = pd.DatetimeIndex(dataframe.index)
    index = index.tz_localize('UTC') if index.tz is None \
        else index.tz_convert('UTC')

    bars = pd.DataFrame(dataframe[BAR_COLUMNS].to_numpy(dtype=float),
                        index=pd.DatetimeIndex(index, name=COL_TIMESTAMP),
                        columns=BAR_COLUMNS)
    bars = bars.sort_index(kind='mergesort')
    bars.attrs['pair'] = pair

    _ = bars.bars.is_valid

    return bars


def load_ohlcv(path, pair=DEFAULT_PAIR):
    """Load hourly bars from a csv file

    :param path: (str) csv file with header timestamp,open,high,low,close,volume
    and ISO-8601 UTC timestamps

    :param pair: (str) currency pair stored in attrs

    :returns: (pandas.DataFrame) bar table sorted ascending. Duplicates are
    kept; use dedup_last to remove them.

    A row that does not parse raises DataError naming its line number.
    """
    try:
        raw = pd.read_csv(path, dtype=str, keep_default_na=False)
    except pd.errors.EmptyDataError as err:
        raise DataError(f"{path} is empty") from err

    if list(raw.columns) != CSV_COLUMNS:
        raise DataError(f"{path}: expected header {','.join(CSV_COLUMNS)}, " +
                        f"got {','.join(map(str, raw.columns))}")
    if raw.empty:
        raise DataError(f"{path} has no rows")

    timestamps = pd.to_datetime(raw[COL_TIMESTAMP], utc=True,
                                errors='coerce', format='ISO8601')
    numbers = raw[BAR_COLUMNS].apply(pd.to_numeric, errors='coerce')

    # Line 1 is the header so row i sits on line i + 2
    is_bad = timestamps.isna() | numbers.isna().any(axis=1) | \
        ~np.isfinite(numbers.to_numpy(dtype=float)).all(axis=1)
    if is_bad.any():
        i = int(np.flatnonzero(is_bad.to_numpy())[0])
        raise DataError(f"{path}: line {i + 2} does not parse: " +
                        f"{','.join(raw.iloc[i].astype(str))}")

    numbers.index = timestamps
    is_bad = ohlc_violations(numbers) | (numbers[PRICE_COLUMNS] <= 0).any(axis=1)
    if is_bad.any():
        i = int(np.flatnonzero(is_bad.to_numpy())[0])
        raise DataError(f"{path}: line {i + 2} breaks the OHLC schema: " +
                        f"{','.join(raw.iloc[i].astype(str))}")

    bars = from_df(numbers, pair=pair)
    logger.info("...%d bars loaded for %s", len(bars), pair)

    return bars


def from_csv(path, pair=DEFAULT_PAIR):
    """Load bars and drop duplicate timestamps, keeping the last"""
    return dedup_last(load_ohlcv(path, pair))


def to_csv(bars, path):
    """Write a bar table with the canonical csv header"""
    out = bars[BAR_COLUMNS].copy()
    out.index = out.index.strftime('%Y-%m-%dT%H:%M:%SZ')
    out.index.name = COL_TIMESTAMP
    out.to_csv(path, float_format='%.10g')


def dedup_last(bars):
    """Keep one bar per timestamp, the last one in file order

    The input must be sorted with a stable sort, as load_ohlcv does.
    """
    deduped = bars[~bars.index.duplicated(keep='last')].copy()
    deduped.attrs.update(bars.attrs)
    n_dropped = len(bars) - len(deduped)
    if n_dropped:
        logger.info("...%d duplicate bars dropped", n_dropped)
    return deduped


@dataclass
class DatasetSplit:
    """A chronological train/heldout split

    The feature members are filled by fxrl.features.build_dataset.
    """
    train: pd.DataFrame
    heldout: pd.DataFrame
    split_index: int
    train_features: Optional[pd.DataFrame] = None
    heldout_features: Optional[pd.DataFrame] = None
    scaler: Optional[object] = field(default=None, repr=False)


def chronological_split(bars, train_fraction=0.8):
    """Split bars in time order, without shuffling

    :param bars: (pandas.DataFrame) deduplicated bar table

    :param train_fraction: (float) in (0, 1]; the split index is
    floor(n * train_fraction)

    :returns: (DatasetSplit)
    """
    if not 0.0 < train_fraction <= 1.0:
        raise ConfigError("data.train_fraction must be in (0, 1], " +
                          f"got {train_fraction}")
    if len(bars) < 2:
        raise DataError(f"Need at least 2 bars to split, got {len(bars)}")

    split_index = int(np.floor(len(bars) * train_fraction))
    if split_index < 1:
        raise DataError(f"train_fraction {train_fraction} leaves no " +
                        "training bars")

    train = bars.iloc[:split_index].copy()
    heldout = bars.iloc[split_index:].copy()
    train.attrs.update(bars.attrs)
    heldout.attrs.update(bars.attrs)

    return DatasetSplit(train=train, heldout=heldout, split_index=split_index)


@dataclass
class SyntheticSpec:
    """Regime description for generated bars

    drift and volatility are per-bar in log-price units. mean_reversion is the
    pull per bar towards log(long_run_price) in the mean_reverting regime.
    """
    regime: str = 'trend'
    start: str = '2022-01-03T00:00:00Z'
    start_price: float = 1.10
    drift: float = 2.0e-5
    volatility: float = 5.0e-4
    mean_reversion: float = 0.05
    long_run_price: Optional[float] = None
    gap_volatility: float = 1.0e-4
    range_volatility: float = 3.0e-4
    volume_mean: float = 1000.0
    pair: str = DEFAULT_PAIR

    @classmethod
    def from_dict(cls, values):
        """Build from a config mapping, unknown keys raise TypeError"""
        return cls(**dict(values))


def trading_hours(start, n_bars):
    """Hourly UTC timestamps from start, skipping Saturdays and Sundays"""
    start = pd.Timestamp(start)
    start = start.tz_localize('UTC') if start.tz is None \
        else start.tz_convert('UTC')

    hours = pd.DatetimeIndex([], tz='UTC')
    n_hours = n_bars * 7 // 5 + 72
    while len(hours) < n_bars:
        hours = pd.date_range(start, periods=n_hours, freq='h', tz='UTC')
        hours = hours[hours.dayofweek < 5]
        n_hours *= 2

    return pd.DatetimeIndex(hours[:n_bars], name=COL_TIMESTAMP)


def min_synthetic_bars(warmup, window, train_fraction=1.0):
    """Fewest bars whose train split still holds one full episode step

    :param warmup: (int) leading bars dropped by feature computation

    :param window: (int) observation window

    :param train_fraction: (float) chronological split fraction
    """
    need = warmup + window + 1
    n_bars = int(np.ceil(need / train_fraction))
    while np.floor(n_bars * train_fraction) < need:
        n_bars += 1
    return n_bars


def generate_synthetic(spec, n_bars, seed, min_bars=2):
    """Generate a deterministic bar table

    :param spec: (SyntheticSpec or dict) regime description

    :param n_bars: (int) number of bars

    :param seed: (int, SeedSequence or numpy Generator) random source

    :param min_bars: (int) smallest acceptable n_bars, see min_synthetic_bars

    :returns: (pandas.DataFrame) bar table

    The same random draws are taken whatever the regime, so a seed gives the
    same noise under every regime.
    """
    if isinstance(spec, dict):
        spec = SyntheticSpec.from_dict(spec)
    if spec.regime not in SYNTHETIC_REGIMES:
        raise ConfigError(f"Unknown regime '{spec.regime}', expected one of " +
                          f"{SYNTHETIC_REGIMES}")
    min_bars = max(min_bars, 2)
    if n_bars < min_bars:
        raise ConfigError(f"data.synthetic.n_bars is {n_bars}, need at least " +
                          f"{min_bars} to cover the warm-up and one episode")

    rng = np.random.default_rng(seed)
    shocks = rng.standard_normal(n_bars)
    gaps = rng.standard_normal(n_bars)
    ranges = np.abs(rng.standard_normal((2, n_bars)))
    volume = rng.gamma(2.0, spec.volume_mean / 2.0, n_bars)

    log_start = np.log(spec.start_price)
    if spec.regime == 'random_walk':
        log_close = log_start + np.cumsum(spec.drift + spec.volatility * shocks)
    elif spec.regime == 'trend':
        log_close = (log_start + spec.drift * np.arange(1, n_bars + 1) +
                     spec.volatility * shocks)
    else:
        log_mean = np.log(spec.long_run_price or spec.start_price)
        log_close = np.empty(n_bars)
        level = log_start
        for i in range(n_bars):
            level = (level + spec.mean_reversion * (log_mean - level) +
                     spec.volatility * shocks[i])
            log_close[i] = level

    close = np.exp(log_close)
    prev_close = np.concatenate([[spec.start_price], close[:-1]])
    open_ = prev_close * np.exp(spec.gap_volatility * gaps)
    high = np.maximum(open_, close) * np.exp(spec.range_volatility * ranges[0])
    low = np.minimum(open_, close) * np.exp(-spec.range_volatility * ranges[1])

    bars = pd.DataFrame({'open': open_, 'high': high, 'low': low,
                         'close': close, 'volume': volume},
                        index=trading_hours(spec.start, n_bars))
    bars.attrs['pair'] = spec.pair

    _ = bars.bars.is_valid

    return bars
