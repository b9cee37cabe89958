"""Feature engineering and train-only scaling

Features are computed causally from a bar table: every row at time t uses
bars up to and including t. Column names live in two namespaces, 'tech.' for
the technical block and 'micro.' for the microstructure block, always in the
order returned by feature_names.
"""
import logging
import warnings
from dataclasses import dataclass, field
from typing import Tuple

import numpy as np
import pandas as pd

from fxrl.bars import COL_TIMESTAMP, DatasetSplit, chronological_split
from fxrl.errors import ConfigError, DataError

logger = logging.getLogger(__name__)

# Longest indicator lookback in bars
LONGEST_LOOKBACK = 50

# Default observation window in bars
DEFAULT_WINDOW = 24

SCALER_EPS = 1.0e-8

MACD_COMPONENTS = ('line', 'signal', 'hist')
BOLLINGER_COMPONENTS = ('mid', 'upper', 'lower')

# UTC session labels
SESSION_ASIA = 0
SESSION_LONDON = 1
SESSION_NEW_YORK = 2
SESSION_OFF = 3


def warmup_horizon(window=DEFAULT_WINDOW):
    """Number of leading bars discarded after feature computation"""
    return LONGEST_LOOKBACK + window


@dataclass(frozen=True)
class FeatureConfig:
    """Which optional feature columns to emit and their horizons"""
    macd_components: Tuple[str, ...] = MACD_COMPONENTS
    bollinger_components: Tuple[str, ...] = BOLLINGER_COMPONENTS
    price_change_horizon: int = 1
    volatility_window: int = 20

    def __post_init__(self):
        for name, allowed in [('macd_components', MACD_COMPONENTS),
                              ('bollinger_components', BOLLINGER_COMPONENTS)]:
            chosen = tuple(getattr(self, name))
            unknown = [c for c in chosen if c not in allowed]
            if unknown:
                raise ConfigError(f"data.features.{name}: unknown {unknown}")
            # Keep canonical order whatever order the config lists them in
            object.__setattr__(self, name,
                               tuple(c for c in allowed if c in chosen))

        if self.price_change_horizon < 1:
            raise ConfigError("data.features.price_change_horizon must be >= 1")
        if not 2 <= self.volatility_window <= LONGEST_LOOKBACK:
            raise ConfigError("data.features.volatility_window must be in " +
                              f"[2, {LONGEST_LOOKBACK}]")

    @classmethod
    def from_dict(cls, values=None):
        """Build from the data.features config section"""
        values = dict(values or {})
        for key in ('macd_components', 'bollinger_components'):
            if key in values:
                values[key] = tuple(values[key])
        return cls(**values)


def feature_names(config=None):
    """Return the canonical ordered list of feature names

    :param config: (FeatureConfig) optional, defaults give 19 names
    """
    config = config or FeatureConfig()
    vol = config.volatility_window

    names = ['tech.sma_10', 'tech.sma_20', 'tech.sma_50',
             'tech.ema_10', 'tech.ema_20', 'tech.ema_50',
             'tech.rsi_14']
    names += [f'tech.macd_{c}' for c in config.macd_components]
    names += [f'tech.bb_{c}' for c in config.bollinger_components]
    names += ['tech.log_return', f'tech.rolling_vol_{vol}']
    names += ['micro.spread_proxy',
              f'micro.price_change_{config.price_change_horizon}',
              f'micro.realized_vol_{vol}',
              'micro.session']
    return names


def sma(series, window):
    """Simple moving average"""
    return series.rolling(window=window).mean()


def ema(series, window):
    """Exponential moving average with span=window, seeded at the first value"""
    return series.ewm(span=window, adjust=False).mean()


def rsi(series, window=14):
    """Relative strength index with Wilder smoothing

    A window with neither gains nor losses maps to 50.
    """
    delta = series.diff()
    gain = delta.clip(lower=0.0).ewm(alpha=1.0 / window, adjust=False).mean()
    loss = (-delta).clip(lower=0.0).ewm(alpha=1.0 / window,
                                       adjust=False).mean()

    with np.errstate(divide='ignore', invalid='ignore'):
        values = 100.0 - 100.0 / (1.0 + gain.to_numpy() / loss.to_numpy())
    values = np.where(loss.to_numpy() == 0.0,
                      np.where(gain.to_numpy() == 0.0, 50.0, 100.0), values)
    values[delta.isna().to_numpy()] = np.nan

    return pd.Series(values, index=series.index, name='rsi')


def macd(series, fast=12, slow=26, signal=9):
    """Return the MACD line, signal line and histogram"""
    line = ema(series, fast) - ema(series, slow)
    signal_line = ema(line, signal)
    return line, signal_line, line - signal_line


def bollinger(series, window=20, num_std=2.0):
    """Return the Bollinger mid, upper and lower bands, population stdev"""
    mid = sma(series, window)
    std = series.rolling(window=window).std(ddof=0)
    return mid, mid + num_std * std, mid - num_std * std


def session_label(index):
    """Map UTC hours to Asia, London, New York or off-session labels"""
    hour = np.asarray(index.hour)
    labels = np.full(len(hour), SESSION_OFF)
    labels[(hour >= 22) | (hour < 7)] = SESSION_ASIA
    labels[(hour >= 7) & (hour < 13)] = SESSION_LONDON
    labels[(hour >= 13) & (hour < 21)] = SESSION_NEW_YORK
    return labels


def compute_features(bars, config=None, warmup=None):
    """Compute the canonical feature table from bars

    :param bars: (pandas.DataFrame) bar table

    :param config: (FeatureConfig) which optional columns to emit

    :param warmup: (int) leading rows to discard, defaults to
    warmup_horizon()

    :returns: (pandas.DataFrame) indexed by timestamp with columns
    feature_names(config), unscaled
    """
    config = config or FeatureConfig()
    warmup = warmup_horizon() if warmup is None else warmup
    if len(bars) <= warmup:
        raise DataError(f"Need more than {warmup} bars for features, " +
                        f"got {len(bars)}")

    close = bars['close']
    log_return = np.log(close).diff()
    vol = config.volatility_window
    horizon = config.price_change_horizon

    macd_cols = dict(zip(MACD_COMPONENTS, macd(close)))
    bb_cols = dict(zip(BOLLINGER_COMPONENTS, bollinger(close)))

    columns = [sma(close, 10), sma(close, 20), sma(close, 50),
               ema(close, 10), ema(close, 20), ema(close, 50),
               rsi(close, 14)]
    columns += [macd_cols[c] for c in config.macd_components]
    columns += [bb_cols[c] for c in config.bollinger_components]
    columns += [log_return,
                log_return.rolling(window=vol).std(ddof=0),
                (bars['high'] - bars['low']) / close,
                close / close.shift(horizon) - 1.0,
                np.sqrt((log_return ** 2).rolling(window=vol).sum()),
                pd.Series(session_label(bars.index) / 3.0, index=bars.index)]

    features = pd.concat([c.rename(None) for c in columns], axis=1)
    features.columns = feature_names(config)
    features.index.name = COL_TIMESTAMP

    # Forward fill only, then drop the warm-up rows
    features = features.ffill().iloc[warmup:]
    n_missing = int(features.isna().any(axis=1).sum())
    if n_missing:
        warnings.warn(f"{n_missing} leading feature rows still missing " +
                      "after forward fill, dropped")
        first_ok = features.notna().all(axis=1).to_numpy().argmax()
        features = features.iloc[first_ok:]

    return features.astype(np.float64)


@dataclass(frozen=True)
class ScalerParams:
    """Per-feature mean and floored population stdev"""
    names: Tuple[str, ...]
    mean: np.ndarray = field(repr=False)
    stdev: np.ndarray = field(repr=False)

    def __post_init__(self):
        mean = np.array(self.mean, dtype=np.float64)
        stdev = np.array(self.stdev, dtype=np.float64)
        mean.setflags(write=False)
        stdev.setflags(write=False)
        object.__setattr__(self, 'names', tuple(self.names))
        object.__setattr__(self, 'mean', mean)
        object.__setattr__(self, 'stdev', stdev)

    @property
    def width(self):
        """Number of features"""
        return len(self.names)

    def to_bytes(self):
        """Byte image of the parameters, used to compare fits"""
        return self.mean.tobytes() + self.stdev.tobytes() + \
            '\n'.join(self.names).encode()


def fit_scaler(train_rows, eps=SCALER_EPS):
    """Fit per-feature moments on the training rows only

    :param train_rows: (pandas.DataFrame) unscaled feature rows

    :returns: (ScalerParams) with stdev floored at eps
    """
    if len(train_rows) < 2:
        raise DataError("Need at least 2 rows to fit a scaler, " +
                        f"got {len(train_rows)}")

    values = train_rows.to_numpy(dtype=np.float64)
    mean = values.mean(axis=0)
    stdev = np.maximum(values.std(axis=0, ddof=0), eps)

    # Constant columns centre exactly on their value
    is_constant = np.ptp(values, axis=0) == 0.0
    mean = np.where(is_constant, values[0], mean)

    return ScalerParams(names=tuple(train_rows.columns), mean=mean,
                        stdev=stdev)


def _check_width(rows, params):
    """Check the rows carry the scaler's columns in order"""
    if tuple(rows.columns) != params.names:
        raise DataError(f"Feature columns {list(rows.columns)} do not " +
                        f"match scaler columns {list(params.names)}")


def apply_scaler(rows, params):
    """Scale rows as (value - mean) / stdev with fitted params"""
    _check_width(rows, params)
    return (rows - params.mean) / params.stdev


def unscale(rows, params):
    """Inverse of apply_scaler"""
    _check_width(rows, params)
    return rows * params.stdev + params.mean


def write_scaler(params, path):
    """Write the scaler as name,mean,stdev lines"""
    with open(path, 'w', encoding='utf-8') as file:
        file.write('name,mean,stdev\n')
        for name, mean, stdev in zip(params.names, params.mean, params.stdev):
            file.write(f'{name},{float(mean)!r},{float(stdev)!r}\n')


def read_scaler(path):
    """Read a scaler written by write_scaler"""
    table = pd.read_csv(path, dtype={'name': str, 'mean': np.float64,
                                     'stdev': np.float64})
    if list(table.columns) != ['name', 'mean', 'stdev']:
        raise DataError(f"{path} is not a scaler file")
    return ScalerParams(names=tuple(table['name']),
                        mean=table['mean'].to_numpy(),
                        stdev=table['stdev'].to_numpy())


def write_features(rows, path):
    """Write a feature table as csv with the canonical header"""
    out = rows.copy()
    out.index = out.index.strftime('%Y-%m-%dT%H:%M:%SZ')
    out.index.name = COL_TIMESTAMP
    out.to_csv(path, float_format='%.17g')


@dataclass
class MarketSlice:
    """Bars and scaled features sharing one index, ready for an environment

    warmup_close holds the closes of the bars dropped ahead of the slice.
    """
    bars: pd.DataFrame
    features: pd.DataFrame
    raw_features: pd.DataFrame = field(default=None, repr=False)
    warmup_close: pd.Series = field(default=None, repr=False)

    def __post_init__(self):
        if not self.bars.index.equals(self.features.index):
            raise DataError("Bars and features are not aligned")
        if self.warmup_close is None:
            self.warmup_close = self.bars['close'].iloc[:0]
        elif len(self.warmup_close) and len(self.bars) and \
                self.warmup_close.index[-1] >= self.bars.index[0]:
            raise DataError("Warm-up closes must precede the slice")

    def close_history(self):
        """Warm-up closes followed by the slice closes

        :returns: (pandas.Series, int) closes and the position of the first
        slice row in them
        """
        close = pd.concat([self.warmup_close, self.bars['close']])
        return close, len(self.warmup_close)

    @property
    def n_bars(self):
        """Number of aligned rows"""
        return len(self.bars)

    @property
    def d_feat(self):
        """Number of feature columns"""
        return self.features.shape[1]

    @property
    def feature_names(self):
        """Feature column names in canonical order"""
        return list(self.features.columns)


def prepare_slice(bars, scaler, config=None, warmup=None):
    """Compute features on bars and scale them with frozen params

    :returns: (MarketSlice) with the warm-up bars dropped
    """
    raw = compute_features(bars, config, warmup)
    scaled = apply_scaler(raw, scaler)
    aligned = bars.loc[raw.index, ['open', 'high', 'low', 'close', 'volume']]
    aligned.attrs.update(bars.attrs)
    warmup_close = bars['close'].loc[bars.index < raw.index[0]] \
        if len(raw) else None
    return MarketSlice(bars=aligned, features=scaled, raw_features=raw,
                       warmup_close=warmup_close)


def build_dataset(bars, train_fraction=0.8, config=None,
                  window=DEFAULT_WINDOW, leak_heldout=False):
    """Split, compute features and scale with train-only moments

    :param bars: (pandas.DataFrame) deduplicated bar table

    :param train_fraction: (float) chronological split fraction

    :param config: (FeatureConfig) feature options

    :param window: (int) observation window, sets the warm-up horizon

    :param leak_heldout: (bool) fit the scaler on train and heldout together.
    Only for sensitivity checks of the leakage test.

    :returns: (DatasetSplit) with train_features, heldout_features, scaler
    """
    config = config or FeatureConfig()
    warmup = warmup_horizon(window)
    split = chronological_split(bars, train_fraction)

    train_raw = compute_features(split.train, config, warmup)
    heldout_raw = None
    if len(split.heldout):
        # Prepend the last warm-up bars of train, then discard them again
        extended = pd.concat([split.train.iloc[-warmup:], split.heldout])
        heldout_raw = compute_features(extended, config, warmup)

    if leak_heldout and heldout_raw is not None:
        scaler = fit_scaler(pd.concat([train_raw, heldout_raw]))
    else:
        scaler = fit_scaler(train_raw)

    split.scaler = scaler
    split.train_features = apply_scaler(train_raw, scaler)
    if heldout_raw is not None:
        split.heldout_features = apply_scaler(heldout_raw, scaler)

    logger.info("...dataset built: %d train rows, %d heldout rows, d_feat %d",
                len(train_raw), 0 if heldout_raw is None else len(heldout_raw),
                scaler.width)

    return split


def market_slice(split, member='train'):
    """Return the aligned bars and features of one member of a split"""
    if member not in ('train', 'heldout'):
        raise ConfigError(f"Unknown split member '{member}'")

    bars = getattr(split, member)
    features = getattr(split, f'{member}_features')
    if features is None or not len(features):
        raise DataError(f"No {member} features in the dataset")

    aligned = bars.loc[features.index]
    aligned.attrs.update(bars.attrs)
    raw = unscale(features, split.scaler)
    # Heldout warm-up bars are the tail of train
    history = pd.concat([split.train['close'], split.heldout['close']])
    warmup_close = history.loc[history.index < features.index[0]]
    return MarketSlice(bars=aligned, features=features, raw_features=raw,
                       warmup_close=warmup_close)
