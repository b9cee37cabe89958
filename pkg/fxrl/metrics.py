"""Performance metrics over equity curves

An equity curve is a pandas Series of equity indexed by UTC timestamp with
the starting capital in attrs['initial_capital']. The first sample is the
mark at reset. Ratios use a zero risk-free rate and hourly annualization.
"""
import logging
import math
import os
from dataclasses import asdict, dataclass, fields

import numpy as np
import pandas as pd

from fxrl.base_classes import TimeTable
from fxrl.errors import DataError

logger = logging.getLogger(__name__)

# Hourly bars on a 24/5 calendar
PERIODS_PER_YEAR = 24 * 252

CURVE_COLUMNS = ['step', 'timestamp', 'equity']
REPORT_KEY = 'label'


def _annualized_return(ratio, n_periods):
    """Compound a total growth ratio to a yearly rate"""
    if n_periods < 1:
        return 0.0
    if ratio <= 0.0:
        return -1.0
    with np.errstate(over='ignore'):
        return float(np.expm1(PERIODS_PER_YEAR / n_periods * np.log(ratio)))


@pd.api.extensions.register_series_accessor("equity")
class EquityCurve(TimeTable):
    """An equity curve with its risk and return statistics"""
    @staticmethod
    def _validate(obj):
        """Check it is a valid equity curve"""
        TimeTable._validate(obj)
        if len(obj) < 1:
            raise DataError("An equity curve needs at least one sample")
        if not np.isfinite(obj.to_numpy(dtype=np.float64)).all():
            raise DataError("Equity curve has non-finite values")
        if obj.iloc[0] <= 0.0:
            raise DataError(f"Equity curve starts at {obj.iloc[0]}, " +
                            "should be positive")

    @property
    def initial_capital(self):
        """Starting capital, the first sample when attrs do not hold it"""
        return self._obj.attrs.get('initial_capital', float(self._obj.iloc[0]))

    @property
    def n_steps(self):
        """Number of steps after the reset mark"""
        return len(self._obj) - 1

    @property
    def returns(self):
        """Per-step simple returns"""
        values = self._obj.to_numpy(dtype=np.float64)
        return values[1:] / values[:-1] - 1.0

    @property
    def cumulative_return(self):
        return float(self._obj.iloc[-1] / self._obj.iloc[0] - 1.0)

    @property
    def annualized_return(self):
        return _annualized_return(self._obj.iloc[-1] / self._obj.iloc[0],
                                  self.n_steps)

    @property
    def annualized_vol(self):
        returns = self.returns
        if len(returns) == 0:
            return 0.0
        return float(np.std(returns) * math.sqrt(PERIODS_PER_YEAR))

    @property
    def sharpe(self):
        """Annualized mean over stdev of returns, 0 when flat"""
        returns = self.returns
        if len(returns) == 0:
            return 0.0
        std = np.std(returns)
        if std == 0.0:
            return 0.0
        return float(np.mean(returns) / std * math.sqrt(PERIODS_PER_YEAR))

    @property
    def sortino(self):
        """Annualized mean over downside deviation, 0 without losses"""
        returns = self.returns
        if len(returns) == 0:
            return 0.0
        downside = math.sqrt(np.mean(np.minimum(returns, 0.0) ** 2))
        if downside == 0.0:
            return 0.0
        return float(np.mean(returns) / downside * math.sqrt(PERIODS_PER_YEAR))

    @property
    def drawdown(self):
        """Relative decline from the running peak at each sample"""
        peak = self._obj.cummax()
        return (peak - self._obj) / peak

    @property
    def max_drawdown(self):
        return float(self.drawdown.max())


def from_values(equity, timestamps, initial_capital=None):
    """Build a validated equity curve

    :param equity: (sequence of float) reset mark then one mark per step
    :param timestamps: (sequence) matching UTC timestamps
    :param initial_capital: (float) optional, defaults to the first mark
    """
    index = pd.DatetimeIndex(pd.to_datetime(list(timestamps), utc=True),
                             name='timestamp')
    curve = pd.Series(np.asarray(equity, dtype=np.float64), index=index,
                      name='equity')
    curve.attrs['initial_capital'] = float(
        curve.iloc[0] if initial_capital is None else initial_capital)
    assert curve.equity.is_valid
    return curve


class RunningMetrics:
    """Single-pass return and drawdown statistics, fed one mark at a time

    Mean and variance of returns use Welford's update.
    """
    def __init__(self, initial_equity):
        if initial_equity <= 0.0:
            raise DataError("Initial equity must be positive")
        self.first = float(initial_equity)
        self.last = float(initial_equity)
        self.peak = float(initial_equity)
        self.max_drawdown = 0.0
        self.n = 0
        self.mean = 0.0
        self.m2 = 0.0
        self.downside_sq = 0.0

    def update(self, equity):
        r = equity / self.last - 1.0
        self.n += 1
        delta = r - self.mean
        self.mean += delta / self.n
        self.m2 += delta * (r - self.mean)
        self.downside_sq += min(r, 0.0) ** 2
        self.last = float(equity)
        self.peak = max(self.peak, self.last)
        self.max_drawdown = max(self.max_drawdown,
                                (self.peak - self.last) / self.peak)

    @property
    def std(self):
        return math.sqrt(self.m2 / self.n) if self.n else 0.0

    @property
    def cumulative_return(self):
        return self.last / self.first - 1.0

    @property
    def annualized_return(self):
        return _annualized_return(self.last / self.first, self.n)

    @property
    def annualized_vol(self):
        return self.std * math.sqrt(PERIODS_PER_YEAR)

    @property
    def sharpe(self):
        std = self.std
        if std == 0.0:
            return 0.0
        return self.mean / std * math.sqrt(PERIODS_PER_YEAR)

    @property
    def sortino(self):
        if self.n == 0 or self.downside_sq == 0.0:
            return 0.0
        downside = math.sqrt(self.downside_sq / self.n)
        return self.mean / downside * math.sqrt(PERIODS_PER_YEAR)


@dataclass
class MetricsReport:
    """Evaluation summary of one rollout"""
    label: str = ''
    cumulative_return: float = 0.0
    annualized_return: float = 0.0
    annualized_vol: float = 0.0
    sharpe: float = 0.0
    sortino: float = 0.0
    max_drawdown: float = 0.0
    win_rate: float = 0.0
    turnover: float = 0.0
    trade_count: int = 0
    liquidation_count: int = 0
    avg_pyramid_depth: float = 0.0
    avg_martingale_depth: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.max_drawdown <= 1.0:
            raise DataError(f"max_drawdown {self.max_drawdown} outside [0, 1]")
        if not 0.0 <= self.win_rate <= 1.0:
            raise DataError(f"win_rate {self.win_rate} outside [0, 1]")

    def as_dict(self):
        return asdict(self)


REPORT_COLUMNS = [f.name for f in fields(MetricsReport)]


def _step_frame(step_log):
    if isinstance(step_log, pd.DataFrame):
        return step_log
    return pd.DataFrame(list(step_log))


def compute_metrics(curve, trades=(), step_log=(), label=''):
    """Compute the metric battery of a rollout

    :param curve: (pandas.Series) equity curve, at least two samples
    :param trades: (list of TradeRecord) closed and open trades
    :param step_log: (list of dict or DataFrame) step records with
    traded_lots, liquidation_event, pyramid_depth and martingale_depth

    :returns: (MetricsReport)
    """
    if len(curve) < 2:
        raise DataError(f"Need at least 2 equity samples, got {len(curve)}")
    assert curve.equity.is_valid

    running = RunningMetrics(float(curve.iloc[0]))
    for equity in curve.iloc[1:]:
        running.update(float(equity))

    trades = list(trades)
    wins = sum(1 for trade in trades if trade.total_pnl > 0.0)

    steps = _step_frame(step_log)
    if len(steps):
        turnover = float(steps['traded_lots'].sum())
        liquidations = int(steps['liquidation_event'].astype(bool).sum())
        avg_pyramid = float(steps['pyramid_depth'].mean())
        avg_martingale = float(steps['martingale_depth'].mean())
    else:
        turnover, liquidations, avg_pyramid, avg_martingale = 0.0, 0, 0.0, 0.0

    return MetricsReport(
        label=label,
        cumulative_return=running.cumulative_return,
        annualized_return=running.annualized_return,
        annualized_vol=running.annualized_vol,
        sharpe=running.sharpe,
        sortino=running.sortino,
        max_drawdown=running.max_drawdown,
        win_rate=wins / len(trades) if trades else 0.0,
        turnover=turnover,
        trade_count=len(trades),
        liquidation_count=liquidations,
        avg_pyramid_depth=avg_pyramid,
        avg_martingale_depth=avg_martingale)


def write_curve(curve, path):
    """Write the per-step marks as step,timestamp,equity

    The reset mark is the curve's initial capital and is not written, so the
    file has one row per step.
    """
    body = curve.iloc[1:]
    frame = pd.DataFrame({
        'step': np.arange(1, len(curve)),
        'timestamp': body.index.strftime('%Y-%m-%dT%H:%M:%SZ'),
        'equity': body.to_numpy(dtype=np.float64)})
    frame.to_csv(path, index=False, float_format='%.17g')


def read_curve(path, initial_capital):
    """Rebuild an equity curve from a curve file and its starting capital"""
    frame = pd.read_csv(path, float_precision='round_trip')
    if list(frame.columns) != CURVE_COLUMNS:
        raise DataError(f"{path}: expected columns {CURVE_COLUMNS}")
    timestamps = pd.to_datetime(frame['timestamp'], utc=True)
    if len(frame):
        start = timestamps.iloc[0] - pd.Timedelta(hours=1)
    else:
        start = pd.Timestamp(0, tz='UTC')
    return from_values([initial_capital] + list(frame['equity']),
                       [start] + list(timestamps), initial_capital)


def _plot_curves(curves, path):
    import matplotlib
    matplotlib.use('Agg')
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(10, 5))
    for label, curve in curves.items():
        ax.plot(curve.index, curve.to_numpy(), label=label, linewidth=1.0)
    ax.set_xlabel('timestamp')
    ax.set_ylabel('equity')
    ax.legend(loc='best')
    fig.autofmt_xdate()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def emit_report(reports, dest, curves=None, plot=False,
                filename='metrics_report.csv'):
    """Write reports as one CSV keyed by label, plus curve files

    :param reports: (list of MetricsReport) at least one, unique labels
    :param dest: (str) output directory, created when missing
    :param curves: (dict) label -> equity curve, written to curves/<label>.csv
    :param plot: (bool) also write equity_curves.png

    :returns: (dict) name -> written path
    """
    reports = list(reports)
    if not reports:
        raise DataError("No reports to write")
    labels = [r.label for r in reports]
    if len(set(labels)) != len(labels):
        raise DataError(f"Report labels are not unique: {labels}")

    os.makedirs(dest, exist_ok=True)
    written = {'report': os.path.join(dest, filename)}
    table = pd.DataFrame([r.as_dict() for r in reports], columns=REPORT_COLUMNS)
    table.to_csv(written['report'], index=False, float_format='%.17g')

    curves = curves or {}
    if curves:
        os.makedirs(os.path.join(dest, 'curves'), exist_ok=True)
    for label, curve in curves.items():
        path = os.path.join(dest, 'curves', f'{label}.csv')
        write_curve(curve, path)
        written[f'curve:{label}'] = path

    if plot and curves:
        written['plot'] = os.path.join(dest, 'equity_curves.png')
        _plot_curves(curves, written['plot'])

    logger.info("...%d reports written to %s", len(reports), dest)
    return written


def read_report(path):
    """Reload a metrics report CSV

    :returns: (list of MetricsReport)
    """
    table = pd.read_csv(path, dtype={REPORT_KEY: str},
                        keep_default_na=False,
                        float_precision='round_trip')
    if list(table.columns) != REPORT_COLUMNS:
        raise DataError(f"{path}: expected columns {REPORT_COLUMNS}")
    reports = []
    for row in table.to_dict(orient='records'):
        row['trade_count'] = int(row['trade_count'])
        row['liquidation_count'] = int(row['liquidation_count'])
        reports.append(MetricsReport(**row))
    return reports
