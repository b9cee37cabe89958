"""Hand-built markets shared by the tests"""
import numpy as np
import pandas as pd

from fxrl.bars import trading_hours
from fxrl.config import resolve_config
from fxrl.features import MarketSlice

WINDOW = 4

FRICTIONLESS = ['environment.friction.spread_pips=0.0',
                'environment.friction.slippage_pips=0.0',
                'environment.friction.commission_per_lot=0.0',
                'environment.friction.long_swap_pips_per_day=0.0',
                'environment.friction.short_swap_pips_per_day=0.0']


def crafted_market(close, open_=None, d_feat=3, warmup=0):
    """Bars from explicit prices and features counting up by row

    The first warmup closes become the warm-up ahead of the slice.
    """
    close = np.asarray(close, dtype=np.float64)
    open_ = close.copy() if open_ is None else np.asarray(open_, np.float64)
    index = trading_hours('2022-01-03', len(close))
    warmup_close = pd.Series(close[:warmup], index=index[:warmup])
    close, open_, index = close[warmup:], open_[warmup:], index[warmup:]
    bars = pd.DataFrame({'open': open_, 'high': np.maximum(open_, close),
                         'low': np.minimum(open_, close), 'close': close,
                         'volume': 1.0}, index=index)
    features = pd.DataFrame(np.repeat(np.arange(len(close), dtype=float),
                                      d_feat).reshape(len(close), d_feat),
                            index=index,
                            columns=[f'tech.f{i}' for i in range(d_feat)])
    return MarketSlice(bars=bars, features=features,
                       warmup_close=warmup_close)


def crafted_config(*assignments):
    return resolve_config(assignments=[f'environment.window={WINDOW}'] +
                          list(assignments))


class ScriptedPolicy:
    """Plays a fixed action at given cursors, HOLD elsewhere"""
    name = 'scripted'

    def __init__(self, script):
        self.script = dict(script)

    def reset(self, env):
        pass

    def act(self, obs, env):
        return self.script.get(env.cursor, 0)
