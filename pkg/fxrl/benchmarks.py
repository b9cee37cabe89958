"""Rule-based baseline strategies

A policy is an object with reset(env) and act(obs, env). Rule strategies read
raw closes up to the environment cursor only, and propose actions through the
same masks an agent sees.
"""
import numpy as np

from fxrl.actions import SimplifiedAction, adapt_simplified
from fxrl.errors import ConfigError
from fxrl.execution import ExtendedAction
from fxrl.features import bollinger, sma

BENCHMARK_NAMES = ('random', 'buy_and_hold', 'momentum', 'mean_reversion')


def _target_to_action(target, env, mask):
    """A simplified target action in the env's action space, HOLD if illegal"""
    if env.config.action_mode == 'simplified':
        action = int(target)
    else:
        action = int(adapt_simplified(target, env.state))
    return action if mask[action] else 0


class RandomPolicy:
    """Uniform over the legal actions of each step"""
    name = 'random'

    def __init__(self, rng):
        self.rng = rng

    def reset(self, env):
        pass

    def act(self, obs, env):
        legal = np.flatnonzero(obs['mask'])
        return int(legal[self.rng.integers(len(legal))])


class BuyAndHoldPolicy:
    """Open one long position at the first opportunity, then hold"""
    name = 'buy_and_hold'

    def __init__(self):
        self.entered = False

    def reset(self, env):
        self.entered = False

    def act(self, obs, env):
        if self.entered:
            return 0
        action = _target_to_action(SimplifiedAction.TARGET_LONG, env,
                                   obs['mask'])
        self.entered = action != 0
        return action


class MomentumPolicy:
    """Long when the fast SMA of closes is above the slow one, else short

    :param fast: (int) fast SMA window
    :param slow: (int) slow SMA window
    """
    name = 'momentum'

    def __init__(self, fast=10, slow=50):
        if not 1 <= fast < slow:
            raise ConfigError("Momentum needs 1 <= fast < slow, got " +
                              f"{fast}, {slow}")
        self.fast = fast
        self.slow = slow

    def reset(self, env):
        close, start = env.market.close_history()
        self._fast = sma(close, self.fast).to_numpy()[start:]
        self._slow = sma(close, self.slow).to_numpy()[start:]

    def act(self, obs, env):
        t = env.cursor
        if np.isnan(self._slow[t]):
            return 0
        target = SimplifiedAction.TARGET_LONG if self._fast[t] > self._slow[t] \
            else SimplifiedAction.TARGET_SHORT
        return _target_to_action(target, env, obs['mask'])


class MeanReversionPolicy:
    """Short above the upper Bollinger band, long below the lower band

    :param window: (int) band window
    :param num_std: (float) band width in standard deviations
    """
    name = 'mean_reversion'

    def __init__(self, window=20, num_std=2.0):
        if window < 2 or num_std <= 0.0:
            raise ConfigError("Mean reversion needs window >= 2 and " +
                              "num_std > 0")
        self.window = window
        self.num_std = num_std

    def reset(self, env):
        close, start = env.market.close_history()
        self._close = close.to_numpy(dtype=np.float64)[start:]
        _, upper, lower = bollinger(close, self.window, self.num_std)
        self._upper = upper.to_numpy()[start:]
        self._lower = lower.to_numpy()[start:]

    def act(self, obs, env):
        t = env.cursor
        if np.isnan(self._upper[t]):
            return 0
        if self._close[t] > self._upper[t]:
            target = SimplifiedAction.TARGET_SHORT
        elif self._close[t] < self._lower[t]:
            target = SimplifiedAction.TARGET_LONG
        else:
            return 0
        return _target_to_action(target, env, obs['mask'])


class HoldPolicy:
    """Always HOLD"""
    name = 'hold'

    def reset(self, env):
        pass

    def act(self, obs, env):
        return int(ExtendedAction.HOLD)


def benchmark_policy(name, params=None, rng=None):
    """Build a baseline strategy by name

    :param name: (str) one of BENCHMARK_NAMES
    :param params: (dict) the benchmark config section, optional
    :param rng: (numpy.random.Generator) used by the random strategy
    """
    params = params or {}
    if name == 'random':
        if rng is None:
            raise ConfigError("The random benchmark needs a generator")
        return RandomPolicy(rng)
    if name == 'buy_and_hold':
        return BuyAndHoldPolicy()
    if name == 'momentum':
        return MomentumPolicy(params.get('fast', 10), params.get('slow', 50))
    if name == 'mean_reversion':
        return MeanReversionPolicy(params.get('bollinger_window', 20),
                                   params.get('bollinger_k', 2.0))
    raise ConfigError(f"Unknown benchmark '{name}', expected one of " +
                      f"{BENCHMARK_NAMES}")
