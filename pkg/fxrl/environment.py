"""Gymnasium environment over a market slice

Timing: the observation at step t is built from features up to close_t and
the state marked at close_t. The action is filled at open_{t+1} and the
reward is computed from the mark at close_{t+1}.
"""
import hashlib
import logging
from collections import deque
from dataclasses import dataclass, field

import gymnasium as gym
import numpy as np

from fxrl.actions import (ACTION_MODES, compute_extended_mask,
                          compute_legal_mask, n_actions, to_extended)
from fxrl.errors import ConfigError, ContractError, DataError
from fxrl.execution import (BarStep, ExtendedAction,
                            FrictionConfig, RiskConfig, execute,
                            initial_state, mark_to_market)
from fxrl.reward import RewardConfig, RewardEngine, TransitionTrace

logger = logging.getLogger(__name__)

# Number of portfolio fields in an observation
D_PORT = 10

PORTFOLIO_FIELDS = ('cash', 'equity', 'unrealized_pnl', 'realized_pnl',
                    'margin_utilization', 'direction', 'lots',
                    'pyramid_depth', 'martingale_depth', 'current_drawdown')

# Causality-breaking hooks used only to prove the conformance checks bite
LEAK_MODES = ('observation', 'fill', 'reward', 'mask')


@dataclass(frozen=True)
class EnvConfig:
    """Environment settings"""
    action_mode: str = 'extended'
    window: int = 24
    initial_capital: float = 100_000.0
    friction: FrictionConfig = field(default_factory=FrictionConfig)
    risk: RiskConfig = field(default_factory=RiskConfig)
    overtrading_window: int = 50
    volatility_window: int = 20

    def __post_init__(self):
        if self.action_mode not in ACTION_MODES:
            raise ConfigError("environment.actions.mode must be one of " +
                              f"{ACTION_MODES}, got '{self.action_mode}'")
        if self.window < 1:
            raise ConfigError("environment.window must be >= 1")
        if self.initial_capital <= 0.0:
            raise ConfigError("environment.initial_capital must be > 0")
        if self.overtrading_window < 1 or self.volatility_window < 1:
            raise ConfigError("environment.windows must be >= 1")

    @property
    def n_actions(self):
        return n_actions(self.action_mode)

    @classmethod
    def from_dict(cls, env):
        """Build from the environment config section"""
        risk = dict(env.get('risk', {}))
        scaling = env.get('scaling', {})
        risk['pyramid_enabled'] = bool(scaling.get('pyramid', True))
        risk['martingale_enabled'] = bool(scaling.get('martingale', True))
        windows = env.get('windows', {})
        return cls(action_mode=env.get('actions', {}).get('mode', 'extended'),
                   window=int(env.get('window', 24)),
                   initial_capital=float(env.get('initial_capital', 100_000.0)),
                   friction=FrictionConfig(**env.get('friction', {})),
                   risk=RiskConfig(**risk),
                   overtrading_window=int(windows.get('overtrading', 50)),
                   volatility_window=int(windows.get('volatility', 20)))


def flat_dim(window, d_feat, n_a, d_port=D_PORT):
    """Length of the flattened observation: L * d_feat + d_port + n_a"""
    return window * d_feat + d_port + n_a


def portfolio_vector(state, risk, initial_capital):
    """The ten scale-free account fields of an observation"""
    position = state.position
    cap = risk.depth_cap
    return np.array([
        state.cash / initial_capital,
        state.equity / initial_capital,
        state.unrealized_pnl / initial_capital,
        state.realized_pnl / initial_capital,
        state.margin_utilization,
        float(int(position.direction)),
        position.lots / risk.max_position_lots,
        position.pyramid_depth / cap if cap else 0.0,
        position.martingale_depth / cap if cap else 0.0,
        state.current_drawdown,
    ], dtype=np.float64)


def build_observation(features, state, mask, risk, initial_capital, window):
    """Assemble the observation dict

    :param features: (numpy.ndarray) the last `window` scaled feature rows,
    ending at close_t

    :returns: (dict) with market [L, d_feat], portfolio [10], mask (int8) and
    flat = concat(market row-major, portfolio, mask as 0.0/1.0)
    """
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] != window:
        raise ContractError(f"Expected {window} feature rows, got " +
                            f"shape {features.shape}")

    portfolio = portfolio_vector(state, risk, initial_capital)
    mask = np.asarray(mask, dtype=bool)
    flat = np.concatenate([features.reshape(-1), portfolio,
                           mask.astype(np.float64)])
    return {'market': features.copy(), 'portfolio': portfolio,
            'mask': mask.astype(np.int8), 'flat': flat}


class ForexEnv(gym.Env):
    """Single-pair hourly trading environment

    An episode is one pass over the slice; it terminates on liquidation and
    is truncated when no next bar remains to fill against.
    """
    metadata = {'render_modes': []}

    def __init__(self, market, env_config=None, reward_config=None,
                 leak=None):
        super().__init__()
        self.market = market
        self.config = env_config or EnvConfig()
        self.reward_config = reward_config or RewardConfig()
        if leak is not None and leak not in LEAK_MODES:
            raise ConfigError(f"Unknown leak '{leak}'")
        self.leak = leak

        window = self.config.window
        if market.n_bars < window + 2:
            raise DataError(f"Need at least {window + 2} bars for an " +
                            f"episode, got {market.n_bars}")

        self._features = market.features.to_numpy(dtype=np.float64)
        self._open = market.bars['open'].to_numpy(dtype=np.float64)
        self._close = market.bars['close'].to_numpy(dtype=np.float64)
        self._timestamps = market.bars.index

        self.d_feat = self._features.shape[1]
        self.n_actions = self.config.n_actions
        self.flat_dim = flat_dim(window, self.d_feat, self.n_actions)

        self.action_space = gym.spaces.Discrete(self.n_actions)
        self.observation_space = gym.spaces.Dict({
            'market': gym.spaces.Box(-np.inf, np.inf, (window, self.d_feat),
                                     dtype=np.float64),
            'portfolio': gym.spaces.Box(-np.inf, np.inf, (D_PORT,),
                                        dtype=np.float64),
            'mask': gym.spaces.MultiBinary(self.n_actions),
            'flat': gym.spaces.Box(-np.inf, np.inf, (self.flat_dim,),
                                   dtype=np.float64),
        })

        self.reward_engine = RewardEngine(self.reward_config)
        self._digest = hashlib.sha256()
        self.cursor = None
        self.state = None
        self.mask = None
        self.done = True

    @property
    def execution_digest(self):
        """SHA-256 over every outcome settled by this instance since reset"""
        return self._digest.hexdigest()

    @property
    def timestamp(self):
        """Timestamp of the bar at the cursor"""
        return self._timestamps[self.cursor]

    @property
    def n_bars(self):
        return len(self._close)

    def _compute_mask(self, state):
        """Mask from the state at the cursor close"""
        risk = self.config.risk
        commission = self.config.friction.commission_per_lot
        if self.leak == 'mask' and self.cursor + 1 < self.n_bars:
            state = mark_to_market(state, self._close[self.cursor + 1],
                                   risk.lot_size)
        return compute_legal_mask(state, risk, self.config.action_mode,
                                  commission)

    def _observe(self):
        window = self.config.window
        end = self.cursor + 1
        if self.leak == 'observation' and end < self.n_bars:
            end += 1
        rows = self._features[end - window:end]
        return build_observation(rows, self.state, self.mask,
                                 self.config.risk, self.config.initial_capital,
                                 window)

    def reset(self, seed=None, options=None):
        """Start an episode at the first bar with a full window

        :returns: (dict, dict) observation and info
        """
        super().reset(seed=seed)
        self.cursor = self.config.window - 1
        self.state = initial_state(self.config.initial_capital,
                                   mark_price=self._close[self.cursor])
        self.mask = self._compute_mask(self.state)
        self.done = False
        self._digest = hashlib.sha256()
        self._trades = deque(maxlen=self.config.overtrading_window)
        self._returns = deque(maxlen=self.config.volatility_window)

        info = {'mask': self.mask.copy(), 'equity': self.state.equity,
                'timestamp': self.timestamp, 'state': self.state}
        return self._observe(), info

    def step(self, action):
        """Advance one bar

        :returns: (dict, float, bool, bool, dict) observation, reward,
        terminated, truncated, info
        """
        if self.done:
            raise ContractError("step called on a finished episode; " +
                                "call reset first")
        action = int(action)
        if not 0 <= action < self.n_actions:
            raise ContractError(f"Action {action} outside [0, {self.n_actions})")

        config = self.config
        t = self.cursor
        prev_state = self.state
        mask = self.mask

        extended = to_extended(action, prev_state, config.action_mode)
        extended_mask = compute_extended_mask(
            prev_state, config.risk, config.friction.commission_per_lot)
        if not mask[action]:
            extended_mask = np.zeros_like(extended_mask)
            extended_mask[ExtendedAction.HOLD] = True

        open_next = self._close[t + 1] if self.leak == 'fill' \
            else self._open[t + 1]
        bars = BarStep(close_t=self._close[t], open_next=open_next,
                       close_next=self._close[t + 1],
                       timestamp_next=self._timestamps[t + 1])
        outcome = execute(prev_state, int(extended), bars, config.friction,
                          config.risk, extended_mask, config.initial_capital)
        next_state = outcome.next_state

        traded = outcome.executed_action != ExtendedAction.HOLD
        self._trades.append(1 if traded else 0)
        self._returns.append((next_state.equity - prev_state.equity) /
                             prev_state.equity if prev_state.equity > 0 else 0.0)

        marked = next_state
        if self.leak == 'reward' and t + 2 < self.n_bars:
            marked = mark_to_market(next_state, self._close[t + 2],
                                    config.risk.lot_size)
        trace = TransitionTrace(
            prev_state=prev_state, next_state=marked,
            proposed_action=action, executed_action=outcome.executed_action,
            cost_trace=outcome.cost_trace, violation=outcome.violation,
            liquidation_event=outcome.liquidation_event,
            recent_trade_count=int(sum(self._trades)),
            equity_return_history=tuple(self._returns),
            overtrading_window=config.overtrading_window,
            depth_cap=config.risk.depth_cap,
            pyramid_add=outcome.pyramid_add,
            martingale_add=outcome.martingale_add)
        reward, reward_trace = self.reward_engine(trace)

        self.cursor = t + 1
        self.state = next_state
        self.mask = self._compute_mask(next_state)

        terminated = bool(outcome.liquidation_event)
        truncated = (not terminated) and self.cursor >= self.n_bars - 1
        self.done = terminated or truncated

        executed = action if not outcome.violation else 0
        self._digest.update(repr((
            t, action, outcome.executed_action, outcome.fill_price,
            next_state.cash, next_state.equity, outcome.traded_lots,
            tuple(outcome.cost_trace.values()), reward)).encode())

        info = {
            'reward_trace': reward_trace,
            'cost_trace': dict(outcome.cost_trace),
            'executed_action': executed,
            'proposed_action': action,
            'violation': outcome.violation,
            'liquidation_event': outcome.liquidation_event,
            'mask_next': self.mask.copy(),
            'equity': next_state.equity,
            'mask': mask.copy(),
            'executed_extended': outcome.executed_action,
            'outcome': outcome,
            'state': next_state,
            'prev_state': prev_state,
            'timestamp': self._timestamps[t + 1],
            'step': t,
        }
        return self._observe(), float(reward), terminated, truncated, info


def step_record(info):
    """The fixed-key step log record of an info dict"""
    state = info['state']
    outcome = info['outcome']
    costs = info['cost_trace']
    return {
        'timestamp': info['timestamp'].strftime('%Y-%m-%dT%H:%M:%SZ'),
        'proposed_action': info['proposed_action'],
        'executed_action': info['executed_action'],
        'spread_cost': costs['spread_cost'],
        'slippage_cost': costs['slippage_cost'],
        'commission': costs['commission'],
        'rollover': costs['rollover'],
        'realized_delta': outcome.realized_delta,
        'unrealized_delta': outcome.unrealized_delta,
        'equity': state.equity,
        'cash': state.cash,
        'used_margin': state.used_margin,
        'violation': info['violation'],
        'liquidation_event': info['liquidation_event'],
        'direction': int(state.position.direction),
        'lots': state.position.lots,
        'pyramid_depth': state.position.pyramid_depth,
        'martingale_depth': state.position.martingale_depth,
        'traded_lots': outcome.traded_lots,
        'fill_price': outcome.fill_price,
        'mask': [int(b) for b in info['mask']],
        'mask_next': [int(b) for b in info['mask_next']],
    }


def make_env(market, cfg, leak=None):
    """Construct the environment from a resolved config mapping

    Every rollout, training run and conformance check builds its environment
    here.
    """
    return ForexEnv(market, EnvConfig.from_dict(cfg['environment']),
                    RewardConfig.from_dict(cfg['reward'],
                                           cfg.get('reward_normalization')),
                    leak=leak)

