"""Decomposed reward: components, gates, weights and clipping

Components are always evaluated and summed in the order of COMPONENTS.
Penalty components are <= 0 and holding is >= 0 before weighting.
"""
import math
from dataclasses import dataclass, field
from typing import Dict, Tuple

import numpy as np

from fxrl.errors import ConfigError

COMPONENTS = ('profit', 'holding', 'volatility', 'drawdown', 'transaction',
              'overtrading', 'pyramid_penalty', 'martingale_penalty',
              'margin', 'liquidation', 'constraint')

DEFAULT_WEIGHTS = {
    'profit': 1.0,
    'holding': 0.03,
    'volatility': 0.01,
    'drawdown': 0.05,
    'transaction': 0.10,
    'overtrading': 0.02,
    'pyramid_penalty': 0.05,
    'martingale_penalty': 0.12,
    'margin': 0.05,
    'liquidation': 2.0,
    'constraint': 0.10,
}

DEFAULT_THRESHOLDS = {
    'holding_max_drawdown': 0.05,
    'severe_drawdown': 0.20,
    'severe_drawdown_factor': 4.0,
    'overtrading_trades': 10,
    'margin_utilization': 0.5,
}

# Components switched on by each ablation variant, cumulative in order
ABLATION_SCHEDULE = {
    'r1': ('profit',),
    'r2': ('holding',),
    'r3': ('volatility', 'drawdown'),
    'r4': ('transaction', 'overtrading'),
    'r5': ('pyramid_penalty', 'martingale_penalty'),
    'r6': ('margin', 'liquidation'),
    'r7': ('constraint',),
}

NORMALIZATION_MODES = ('clip_only', 'running')


@dataclass(frozen=True)
class RewardConfig:
    """Gates, weights, thresholds and clip bounds of the reward"""
    enabled: Dict[str, bool] = field(
        default_factory=lambda: {c: True for c in COMPONENTS})
    weights: Dict[str, float] = field(
        default_factory=lambda: dict(DEFAULT_WEIGHTS))
    thresholds: Dict[str, float] = field(
        default_factory=lambda: dict(DEFAULT_THRESHOLDS))
    clip_min: float = -1.0
    clip_max: float = 1.0
    normalization: str = 'clip_only'
    normalization_eps: float = 1.0e-8

    def __post_init__(self):
        for mapping in (self.enabled, self.weights):
            unknown = set(mapping) - set(COMPONENTS)
            if unknown:
                raise ConfigError(f"Unknown reward components {sorted(unknown)}")
        if self.clip_min > self.clip_max:
            raise ConfigError("reward_normalization.clip_min must not exceed " +
                              "clip_max")
        if self.normalization not in NORMALIZATION_MODES:
            raise ConfigError("reward_normalization.mode must be one of " +
                              f"{NORMALIZATION_MODES}")

    @property
    def gates(self):
        """0/1 gate per component in canonical order"""
        return np.array([1.0 if self.enabled.get(c, False) else 0.0
                         for c in COMPONENTS])

    @property
    def weight_vector(self):
        """Weight per component in canonical order"""
        return np.array([float(self.weights.get(c, DEFAULT_WEIGHTS[c]))
                         for c in COMPONENTS])

    @property
    def enabled_components(self):
        """Names of the enabled components in canonical order"""
        return [c for c in COMPONENTS if self.enabled.get(c, False)]

    @classmethod
    def from_dict(cls, reward, normalization=None):
        """Build from the reward and reward_normalization config sections"""
        components = reward.get('components', {})
        enabled = {c: bool(components.get(c, {}).get('enabled', False))
                   for c in COMPONENTS}
        weights = {c: float(components.get(c, {}).get('weight',
                                                       DEFAULT_WEIGHTS[c]))
                   for c in COMPONENTS}
        thresholds = dict(DEFAULT_THRESHOLDS)
        thresholds.update(reward.get('thresholds', {}))

        normalization = normalization or {}
        return cls(enabled=enabled, weights=weights, thresholds=thresholds,
                   clip_min=float(normalization.get('clip_min', -1.0)),
                   clip_max=float(normalization.get('clip_max', 1.0)),
                   normalization=normalization.get('mode', 'clip_only'),
                   normalization_eps=float(normalization.get('eps', 1.0e-8)))


def make_ablation_config(variant):
    """Reward config for ablation variant r1 to r7

    Each variant enables the components of the earlier variants plus its own,
    at the default weights.
    """
    key = str(variant).lower().split('_')[0]
    if key not in ABLATION_SCHEDULE:
        raise ConfigError(f"Unknown reward variant '{variant}', expected " +
                          f"one of {list(ABLATION_SCHEDULE)}")

    switched_on = set()
    for name, components in ABLATION_SCHEDULE.items():
        switched_on.update(components)
        if name == key:
            break

    return RewardConfig(enabled={c: c in switched_on for c in COMPONENTS})


def ablation_components(variant):
    """Names enabled by a variant, canonical order"""
    return make_ablation_config(variant).enabled_components


@dataclass(frozen=True)
class TransitionTrace:
    """Everything the reward reads about one transition"""
    prev_state: object
    next_state: object
    proposed_action: int
    executed_action: int
    cost_trace: Dict[str, float]
    violation: bool
    liquidation_event: bool
    recent_trade_count: int
    equity_return_history: Tuple[float, ...]
    overtrading_window: int
    depth_cap: int
    pyramid_add: bool = False
    martingale_add: bool = False


@dataclass(frozen=True)
class ComponentRecord:
    """One component of a reward trace"""
    name: str
    raw: float
    weight: float
    weighted: float
    enabled: bool


@dataclass(frozen=True)
class RewardTrace:
    """Per-step reward ledger

    raw_sum is the canonical-order sum of the weighted terms; clipped is
    clip(raw_sum); reward is what the environment emitted, which differs from
    clipped only under running normalization.
    """
    records: Tuple[ComponentRecord, ...]
    raw_sum: float
    clipped: float
    clip_hit: bool
    reward: float

    def as_dict(self):
        """Flat record with fixed component keys, for the logs"""
        out = {}
        for rec in self.records:
            out[rec.name] = {'raw': rec.raw, 'weight': rec.weight,
                             'weighted': rec.weighted,
                             'enabled': rec.enabled}
        out['raw_sum'] = self.raw_sum
        out['clipped'] = self.clipped
        out['clip_hit'] = self.clip_hit
        out['reward'] = self.reward
        return out


def _penalty_depth(depth, cap):
    return -(depth / cap) if cap > 0 else 0.0


def compute_components(trace, cfg):
    """Raw component values in canonical order, disabled ones exactly 0

    :param trace: (TransitionTrace)
    :param cfg: (RewardConfig)
    :returns: (numpy.ndarray) of length 11
    """
    prev, nxt = trace.prev_state, trace.next_state
    thresholds = cfg.thresholds
    equity_0 = prev.equity
    position = nxt.position

    profit = (nxt.equity - equity_0) / equity_0 if equity_0 > 0.0 else 0.0

    holding = 1.0 if (not position.is_flat and nxt.unrealized_pnl > 0.0 and
                      nxt.current_drawdown <
                      thresholds['holding_max_drawdown']) else 0.0

    history = np.asarray(trace.equity_return_history, dtype=np.float64)
    volatility = -float(history.std(ddof=0)) if len(history) >= 2 else 0.0

    dd_increase = max(0.0, nxt.current_drawdown - prev.current_drawdown)
    severe = nxt.current_drawdown > thresholds['severe_drawdown']
    drawdown = -dd_increase * \
        (1.0 + thresholds['severe_drawdown_factor'] * severe)

    costs = trace.cost_trace
    total_cost = costs['spread_cost'] + costs['slippage_cost'] + \
        costs['commission'] + abs(costs['rollover'])
    transaction = -total_cost / equity_0 if equity_0 > 0.0 else 0.0

    excess = max(0, trace.recent_trade_count -
                 thresholds['overtrading_trades'])
    overtrading = max(-1.0, min(0.0, -excess / trace.overtrading_window))

    pyramid = _penalty_depth(position.pyramid_depth, trace.depth_cap) \
        if trace.pyramid_add else 0.0
    martingale = _penalty_depth(position.martingale_depth, trace.depth_cap) \
        if trace.martingale_add else 0.0

    threshold = thresholds['margin_utilization']
    over = max(0.0, nxt.margin_utilization - threshold)
    margin = -over ** 2 / (1.0 - threshold) ** 2 if threshold < 1.0 else 0.0

    liquidation = -1.0 if trace.liquidation_event else 0.0
    constraint = -1.0 if trace.violation else 0.0

    values = np.array([profit, holding, volatility, drawdown, transaction,
                       overtrading, pyramid, martingale, margin, liquidation,
                       constraint], dtype=np.float64)
    return np.where(cfg.gates > 0.0, values, 0.0)


def aggregate(components, cfg):
    """Weight, sum in canonical order and clip

    :returns: (float, RewardTrace)
    """
    components = np.asarray(components, dtype=np.float64)
    if components.shape != (len(COMPONENTS),):
        raise ConfigError(f"Expected {len(COMPONENTS)} components, " +
                          f"got shape {components.shape}")

    gates = cfg.gates
    weights = cfg.weight_vector
    records = []
    raw_sum = 0.0
    for i, name in enumerate(COMPONENTS):
        weighted = float(gates[i] * weights[i] * components[i])
        raw_sum += weighted
        records.append(ComponentRecord(name=name, raw=float(components[i]),
                                       weight=float(weights[i]),
                                       weighted=weighted,
                                       enabled=bool(gates[i])))

    clipped = min(max(raw_sum, cfg.clip_min), cfg.clip_max)
    trace = RewardTrace(records=tuple(records), raw_sum=raw_sum,
                        clipped=clipped, clip_hit=clipped != raw_sum,
                        reward=clipped)
    return clipped, trace


class RunningRewardNormalizer:
    """Welford running mean and variance of raw rewards"""
    def __init__(self, eps=1.0e-8):
        self.eps = eps
        self.count = 0
        self.mean = 0.0
        self._m2 = 0.0

    @property
    def std(self):
        """Population standard deviation of the rewards seen so far"""
        return math.sqrt(self._m2 / self.count) if self.count else 0.0

    def update(self, value):
        self.count += 1
        delta = value - self.mean
        self.mean += delta / self.count
        self._m2 += delta * (value - self.mean)

    def normalize(self, value):
        """Update with value then return it standardized"""
        self.update(value)
        return (value - self.mean) / max(self.std, self.eps)


class RewardEngine:
    """Stateful reward computation for one environment

    Holds the running normalizer when normalization is 'running'.
    """
    def __init__(self, cfg):
        self.cfg = cfg
        self.normalizer = RunningRewardNormalizer(cfg.normalization_eps) \
            if cfg.normalization == 'running' else None

    def __call__(self, trace):
        """Return (reward, RewardTrace) for a transition"""
        reward, reward_trace = aggregate(compute_components(trace, self.cfg),
                                         self.cfg)
        if self.normalizer is None:
            return reward, reward_trace

        scaled = self.normalizer.normalize(reward_trace.raw_sum)
        reward = min(max(scaled, self.cfg.clip_min), self.cfg.clip_max)
        return reward, RewardTrace(records=reward_trace.records,
                                   raw_sum=reward_trace.raw_sum,
                                   clipped=reward_trace.clipped,
                                   clip_hit=reward_trace.clip_hit,
                                   reward=reward)
