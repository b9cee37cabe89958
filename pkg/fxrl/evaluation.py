"""Deterministic rollouts, trade records and reconciliation

Agents and rule strategies are rolled through the same environment
constructor and step path, so their results are directly comparable.
"""
import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import pandas as pd

from fxrl.agent import AgentConfig, QAgent
from fxrl.environment import make_env, step_record
from fxrl.errors import ContractError
from fxrl.execution import ExtendedAction
from fxrl.metrics import compute_metrics, from_values

logger = logging.getLogger(__name__)


@dataclass
class TradeRecord:
    """One round trip from flat to flat, or the open position at the end

    pnl is realized pnl net of commission and rollover. unrealized is only
    non-zero for a trade still open when the rollout ended.
    """
    open_time: pd.Timestamp
    open_price: float
    direction: int
    lots: float
    pnl: float = 0.0
    close_time: Optional[pd.Timestamp] = None
    close_price: Optional[float] = None
    unrealized: float = 0.0
    is_open: bool = True

    @property
    def total_pnl(self):
        return self.pnl + self.unrealized

    def as_dict(self):
        def stamp(ts):
            return None if ts is None else ts.strftime('%Y-%m-%dT%H:%M:%SZ')
        return {'open_time': stamp(self.open_time),
                'open_price': self.open_price, 'direction': self.direction,
                'lots': self.lots, 'pnl': self.pnl,
                'close_time': stamp(self.close_time),
                'close_price': self.close_price,
                'unrealized': self.unrealized, 'is_open': self.is_open}


def _exit_realized(prev_position, exit_legs, lot_size):
    """Realized pnl of the legs that close prev_position's exposure"""
    realized = 0.0
    for _, lots, fill in exit_legs:
        realized += int(prev_position.direction) * \
            (fill - prev_position.avg_entry_price) * lots * lot_size
    return realized


def _split_legs(prev_position, executed, legs):
    """Separate the (side, lots, fill) legs into exits and entries"""
    if executed == ExtendedAction.REVERSE:
        return legs[:1], legs[1:]
    if prev_position.is_flat:
        return (), legs
    closing = -int(prev_position.direction)
    return (tuple(leg for leg in legs if leg[0] == closing),
            tuple(leg for leg in legs if leg[0] != closing))


class TradeTracker:
    """Turn step infos into TradeRecords

    A trade starts when a position opens from flat or by REVERSE, and ends
    when the position goes flat or reverses. Commission and rollover are
    charged to the trade holding the position when they occur.
    """
    def __init__(self, lot_size):
        self.lot_size = lot_size
        self.closed: List[TradeRecord] = []
        self.current: Optional[TradeRecord] = None

    def _close(self, trade, timestamp, price):
        trade.close_time = timestamp
        trade.close_price = price
        trade.is_open = False
        self.closed.append(trade)

    def update(self, info):
        prev = info['prev_state'].position
        state = info['state']
        outcome = info['outcome']
        executed = info['executed_extended']
        timestamp = info['timestamp']
        costs = info['cost_trace']
        flow = outcome.realized_delta - costs['commission'] + costs['rollover']

        reversed_ = executed == ExtendedAction.REVERSE
        opened = reversed_ or (prev.is_flat and executed in (
            ExtendedAction.OPEN_LONG, ExtendedAction.OPEN_SHORT))
        exit_legs, entry_legs = _split_legs(prev, executed, outcome.legs)
        if info['liquidation_event'] or not exit_legs:
            close_price = state.mark_price
        else:
            close_price = exit_legs[-1][2]

        if self.current is not None:
            if reversed_:
                exit_pnl = _exit_realized(prev, exit_legs, self.lot_size)
                self.current.pnl += exit_pnl
                flow -= exit_pnl
                self._close(self.current, timestamp, exit_legs[-1][2])
                self.current = None
            else:
                self.current.pnl += flow
                self.current.lots = max(self.current.lots,
                                        state.position.lots)
                if state.position.is_flat:
                    self._close(self.current, timestamp, close_price)
                    self.current = None

        if opened:
            side, lots, fill = entry_legs[-1]
            self.current = TradeRecord(open_time=timestamp, open_price=fill,
                                       direction=int(side),
                                       lots=max(lots, state.position.lots),
                                       pnl=flow)
            if state.position.is_flat:
                self._close(self.current, timestamp, state.mark_price)
                self.current = None

    def trades(self, final_state=None):
        """Closed trades then the open one, marked at final_state"""
        out = list(self.closed)
        if self.current is not None:
            self.current.unrealized = final_state.unrealized_pnl \
                if final_state is not None else 0.0
            out.append(self.current)
        return out


@dataclass
class RolloutResult:
    """Everything a rollout produced"""
    curve: pd.Series
    trades: List[TradeRecord]
    steps: pd.DataFrame
    rewards: np.ndarray
    digest: str
    final_state: object
    reward_traces: list = field(default_factory=list, repr=False)

    @property
    def n_steps(self):
        return len(self.steps)

    @property
    def violation_count(self):
        return int(self.steps['violation'].sum()) if len(self.steps) else 0

    def report(self, label=''):
        return compute_metrics(self.curve, self.trades, self.steps, label)


class GreedyPolicy:
    """Masked argmax of a trained agent, no exploration"""
    name = 'greedy'

    def __init__(self, agent):
        self.agent = agent

    def reset(self, env):
        self.agent.check_input(env.flat_dim, env.n_actions)

    def act(self, obs, env):
        return self.agent.greedy(obs['flat'], obs['mask'])


def load_policy(path, cfg):
    """A greedy policy from a checkpoint and the config it was trained with"""
    agent = QAgent.from_checkpoint(path, AgentConfig.from_dict(cfg['agent']))
    return GreedyPolicy(agent)


def rollout(policy, market, cfg, seed=None, leak=None, keep_traces=False,
            max_steps=None):
    """Run a policy over a market slice until the episode ends

    :param policy: object with reset(env) and act(obs, env)
    :param market: (MarketSlice)
    :param cfg: (ResolvedConfig or dict) environment and reward sections used
    :param seed: (int) passed to env.reset
    :param keep_traces: (bool) keep every RewardTrace as a dict

    :returns: (RolloutResult)
    """
    env = make_env(market, cfg, leak=leak)
    obs, info = env.reset(seed=seed)
    policy.reset(env)

    tracker = TradeTracker(env.config.risk.lot_size)
    timestamps = [info['timestamp']]
    equity = [info['equity']]
    records, rewards, traces = [], [], []

    done = False
    while not done:
        action = int(policy.act(obs, env))
        if not 0 <= action < env.n_actions:
            raise ContractError(f"Policy {getattr(policy, 'name', policy)} " +
                                f"proposed action {action}")
        obs, reward, terminated, truncated, info = env.step(action)
        done = terminated or truncated
        tracker.update(info)
        timestamps.append(info['timestamp'])
        equity.append(info['equity'])
        records.append(step_record(info))
        rewards.append(reward)
        if keep_traces:
            traces.append(info['reward_trace'].as_dict())
        if max_steps is not None and len(records) >= max_steps:
            break

    curve = from_values(equity, timestamps, env.config.initial_capital)
    logger.info("...%s rolled %d steps, final equity %.2f",
                getattr(policy, 'name', type(policy).__name__), len(records),
                equity[-1])
    return RolloutResult(curve=curve, trades=tracker.trades(env.state),
                         steps=pd.DataFrame(records),
                         rewards=np.asarray(rewards, dtype=np.float64),
                         digest=env.execution_digest, final_state=env.state,
                         reward_traces=traces)


def reconcile(result, initial_capital):
    """Residuals of the two equity identities of a rollout

    trades: final equity - capital - (sum of trade pnl + open unrealized)
    ledger: final equity - capital - (realized + open unrealized + rollover
    - commission), summed over the step log

    :returns: (dict) with the two residuals
    """
    final = result.final_state
    change = final.equity - initial_capital
    trade_sum = sum(t.pnl for t in result.trades)
    steps = result.steps
    if len(steps):
        ledger = float(steps['realized_delta'].sum() +
                       steps['rollover'].sum() - steps['commission'].sum())
    else:
        ledger = 0.0
    return {'trades': change - (trade_sum + final.unrealized_pnl),
            'ledger': change - (ledger + final.unrealized_pnl)}

