"""Order execution, financing, mark-to-market and liquidation

One call to execute settles one bar transition: the decision taken at close_t
is filled at open_{t+1}, rollover is charged on the settled bar, and the
position is marked at close_{t+1}. Prices are in quote currency per base unit
and the account currency is the quote currency.
"""
import logging
import math
from dataclasses import dataclass, field, replace
from enum import IntEnum
from typing import Optional

import numpy as np
import pandas as pd

from fxrl.bars import LOT_SIZE
from fxrl.errors import ConfigError, ContractError, DataError

logger = logging.getLogger(__name__)

# Lots are rounded to this many decimals after every change
LOT_DECIMALS = 10


class Direction(IntEnum):
    """Sign of the open exposure"""
    SHORT = -1
    FLAT = 0
    LONG = 1


class Side(IntEnum):
    """Side of a fill"""
    SELL = -1
    BUY = 1


class ExtendedAction(IntEnum):
    """The ten actions of the extended interface"""
    HOLD = 0
    OPEN_LONG = 1
    OPEN_SHORT = 2
    PYRAMID_LONG = 3
    PYRAMID_SHORT = 4
    MARTINGALE_LONG = 5
    MARTINGALE_SHORT = 6
    REDUCE = 7
    CLOSE = 8
    REVERSE = 9


@dataclass(frozen=True)
class FrictionConfig:
    """Trading costs, pips are in units of pip_size"""
    spread_pips: float = 1.0
    slippage_pips: float = 0.5
    commission_per_lot: float = 3.5
    pip_size: float = 0.0001
    long_swap_pips_per_day: float = -0.5
    short_swap_pips_per_day: float = -0.3
    rollover_hour_utc: int = 22

    def __post_init__(self):
        for name in ('spread_pips', 'slippage_pips', 'commission_per_lot'):
            if getattr(self, name) < 0.0:
                raise ConfigError(f"environment.friction.{name} must be >= 0")
        if self.pip_size <= 0.0:
            raise ConfigError("environment.friction.pip_size must be > 0")
        if not 0 <= self.rollover_hour_utc <= 23:
            raise ConfigError("environment.friction.rollover_hour_utc must " +
                              "be in [0, 23]")

    @classmethod
    def frictionless(cls, pip_size=0.0001):
        """No spread, slippage, commission or swap"""
        return cls(spread_pips=0.0, slippage_pips=0.0, commission_per_lot=0.0,
                   pip_size=pip_size, long_swap_pips_per_day=0.0,
                   short_swap_pips_per_day=0.0)


@dataclass(frozen=True)
class RiskConfig:
    """Leverage, margin, liquidation and position scaling limits"""
    max_leverage: float = 30.0
    maintenance_margin_ratio: float = 0.5
    liquidation_equity_fraction: float = 0.25
    depth_cap: int = 3
    base_lot: float = 0.1
    reduce_fraction: float = 0.5
    lot_size: float = LOT_SIZE
    pyramid_enabled: bool = True
    martingale_enabled: bool = True

    def __post_init__(self):
        if self.max_leverage <= 0.0:
            raise ConfigError("environment.risk.max_leverage must be > 0")
        for name in ('maintenance_margin_ratio', 'liquidation_equity_fraction',
                     'reduce_fraction'):
            if not 0.0 < getattr(self, name) <= 1.0:
                raise ConfigError(f"environment.risk.{name} must be in (0, 1]")
        if self.depth_cap < 0:
            raise ConfigError("environment.risk.depth_cap must be >= 0")
        if self.base_lot <= 0.0 or self.lot_size <= 0.0:
            raise ConfigError("environment.risk.base_lot and lot_size " +
                              "must be > 0")

    def martingale_lots(self, depth):
        """Size of the martingale add that takes the depth to depth + 1"""
        return self.base_lot * 2.0 ** (depth + 1)

    @property
    def max_position_lots(self):
        """Largest position reachable with both scaling mechanisms at cap"""
        cap = self.depth_cap
        return self.base_lot * (1 + cap + 2 ** (cap + 1) - 2)


@dataclass(frozen=True)
class Position:
    """The single open position of the account"""
    direction: Direction = Direction.FLAT
    lots: float = 0.0
    avg_entry_price: float = 0.0
    pyramid_depth: int = 0
    martingale_depth: int = 0

    @property
    def is_flat(self):
        return self.direction == Direction.FLAT


FLAT = Position()


@dataclass(frozen=True)
class PortfolioState:
    """Account snapshot after a mark

    equity = cash + unrealized_pnl always holds. mark_price is the close the
    state was last marked at.
    """
    cash: float
    equity: float
    realized_pnl: float
    unrealized_pnl: float
    used_margin: float
    free_margin: float
    margin_utilization: float
    position: Position
    peak_equity: float
    current_drawdown: float
    liquidated: bool = False
    mark_price: float = float('nan')


def initial_state(initial_capital, mark_price=float('nan')):
    """A flat account holding only cash"""
    if initial_capital <= 0.0:
        raise ConfigError("environment.initial_capital must be > 0")
    return PortfolioState(cash=initial_capital, equity=initial_capital,
                          realized_pnl=0.0, unrealized_pnl=0.0,
                          used_margin=0.0, free_margin=initial_capital,
                          margin_utilization=0.0, position=FLAT,
                          peak_equity=initial_capital, current_drawdown=0.0,
                          liquidated=False, mark_price=mark_price)


@dataclass(frozen=True)
class BarStep:
    """The prices one transition may use"""
    close_t: float
    open_next: float
    close_next: float
    timestamp_next: pd.Timestamp

    def __post_init__(self):
        prices = (self.close_t, self.open_next, self.close_next)
        if not all(math.isfinite(p) and p > 0.0 for p in prices):
            raise DataError(f"Non-finite or non-positive price in {prices} " +
                            f"at {self.timestamp_next}")


@dataclass(frozen=True)
class StepOutcome:
    """Result of one execute call"""
    next_state: PortfolioState
    proposed_action: int
    executed_action: int
    violation: bool
    liquidation_event: bool
    cost_trace: dict
    realized_delta: float
    unrealized_delta: float
    fill_price: Optional[float] = None
    traded_lots: float = 0.0
    pyramid_add: bool = False
    martingale_add: bool = False
    legs: tuple = field(default=(), repr=False)


def empty_cost_trace():
    """Cost trace with every component zero"""
    return {'spread_cost': 0.0, 'slippage_cost': 0.0, 'commission': 0.0,
            'rollover': 0.0}


def required_margin(lots, price, risk):
    """Margin reserved for lots at a price: notional / leverage"""
    return lots * risk.lot_size * price / risk.max_leverage


def quote_and_fill(side, open_next, friction):
    """Fill price at open_next after half spread and adverse slippage

    :param side: (Side or int) +1 buy, -1 sell
    """
    if not open_next > 0.0:
        raise DataError(f"open_next must be positive, got {open_next}")
    adjust = (friction.spread_pips / 2.0 + friction.slippage_pips) * \
        friction.pip_size
    return open_next + adjust if int(side) > 0 else open_next - adjust


def _margin_utilization(used_margin, equity):
    """used / equity clamped to [0, 1]"""
    if used_margin <= 0.0:
        return 0.0
    if equity <= 0.0:
        return 1.0
    return min(1.0, max(0.0, used_margin / equity))


def _with_position(state, position, risk):
    """Replace the position and reserve margin at its average entry"""
    used = required_margin(position.lots, position.avg_entry_price, risk) \
        if not position.is_flat else 0.0
    return replace(state, position=position, used_margin=used)


def apply_rollover(state, timestamp, friction, lot_size=LOT_SIZE):
    """Charge or credit the daily swap when timestamp is the rollover hour

    :returns: (PortfolioState, float) new state and the signed rollover amount
    """
    position = state.position
    timestamp = pd.Timestamp(timestamp)
    if position.is_flat or timestamp.hour != friction.rollover_hour_utc:
        return state, 0.0

    pips = friction.long_swap_pips_per_day \
        if position.direction == Direction.LONG \
        else friction.short_swap_pips_per_day
    # Wednesday settles the weekend
    days = 3 if timestamp.dayofweek == 2 else 1
    amount = pips * friction.pip_size * position.lots * lot_size * days

    return replace(state, cash=state.cash + amount,
                   equity=state.cash + amount + state.unrealized_pnl), amount


def mark_to_market(state, close_next, lot_size=LOT_SIZE):
    """Revalue the open position at close_next and update drawdown stats"""
    if not close_next > 0.0:
        raise DataError(f"close must be positive, got {close_next}")

    position = state.position
    unrealized = 0.0 if position.is_flat else \
        int(position.direction) * (close_next - position.avg_entry_price) * \
        position.lots * lot_size

    equity = state.cash + unrealized
    peak = max(state.peak_equity, equity)
    drawdown = (peak - equity) / peak if peak > 0.0 else 0.0

    return replace(state, unrealized_pnl=unrealized, equity=equity,
                   free_margin=equity - state.used_margin,
                   margin_utilization=_margin_utilization(state.used_margin,
                                                          equity),
                   peak_equity=peak, current_drawdown=max(0.0, drawdown),
                   mark_price=close_next)


def check_liquidation(state, risk, initial_capital):
    """True when equity breaches the capital floor or the maintenance rule"""
    if state.equity < risk.liquidation_equity_fraction * initial_capital:
        return True
    return state.equity < risk.maintenance_margin_ratio * state.used_margin


def reduce_lots(position, risk):
    """Lots removed by REDUCE, floored to base_lot units

    Returns position.lots when the reduction would leave nothing or remove
    nothing, so the REDUCE acts as a CLOSE.
    """
    n_units = math.floor(position.lots * risk.reduce_fraction /
                         risk.base_lot + 1e-9)
    lots = round(n_units * risk.base_lot, LOT_DECIMALS)
    if lots <= 0.0 or lots >= position.lots - 1e-12:
        return position.lots
    return lots


@dataclass(frozen=True)
class _Leg:
    """A single fill: opening/adding (entry) or closing exposure"""
    direction: Direction
    lots: float
    is_entry: bool


def _plan_legs(action, position, risk):
    """Translate a legal action into fills"""
    if action == ExtendedAction.OPEN_LONG:
        return [_Leg(Direction.LONG, risk.base_lot, True)]
    if action == ExtendedAction.OPEN_SHORT:
        return [_Leg(Direction.SHORT, risk.base_lot, True)]
    if action in (ExtendedAction.PYRAMID_LONG, ExtendedAction.PYRAMID_SHORT):
        return [_Leg(position.direction, risk.base_lot, True)]
    if action in (ExtendedAction.MARTINGALE_LONG,
                  ExtendedAction.MARTINGALE_SHORT):
        return [_Leg(position.direction,
                     risk.martingale_lots(position.martingale_depth), True)]
    if action == ExtendedAction.REDUCE:
        return [_Leg(position.direction, reduce_lots(position, risk), False)]
    if action == ExtendedAction.CLOSE:
        return [_Leg(position.direction, position.lots, False)]
    if action == ExtendedAction.REVERSE:
        opposite = Direction(-int(position.direction))
        return [_Leg(position.direction, position.lots, False),
                _Leg(opposite, risk.base_lot, True)]
    return []


def _leg_side(leg):
    """Entries trade in the leg direction, exits against it"""
    sign = int(leg.direction) if leg.is_entry else -int(leg.direction)
    return Side(sign)


def _is_feasible(state, legs, fills, friction, risk):
    """Pre-trade check: margin after the trade must fit in equity"""
    cash = state.cash
    position = state.position
    equity = state.equity
    used = state.used_margin
    for leg, fill in zip(legs, fills):
        if leg.is_entry:
            cost = friction.commission_per_lot * leg.lots
            used += required_margin(leg.lots, fill, risk)
            equity -= cost
            if used > equity:
                return False
        else:
            realized = int(leg.direction) * (fill - position.avg_entry_price) \
                * leg.lots * risk.lot_size
            cash += realized
            remaining = position.lots - leg.lots
            used = required_margin(remaining, position.avg_entry_price, risk)
            # Remaining exposure is valued at the last mark
            equity = cash + state.unrealized_pnl * (remaining / position.lots)
    return True


def _apply_leg(state, leg, fill, friction, risk):
    """Apply one fill, returning the new state, realized pnl and commission"""
    position = state.position
    if leg.is_entry:
        commission = friction.commission_per_lot * leg.lots
        if position.is_flat:
            new_position = Position(direction=leg.direction, lots=leg.lots,
                                    avg_entry_price=fill)
        else:
            lots = round(position.lots + leg.lots, LOT_DECIMALS)
            avg = (position.avg_entry_price * position.lots +
                   fill * leg.lots) / (position.lots + leg.lots)
            new_position = replace(position, lots=lots, avg_entry_price=avg)
        state = replace(state, cash=state.cash - commission)
        return _with_position(state, new_position, risk), 0.0, commission

    realized = int(position.direction) * (fill - position.avg_entry_price) * \
        leg.lots * risk.lot_size
    lots = round(position.lots - leg.lots, LOT_DECIMALS)
    new_position = FLAT if lots <= 0.0 else replace(position, lots=lots)
    state = replace(state, cash=state.cash + realized,
                    realized_pnl=state.realized_pnl + realized)
    return _with_position(state, new_position, risk), realized, 0.0


def execute(state, action, bars, friction, risk, mask, initial_capital):
    """Settle one bar transition for a proposed extended action

    :param state: (PortfolioState) marked at close_t

    :param action: (int) proposed extended action id

    :param bars: (BarStep) close_t, open_next, close_next, timestamp_next

    :param friction: (FrictionConfig)

    :param risk: (RiskConfig)

    :param mask: (numpy.ndarray) legal mask over the extended actions,
    computed from state before dispatch

    :param initial_capital: (float) for the liquidation floor

    :returns: (StepOutcome)

    Illegal proposals, and legal ones that fail the pre-trade margin check at
    the fill price, execute as HOLD with the violation flag raised.
    """
    action = int(action)
    mask = np.asarray(mask, dtype=bool)
    if not 0 <= action < len(ExtendedAction):
        raise ContractError(f"Unknown action id {action}")

    costs = empty_cost_trace()
    executed = action
    violation = False
    if state.liquidated or not mask[action]:
        executed, violation = int(ExtendedAction.HOLD), \
            action != ExtendedAction.HOLD

    legs = _plan_legs(ExtendedAction(executed), state.position, risk)
    fills = [quote_and_fill(_leg_side(leg), bars.open_next, friction)
             for leg in legs]
    if legs and not _is_feasible(state, legs, fills, friction, risk):
        logger.debug("...%s infeasible at fill, coerced to HOLD",
                     ExtendedAction(executed).name)
        executed, violation, legs, fills = int(ExtendedAction.HOLD), True, \
            [], []

    prev_unrealized = state.unrealized_pnl
    pyramid_depth = state.position.pyramid_depth
    martingale_depth = state.position.martingale_depth

    realized_delta = 0.0
    traded_lots = 0.0
    half_spread = friction.spread_pips / 2.0 * friction.pip_size
    slip = friction.slippage_pips * friction.pip_size
    for leg, fill in zip(legs, fills):
        state, realized, commission = _apply_leg(state, leg, fill,
                                                 friction, risk)
        realized_delta += realized
        traded_lots += leg.lots
        costs['commission'] += commission
        costs['spread_cost'] += half_spread * leg.lots * risk.lot_size
        costs['slippage_cost'] += slip * leg.lots * risk.lot_size

    # Scaling depths only move on adds, and reset with a flat position
    if executed in (ExtendedAction.PYRAMID_LONG, ExtendedAction.PYRAMID_SHORT):
        pyramid_depth += 1
    if executed in (ExtendedAction.MARTINGALE_LONG,
                    ExtendedAction.MARTINGALE_SHORT):
        martingale_depth += 1
    if executed in (ExtendedAction.CLOSE, ExtendedAction.REVERSE) or \
            state.position.is_flat:
        pyramid_depth, martingale_depth = 0, 0
    if not state.position.is_flat:
        state = replace(state, position=replace(
            state.position, pyramid_depth=pyramid_depth,
            martingale_depth=martingale_depth))

    state, rollover = apply_rollover(state, bars.timestamp_next, friction,
                                     risk.lot_size)
    costs['rollover'] = rollover

    state = mark_to_market(state, bars.close_next, risk.lot_size)

    liquidation_event = False
    if not state.liquidated and check_liquidation(state, risk,
                                                  initial_capital):
        liquidation_event = True
        lots = state.position.lots
        commission = friction.commission_per_lot * lots
        realized = state.unrealized_pnl
        logger.info("...liquidated at %s, equity %.2f",
                    bars.timestamp_next, state.equity)
        state = replace(state, cash=state.cash + realized - commission,
                        realized_pnl=state.realized_pnl + realized,
                        position=FLAT, used_margin=0.0, liquidated=True)
        state = mark_to_market(state, bars.close_next, risk.lot_size)
        realized_delta += realized
        traded_lots += lots
        costs['commission'] += commission

    return StepOutcome(
        next_state=state, proposed_action=action, executed_action=executed,
        violation=violation, liquidation_event=liquidation_event,
        cost_trace=costs, realized_delta=realized_delta,
        unrealized_delta=state.unrealized_pnl - prev_unrealized,
        fill_price=fills[0] if fills else None,
        traded_lots=round(traded_lots, LOT_DECIMALS),
        pyramid_add=executed in (ExtendedAction.PYRAMID_LONG,
                                 ExtendedAction.PYRAMID_SHORT),
        martingale_add=executed in (ExtendedAction.MARTINGALE_LONG,
                                    ExtendedAction.MARTINGALE_SHORT),
        legs=tuple((int(_leg_side(leg)), leg.lots, fill)
                   for leg, fill in zip(legs, fills)))
