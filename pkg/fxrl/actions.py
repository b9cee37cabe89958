"""Action interfaces and legality masks

The extended interface has ten actions. The simplified interface has three
target actions that are adapted to extended actions from the position.
"""
from enum import IntEnum

import numpy as np

from fxrl.errors import ConfigError
from fxrl.execution import Direction, ExtendedAction, required_margin

ACTION_MODES = ('simplified', 'extended')


class SimplifiedAction(IntEnum):
    """The three target actions of the simplified interface"""
    HOLD = 0
    TARGET_LONG = 1
    TARGET_SHORT = 2


def n_actions(mode):
    """Number of actions for an action mode"""
    if mode == 'extended':
        return len(ExtendedAction)
    if mode == 'simplified':
        return len(SimplifiedAction)
    raise ConfigError("environment.actions.mode must be one of " +
                      f"{ACTION_MODES}, got '{mode}'")


def action_names(mode):
    """Action names in id order"""
    enum = ExtendedAction if mode == 'extended' else SimplifiedAction
    n_actions(mode)
    return [a.name for a in enum]


def _can_afford(state, lots, price, friction_commission, risk):
    """Free margin covers the added lots and their commission"""
    return state.free_margin - friction_commission * lots >= \
        required_margin(lots, price, risk)


def compute_extended_mask(state, risk, commission_per_lot=0.0):
    """Legal mask over the ten extended actions

    :param state: (PortfolioState) marked at close_t, the mark is used for
    margin checks

    :param risk: (RiskConfig)

    :param commission_per_lot: (float) included in the margin check

    :returns: (numpy.ndarray) of bool, HOLD always True
    """
    mask = np.zeros(len(ExtendedAction), dtype=bool)
    mask[ExtendedAction.HOLD] = True
    if state.liquidated:
        return mask

    position = state.position
    price = state.mark_price
    base = risk.base_lot

    if position.is_flat:
        affordable = _can_afford(state, base, price, commission_per_lot, risk)
        mask[ExtendedAction.OPEN_LONG] = affordable
        mask[ExtendedAction.OPEN_SHORT] = affordable
        return mask

    is_long = position.direction == Direction.LONG
    pyramid = ExtendedAction.PYRAMID_LONG if is_long \
        else ExtendedAction.PYRAMID_SHORT
    martingale = ExtendedAction.MARTINGALE_LONG if is_long \
        else ExtendedAction.MARTINGALE_SHORT

    mask[pyramid] = (risk.pyramid_enabled and
                     position.pyramid_depth < risk.depth_cap and
                     _can_afford(state, base, price, commission_per_lot, risk))

    # Martingale adds only after adverse movement
    mart_lots = risk.martingale_lots(position.martingale_depth)
    mask[martingale] = (risk.martingale_enabled and
                        position.martingale_depth < risk.depth_cap and
                        state.unrealized_pnl < 0.0 and
                        _can_afford(state, mart_lots, price,
                                    commission_per_lot, risk))

    mask[ExtendedAction.REDUCE] = True
    mask[ExtendedAction.CLOSE] = True

    # After the close the whole equity backs the opposite base lot
    mask[ExtendedAction.REVERSE] = state.equity - commission_per_lot * base >= \
        required_margin(base, price, risk)

    return mask


def adapt_simplified(action, state):
    """Map a simplified target action to an extended action

    TARGET_LONG opens when flat, reverses when short and holds when already
    long. TARGET_SHORT is symmetric.
    """
    action = SimplifiedAction(int(action))
    direction = state.position.direction
    if action == SimplifiedAction.HOLD:
        return ExtendedAction.HOLD

    target = Direction.LONG if action == SimplifiedAction.TARGET_LONG \
        else Direction.SHORT
    if direction == Direction.FLAT:
        return ExtendedAction.OPEN_LONG if target == Direction.LONG \
            else ExtendedAction.OPEN_SHORT
    if direction == target:
        return ExtendedAction.HOLD
    return ExtendedAction.REVERSE


def compute_legal_mask(state, risk, mode='extended', commission_per_lot=0.0):
    """Legal mask for the chosen action mode

    In simplified mode a target action is legal when the extended action it
    adapts to is legal.
    """
    extended = compute_extended_mask(state, risk, commission_per_lot)
    if mode == 'extended':
        return extended

    n_actions(mode)
    mask = np.array([extended[adapt_simplified(a, state)]
                     for a in SimplifiedAction], dtype=bool)
    if state.liquidated:
        mask[1:] = False
    return mask


def to_extended(action, state, mode):
    """The extended action a proposal stands for in either mode"""
    if mode == 'extended':
        return ExtendedAction(int(action))
    return adapt_simplified(action, state)
