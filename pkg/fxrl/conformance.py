"""Anti-lookahead conformance checks over the production env and exec code

Each check returns a CheckResult. Every check takes a leak argument that
switches on the matching causality-breaking hook; a sound check must fail
when its hook is on. Observations and reward traces are compared as bytes.
"""
import logging
from dataclasses import dataclass, field
from typing import List

import numpy as np
import pandas as pd

from fxrl import bars as fxbars
from fxrl.actions import compute_legal_mask
from fxrl.config import resolve_config
from fxrl.environment import make_env
from fxrl.execution import ExtendedAction, FrictionConfig
from fxrl.features import (MarketSlice, apply_scaler, build_dataset,
                           compute_features, feature_names, prepare_slice,
                           warmup_horizon)

logger = logging.getLogger(__name__)

N_SAMPLES = 64
MAX_OFFSET = 5
SENTINEL_FACTOR = 1.5

# Check name -> the hook that breaks its guard
CHECK_LEAKS = {
    'feature_staleness': 'observation',
    'fill_price_rule': 'fill',
    'reward_timing': 'reward',
    'scaler_leakage': 'heldout',
    'mask_timing': 'mask',
}


@dataclass
class CheckResult:
    """Outcome of one conformance check"""
    name: str
    passed: bool
    evidence: str
    leak: str = None


@dataclass
class ConformanceReport:
    """All check results, plus the runs with the guards broken"""
    results: List[CheckResult] = field(default_factory=list)
    sensitivity: List[CheckResult] = field(default_factory=list)

    @property
    def passed(self):
        return bool(self.results) and all(r.passed for r in self.results)

    @property
    def sensitive(self):
        """True when every check failed with its guard broken"""
        return bool(self.sensitivity) and \
            not any(r.passed for r in self.sensitivity)

    def as_frame(self):
        rows = [{'check': r.name, 'passed': r.passed,
                 'evidence': r.evidence} for r in self.results]
        leaked = {r.name: r for r in self.sensitivity}
        for row in rows:
            if row['check'] in leaked:
                row['fails_when_broken'] = not leaked[row['check']].passed
        return pd.DataFrame(rows)

    def __str__(self):
        status = 'PASS' if self.passed else 'FAIL'
        text = self.as_frame().to_string(index=False)
        if self.sensitivity:
            text += f"\nsensitivity: {'ok' if self.sensitive else 'FAIL'}"
        return f"{text}\noverall: {status}"


@dataclass
class Fixture:
    """Seeded bars, frozen scaler and the proposals every run replays"""
    cfg: object
    raw: pd.DataFrame
    scaler: object
    market: MarketSlice
    actions: np.ndarray
    rng: np.random.Generator

    @property
    def window(self):
        return self.cfg['environment']['window']


def default_config():
    return resolve_config()


def make_fixture(seed=7, n_bars=320, cfg=None, random_actions=False):
    """Build the bars, scaler and action proposals of a check

    :param random_actions: (bool) uniform proposals over every action id,
    illegal ones included. Otherwise OPEN_LONG at the first step then HOLD.
    """
    cfg = cfg or default_config()
    rng = np.random.default_rng(seed)
    spec = fxbars.SyntheticSpec(regime='random_walk', volatility=1.0e-3)
    raw = fxbars.generate_synthetic(spec, n_bars, rng)
    window = cfg['environment']['window']
    split = build_dataset(raw, 1.0, window=window)
    market = prepare_slice(raw, split.scaler, warmup=warmup_horizon(window))

    n_actions = 10 if cfg['environment']['actions']['mode'] == 'extended' \
        else 3
    if random_actions:
        actions = rng.integers(0, n_actions, size=market.n_bars)
    else:
        actions = np.zeros(market.n_bars, dtype=np.int64)
        actions[window - 1] = int(ExtendedAction.OPEN_LONG)
    return Fixture(cfg, raw, split.scaler, market, actions, rng)


def _mutated(fixture, timestamp, factor=SENTINEL_FACTOR):
    """The fixture's market with every price of one bar scaled"""
    raw = fixture.raw.copy()
    raw.loc[timestamp, fxbars.PRICE_COLUMNS] *= factor
    return prepare_slice(raw, fixture.scaler,
                         warmup=warmup_horizon(fixture.window))


def _run_to(market, cfg, actions, stop, leak=None, step_at_stop=False):
    """Step with the replayed proposals until the cursor reaches stop

    :returns: (dict) obs at stop, and when step_at_stop the reward, trace
    and info of the step taken there
    """
    env = make_env(market, cfg, leak=leak)
    obs, info = env.reset()
    while env.cursor < stop:
        obs, _, terminated, truncated, info = env.step(actions[env.cursor])
        if terminated or truncated:
            break
    out = {'obs': obs, 'cursor': env.cursor, 'env': env}
    if step_at_stop and not env.done:
        _, reward, _, _, info = env.step(actions[env.cursor])
        out.update({'reward': reward, 'trace': info['reward_trace'],
                    'info': info})
    return out


def _trace_bytes(reward, trace):
    return repr((reward, sorted(trace.as_dict().items()))).encode()


def _sample_points(fixture, n_samples, low, k_min, k_max, high=None):
    """Seeded (t, k) pairs with low <= t <= high and t + k inside the slice"""
    last = fixture.market.n_bars - 1
    if high is not None:
        last = min(last, high + k_max)
    points = []
    for _ in range(n_samples):
        k = int(fixture.rng.integers(k_min, k_max + 1))
        t = int(fixture.rng.integers(low, last - k + 1))
        points.append((t, k))
    return points


def test_feature_staleness(leak=False, n_samples=N_SAMPLES, seed=7):
    """A sentinel in bar t+k, k >= 1, leaves the step-t observation unchanged

    Negative control: a sentinel in bar t-1 changes it.
    """
    leak = CHECK_LEAKS['feature_staleness'] if leak else None
    fixture = make_fixture(seed)
    L = fixture.window
    index = fixture.market.bars.index

    stale, controls_unchanged = [], 0
    for t, k in _sample_points(fixture, n_samples, L, 1, MAX_OFFSET):
        base = _run_to(fixture.market, fixture.cfg, fixture.actions, t, leak)
        mutated = _run_to(_mutated(fixture, index[t + k]), fixture.cfg,
                          fixture.actions, t, leak)
        if base['obs']['flat'].tobytes() != mutated['obs']['flat'].tobytes():
            stale.append((t, k))

        control = _run_to(_mutated(fixture, index[t - 1]), fixture.cfg,
                          fixture.actions, t, leak)
        if base['obs']['flat'].tobytes() == control['obs']['flat'].tobytes():
            controls_unchanged += 1

    passed = not stale and controls_unchanged == 0
    evidence = (f"{n_samples} samples, {len(stale)} observations exposed a " +
                f"future sentinel, {controls_unchanged} past sentinels " +
                "went unseen")
    return CheckResult('feature_staleness', passed, evidence, leak)


def fill_fixture(window, n_extra=8):
    """Bars whose close_t, open_{t+1} and close_{t+1} are pairwise distinct

    The first decision bar has close 1.10, the next open 1.20 and the next
    close 1.30.
    """
    n = window + n_extra
    opens = np.full(n, 1.10)
    closes = np.full(n, 1.10)
    j = np.arange(n - window)
    opens[window:] = 1.20 + 0.2 * j
    closes[window:] = 1.30 + 0.2 * j
    frame = pd.DataFrame({
        fxbars.COL_TIMESTAMP: fxbars.trading_hours('2022-01-03T00:00:00Z', n),
        'open': opens, 'high': np.maximum(opens, closes),
        'low': np.minimum(opens, closes), 'close': closes,
        'volume': np.full(n, 1000.0)})
    bars = fxbars.from_df(frame)
    features = pd.DataFrame(0.0, index=bars.index, columns=feature_names())
    return MarketSlice(bars=bars, features=features)


def test_fill_price_rule(leak=False):
    """Entries fill at open_{t+1} plus or minus the friction adjustment"""
    leak = CHECK_LEAKS['fill_price_rule'] if leak else None
    base_cfg = default_config()
    frictionless = base_cfg.with_overrides(
        'environment.friction.spread_pips=0.0',
        'environment.friction.slippage_pips=0.0')
    L = base_cfg['environment']['window']
    market = fill_fixture(L)
    opens = market.bars['open'].to_numpy()
    closes = market.bars['close'].to_numpy()

    mismatches, n_checked = [], 0
    for cfg in (frictionless, base_cfg):
        friction = FrictionConfig(**cfg['environment']['friction'])
        adjust = (friction.spread_pips / 2.0 + friction.slippage_pips) * \
            friction.pip_size
        for t in range(L - 1, L + 5):
            for action, sign in ((ExtendedAction.OPEN_LONG, 1),
                                 (ExtendedAction.OPEN_SHORT, -1)):
                actions = np.zeros(market.n_bars, dtype=np.int64)
                actions[t] = int(action)
                out = _run_to(market, cfg, actions, t, leak,
                              step_at_stop=True)
                fill = out['info']['outcome'].fill_price
                expected = opens[t + 1] + adjust if sign > 0 \
                    else opens[t + 1] - adjust
                wrong_bar = fill in (closes[t] + sign * adjust,
                                     closes[t + 1] + sign * adjust)
                n_checked += 1
                if fill != expected or wrong_bar:
                    mismatches.append((t, action.name, fill, expected))

    first = market.bars.iloc[L - 1:L + 1]
    evidence = (f"{n_checked} fills checked, {len(mismatches)} off " +
                f"open_t+1; first decision bar close {first['close'].iloc[0]}" +
                f", next open {first['open'].iloc[1]}, next close " +
                f"{first['close'].iloc[1]}")
    return CheckResult('fill_price_rule', not mismatches, evidence, leak)


def test_reward_timing(leak=False, n_samples=N_SAMPLES, seed=11):
    """Bars from t+2 on never change the step-t reward or its trace

    Negative control: a sentinel at t+1 changes the trace of a step that
    holds a position. A flat HOLD step ignores every bar.
    """
    leak = CHECK_LEAKS['reward_timing'] if leak else None
    fixture = make_fixture(seed)
    L = fixture.window
    index = fixture.market.bars.index

    changed, controls_unchanged = [], 0
    for t, k in _sample_points(fixture, n_samples, L, 2, MAX_OFFSET + 1):
        base = _run_to(fixture.market, fixture.cfg, fixture.actions, t, leak,
                       step_at_stop=True)
        mutated = _run_to(_mutated(fixture, index[t + k]), fixture.cfg,
                          fixture.actions, t, leak, step_at_stop=True)
        if _trace_bytes(base['reward'], base['trace']) != \
                _trace_bytes(mutated['reward'], mutated['trace']):
            changed.append((t, k))

        control = _run_to(_mutated(fixture, index[t + 1]), fixture.cfg,
                          fixture.actions, t, leak, step_at_stop=True)
        if _trace_bytes(base['reward'], base['trace']) == \
                _trace_bytes(control['reward'], control['trace']):
            controls_unchanged += 1

    holds = np.zeros(fixture.market.n_bars, dtype=np.int64)
    flat_base = _run_to(fixture.market, fixture.cfg, holds, L, leak,
                        step_at_stop=True)
    flat_mutated = _run_to(_mutated(fixture, index[L + 1]), fixture.cfg,
                           holds, L, leak, step_at_stop=True)
    flat_same = _trace_bytes(flat_base['reward'], flat_base['trace']) == \
        _trace_bytes(flat_mutated['reward'], flat_mutated['trace'])

    passed = not changed and controls_unchanged == 0 and flat_same
    evidence = (f"{n_samples} samples, {len(changed)} rewards moved with a " +
                f"bar from t+2 on, {controls_unchanged} ignored bar t+1, " +
                f"flat HOLD invariant: {flat_same}")
    return CheckResult('reward_timing', passed, evidence, leak)


def test_scaler_leakage(leak=False, seed=13, n_bars=600, train_fraction=0.8):
    """Scaler moments depend on the train slice only

    They are byte-identical with the heldout slice perturbed or removed, and
    transforming heldout leaves them untouched. Negative control: perturbing
    a train bar changes them.
    """
    leak_heldout = bool(leak)
    cfg = default_config()
    window = cfg['environment']['window']
    rng = np.random.default_rng(seed)
    raw = fxbars.generate_synthetic(fxbars.SyntheticSpec(), n_bars, rng)

    split = build_dataset(raw, train_fraction, window=window,
                          leak_heldout=leak_heldout)
    reference = split.scaler.to_bytes()
    cut = split.split_index

    perturbed = raw.copy()
    perturbed.iloc[cut:, perturbed.columns.get_indexer(
        fxbars.PRICE_COLUMNS)] *= 1.3
    same_perturbed = build_dataset(perturbed, train_fraction, window=window,
                                   leak_heldout=leak_heldout
                                   ).scaler.to_bytes() == reference

    same_removed = build_dataset(raw.iloc[:cut], 1.0, window=window,
                                 leak_heldout=leak_heldout
                                 ).scaler.to_bytes() == reference

    heldout_raw = compute_features(
        pd.concat([split.train.iloc[-warmup_horizon(window):],
                   split.heldout]), warmup=warmup_horizon(window))
    apply_scaler(heldout_raw, split.scaler)
    unchanged_by_transform = split.scaler.to_bytes() == reference

    train_perturbed = raw.copy()
    row = warmup_horizon(window) + 10
    train_perturbed.iloc[row, train_perturbed.columns.get_indexer(
        fxbars.PRICE_COLUMNS)] *= 1.3
    control_changed = build_dataset(train_perturbed, train_fraction,
                                    window=window,
                                    leak_heldout=leak_heldout
                                    ).scaler.to_bytes() != reference

    passed = same_perturbed and same_removed and unchanged_by_transform and \
        control_changed
    evidence = (f"heldout perturbed: {same_perturbed}, heldout removed: " +
                f"{same_removed}, transform kept params: " +
                f"{unchanged_by_transform}, train perturbation moved " +
                f"params: {control_changed}")
    return CheckResult('scaler_leakage', passed, evidence,
                       CHECK_LEAKS['scaler_leakage'] if leak else None)


def test_mask_timing(leak=False, n_steps=1000, n_samples=N_SAMPLES, seed=17):
    """Masks are a function of the state at close_t and the risk settings

    Recomputing every stored mask from the logged pre-step state reproduces
    it, illegal proposals execute as HOLD with a violation, and the mask at
    t ignores a sentinel in bar t+1.
    """
    leak = CHECK_LEAKS['mask_timing'] if leak else None
    cfg = default_config()
    L = cfg['environment']['window']
    fixture = make_fixture(seed, n_bars=n_steps + warmup_horizon(L) + L + 2,
                           cfg=cfg, random_actions=True)
    env = make_env(fixture.market, cfg, leak=leak)
    risk = env.config.risk
    commission = env.config.friction.commission_per_lot

    obs, _ = env.reset()
    mismatches = bad_coercions = n_illegal = n_run = 0
    done = False
    while not done and n_run < n_steps:
        action = int(fixture.actions[env.cursor])
        stored = obs['mask'].astype(bool)
        obs, _, terminated, truncated, info = env.step(action)
        done = terminated or truncated
        n_run += 1
        recomputed = compute_legal_mask(info['prev_state'], risk,
                                        env.config.action_mode, commission)
        if not np.array_equal(recomputed, stored) or \
                not np.array_equal(info['mask'].astype(bool), stored):
            mismatches += 1
        if not stored[action]:
            n_illegal += 1
            if not info['violation'] or \
                    info['executed_extended'] != ExtendedAction.HOLD:
                bad_coercions += 1

    index = fixture.market.bars.index
    moved = 0
    for t, _ in _sample_points(fixture, n_samples, L, 1, 1, high=L + 200):
        base = _run_to(fixture.market, cfg, fixture.actions, t, leak)
        mutated = _run_to(_mutated(fixture, index[t + 1]), cfg,
                          fixture.actions, t, leak)
        if not np.array_equal(base['obs']['mask'], mutated['obs']['mask']):
            moved += 1

    passed = mismatches == 0 and bad_coercions == 0 and moved == 0
    evidence = (f"{n_run} steps, {mismatches} masks not reproduced from " +
                f"the logged state, {n_illegal} illegal proposals with " +
                f"{bad_coercions} bad coercions, {moved} of {n_samples} " +
                "masks moved with bar t+1")
    return CheckResult('mask_timing', passed, evidence, leak)


CHECKS = {
    'feature_staleness': test_feature_staleness,
    'fill_price_rule': test_fill_price_rule,
    'reward_timing': test_reward_timing,
    'scaler_leakage': test_scaler_leakage,
    'mask_timing': test_mask_timing,
}


def run_conformance_suite(sensitivity=True):
    """Run the five checks, and again with each guard broken

    :returns: (ConformanceReport)
    """
    report = ConformanceReport()
    for name, check in CHECKS.items():
        result = check()
        logger.info("...%s: %s", name, 'pass' if result.passed else 'FAIL')
        report.results.append(result)
        if sensitivity:
            broken = check(leak=True)
            logger.info("...%s with %s hook: %s", name, CHECK_LEAKS[name],
                        'fails as expected' if not broken.passed
                        else 'still passes')
            report.sensitivity.append(broken)
    return report
