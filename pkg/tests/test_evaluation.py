"""Tests for rollouts, trade records and reconciliation"""
import os
import unittest

import numpy as np

from fxrl import conformance
from fxrl.benchmarks import HoldPolicy, RandomPolicy, benchmark_policy
from fxrl.errors import ContractError
from fxrl.evaluation import reconcile, rollout
from fxrl.execution import ExtendedAction
from tests.fixtures import (FRICTIONLESS, ScriptedPolicy, crafted_config,
                            crafted_market)

SLOW = os.environ.get('FXRL_SLOW_TESTS') == '1'


class TestTrades(unittest.TestCase):
    """Trade attribution on crafted prices"""
    def setUp(self) -> None:
        close = [1.10] * 6 + [1.12] * 6 + [1.11] * 6
        self.market = crafted_market(close)
        self.cfg = crafted_config(*FRICTIONLESS)

    def test_round_trip(self):
        policy = ScriptedPolicy({3: ExtendedAction.OPEN_LONG,
                                 8: ExtendedAction.CLOSE})
        result = rollout(policy, self.market, self.cfg)
        self.assertEqual(len(result.trades), 1)
        trade = result.trades[0]
        self.assertFalse(trade.is_open)
        self.assertEqual(trade.direction, 1)
        self.assertEqual(trade.open_price, 1.10)
        self.assertEqual(trade.close_price, 1.12)
        self.assertAlmostEqual(trade.pnl, 200.0, places=6)
        self.assertEqual(trade.open_time, self.market.bars.index[4])
        self.assertEqual(trade.close_time, self.market.bars.index[9])

    def test_reverse_splits_trades(self):
        policy = ScriptedPolicy({3: ExtendedAction.OPEN_LONG,
                                 8: ExtendedAction.REVERSE})
        result = rollout(policy, self.market, self.cfg)
        self.assertEqual(len(result.trades), 2)
        first, second = result.trades
        self.assertAlmostEqual(first.pnl, 200.0, places=6)
        self.assertEqual(second.direction, -1)
        self.assertTrue(second.is_open)
        # Short from 1.12 marked at 1.11
        self.assertAlmostEqual(second.unrealized, 100.0, places=6)
        residual = reconcile(result, 100_000.0)
        self.assertAlmostEqual(residual['trades'], 0.0, places=6)
        self.assertAlmostEqual(residual['ledger'], 0.0, places=6)
        self.assertAlmostEqual(result.report().win_rate, 1.0)

    def test_hold_only_frictionless(self):
        result = rollout(HoldPolicy(), self.market, self.cfg)
        self.assertEqual(result.trades, [])
        self.assertTrue((result.curve == 100_000.0).all())
        self.assertEqual(result.n_steps, 18 - 4)
        self.assertEqual(len(result.curve), result.n_steps + 1)

    def test_bad_policy(self):
        with self.assertRaises(ContractError):
            rollout(ScriptedPolicy({3: 42}), self.market, self.cfg)

    def test_max_steps(self):
        result = rollout(HoldPolicy(), self.market, self.cfg, max_steps=5)
        self.assertEqual(result.n_steps, 5)


class TestRollout(unittest.TestCase):
    """Rollouts on seeded synthetic data"""
    def setUp(self) -> None:
        self.fixture = conformance.make_fixture(seed=21)

    def test_buy_and_hold(self):
        result = rollout(benchmark_policy('buy_and_hold'),
                         self.fixture.market, self.fixture.cfg)
        self.assertEqual(len(result.trades), 1)
        self.assertTrue(result.trades[0].is_open)
        self.assertEqual(result.violation_count, 0)
        residual = reconcile(result, 100_000.0)
        self.assertAlmostEqual(residual['trades'], 0.0, places=6)
        self.assertAlmostEqual(residual['ledger'], 0.0, places=6)

    def test_deterministic(self):
        def run():
            policy = RandomPolicy(np.random.default_rng(4))
            return rollout(policy, self.fixture.market, self.fixture.cfg)
        first, second = run(), run()
        self.assertEqual(first.digest, second.digest)
        np.testing.assert_array_equal(first.rewards, second.rewards)
        self.assertTrue(first.curve.equals(second.curve))

    def test_random_reconciles(self):
        policy = RandomPolicy(np.random.default_rng(8))
        result = rollout(policy, self.fixture.market, self.fixture.cfg,
                         keep_traces=True)
        self.assertEqual(len(result.reward_traces), result.n_steps)
        residual = reconcile(result, 100_000.0)
        self.assertLess(abs(residual['trades']), 1e-6)
        self.assertLess(abs(residual['ledger']), 1e-6)
        self.assertEqual(result.violation_count, 0)
        self.assertTrue((result.rewards <= 1.0).all())
        self.assertTrue((result.rewards >= -1.0).all())

    @unittest.skipUnless(SLOW, "set FXRL_SLOW_TESTS=1")
    def test_long_random_reconciles(self):
        """10,000 steps of random legal actions close the ledger"""
        fixture = conformance.make_fixture(seed=3, n_bars=10_100)
        result = rollout(RandomPolicy(np.random.default_rng(0)),
                         fixture.market, fixture.cfg)
        self.assertGreaterEqual(result.n_steps, 9_900)
        residual = reconcile(result, 100_000.0)
        self.assertLess(abs(residual['trades']), 1e-6)
        self.assertLess(abs(residual['ledger']), 1e-6)


if __name__ == '__main__':
    unittest.main()
