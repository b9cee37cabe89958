"""Tests for the gymnasium environment"""
import unittest

import numpy as np

from fxrl import conformance
from fxrl.config import resolve_config
from fxrl.environment import EnvConfig, ForexEnv, make_env, step_record
from fxrl.errors import ConfigError, ContractError, DataError
from fxrl.execution import ExtendedAction
from tests.fixtures import WINDOW, crafted_config, crafted_market


class TestReset(unittest.TestCase):
    """Test the first observation"""
    def setUp(self) -> None:
        self.fixture = conformance.make_fixture()
        self.env = make_env(self.fixture.market, self.fixture.cfg)

    def test_shapes(self):
        obs, info = self.env.reset(seed=1)
        d_feat = self.fixture.market.d_feat
        self.assertEqual(obs['market'].shape, (24, d_feat))
        self.assertEqual(obs['portfolio'].shape, (10,))
        self.assertEqual(obs['mask'].shape, (10,))
        self.assertEqual(len(obs['flat']), 24 * d_feat + 10 + 10)
        self.assertEqual(self.env.flat_dim, len(obs['flat']))
        self.assertEqual(self.env.cursor, 23)
        self.assertEqual(info['equity'], 100_000.0)

    def test_flat_layout(self):
        obs, _ = self.env.reset()
        np.testing.assert_array_equal(obs['flat'][-10:], obs['mask'])
        np.testing.assert_array_equal(obs['flat'][:obs['market'].size],
                                      obs['market'].reshape(-1))
        self.assertEqual(obs['portfolio'][1], 1.0)

    def test_simplified(self):
        cfg = self.fixture.cfg.with_overrides(
            'environment.actions.mode=simplified')
        env = make_env(self.fixture.market, cfg)
        obs, _ = env.reset()
        self.assertEqual(env.n_actions, 3)
        self.assertEqual(len(obs['flat']),
                         24 * self.fixture.market.d_feat + 13)

    def test_bad_leak(self):
        with self.assertRaises(ConfigError):
            make_env(self.fixture.market, self.fixture.cfg, leak='future')

    def test_too_short(self):
        with self.assertRaises(DataError):
            ForexEnv(crafted_market([1.1] * 5), EnvConfig(window=4))


class TestStep(unittest.TestCase):
    """Test the step contract on crafted prices"""
    def setUp(self) -> None:
        close = [1.10] * 10 + [1.12] * 10
        open_ = [1.10] * 10 + [1.11] + [1.12] * 9
        self.market = crafted_market(close, open_)
        self.cfg = crafted_config()
        self.env = make_env(self.market, self.cfg)

    def test_observation_ends_at_cursor(self):
        obs, _ = self.env.reset()
        self.assertEqual(obs['market'][-1, 0], WINDOW - 1)
        obs, *_ = self.env.step(0)
        self.assertEqual(obs['market'][-1, 0], WINDOW)
        self.assertEqual(obs['market'][0, 0], 1)

    def test_fill_at_next_open(self):
        self.env.reset()
        for _ in range(9 - WINDOW + 1):
            self.env.step(0)
        self.assertEqual(self.env.cursor, 9)
        _, _, _, _, info = self.env.step(int(ExtendedAction.OPEN_LONG))
        self.assertAlmostEqual(info['outcome'].fill_price, 1.11 + 0.0001,
                               places=12)
        self.assertEqual(info['state'].mark_price, 1.12)
        self.assertEqual(info['timestamp'], self.market.bars.index[10])

    def test_truncates_at_last_bar(self):
        self.env.reset()
        n_steps = 0
        done = False
        while not done:
            _, _, terminated, truncated, _ = self.env.step(0)
            done = terminated or truncated
            n_steps += 1
        self.assertTrue(truncated)
        self.assertFalse(terminated)
        self.assertEqual(n_steps, 20 - WINDOW)
        self.assertEqual(self.env.cursor, 19)
        with self.assertRaises(ContractError):
            self.env.step(0)

    def test_action_out_of_range(self):
        self.env.reset()
        with self.assertRaises(ContractError):
            self.env.step(10)

    def test_illegal_proposal(self):
        """CLOSE while flat is a violation penalized by the constraint term"""
        self.env.reset()
        _, reward, _, _, info = self.env.step(int(ExtendedAction.CLOSE))
        self.assertTrue(info['violation'])
        self.assertEqual(info['executed_action'], 0)
        terms = info['reward_trace'].as_dict()
        self.assertEqual(terms['constraint']['weighted'], -0.1)
        self.assertAlmostEqual(reward, -0.1)

    def test_step_record(self):
        self.env.reset()
        _, _, _, _, info = self.env.step(int(ExtendedAction.OPEN_SHORT))
        record = step_record(info)
        for key in ('spread_cost', 'slippage_cost', 'commission', 'rollover',
                    'realized_delta', 'unrealized_delta', 'equity',
                    'used_margin', 'violation', 'liquidation_event'):
            self.assertIn(key, record)
        self.assertEqual(record['direction'], -1)
        self.assertEqual(record['mask'][int(ExtendedAction.OPEN_SHORT)], 1)


class TestLiquidation(unittest.TestCase):
    """A crash terminates the episode"""
    def test_terminates(self):
        close = [1.10] * 8 + [1.00] * 8
        cfg = crafted_config('environment.initial_capital=1000.0')
        env = make_env(crafted_market(close), cfg)
        env.reset()
        _, _, terminated, _, _ = env.step(int(ExtendedAction.OPEN_LONG))
        self.assertFalse(terminated)
        while not env.done:
            _, _, terminated, truncated, info = env.step(0)
        self.assertTrue(terminated)
        self.assertFalse(truncated)
        self.assertTrue(info['liquidation_event'])
        self.assertTrue(env.state.liquidated)
        self.assertEqual(env.cursor, 8)
        self.assertEqual(info['reward_trace'].as_dict()['liquidation']['raw'],
                         -1.0)


class TestDeterminism(unittest.TestCase):
    """Same inputs, same digest"""
    def test_digest(self):
        fixture = conformance.make_fixture(random_actions=True)

        def run(actions):
            env = make_env(fixture.market, fixture.cfg)
            env.reset(seed=3)
            while not env.done:
                env.step(actions[env.cursor])
            return env.execution_digest

        first = run(fixture.actions)
        self.assertEqual(first, run(fixture.actions))
        changed = fixture.actions.copy()
        changed[30] = (changed[30] + 1) % 10
        changed[31:] = 1
        self.assertNotEqual(first, run(changed))


class TestEnvConfig(unittest.TestCase):
    def test_from_dict(self):
        cfg = resolve_config(assignments=['environment.scaling.pyramid=false'])
        env_config = EnvConfig.from_dict(cfg['environment'])
        self.assertFalse(env_config.risk.pyramid_enabled)
        self.assertTrue(env_config.risk.martingale_enabled)
        self.assertEqual(env_config.friction.commission_per_lot, 3.5)
        self.assertEqual(env_config.n_actions, 10)

    def test_bad_mode(self):
        with self.assertRaises(ConfigError):
            EnvConfig(action_mode='continuous')


if __name__ == '__main__':
    unittest.main()
