"""Tests for config resolution, the config corpus and the runtime audit"""
import os
import tempfile
import unittest

from fxrl import config
from fxrl.agent import AgentConfig
from fxrl.config import DEFAULT_CONFIG_DIR, resolve_config
from fxrl.environment import EnvConfig
from fxrl.errors import ConfigError
from fxrl.reward import RewardConfig
from fxrl.runner import FAMILIES, family_variants, resolve_family

BASE = os.path.join(DEFAULT_CONFIG_DIR, 'base.yaml')


class TestResolve(unittest.TestCase):
    """Test layering, type checks and hashing"""
    def test_base_matches_defaults(self):
        self.assertEqual(resolve_config(BASE).hash, resolve_config().hash)

    def test_assignment(self):
        cfg = resolve_config(BASE, assignments=['agent.gamma=0.95',
                                                'environment.window=12'])
        self.assertEqual(cfg['agent']['gamma'], 0.95)
        self.assertEqual(cfg.get('environment.window'), 12)
        self.assertNotEqual(cfg.hash, resolve_config(BASE).hash)

    def test_int_widens_to_float(self):
        cfg = resolve_config(assignments=['environment.initial_capital=5000'])
        self.assertIsInstance(cfg['environment']['initial_capital'], float)

    def test_unknown_key(self):
        with self.assertRaisesRegex(ConfigError, 'agent.gama'):
            resolve_config(assignments=['agent.gama=0.9'])

    def test_wrong_type(self):
        with self.assertRaises(ConfigError):
            resolve_config(assignments=['agent.batch_size=big'])
        with self.assertRaises(ConfigError):
            resolve_config(assignments=['environment.scaling.pyramid=1'])

    def test_out_of_range(self):
        with self.assertRaises(ConfigError):
            resolve_config(assignments=['environment.risk.max_leverage=0.0'])
        with self.assertRaises(ConfigError):
            resolve_config(assignments=['data.train_fraction=1.5'])
        with self.assertRaises(ConfigError):
            resolve_config(assignments=['benchmark.name=oracle'])

    def test_bad_assignment(self):
        with self.assertRaises(ConfigError):
            config.parse_assignment('agent.gamma')

    def test_bad_yaml(self):
        with self.assertRaises(ConfigError):
            resolve_config('agent: [unclosed')

    def test_seed(self):
        cfg = resolve_config(BASE, seed=7)
        self.assertEqual(cfg.seed, 7)

    def test_later_layers_win(self):
        cfg = resolve_config(BASE, overrides=[{'agent': {'gamma': 0.5}},
                                              {'agent': {'gamma': 0.7}}])
        self.assertEqual(cfg['agent']['gamma'], 0.7)

    def test_hash_ignores_key_order(self):
        a = resolve_config({'agent': {'gamma': 0.5, 'batch_size': 64}})
        b = resolve_config({'agent': {'batch_size': 64, 'gamma': 0.5}})
        self.assertEqual(a.hash, b.hash)

    def test_snapshot(self):
        cfg = resolve_config(BASE, assignments=['agent.name=dqn'])
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'resolved_config.yaml')
            cfg.write(path)
            again = config.read_snapshot(path)
        self.assertEqual(again.hash, cfg.hash)

    def test_diff(self):
        a = resolve_config()
        b = a.with_overrides('agent.gamma=0.9', 'experiment.name=x')
        self.assertEqual(config.config_diff(a, b), ['agent.gamma'])


class TestCorpus(unittest.TestCase):
    """Every shipped config file resolves on top of base.yaml"""
    def test_validate_corpus(self):
        report = config.validate_corpus()
        self.assertGreater(len(report), 20)
        failed = report[~report['ok']]
        self.assertTrue(failed.empty, failed.to_string())

    def test_families(self):
        """Family variants differ only in their declared keys"""
        expected = {'e01': 7, 'e02': 2, 'e03': 4}
        for family in FAMILIES:
            variants = resolve_family(family, BASE)
            self.assertEqual(len(variants), expected[family])
            self.assertEqual(len(family_variants(family)), expected[family])

    def test_uncontrolled_variant(self):
        with tempfile.TemporaryDirectory() as tmp:
            os.makedirs(os.path.join(tmp, 'actions'))
            for name, body in [('a.yaml', 'environment:\n  window: 24\n'),
                               ('b.yaml', 'environment:\n  window: 12\n')]:
                with open(os.path.join(tmp, 'actions', name), 'w',
                          encoding='utf-8') as file:
                    file.write(body)
            with self.assertRaisesRegex(ConfigError, 'environment.window'):
                resolve_family('e02', BASE, config_root=tmp)

    def test_unknown_family(self):
        with self.assertRaises(ConfigError):
            family_variants('e99')

    def test_training_profiles(self):
        """Desk and paper profiles set the run length, not the frictions"""
        base = resolve_config(BASE)
        for name, steps in [('desk', 60_000), ('paper', 1_000_000)]:
            cfg = resolve_config(BASE, overrides=[os.path.join(
                DEFAULT_CONFIG_DIR, 'profiles', f'{name}.yaml')])
            agent = AgentConfig.from_dict(cfg['agent'])
            self.assertEqual(agent.total_timesteps, steps)
            self.assertEqual(agent.learn_start_steps, 10_000)
            self.assertEqual(agent.learn_frequency, 4)
            self.assertEqual(cfg['environment'], base['environment'])
            self.assertEqual(cfg['data']['source'], 'synthetic')
            self.assertEqual(cfg['data']['synthetic']['n_bars'], 5_000)
            self.assertEqual(cfg['data']['synthetic']['regime'], 'trend')


class TestRuntimeAudit(unittest.TestCase):
    """The values the base config sets are the values the runtime uses"""
    def setUp(self) -> None:
        self.cfg = resolve_config(BASE)

    def test_execution(self):
        env = EnvConfig.from_dict(self.cfg['environment'])
        self.assertEqual(env.friction.commission_per_lot, 3.5)
        self.assertEqual(env.friction.slippage_pips, 0.5)
        self.assertEqual(env.friction.rollover_hour_utc, 22)
        self.assertEqual(env.risk.max_leverage, 30.0)
        self.assertEqual(env.risk.liquidation_equity_fraction, 0.25)
        self.assertEqual(env.action_mode, 'extended')

    def test_reward(self):
        reward = RewardConfig.from_dict(self.cfg['reward'],
                                        self.cfg['reward_normalization'])
        self.assertEqual((reward.clip_min, reward.clip_max), (-1.0, 1.0))
        self.assertEqual(reward.weights['martingale_penalty'], 0.12)
        self.assertEqual(reward.weights['liquidation'], 2.0)
        self.assertEqual(len(reward.enabled_components), 11)

    def test_agent(self):
        agent = AgentConfig.from_dict(self.cfg['agent'])
        self.assertEqual((agent.epsilon_start, agent.epsilon_end,
                          agent.epsilon_decay_steps), (1.0, 0.01, 30_000))
        self.assertEqual(agent.buffer_size, 40_000)
        self.assertEqual(agent.batch_size, 128)
        self.assertEqual(agent.gamma, 0.99)
        self.assertEqual(agent.learn_start_steps, 10_000)
        self.assertEqual(agent.learn_frequency, 4)
        self.assertEqual(agent.target_sync_interval, 2_000)
        self.assertEqual(agent.max_grad_norm, 10.0)
        self.assertEqual(agent.lr, 2.5e-4)


if __name__ == '__main__':
    unittest.main()
