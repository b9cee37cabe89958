"""Tests for the replay buffer, exploration and mask-aware targets"""
import os
import tempfile
import unittest

import numpy as np
from scipy import stats

from fxrl import agent, qnetwork
from fxrl.agent import AgentConfig, Batch, QAgent, ReplayBuffer
from fxrl.config import resolve_config
from fxrl.errors import ConfigError, ContractError


def small_config(**changes):
    values = dict(hidden_dims=(8,), batch_size=4, buffer_size=16)
    values.update(changes)
    return AgentConfig(**values)


def fixed_params(q_values):
    """A one-layer network whose output is q_values for a unit input"""
    q_values = np.asarray(q_values, dtype=np.float64)
    return qnetwork.QNetworkParams([np.zeros((1, len(q_values)))],
                                   [q_values.copy()])


def one_batch(next_mask, reward=0.0, done=0.0):
    next_mask = np.asarray([next_mask], dtype=bool)
    return Batch(states=np.ones((1, 1)), actions=np.array([0]),
                 rewards=np.array([reward]), next_states=np.ones((1, 1)),
                 dones=np.array([done]), masks=np.ones_like(next_mask),
                 next_masks=next_mask)


class TestConfig(unittest.TestCase):
    def test_from_dict_defaults(self):
        """The default config reaches the learner unchanged"""
        cfg = AgentConfig.from_dict(resolve_config()['agent'])
        self.assertEqual(cfg, AgentConfig())
        self.assertEqual(cfg.buffer_size, 40_000)
        self.assertEqual(cfg.batch_size, 128)
        self.assertEqual(cfg.gamma, 0.99)
        self.assertTrue(cfg.double)

    def test_bad(self):
        with self.assertRaises(ConfigError):
            AgentConfig(name='ppo')
        with self.assertRaises(ConfigError):
            AgentConfig(batch_size=64, buffer_size=32)
        with self.assertRaises(ConfigError):
            AgentConfig(target_sync_unit='episodes')


class TestReplayBuffer(unittest.TestCase):
    def setUp(self) -> None:
        self.buffer = ReplayBuffer(3, 2, 3)
        self.mask = np.array([True, True, False])

    def test_fifo(self):
        for i in range(5):
            self.buffer.push(np.full(2, i), 0, float(i), np.full(2, i + 1),
                             False, self.mask, self.mask)
        self.assertEqual(len(self.buffer), 3)
        self.assertEqual(sorted(self.buffer.rewards), [2.0, 3.0, 4.0])

    def test_illegal_rejected(self):
        with self.assertRaises(ContractError):
            self.buffer.push(np.zeros(2), 2, 0.0, np.zeros(2), False,
                             self.mask, self.mask)

    def test_sample(self):
        for i in range(3):
            self.buffer.push(np.full(2, i), 1, 0.0, np.zeros(2), i == 2,
                             self.mask, self.mask)
        batch = self.buffer.sample(8, np.random.default_rng(0))
        self.assertEqual(len(batch), 8)
        self.assertEqual(batch.masks.shape, (8, 3))
        with self.assertRaises(ContractError):
            ReplayBuffer(4, 2, 3).sample(1, np.random.default_rng(0))


class TestExploration(unittest.TestCase):
    def test_schedule(self):
        schedule = agent.EpsilonSchedule(1.0, 0.01, 30_000)
        self.assertEqual(schedule.value(0), 1.0)
        self.assertAlmostEqual(schedule.value(15_000), 0.505)
        self.assertEqual(schedule.value(30_000), 0.01)
        self.assertEqual(schedule.value(90_000), 0.01)

    def test_never_illegal(self):
        rng = np.random.default_rng(0)
        mask = np.array([True, False, True, False])
        q = np.array([0.0, 10.0, 1.0, 20.0])
        for epsilon in (0.0, 0.5, 1.0):
            for _ in range(500):
                self.assertIn(agent.select_action(q, mask, epsilon, rng),
                              (0, 2))

    def test_greedy_on_legal(self):
        action = agent.select_action([5.0, 9.0, 1.0], [True, False, True],
                                     0.0, np.random.default_rng(0))
        self.assertEqual(action, 0)

    def test_uniform_over_legal(self):
        """Exploratory picks are uniform over the legal actions"""
        rng = np.random.default_rng(4)
        mask = np.array([True, True, False, True])
        picks = [agent.select_action(np.zeros(4), mask, 1.0, rng)
                 for _ in range(3_000)]
        counts = np.bincount(picks, minlength=4)[[0, 1, 3]]
        self.assertGreater(stats.chisquare(counts).pvalue, 0.001)

    def test_empty_mask(self):
        with self.assertRaises(ContractError):
            agent.select_action(np.zeros(2), [False, False], 0.1,
                                np.random.default_rng(0))


class TestTargets(unittest.TestCase):
    """Bootstrap targets ignore illegal next actions"""
    def test_dqn_masked_max(self):
        target = fixed_params([1.0, 100.0, 3.0])
        batch = one_batch([True, False, True], reward=0.5)
        y = agent.dqn_targets(batch, target, 0.9)
        self.assertAlmostEqual(y[0], 0.5 + 0.9 * 3.0)

    def test_terminal(self):
        target = fixed_params([1.0, 2.0])
        y = agent.dqn_targets(one_batch([True, True], 0.5, 1.0), target, 0.9)
        self.assertEqual(y[0], 0.5)

    def test_double_selects_with_online(self):
        online = fixed_params([5.0, 100.0, 1.0])
        target = fixed_params([2.0, -7.0, 50.0])
        batch = one_batch([True, False, True])
        y = agent.ddqn_targets(batch, online, target, 1.0)
        self.assertEqual(y[0], 2.0)
        self.assertEqual(agent.dqn_targets(batch, target, 1.0)[0], 50.0)

    def test_empty_next_mask(self):
        with self.assertRaises(ContractError):
            agent.dqn_targets(one_batch([False, False]),
                              fixed_params([0.0, 0.0]), 0.9)


class TestSampledTargets(unittest.TestCase):
    """Targets over sampled replay batches with random legality"""
    def setUp(self) -> None:
        rng = np.random.default_rng(21)
        self.rng = rng
        self.n_actions = 10
        self.online = qnetwork.init_params([6, 16, self.n_actions], rng)
        self.target = qnetwork.init_params([6, 16, self.n_actions], rng)
        # Push illegal-prone actions far above the rest
        self.online.biases[-1][::2] += 50.0
        self.target.biases[-1][::2] += 50.0

        self.buffer = ReplayBuffer(500, 6, self.n_actions)
        for _ in range(500):
            next_mask = rng.random(self.n_actions) < 0.4
            next_mask[0] = True
            self.buffer.push(rng.normal(size=6),
                             int(rng.integers(self.n_actions)),
                             float(rng.normal()), rng.normal(size=6),
                             bool(rng.random() < 0.1),
                             np.ones(self.n_actions, dtype=bool), next_mask)

    def test_no_illegal_next_action(self):
        gamma = 0.99
        for _ in range(1_000):
            batch = self.buffer.sample(32, self.rng)
            done = 1.0 - batch.dones
            legal = batch.next_masks

            q_target = qnetwork.q_forward(self.target, batch.next_states)
            best = np.where(legal, q_target, -np.inf).max(axis=1)
            np.testing.assert_array_equal(
                agent.dqn_targets(batch, self.target, gamma),
                batch.rewards + gamma * done * best)

            q_online = qnetwork.q_forward(self.online, batch.next_states)
            chosen = np.where(legal, q_online, -np.inf).argmax(axis=1)
            rows = np.arange(len(batch))
            self.assertTrue(legal[rows, chosen].all())
            np.testing.assert_array_equal(
                agent.ddqn_targets(batch, self.online, self.target, gamma),
                batch.rewards + gamma * done * q_target[rows, chosen])

    def test_double_equals_single_when_synced(self):
        synced = agent.sync_target(self.online)
        for _ in range(1_000):
            batch = self.buffer.sample(32, self.rng)
            np.testing.assert_array_equal(
                agent.ddqn_targets(batch, self.online, synced, 0.99),
                agent.dqn_targets(batch, synced, 0.99))


class TestQAgent(unittest.TestCase):
    def setUp(self) -> None:
        self.agent = QAgent(small_config(), 5, 3, np.random.default_rng(0))

    def test_sync(self):
        self.assertTrue(self.agent.target.equals(self.agent.online))
        buffer = ReplayBuffer(16, 5, 3)
        rng = np.random.default_rng(1)
        mask = np.ones(3, dtype=bool)
        for _ in range(8):
            buffer.push(rng.normal(size=5), int(rng.integers(3)),
                        float(rng.normal()), rng.normal(size=5), False,
                        mask, mask)
        self.agent.learn(buffer.sample(4, rng))
        self.assertEqual(self.agent.n_learn_steps, 1)
        self.assertFalse(self.agent.target.equals(self.agent.online))
        self.agent.sync()
        self.assertTrue(self.agent.target.equals(self.agent.online))
        self.assertEqual(self.agent.n_syncs, 1)

    def test_check_input(self):
        self.agent.check_input(5, 3)
        with self.assertRaises(ContractError):
            self.agent.check_input(6, 3)

    def test_checkpoint(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'final.ckpt')
            self.agent.save(path, {'seed': 3})
            loaded = QAgent.from_checkpoint(path, self.agent.config)
        self.assertTrue(loaded.online.equals(self.agent.online))
        self.assertEqual(loaded.meta['seed'], 3)
        state = np.arange(5.0)
        mask = np.array([False, True, True])
        self.assertEqual(loaded.greedy(state, mask),
                         self.agent.greedy(state, mask))


if __name__ == '__main__':
    unittest.main()
