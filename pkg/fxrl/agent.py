"""Mask-aware DQN and Double DQN

Every action choice and every bootstrap target is restricted to the legal
actions of the relevant state.
"""
import logging
from dataclasses import dataclass, field
from typing import Tuple

import numpy as np

from fxrl.errors import ConfigError, ContractError
from fxrl import qnetwork

logger = logging.getLogger(__name__)

AGENT_NAMES = ('dqn', 'doubledqn')
SYNC_UNITS = ('env_steps', 'learn_steps')


@dataclass(frozen=True)
class AgentConfig:
    """Learner hyperparameters"""
    name: str = 'doubledqn'
    hidden_dims: Tuple[int, ...] = (512, 512, 256)
    lr: float = 2.5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1.0e-8
    max_grad_norm: float = 10.0
    huber_delta: float = 1.0
    gamma: float = 0.99
    batch_size: int = 128
    buffer_size: int = 40_000
    epsilon_start: float = 1.0
    epsilon_end: float = 0.01
    epsilon_decay_steps: int = 30_000
    target_sync_interval: int = 2_000
    target_sync_unit: str = 'env_steps'
    total_timesteps: int = 60_000
    learn_start_steps: int = 10_000
    learn_frequency: int = 4

    def __post_init__(self):
        if self.name not in AGENT_NAMES:
            raise ConfigError(f"agent.name must be one of {AGENT_NAMES}, " +
                              f"got '{self.name}'")
        if self.target_sync_unit not in SYNC_UNITS:
            raise ConfigError("agent.target_sync.unit must be one of " +
                              f"{SYNC_UNITS}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError("agent.gamma must be in [0, 1]")
        for name in ('batch_size', 'buffer_size', 'target_sync_interval',
                     'learn_frequency'):
            if getattr(self, name) < 1:
                raise ConfigError(f"agent {name} must be >= 1")
        if self.batch_size > self.buffer_size:
            raise ConfigError("agent.batch_size must not exceed buffer_size")

    @property
    def double(self):
        return self.name == 'doubledqn'

    @classmethod
    def from_dict(cls, agent):
        """Build from the agent config section"""
        optimizer = agent.get('optimizer', {})
        epsilon = agent.get('epsilon', {})
        sync = agent.get('target_sync', {})
        training = agent.get('training', {})
        return cls(
            name=agent.get('name', 'doubledqn'),
            hidden_dims=tuple(agent.get('model', {}).get('hidden_dims',
                                                         (512, 512, 256))),
            lr=float(optimizer.get('lr', 2.5e-4)),
            beta1=float(optimizer.get('beta1', 0.9)),
            beta2=float(optimizer.get('beta2', 0.999)),
            adam_eps=float(optimizer.get('eps', 1.0e-8)),
            max_grad_norm=float(optimizer.get('max_grad_norm', 10.0)),
            huber_delta=float(agent.get('huber_delta', 1.0)),
            gamma=float(agent.get('gamma', 0.99)),
            batch_size=int(agent.get('batch_size', 128)),
            buffer_size=int(agent.get('buffer_size', 40_000)),
            epsilon_start=float(epsilon.get('start', 1.0)),
            epsilon_end=float(epsilon.get('end', 0.01)),
            epsilon_decay_steps=int(epsilon.get('decay_steps', 30_000)),
            target_sync_interval=int(sync.get('interval', 2_000)),
            target_sync_unit=sync.get('unit', 'env_steps'),
            total_timesteps=int(training.get('total_timesteps', 60_000)),
            learn_start_steps=int(training.get('learn_start_steps', 10_000)),
            learn_frequency=int(training.get('learn_frequency', 4)))


@dataclass
class Batch:
    """A minibatch of transitions"""
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray
    masks: np.ndarray
    next_masks: np.ndarray
    indices: np.ndarray = field(default=None, repr=False)

    def __len__(self):
        return len(self.actions)


class ReplayBuffer:
    """Fixed-capacity FIFO ring of transitions, masks included"""
    def __init__(self, capacity, state_dim, n_actions):
        self.capacity = int(capacity)
        self.states = np.zeros((capacity, state_dim), dtype=np.float64)
        self.next_states = np.zeros((capacity, state_dim), dtype=np.float64)
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity, dtype=np.float64)
        self.dones = np.zeros(capacity, dtype=np.float64)
        self.masks = np.zeros((capacity, n_actions), dtype=bool)
        self.next_masks = np.zeros((capacity, n_actions), dtype=bool)
        self.cursor = 0
        self.size = 0

    def __len__(self):
        return self.size

    def push(self, state, action, reward, next_state, done, mask, next_mask):
        """Store a transition, evicting the oldest when full"""
        if not mask[action]:
            raise ContractError(f"Stored action {action} is illegal under " +
                                "its mask")
        i = self.cursor
        self.states[i] = state
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_states[i] = next_state
        self.dones[i] = float(done)
        self.masks[i] = mask
        self.next_masks[i] = next_mask
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size, rng):
        """Uniform sample with replacement over the stored transitions"""
        if self.size < batch_size:
            raise ContractError(f"Cannot sample {batch_size} from " +
                                f"{self.size} transitions")
        idx = rng.integers(0, self.size, size=batch_size)
        return Batch(states=self.states[idx], actions=self.actions[idx],
                     rewards=self.rewards[idx],
                     next_states=self.next_states[idx],
                     dones=self.dones[idx], masks=self.masks[idx],
                     next_masks=self.next_masks[idx], indices=idx)


@dataclass(frozen=True)
class EpsilonSchedule:
    """Linear decay from start to end over decay_steps"""
    start: float = 1.0
    end: float = 0.01
    decay_steps: int = 30_000

    def value(self, step):
        if step >= self.decay_steps:
            return self.end
        return self.start + (self.end - self.start) * step / self.decay_steps


def masked_argmax(q, mask):
    """Argmax over legal entries, lowest index on ties, along the last axis"""
    return np.argmax(np.where(mask, q, -np.inf), axis=-1)


def select_action(q, mask, epsilon, rng):
    """Mask-aware epsilon-greedy

    One uniform draw is always taken so the exploration stream advances the
    same way whatever the branch.
    """
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ContractError("Mask has no legal action")

    if rng.random() < epsilon:
        legal = np.flatnonzero(mask)
        action = int(legal[rng.integers(len(legal))])
    else:
        action = int(masked_argmax(np.asarray(q, dtype=np.float64), mask))

    if not mask[action]:
        raise ContractError(f"Selected illegal action {action}")
    return action


def _check_next_masks(batch):
    if not batch.next_masks.any(axis=1).all():
        raise ContractError("A next-state mask has no legal action")


def dqn_targets(batch, target_params, gamma):
    """r + gamma (1 - done) max over legal a' of Q_target(s', a')"""
    _check_next_masks(batch)
    q_next = qnetwork.q_forward(target_params, batch.next_states)
    best = masked_argmax(q_next, batch.next_masks)
    rows = np.arange(len(batch))
    if not batch.next_masks[rows, best].all():
        raise ContractError("Target max used an illegal action")
    return batch.rewards + gamma * (1.0 - batch.dones) * q_next[rows, best]


def ddqn_targets(batch, online_params, target_params, gamma):
    """Select a* with the online net over legal actions, evaluate with target"""
    _check_next_masks(batch)
    rows = np.arange(len(batch))
    best = masked_argmax(qnetwork.q_forward(online_params, batch.next_states),
                         batch.next_masks)
    if not batch.next_masks[rows, best].all():
        raise ContractError("Online argmax used an illegal action")
    q_target = qnetwork.q_forward(target_params, batch.next_states)
    return batch.rewards + gamma * (1.0 - batch.dones) * q_target[rows, best]


def sync_target(online_params):
    """Hard copy of the online parameters"""
    return online_params.copy()


class QAgent:
    """Online and target networks, optimizer and exploration schedule"""
    def __init__(self, config, state_dim, n_actions, rng):
        self.config = config
        self.state_dim = state_dim
        self.n_actions = n_actions
        dims = [state_dim] + list(config.hidden_dims) + [n_actions]
        self.online = qnetwork.init_params(dims, rng)
        self.target = sync_target(self.online)
        self.opt = qnetwork.init_adam(self.online, config.lr, config.beta1,
                                      config.beta2, config.adam_eps)
        self.schedule = EpsilonSchedule(config.epsilon_start,
                                        config.epsilon_end,
                                        config.epsilon_decay_steps)
        self.n_learn_steps = 0
        self.n_syncs = 0

    def check_input(self, state_dim, n_actions):
        """Raise when an environment does not fit the network"""
        if (state_dim, n_actions) != (self.online.input_dim,
                                      self.online.n_actions):
            raise ContractError(
                f"Environment ({state_dim}, {n_actions}) does not match " +
                f"network ({self.online.input_dim}, {self.online.n_actions})")

    def act(self, state, mask, step, rng):
        """Epsilon-greedy action at an environment step"""
        q = qnetwork.q_forward(self.online, state)
        return select_action(q, mask, self.schedule.value(step), rng)

    def greedy(self, state, mask):
        """Masked argmax, no exploration"""
        q = qnetwork.q_forward(self.online, state)
        mask = np.asarray(mask, dtype=bool)
        if not mask.any():
            raise ContractError("Mask has no legal action")
        return int(masked_argmax(q, mask))

    def targets(self, batch):
        if self.config.double:
            return ddqn_targets(batch, self.online, self.target,
                                self.config.gamma)
        return dqn_targets(batch, self.target, self.config.gamma)

    def learn(self, batch):
        """One gradient step on a batch, returns the loss"""
        targets = self.targets(batch)
        self.online, self.opt, loss = qnetwork.train_step(
            self.online, self.opt, batch.states, batch.actions, targets,
            self.config.max_grad_norm, self.config.huber_delta)
        self.n_learn_steps += 1
        return loss

    def sync(self):
        self.target = sync_target(self.online)
        self.n_syncs += 1

    def save(self, path, meta=None):
        meta = dict(meta or {})
        meta.update({'agent': self.config.name,
                     'n_learn_steps': self.n_learn_steps,
                     'n_syncs': self.n_syncs})
        qnetwork.save_checkpoint(path, self.online, self.target, self.opt,
                                 meta)

    @classmethod
    def from_checkpoint(cls, path, config):
        """Rebuild an agent from a checkpoint"""
        loaded = qnetwork.load_checkpoint(path)
        online = loaded['online']
        agent = cls.__new__(cls)
        agent.config = config
        agent.state_dim = online.input_dim
        agent.n_actions = online.n_actions
        agent.online = online
        agent.target = loaded['target']
        agent.opt = loaded['opt']
        agent.schedule = EpsilonSchedule(config.epsilon_start,
                                         config.epsilon_end,
                                         config.epsilon_decay_steps)
        agent.n_learn_steps = int(loaded['meta'].get('n_learn_steps', 0))
        agent.n_syncs = int(loaded['meta'].get('n_syncs', 0))
        agent.meta = loaded['meta']
        return agent
