"""One master seed fanned out to independent random streams"""
from dataclasses import dataclass

import numpy as np

# Spawn order is fixed; appending a stream keeps the existing ones unchanged
STREAM_NAMES = ('data', 'env', 'agent_init', 'exploration', 'replay')


@dataclass
class SeedStreams:
    """Independent PCG64 generators for each part of a run"""
    seed: int
    data: np.random.Generator
    env: np.random.Generator
    agent_init: np.random.Generator
    exploration: np.random.Generator
    replay: np.random.Generator

    def env_seed(self):
        """An integer seed for gymnasium's reset, drawn from the env stream"""
        return int(self.env.integers(0, 2 ** 31 - 1))


def seed_all(seed):
    """Build every random stream of a run from one integer seed

    :param seed: (int) master seed
    :returns: (SeedStreams)
    """
    children = np.random.SeedSequence(int(seed)).spawn(len(STREAM_NAMES))
    generators = {name: np.random.default_rng(child)
                  for name, child in zip(STREAM_NAMES, children)}
    return SeedStreams(seed=int(seed), **generators)
