"""Configuration: strict schema, layered YAML overrides and hashing

A resolved config is DEFAULT_CONFIG with each override document merged on
top in order, then dotted key=value assignments. Every key must exist in
DEFAULT_CONFIG and every value must match the type of its default.
"""
import copy
import datetime
import glob
import hashlib
import json
import logging
import os

import pandas as pd
import yaml

from fxrl.agent import AgentConfig
from fxrl.bars import SYNTHETIC_REGIMES
from fxrl.benchmarks import BENCHMARK_NAMES
from fxrl.environment import EnvConfig
from fxrl.errors import ConfigError
from fxrl.features import FeatureConfig
from fxrl.reward import RewardConfig

logger = logging.getLogger(__name__)

DEFAULT_CONFIG_DIR = os.path.join(os.path.dirname(os.path.dirname(
    os.path.abspath(__file__))), 'configs')

DEFAULT_CONFIG = {
    'experiment': {
        'family': '',
        'variant': '',
        'name': '',
    },
    'agent': {
        'name': 'doubledqn',
        'model': {'hidden_dims': [512, 512, 256]},
        'optimizer': {'lr': 2.5e-4, 'beta1': 0.9, 'beta2': 0.999,
                      'eps': 1.0e-8, 'max_grad_norm': 10.0},
        'huber_delta': 1.0,
        'gamma': 0.99,
        'batch_size': 128,
        'buffer_size': 40_000,
        'epsilon': {'start': 1.0, 'end': 0.01, 'decay_steps': 30_000},
        'target_sync': {'interval': 2_000, 'unit': 'env_steps'},
        'training': {'total_timesteps': 60_000, 'learn_start_steps': 10_000,
                     'learn_frequency': 4},
    },
    'reward': {
        'components': {
            'profit': {'enabled': True, 'weight': 1.0},
            'holding': {'enabled': True, 'weight': 0.03},
            'volatility': {'enabled': True, 'weight': 0.01},
            'drawdown': {'enabled': True, 'weight': 0.05},
            'transaction': {'enabled': True, 'weight': 0.10},
            'overtrading': {'enabled': True, 'weight': 0.02},
            'pyramid_penalty': {'enabled': True, 'weight': 0.05},
            'martingale_penalty': {'enabled': True, 'weight': 0.12},
            'margin': {'enabled': True, 'weight': 0.05},
            'liquidation': {'enabled': True, 'weight': 2.0},
            'constraint': {'enabled': True, 'weight': 0.10},
        },
        'thresholds': {
            'holding_max_drawdown': 0.05,
            'severe_drawdown': 0.20,
            'severe_drawdown_factor': 4.0,
            'overtrading_trades': 10,
            'margin_utilization': 0.5,
        },
    },
    'reward_normalization': {
        'mode': 'clip_only',
        'clip_min': -1.0,
        'clip_max': 1.0,
        'eps': 1.0e-8,
    },
    'environment': {
        'window': 24,
        'initial_capital': 100_000.0,
        'actions': {'mode': 'extended'},
        'scaling': {'pyramid': True, 'martingale': True},
        'friction': {
            'spread_pips': 1.0,
            'slippage_pips': 0.5,
            'commission_per_lot': 3.5,
            'pip_size': 0.0001,
            'long_swap_pips_per_day': -0.5,
            'short_swap_pips_per_day': -0.3,
            'rollover_hour_utc': 22,
        },
        'risk': {
            'max_leverage': 30.0,
            'maintenance_margin_ratio': 0.5,
            'liquidation_equity_fraction': 0.25,
            'depth_cap': 3,
            'base_lot': 0.1,
            'reduce_fraction': 0.5,
            'lot_size': 100_000.0,
        },
        'windows': {'overtrading': 50, 'volatility': 20},
    },
    'data': {
        'source': 'synthetic',
        'path': '',
        'pair': 'EURUSD',
        'train_fraction': 0.8,
        'features': {
            'macd_components': ['line', 'signal', 'hist'],
            'bollinger_components': ['mid', 'upper', 'lower'],
            'price_change_horizon': 1,
            'volatility_window': 20,
        },
        'synthetic': {
            'regime': 'trend',
            'n_bars': 5_000,
            'start': '2022-01-03T00:00:00Z',
            'start_price': 1.10,
            'drift': 2.0e-5,
            'volatility': 5.0e-4,
            'mean_reversion': 0.05,
            'long_run_price': 0.0,
            'gap_volatility': 1.0e-4,
            'range_volatility': 3.0e-4,
            'volume_mean': 1000.0,
        },
    },
    'training': {
        'random_seed': 42,
        'eval_interval': 10_000,
        'eval_episodes': 1,
        'output_dir': 'runs',
    },
    'benchmark': {
        'name': 'random',
        'fast': 10,
        'slow': 50,
        'bollinger_window': 20,
        'bollinger_k': 2.0,
    },
}

DATA_SOURCES = ('synthetic', 'csv')


def _type_name(value):
    return type(value).__name__


def _coerce(value, default, key):
    """Check value against the type of its default, widening int to float"""
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected bool, got {_type_name(value)}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected float, got {_type_name(value)}")
        return float(value)
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected int, got {_type_name(value)}")
        return value
    if isinstance(default, str):
        # Unquoted YAML timestamps load as datetimes
        if isinstance(value, datetime.datetime):
            return pd.Timestamp(value).strftime('%Y-%m-%dT%H:%M:%SZ')
        if not isinstance(value, str):
            raise ConfigError(f"{key}: expected str, got {_type_name(value)}")
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"{key}: expected list, got {_type_name(value)}")
        if default:
            return [_coerce(v, default[0], f"{key}[{i}]")
                    for i, v in enumerate(value)]
        return list(value)
    raise ConfigError(f"{key}: unsupported default type {_type_name(default)}")


def merge(target, override, schema=None, prefix=''):
    """Merge override into target in place, checking against the schema"""
    schema = DEFAULT_CONFIG if schema is None else schema
    if not isinstance(override, dict):
        raise ConfigError(f"{prefix.rstrip('.') or 'config'}: expected a " +
                          f"mapping, got {_type_name(override)}")
    for key, value in override.items():
        dotted = f"{prefix}{key}"
        if key not in schema:
            raise ConfigError(f"Unknown config key '{dotted}'")
        if isinstance(schema[key], dict):
            if value is None:
                continue
            merge(target[key], value, schema[key], dotted + '.')
        else:
            target[key] = _coerce(value, schema[key], dotted)
    return target


def parse_assignment(text):
    """Turn 'a.b.c=value' into {'a': {'b': {'c': value}}}

    The value is parsed with YAML scalar rules.
    """
    if '=' not in text:
        raise ConfigError(f"Override '{text}' is not of the form key=value")
    key, raw = text.split('=', 1)
    key = key.strip()
    if not key:
        raise ConfigError(f"Override '{text}' has an empty key")
    try:
        value = yaml.safe_load(raw) if raw.strip() else ''
    except yaml.YAMLError as err:
        raise ConfigError(f"Override '{text}' does not parse: {err}") from err

    nested = value
    for part in reversed(key.split('.')):
        nested = {part: nested}
    return nested


def load_document(source):
    """Read a config document from a mapping, a file path or YAML text"""
    if isinstance(source, dict):
        return copy.deepcopy(source)

    text = str(source)
    name = 'text'
    if os.path.isfile(text):
        name = text
        with open(text, 'r', encoding='utf-8') as file:
            text = file.read()

    try:
        document = yaml.safe_load(text)
    except yaml.YAMLError as err:
        raise ConfigError(f"{name} does not parse: {err}") from err
    if document is None:
        return {}
    if not isinstance(document, dict):
        raise ConfigError(f"{name}: top level must be a mapping")
    return document


def canonical_json(data):
    """Sorted-key compact JSON used for hashing"""
    return json.dumps(data, sort_keys=True, separators=(',', ':'))


def config_hash(data):
    """SHA-256 of the canonical JSON"""
    return hashlib.sha256(canonical_json(data).encode('utf-8')).hexdigest()


def flatten(data, prefix=''):
    """Dotted-key view of a nested mapping"""
    flat = {}
    for key, value in data.items():
        dotted = f"{prefix}{key}"
        if isinstance(value, dict):
            flat.update(flatten(value, dotted + '.'))
        else:
            flat[dotted] = value
    return flat


def config_diff(a, b, ignore=('experiment',)):
    """Dotted keys whose values differ between two configs

    :param ignore: (tuple of str) top-level sections left out
    """
    a = a.data if isinstance(a, ResolvedConfig) else a
    b = b.data if isinstance(b, ResolvedConfig) else b
    flat_a, flat_b = flatten(a), flatten(b)
    keys = set(flat_a) | set(flat_b)
    return sorted(k for k in keys
                  if k.split('.')[0] not in ignore and
                  flat_a.get(k) != flat_b.get(k))


def check_ranges(data):
    """Build every runtime config once so out-of-range values fail early"""
    AgentConfig.from_dict(data['agent'])
    EnvConfig.from_dict(data['environment'])
    RewardConfig.from_dict(data['reward'], data['reward_normalization'])
    FeatureConfig.from_dict(data['data']['features'])

    data_section = data['data']
    if data_section['source'] not in DATA_SOURCES:
        raise ConfigError(f"data.source must be one of {DATA_SOURCES}")
    if data_section['source'] == 'csv' and not data_section['path']:
        raise ConfigError("data.path is required when data.source is csv")
    if not 0.0 < data_section['train_fraction'] <= 1.0:
        raise ConfigError("data.train_fraction must be in (0, 1]")
    if data_section['synthetic']['regime'] not in SYNTHETIC_REGIMES:
        raise ConfigError("data.synthetic.regime must be one of " +
                          f"{SYNTHETIC_REGIMES}")
    if data_section['synthetic']['n_bars'] < 2:
        raise ConfigError("data.synthetic.n_bars must be >= 2")

    training = data['training']
    if training['eval_interval'] < 1 or training['eval_episodes'] < 0:
        raise ConfigError("training.eval_interval must be >= 1 and " +
                          "training.eval_episodes >= 0")
    if data['benchmark']['name'] not in BENCHMARK_NAMES:
        raise ConfigError(f"benchmark.name must be one of {BENCHMARK_NAMES}")
    if not 1 <= data['benchmark']['fast'] < data['benchmark']['slow']:
        raise ConfigError("benchmark.fast must be >= 1 and < benchmark.slow")


class ResolvedConfig:
    """A fully merged and validated configuration

    :param data: (dict) the merged mapping
    :param sources: (list of str) where each layer came from
    """
    def __init__(self, data, sources=()):
        self.data = data
        self.sources = list(sources)
        self.hash = config_hash(data)

    def __getitem__(self, key):
        return self.data[key]

    def get(self, key, default=None):
        """Look up a top-level or dotted key"""
        node = self.data
        for part in key.split('.'):
            if not isinstance(node, dict) or part not in node:
                return default
            node = node[part]
        return node

    @property
    def seed(self):
        return self.data['training']['random_seed']

    def to_yaml(self):
        return yaml.safe_dump(self.data, sort_keys=True,
                              default_flow_style=False)

    def write(self, path):
        """Write the snapshot as YAML"""
        with open(path, 'w', encoding='utf-8') as file:
            file.write(self.to_yaml())
        logger.info("...resolved config %s written to %s", self.hash[:12],
                    path)

    def with_overrides(self, *assignments):
        """A new config with key=value assignments applied"""
        return resolve_config(self.data, assignments=assignments)


def resolve_config(base=None, overrides=(), assignments=(), seed=None):
    """Merge config layers into a validated ResolvedConfig

    :param base: (dict, path or YAML text) first layer over DEFAULT_CONFIG,
    optional

    :param overrides: (list) further documents, later ones win

    :param assignments: (list of str) 'dotted.key=value' applied last

    :param seed: (int) overrides training.random_seed when given
    """
    data = copy.deepcopy(DEFAULT_CONFIG)
    sources = []
    layers = ([base] if base is not None else []) + list(overrides)
    for layer in layers:
        merge(data, load_document(layer))
        sources.append(layer if isinstance(layer, str) else '<mapping>')
    for text in assignments:
        merge(data, parse_assignment(text))
        sources.append(text)
    if seed is not None:
        merge(data, {'training': {'random_seed': seed}})

    check_ranges(data)
    return ResolvedConfig(data, sources)


def read_snapshot(path):
    """Reload a resolved_config.yaml"""
    return resolve_config(path)


def corpus_files(root=DEFAULT_CONFIG_DIR):
    """Every YAML file of a config tree, sorted"""
    return sorted(glob.glob(os.path.join(root, '**', '*.yaml'),
                            recursive=True))


def validate_corpus(root=DEFAULT_CONFIG_DIR, base='base.yaml'):
    """Resolve every file in a config tree on top of the base file

    :returns: (pandas.DataFrame) one row per file with columns file, ok,
    hash and error
    """
    base_path = os.path.join(root, base)
    rows = []
    for path in corpus_files(root):
        name = os.path.relpath(path, root)
        try:
            layers = [path] if os.path.samefile(path, base_path) \
                else [base_path, path]
            resolved = resolve_config(layers[0], overrides=layers[1:])
            again = resolve_config(yaml.safe_load(resolved.to_yaml()))
            if again.hash != resolved.hash:
                raise ConfigError("hash changes after a YAML round trip")
            rows.append({'file': name, 'ok': True, 'hash': resolved.hash,
                         'error': ''})
        except (ConfigError, OSError) as err:
            rows.append({'file': name, 'ok': False, 'hash': '',
                         'error': str(err)})

    report = pd.DataFrame(rows, columns=['file', 'ok', 'hash', 'error'])
    n_bad = int((~report['ok']).sum()) if len(report) else 0
    logger.info("...%d config files checked, %d failed", len(report), n_bad)
    return report
