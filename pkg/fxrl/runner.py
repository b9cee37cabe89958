"""Training runs, experiment families and run artifacts

A run directory holds:

    resolved_config.yaml   the merged config, written before the first step
    scaler.txt             train-only scaler moments
    step_log.jsonl         one record per environment step
    reward_trace_log.jsonl one RewardTrace per environment step
    episode_log.jsonl      one record per episode
    eval_log.jsonl         one record per periodic evaluation
    checkpoints/final.ckpt final networks and optimizer state
    metrics_report.csv     metrics of the final greedy rollout
    curves/final.csv       equity curve of the final greedy rollout
    run.log                text log
"""
import json
import logging
import os
from dataclasses import dataclass, field
from multiprocessing import Pool
from typing import Dict, List

import numpy as np

from fxrl.agent import AgentConfig, QAgent, ReplayBuffer
from fxrl.bars import (SyntheticSpec, dedup_last, from_csv, generate_synthetic,
                       min_synthetic_bars)
from fxrl.config import DEFAULT_CONFIG_DIR, config_diff, resolve_config
from fxrl.environment import make_env, step_record
from fxrl.errors import ConfigError, TrainingFault
from fxrl.benchmarks import benchmark_policy
from fxrl.evaluation import GreedyPolicy, load_policy, rollout
from fxrl.features import (FeatureConfig, build_dataset, market_slice,
                           warmup_horizon, write_scaler)
from fxrl.metrics import RunningMetrics, emit_report
from fxrl.seeding import seed_all

logger = logging.getLogger(__name__)

# family -> (config subdirectory, key prefixes a variant may change)
FAMILIES = {
    'e01': ('rewards', ('reward.components.',)),
    'e02': ('actions', ('environment.actions.mode',)),
    'e03': ('scaling', ('environment.scaling.',)),
}

LOG_FORMAT = '%(asctime)s %(name)s %(levelname)s %(message)s'


def _jsonable(value):
    """Fallback for numpy scalars and timestamps in log records"""
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    if hasattr(value, 'strftime'):
        return value.strftime('%Y-%m-%dT%H:%M:%SZ')
    raise TypeError(f"{type(value).__name__} is not serializable")


class JsonlWriter:
    """Newline-delimited JSON records with sorted keys"""
    def __init__(self, path):
        self.path = path
        self.n_records = 0
        self._file = open(path, 'w', encoding='utf-8')

    def write(self, record):
        self._file.write(json.dumps(record, sort_keys=True,
                                    default=_jsonable) + '\n')
        self.n_records += 1

    def close(self):
        self._file.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_jsonl(path):
    """Read every record of a JSONL log"""
    with open(path, encoding='utf-8') as file:
        return [json.loads(line) for line in file if line.strip()]


@dataclass
class RunArtifacts:
    """Where a run wrote its outputs, and its cadence counters"""
    run_dir: str
    config_hash: str
    status: str = 'ok'
    n_steps: int = 0
    n_learn_steps: int = 0
    n_syncs: int = 0
    n_evals: int = 0
    n_episodes: int = 0
    report: object = None
    paths: Dict[str, str] = field(default_factory=dict)

    def __getitem__(self, name):
        return self.paths[name]


def make_run_dir(output_dir, name):
    """Create a fresh run directory, suffixing the name on collision"""
    os.makedirs(output_dir, exist_ok=True)
    candidate = os.path.join(output_dir, name)
    suffix = 1
    while os.path.exists(candidate):
        candidate = os.path.join(output_dir, f'{name}_{suffix}')
        suffix += 1
    os.makedirs(candidate)
    return candidate


def run_name(cfg):
    experiment = cfg['experiment']
    if experiment['name']:
        return experiment['name']
    parts = [p for p in (experiment['family'], experiment['variant']) if p]
    return '_'.join(parts) or 'run'


def load_bars(cfg, streams):
    """Read or generate the bar table a config describes"""
    data = cfg['data']
    if data['source'] == 'csv':
        return from_csv(data['path'], data['pair'])

    synthetic = dict(data['synthetic'])
    n_bars = synthetic.pop('n_bars')
    spec = SyntheticSpec.from_dict(dict(synthetic, pair=data['pair']))
    window = cfg['environment']['window']
    min_bars = min_synthetic_bars(warmup_horizon(window), window,
                                  data['train_fraction'])
    return dedup_last(generate_synthetic(spec, n_bars, streams.data,
                                         min_bars=min_bars))


def load_market(cfg, streams):
    """Bars, features and train-only scaling

    :returns: (DatasetSplit, MarketSlice) the split and its train slice
    """
    bars = load_bars(cfg, streams)
    split = build_dataset(bars, cfg['data']['train_fraction'],
                          FeatureConfig.from_dict(cfg['data']['features']),
                          cfg['environment']['window'])
    return split, market_slice(split, 'train')


def _attach_file_log(run_dir):
    handler = logging.FileHandler(os.path.join(run_dir, 'run.log'),
                                  encoding='utf-8')
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    package_logger = logging.getLogger('fxrl')
    package_logger.addHandler(handler)
    if package_logger.level == logging.NOTSET or \
            package_logger.level > logging.INFO:
        package_logger.setLevel(logging.INFO)
    return handler


def _evaluate(agent, market, cfg, t):
    """Greedy rollout on a fresh environment, training state untouched"""
    result = rollout(GreedyPolicy(agent), market, cfg)
    report = result.report(label=f't{t}')
    record = {'t': t, 'n_steps': result.n_steps,
              'final_equity': float(result.curve.iloc[-1]),
              'digest': result.digest}
    record.update({k: v for k, v in report.as_dict().items() if k != 'label'})
    return record


def _episode_record(episode, n_steps, total_reward, running, state,
                    terminated, truncated):
    return {'episode': episode, 'n_steps': n_steps,
            'total_reward': total_reward, 'final_equity': state.equity,
            'cumulative_return': running.cumulative_return,
            'max_drawdown': running.max_drawdown, 'sharpe': running.sharpe,
            'liquidated': state.liquidated, 'terminated': terminated,
            'truncated': truncated, 'complete': terminated or truncated}


def run_training(cfg, output_dir=None, name=None, plot=False):
    """Train an agent as the config describes and write every artifact

    :param cfg: (ResolvedConfig)
    :param output_dir: (str) parent of the run directory, defaults to
    training.output_dir

    :returns: (RunArtifacts)

    Raises TrainingFault after writing checkpoints/fault.ckpt when the loss
    goes non-finite.
    """
    run_dir = make_run_dir(output_dir or cfg['training']['output_dir'],
                           name or run_name(cfg))
    handler = _attach_file_log(run_dir)
    artifacts = RunArtifacts(run_dir=run_dir, config_hash=cfg.hash)
    paths = artifacts.paths
    for key, rel in [('resolved_config', 'resolved_config.yaml'),
                     ('scaler', 'scaler.txt'),
                     ('step_log', 'step_log.jsonl'),
                     ('reward_trace_log', 'reward_trace_log.jsonl'),
                     ('episode_log', 'episode_log.jsonl'),
                     ('eval_log', 'eval_log.jsonl'),
                     ('checkpoint', os.path.join('checkpoints', 'final.ckpt')),
                     ('metrics_report', 'metrics_report.csv'),
                     ('curve', os.path.join('curves', 'final.csv'))]:
        paths[key] = os.path.join(run_dir, rel)
    os.makedirs(os.path.join(run_dir, 'checkpoints'))

    try:
        logger.info("Run %s, config %s, seed %d", run_dir, cfg.hash[:12],
                    cfg.seed)
        cfg.write(paths['resolved_config'])
        _train(cfg, run_dir, artifacts, plot)
    finally:
        logging.getLogger('fxrl').removeHandler(handler)
        handler.close()
    return artifacts


def _train(cfg, run_dir, artifacts, plot):
    paths = artifacts.paths
    streams = seed_all(cfg.seed)
    split, market = load_market(cfg, streams)
    write_scaler(split.scaler, paths['scaler'])

    agent_cfg = AgentConfig.from_dict(cfg['agent'])
    env = make_env(market, cfg)
    agent = QAgent(agent_cfg, env.flat_dim, env.n_actions, streams.agent_init)
    agent.check_input(env.flat_dim, env.n_actions)
    buffer = ReplayBuffer(agent_cfg.buffer_size, env.flat_dim, env.n_actions)
    eval_interval = cfg['training']['eval_interval']
    eval_episodes = cfg['training']['eval_episodes']
    total = agent_cfg.total_timesteps

    logger.info("...%d train bars, flat dim %d, %d actions, %d steps",
                market.n_bars, env.flat_dim, env.n_actions, total)

    with JsonlWriter(paths['step_log']) as step_log, \
            JsonlWriter(paths['reward_trace_log']) as trace_log, \
            JsonlWriter(paths['episode_log']) as episode_log, \
            JsonlWriter(paths['eval_log']) as eval_log:

        obs, info = env.reset(seed=streams.env_seed())
        episode, episode_steps, episode_reward = 0, 0, 0.0
        running = RunningMetrics(info['equity'])
        terminated = truncated = False

        for t in range(total):
            epsilon = agent.schedule.value(t)
            action = agent.act(obs['flat'], obs['mask'], t,
                               streams.exploration)
            next_obs, reward, terminated, truncated, info = env.step(action)
            done = terminated or truncated
            buffer.push(obs['flat'], action, reward, next_obs['flat'], done,
                        obs['mask'], next_obs['mask'])

            loss = None
            learned = synced = evaluated = False
            if t >= agent_cfg.learn_start_steps and \
                    t % agent_cfg.learn_frequency == 0 and \
                    len(buffer) >= agent_cfg.batch_size:
                batch = buffer.sample(agent_cfg.batch_size, streams.replay)
                try:
                    loss = agent.learn(batch)
                except TrainingFault as err:
                    err.diagnostics.update({'t': t, 'episode': episode})
                    fault_path = os.path.join(run_dir, 'checkpoints',
                                              'fault.ckpt')
                    agent.save(fault_path, {'config_hash': cfg.hash, 't': t,
                                            'fault': str(err)})
                    paths['fault_checkpoint'] = fault_path
                    artifacts.status = 'fault'
                    logger.error("Training fault at t=%d: %s", t, err)
                    raise
                learned = True
                if agent_cfg.target_sync_unit == 'learn_steps' and \
                        agent.n_learn_steps % \
                        agent_cfg.target_sync_interval == 0:
                    agent.sync()
                    synced = True

            if agent_cfg.target_sync_unit == 'env_steps' and \
                    t % agent_cfg.target_sync_interval == 0:
                agent.sync()
                synced = True

            if eval_episodes > 0 and t % eval_interval == 0:
                for _ in range(eval_episodes):
                    eval_log.write(_evaluate(agent, market, cfg, t))
                artifacts.n_evals += 1
                evaluated = True

            record = step_record(info)
            record.update({'t': t, 'episode': episode, 'reward': reward,
                           'epsilon': epsilon, 'loss': loss,
                           'learned': learned, 'synced': synced,
                           'evaluated': evaluated, 'terminated': terminated,
                           'truncated': truncated})
            step_log.write(record)
            trace = info['reward_trace'].as_dict()
            trace['t'] = t
            trace_log.write(trace)

            running.update(info['equity'])
            episode_steps += 1
            episode_reward += reward
            if done:
                episode_log.write(_episode_record(
                    episode, episode_steps, episode_reward, running,
                    env.state, terminated, truncated))
                logger.info("...episode %d ended at t=%d, equity %.2f",
                            episode, t, env.state.equity)
                episode += 1
                episode_steps, episode_reward = 0, 0.0
                obs, info = env.reset(seed=streams.env_seed())
                running = RunningMetrics(info['equity'])
            else:
                obs = next_obs

        if episode_steps:
            episode_log.write(_episode_record(
                episode, episode_steps, episode_reward, running, env.state,
                False, False))
            episode += 1

    artifacts.n_steps = total
    artifacts.n_learn_steps = agent.n_learn_steps
    artifacts.n_syncs = agent.n_syncs
    artifacts.n_episodes = episode

    agent.save(paths['checkpoint'], {'config_hash': cfg.hash,
                                     'seed': cfg.seed, 't': total})
    result = rollout(GreedyPolicy(agent), market, cfg)
    artifacts.report = result.report(label=run_name(cfg))
    emit_report([artifacts.report], run_dir, curves={'final': result.curve},
                plot=plot)
    logger.info("...run finished: %d learn steps, %d syncs, %d evals, " +
                "final cumulative return %.6f", agent.n_learn_steps,
                agent.n_syncs, artifacts.n_evals,
                artifacts.report.cumulative_return)


def family_variants(family, config_root=DEFAULT_CONFIG_DIR):
    """Variant override files of an experiment family, sorted by name"""
    if family not in FAMILIES:
        raise ConfigError(f"Unknown experiment family '{family}', expected " +
                          f"one of {list(FAMILIES)}")
    subdir = os.path.join(config_root, FAMILIES[family][0])
    files = sorted(f for f in os.listdir(subdir) if f.endswith('.yaml'))
    if not files:
        raise ConfigError(f"No variant files in {subdir}")
    return [os.path.join(subdir, f) for f in files]


def resolve_family(family, base, overrides=(), assignments=(), seed=None,
                   config_root=DEFAULT_CONFIG_DIR):
    """Resolve every variant of a family and check they differ only in the
    family's declared keys

    :returns: (list of (str, ResolvedConfig)) variant name and config
    """
    allowed = FAMILIES.get(family, (None, ()))[1]
    resolved = []
    for path in family_variants(family, config_root):
        variant = os.path.splitext(os.path.basename(path))[0]
        cfg = resolve_config(base, overrides=list(overrides) + [path],
                             assignments=assignments, seed=seed)
        resolved.append((variant, cfg))

    reference = resolved[0][1]
    for variant, cfg in resolved[1:]:
        stray = [key for key in config_diff(reference.data, cfg.data)
                 if not key.startswith(allowed)]
        if stray:
            raise ConfigError(f"Variant {variant} of {family} changes " +
                              f"undeclared keys {stray}")
    return resolved


def _run_variant(job):
    cfg, output_dir, name = job
    return run_training(cfg, output_dir, name)


def run_experiment_family(family, base, overrides=(), assignments=(),
                          seed=None, output_dir=None, n_jobs=1,
                          config_root=DEFAULT_CONFIG_DIR):
    """Run every variant of an experiment family

    :param family: (str) e01 reward ablation, e02 action space or e03
    scaling availability

    :param base: (str or dict) base config

    :param n_jobs: (int) variants run in that many processes

    :returns: (list of RunArtifacts) in variant order
    """
    resolved = resolve_family(family, base, overrides, assignments, seed,
                              config_root)
    family_dir = os.path.join(
        output_dir or resolved[0][1]['training']['output_dir'], family)
    jobs = [(cfg, family_dir, variant) for variant, cfg in resolved]
    logger.info("Family %s: %d variants into %s", family, len(jobs),
                family_dir)

    if n_jobs > 1:
        with Pool(min(n_jobs, len(jobs))) as pool:
            runs: List[RunArtifacts] = pool.map(_run_variant, jobs)
    else:
        runs = [_run_variant(job) for job in jobs]

    reports = []
    for (variant, _), run in zip(resolved, runs):
        run.report.label = variant
        reports.append(run.report)
    emit_report(reports, family_dir)
    return runs


def _write_rollout(result, run_dir, label, plot=False):
    """Step log, report and curve of a rollout"""
    with JsonlWriter(os.path.join(run_dir, 'step_log.jsonl')) as step_log:
        for record in result.steps.to_dict(orient='records'):
            step_log.write(record)
    with JsonlWriter(os.path.join(run_dir, 'trades.jsonl')) as trades:
        for trade in result.trades:
            trades.write(trade.as_dict())
    report = result.report(label=label)
    emit_report([report], run_dir, curves={label: result.curve}, plot=plot)
    return report


def run_benchmark(cfg, name=None, output_dir=None, plot=False):
    """Roll a rule strategy over the train slice and write its report

    :param name: (str) strategy, defaults to benchmark.name

    :returns: (RunArtifacts)
    """
    name = name or cfg['benchmark']['name']
    run_dir = make_run_dir(output_dir or cfg['training']['output_dir'],
                           f'bench_{name}')
    cfg.write(os.path.join(run_dir, 'resolved_config.yaml'))
    streams = seed_all(cfg.seed)
    _, market = load_market(cfg, streams)
    policy = benchmark_policy(name, cfg['benchmark'], streams.exploration)
    result = rollout(policy, market, cfg)
    artifacts = RunArtifacts(run_dir=run_dir, config_hash=cfg.hash,
                             n_steps=result.n_steps)
    artifacts.report = _write_rollout(result, run_dir, name, plot)
    logger.info("...benchmark %s: cumulative return %.6f, %d trades", name,
                artifacts.report.cumulative_return,
                artifacts.report.trade_count)
    return artifacts


def run_backtest(checkpoint, cfg, member='train', output_dir=None,
                 plot=False):
    """Greedy rollout of a checkpoint over the train or heldout slice

    :returns: (RunArtifacts)
    """
    run_dir = make_run_dir(output_dir or cfg['training']['output_dir'],
                           f'backtest_{member}')
    streams = seed_all(cfg.seed)
    split, market = load_market(cfg, streams)
    if member != 'train':
        market = market_slice(split, member)
    result = rollout(load_policy(checkpoint, cfg), market, cfg)
    artifacts = RunArtifacts(run_dir=run_dir, config_hash=cfg.hash,
                             n_steps=result.n_steps)
    artifacts.report = _write_rollout(result, run_dir, member, plot)
    return artifacts
