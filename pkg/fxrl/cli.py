"""Command line: fxrl run | family | verify | bench | gen-data | backtest

Exit codes are 0 on success, 2 for a config error, 3 for a data error and 4
for a training fault.
"""
import argparse
import logging
import os
import sys

import yaml

from fxrl.bars import (SyntheticSpec, generate_synthetic, min_synthetic_bars,
                       to_csv)
from fxrl.benchmarks import BENCHMARK_NAMES
from fxrl.config import read_snapshot, resolve_config, validate_corpus
from fxrl.conformance import run_conformance_suite
from fxrl.errors import (EXIT_CONFIG, EXIT_DATA, EXIT_OK, EXIT_TRAINING,
                         ConfigError, DataError, TrainingFault)
from fxrl.features import DEFAULT_WINDOW, warmup_horizon
from fxrl.runner import (FAMILIES, LOG_FORMAT, run_backtest, run_benchmark,
                         run_experiment_family, run_training)

logger = logging.getLogger(__name__)


def _add_config_args(parser, required=True):
    parser.add_argument('--config', required=required,
                        help="base YAML config")
    parser.add_argument('--override', action='append', default=[],
                        metavar='K=V', help="dotted key=value, repeatable")
    parser.add_argument('--seed', type=int, default=None,
                        help="overrides training.random_seed")
    parser.add_argument('--out', default=None, help="output directory")


def _resolve(args):
    return resolve_config(args.config, assignments=args.override,
                          seed=args.seed)


def cmd_run(args):
    artifacts = run_training(_resolve(args), output_dir=args.out,
                             plot=args.plot)
    print(artifacts.run_dir)
    return EXIT_OK


def cmd_family(args):
    results = run_experiment_family(args.name, args.config,
                                    assignments=args.override, seed=args.seed,
                                    output_dir=args.out, n_jobs=args.jobs)
    for artifacts in results:
        print(artifacts.run_dir)
    return EXIT_OK


def cmd_verify(args):
    report = run_conformance_suite(sensitivity=not args.no_sensitivity)
    print(report)
    if not report.passed or (not args.no_sensitivity and
                             not report.sensitive):
        return 1
    return EXIT_OK


def cmd_bench(args):
    cfg = _resolve(args)
    artifacts = run_benchmark(cfg, args.strategy, output_dir=args.out,
                              plot=args.plot)
    print(artifacts.run_dir)
    return EXIT_OK


def cmd_gen_data(args):
    try:
        with open(args.spec, 'r', encoding='utf-8') as file:
            values = yaml.safe_load(file) or {}
    except yaml.YAMLError as err:
        raise ConfigError(f"{args.spec} does not parse: {err}") from err
    if not isinstance(values, dict):
        raise ConfigError(f"{args.spec}: top level must be a mapping")

    n_bars = values.pop('n_bars', 5_000)
    if args.n_bars is not None:
        n_bars = args.n_bars
    try:
        spec = SyntheticSpec.from_dict(values)
    except TypeError as err:
        raise ConfigError(f"{args.spec}: {err}") from err

    min_bars = min_synthetic_bars(warmup_horizon(), DEFAULT_WINDOW)
    bars = generate_synthetic(spec, n_bars, args.seed, min_bars=min_bars)
    out = args.out or f'{spec.pair.lower()}_{spec.regime}_{args.seed}.csv'
    to_csv(bars, out)
    print(out)
    return EXIT_OK


def cmd_backtest(args):
    config_path = args.config or os.path.join(
        os.path.dirname(os.path.dirname(os.path.abspath(args.checkpoint))),
        'resolved_config.yaml')
    if not os.path.isfile(config_path):
        raise ConfigError(f"No config given and {config_path} does not exist")
    cfg = read_snapshot(config_path)
    if args.override:
        cfg = cfg.with_overrides(*args.override)
    artifacts = run_backtest(args.checkpoint, cfg, member=args.split,
                             output_dir=args.out, plot=args.plot)
    print(artifacts.run_dir)
    return EXIT_OK


def cmd_validate_configs(args):
    report = validate_corpus(args.root) if args.root else validate_corpus()
    print(report.to_string(index=False))
    return EXIT_OK if report['ok'].all() else EXIT_CONFIG


def build_parser():
    parser = argparse.ArgumentParser(
        prog='fxrl', description="Friction-aware Forex RL lab")
    parser.add_argument('-v', '--verbose', action='store_true',
                        help="debug logging")
    subparsers = parser.add_subparsers(dest='command', required=True)

    run = subparsers.add_parser('run', help="train one agent")
    _add_config_args(run)
    run.add_argument('--plot', action='store_true')
    run.set_defaults(func=cmd_run)

    family = subparsers.add_parser('family',
                                   help="train every variant of a family")
    family.add_argument('--name', required=True, choices=sorted(FAMILIES))
    family.add_argument('--jobs', type=int, default=1)
    _add_config_args(family)
    family.set_defaults(func=cmd_family)

    verify = subparsers.add_parser('verify',
                                   help="run the anti-lookahead checks")
    verify.add_argument('--no-sensitivity', action='store_true',
                        help="skip the broken-guard reruns")
    verify.set_defaults(func=cmd_verify)

    bench = subparsers.add_parser('bench', help="roll a rule strategy")
    bench.add_argument('--strategy', required=True, choices=BENCHMARK_NAMES)
    bench.add_argument('--plot', action='store_true')
    _add_config_args(bench, required=False)
    bench.set_defaults(func=cmd_bench)

    gen = subparsers.add_parser('gen-data', help="write synthetic bars")
    gen.add_argument('--spec', required=True, help="YAML regime description")
    gen.add_argument('--seed', type=int, required=True)
    gen.add_argument('--n-bars', type=int, default=None)
    gen.add_argument('--out', default=None, help="CSV path")
    gen.set_defaults(func=cmd_gen_data)

    backtest = subparsers.add_parser('backtest',
                                     help="greedy rollout of a checkpoint")
    backtest.add_argument('--checkpoint', required=True)
    backtest.add_argument('--config', default=None,
                          help="defaults to the run's resolved_config.yaml")
    backtest.add_argument('--override', action='append', default=[],
                          metavar='K=V')
    backtest.add_argument('--split', choices=('train', 'heldout'),
                          default='heldout')
    backtest.add_argument('--out', default=None)
    backtest.add_argument('--plot', action='store_true')
    backtest.set_defaults(func=cmd_backtest)

    check = subparsers.add_parser('validate-configs',
                                  help="resolve every file of a config tree")
    check.add_argument('--root', default=None)
    check.set_defaults(func=cmd_validate_configs)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format=LOG_FORMAT)
    try:
        return args.func(args)
    except ConfigError as err:
        logger.error("Config error: %s", err)
        return EXIT_CONFIG
    except DataError as err:
        logger.error("Data error: %s", err)
        return EXIT_DATA
    except TrainingFault as err:
        logger.error("Training fault: %s %s", err, err.diagnostics)
        return EXIT_TRAINING


if __name__ == '__main__':
    sys.exit(main())
