#!/usr/bin/env python3
"""
AdAuctionLab Experiment Runner

Generate auction logs, train EdgeNet and DNA-lite, and evaluate or audit
mechanisms from one reproducible configuration.

Usage:
    python run_experiment.py gen                      # Write train/test logs
    python run_experiment.py train                    # Train EdgeNet
    python run_experiment.py train --model all        # EdgeNet and DNA-lite
    python run_experiment.py eval                     # Comparison table
    python run_experiment.py audit --mechanism gsp    # IC-R report
    python run_experiment.py compare                  # Multi-seed table

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
"""

import argparse
import os
import sys
import traceback
from pathlib import Path
from typing import List, Optional

sys.path.insert(0, str(Path(__file__).parent / "scripts"))

from pydantic import ValidationError

from console import print_error, verbose
import experiment
from mechanisms import MECHANISM_NAMES


EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2


class UsageParser(argparse.ArgumentParser):
    """ArgumentParser that reports usage errors with exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print_error(message)
        sys.exit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        '--config',
        help=f'Config file (default: ${experiment.CONFIG_ENV} or config/experiment.config.json)'
    )
    common.add_argument(
        '--set',
        dest='overrides',
        action='append',
        default=[],
        metavar='KEY=VALUE',
        help='Override any config field, e.g. --set train.learning_rate=0.003 (repeatable, JSON values)'
    )
    common.add_argument('--seed', type=int, help='Seed for data generation and training')
    common.add_argument('--steps', type=int, help='EdgeNet optimizer steps')
    common.add_argument('--out-dir', help='Put logs, checkpoints and reports under this directory')
    common.add_argument('--verbose', action='store_true', help='Show detail lines (sets ADLAB_VERBOSE)')

    parser = UsageParser(
        description='AdAuctionLab - neural and GSP-family ad auctions on synthetic logs',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  python run_experiment.py gen --seed 7
  python run_experiment.py train --steps 500 --model all
  python run_experiment.py eval --set eval.seeds=[0,1,2]
  python run_experiment.py audit --mechanism second-price
  python run_experiment.py compare --out-dir runs/smoke
        """
    )
    commands = parser.add_subparsers(dest='command', required=True, metavar='COMMAND')

    commands.add_parser('gen', parents=[common], help='Generate train and test auction logs')

    train = commands.add_parser('train', parents=[common], help='Train EdgeNet and/or DNA-lite')
    train.add_argument('--model', choices=['edgenet', 'dnalite', 'all'], default='edgenet')
    train.add_argument('--resume', action='store_true', help='Continue from the existing checkpoint')

    commands.add_parser('eval', parents=[common], help='Metric table for the configured mechanisms')

    audit = commands.add_parser('audit', parents=[common], help='Empirical regret / IC-R of one mechanism')
    audit.add_argument('--mechanism', choices=MECHANISM_NAMES, default='edgenet')

    compare = commands.add_parser('compare', parents=[common], help='Train per seed, then tabulate mean ± std')
    compare.add_argument('--resume', action='store_true', help='Continue or reuse per-seed checkpoints')

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.verbose:
        os.environ['ADLAB_VERBOSE'] = '1'

    try:
        config = experiment.load_config(
            args.config, args.overrides, seed=args.seed, steps=args.steps, out_dir=args.out_dir
        )
    except (experiment.ConfigError, ValidationError) as e:
        print_error(f"Invalid configuration: {e}")
        return EXIT_USAGE

    try:
        if args.command == 'gen':
            experiment.cmd_gen(config)
        elif args.command == 'train':
            experiment.cmd_train(config, model=args.model, resume=args.resume)
        elif args.command == 'eval':
            experiment.cmd_eval(config)
        elif args.command == 'audit':
            experiment.cmd_audit(config, mechanism=args.mechanism)
        elif args.command == 'compare':
            experiment.cmd_compare(config, resume=args.resume)
    except KeyboardInterrupt:
        print()
        print_error("Interrupted by user")
        return EXIT_RUNTIME
    except Exception as e:
        print()
        print_error(f"Fatal error: {e}")
        if verbose():
            traceback.print_exc()
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
