#!/usr/bin/env python3
"""Command-line front end for equilibrium stopping analysis

JSON goes to stdout, logs to stderr, tables to <out>_<name>.csv.

Exit codes: 0 ok, 1 unexpected error, 2 model file/schema error, 3 invariant
violation, 4 enumeration too large, 5 numerical failure.
"""
import argparse
import json
import logging
import sys
import traceback
from pathlib import Path

# Add project root to path
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from shared.data_layer.config import AppConfig
from shared.data_layer.errors import StoppingError
from shared.data_layer.repositories import ModelConfigRepository
from shared.services.analysis_service import AnalysisService
from shared.utils.helpers import parse_labels

logger = logging.getLogger('stopping_cli')

COMMANDS = ('validate', 'classify', 'iterate', 'enumerate', 'two-state-map', 'put')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description='Equilibrium stopping regions for time-inconsistent CTMC stopping')
    subparsers = parser.add_subparsers(dest='command', required=True)
    for command in COMMANDS:
        sub = subparsers.add_parser(command)
        sub.add_argument('--config', required=True, help='JSON model file')
        sub.add_argument('--tol', type=float, help='equilibrium tolerance (default 1e-9 * C)')
        sub.add_argument('--seed', type=int, help='seed for Monte Carlo cross-checks')
        sub.add_argument('--out', help='prefix for CSV output files')
        sub.add_argument('--log-level', default=AppConfig.LOG_LEVEL, help='stderr log level')
        if command == 'classify':
            sub.add_argument('--region', help='comma separated state labels, e.g. "x2,x4"')
    return parser


def write_csv(frame, prefix: str, name: str):
    path = Path(f'{prefix}_{name}.csv')
    frame.to_csv(path, index=False)
    logger.info('wrote %s (%d rows)', path, len(frame))


def run(args) -> dict:
    config = ModelConfigRepository.parse(ModelConfigRepository.load(args.config))
    if args.seed is not None:
        config.seed = args.seed

    if args.command == 'validate':
        return AnalysisService.validate(config)
    if args.command == 'classify':
        region = parse_labels(args.region) if args.region is not None else None
        return AnalysisService.classify(config, region, tol=args.tol)
    if args.command == 'enumerate':
        return AnalysisService.enumerate(config, tol=args.tol)

    if args.command == 'iterate':
        document, frame = AnalysisService.iterate(config, tol=args.tol)
        table = 'steps'
    elif args.command == 'two-state-map':
        document, frame = AnalysisService.two_state_map(config, tol=args.tol)
        table = 'cases'
    else:
        document, frame = AnalysisService.put(config, tol=args.tol)
        table = 'values'
    if args.out:
        write_csv(frame, args.out, table)
    return document


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(stream=sys.stderr, level=str(args.log_level).upper(),
                        format='%(asctime)s %(levelname)s %(name)s: %(message)s')

    try:
        document = run(args)
    except StoppingError as exc:
        logger.error('%s: %s', type(exc).__name__, exc)
        print(json.dumps({'schema': AppConfig.SCHEMA_VERSION, 'command': args.command,
                          'error': str(exc), 'type': type(exc).__name__}, sort_keys=True))
        return exc.exit_code
    except Exception:
        traceback.print_exc()
        return 1

    print(json.dumps(document, sort_keys=True, indent=2))
    return 0


if __name__ == '__main__':
    sys.exit(main())
