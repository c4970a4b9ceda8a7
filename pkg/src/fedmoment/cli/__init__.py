"""
Command-line entry point.

    fedmoment run <spec> [--seed N]
    fedmoment sweep <spec> [--seed N]
    fedmoment compare <spec> [--seed N]

FEDMOMENT_THREADS caps how many groups (or sweep entries) run at once.
It changes wall time only, never results.
"""

import argparse
import logging

from fedmoment import __version__
from fedmoment import config
from fedmoment.cli.commands import cmd_compare, cmd_run, cmd_sweep
from fedmoment.cli.spec import SpecError, parse_spec


logger = logging.getLogger(__name__)

COMMANDS = {
    'run': cmd_run,
    'sweep': cmd_sweep,
    'compare': cmd_compare,
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog='fedmoment',
        description='Grouped sequential federated learning on a synthetic moment-localization task.',
    )
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    parser.add_argument('-v', '--verbose', action='store_true', help='log at DEBUG level')
    parser.add_argument('--debug', action='store_true', help='re-raise failures with a traceback')
    parser.add_argument(
        '--executor',
        choices=('serial', 'threaded'),
        help='group execution backend (default: threaded)',
    )
    subparsers = parser.add_subparsers(dest='command', required=True)
    for name, func in COMMANDS.items():
        sub = subparsers.add_parser(name, help=func.__doc__.strip().splitlines()[0])
        sub.add_argument('spec', help='path to the experiment spec file')
        sub.add_argument('--seed', type=int, help='override every seed in the spec')
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format='%(asctime)s %(levelname)s %(name)s: %(message)s',
    )
    settings = {'DEBUG': args.debug}
    if args.executor:
        settings['EXECUTOR_BACKEND'] = args.executor
    config.load_dict(settings)

    try:
        spec = parse_spec(args.spec)
    except SpecError as error:
        for diagnostic in error.diagnostics:
            logger.error(diagnostic)
        return 2
    if args.seed is not None:
        if args.seed < 0:
            logger.error(f'--seed must be >= 0, got {args.seed}')
            return 2
        spec = spec.with_seed(args.seed)
    return COMMANDS[args.command](spec)
