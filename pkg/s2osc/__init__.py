import argparse
import json
import logging
import sys

from s2osc.config import configure_logging
from s2osc.errors import S2oscError, StageError

logger = logging.getLogger(__name__)


def create_cli():
    """argparse application factory"""
    parser = argparse.ArgumentParser(
        prog='s2osc',
        description='Transductive semi-supervised open set classification and its incremental extension')
    parser.add_argument('--log-level', help='overrides S2OSC_LOG_LEVEL')
    subparsers = parser.add_subparsers(dest='command', required=True)

    # Register command groups
    from s2osc.commands import baseline, iosc, osc, report, sweep
    osc.register(subparsers)
    iosc.register(subparsers)
    baseline.register(subparsers)
    sweep.register(subparsers)
    report.register(subparsers)

    return parser


def main(argv=None):
    """Run one command; stage-tagged error JSON on stderr and status 1 on failure"""
    parser = create_cli()
    args = parser.parse_args(argv)
    configure_logging(args.log_level)
    try:
        return args.handler(args)
    except StageError as e:
        error = e.to_dict()
    except S2oscError as e:
        # raised before any stage started, e.g. while reading --config
        error = StageError('config', e).to_dict()
    except OSError as e:
        error = StageError('io', e).to_dict()
    logger.error("%s failed in stage %s", args.command, error['stage'])
    print(json.dumps(error, sort_keys=True), file=sys.stderr)
    return 1
