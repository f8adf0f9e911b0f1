# -*- coding: utf-8 -*-

# GNU General Public License v3.0+ (see LICENSES/GPL-3.0-or-later.txt or https://www.gnu.org/licenses/gpl-3.0.txt)
# SPDX-License-Identifier: GPL-3.0-or-later

"""
rtfgo - Shared Command Utilities

This module provides the exception hierarchy, error mapping, argparse
helpers and logging setup shared by all rtfgo commands.
"""

import argparse
import json
import logging
import os
import sys

try:
    from tqdm import tqdm
    HAS_TQDM = True
except ImportError:
    HAS_TQDM = False
    tqdm = None


logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


class RtfgoError(Exception):
    """Base class for every error raised by rtfgo."""
    exit_code = EXIT_NUMERICAL


class UsageError(RtfgoError):
    exit_code = EXIT_USAGE


class ConfigurationError(UsageError):
    pass


class DataError(RtfgoError):
    exit_code = EXIT_DATA


class ParseError(DataError):
    """A malformed row in an input file."""

    def __init__(self, line, reason, path=None):
        self.line = line
        self.reason = reason
        self.path = path
        where = f"{path}:{line}" if path else f"line {line}"
        super().__init__(f"{where}: {reason}")


class NonMonotonicTime(DataError):
    pass


class ExcessiveGap(DataError):
    pass


class EmptyOverlap(DataError):
    pass


class EmptyInput(DataError):
    pass


class InsufficientMotion(DataError):
    pass


class InvalidTrajectory(DataError):
    pass


class NumericalError(RtfgoError):
    exit_code = EXIT_NUMERICAL


class NonPositiveDefinite(NumericalError):
    pass


class NotGaugeFixed(NumericalError):
    pass


class LinearSolveFailure(NumericalError):
    pass


class EmptyGraphAfterMarginalization(NumericalError):
    pass


class DuplicateKey(NumericalError):
    pass


class UnknownKey(NumericalError):
    pass


class MissingEstimate(NumericalError):
    pass


class RunTimeout(NumericalError):
    """A run passed its deadline and was abandoned."""


class ReportError(RtfgoError):
    exit_code = EXIT_DATA


class IoError(ReportError):
    pass


def error_handler(e):
    """
    Log an exception raised by a command and return its exit code.

    Args:
        e: Exception raised while running the command

    Returns:
        int: Exit code of the exception's family
    """
    if isinstance(e, UsageError):
        prefix = 'Usage error'
    elif isinstance(e, ParseError):
        prefix = 'Parse error'
    elif isinstance(e, DataError):
        prefix = 'Data error'
    elif isinstance(e, ReportError):
        prefix = 'Report error'
    elif isinstance(e, NumericalError):
        prefix = 'Numerical failure'
    else:
        logger.error('Unexpected error: %s', e, exc_info=True)
        return EXIT_NUMERICAL
    logger.error('%s: %s', prefix, e)
    return e.exit_code


def setup_logging(verbosity):
    """Configure the root logger from a -v count (0 warning, 1 info, 2+ debug)."""
    if verbosity >= 2:
        level = logging.DEBUG
    elif verbosity == 1:
        level = logging.INFO
    else:
        level = logging.WARNING
    logging.basicConfig(
        level=level,
        stream=sys.stderr,
        format='%(asctime)s %(levelname)s %(name)s: %(message)s',
        force=True,
    )


def progress(iterable, total=None, desc=None, enabled=True):
    """Wrap iterable in a tqdm bar when tqdm is installed and enabled."""
    if not (enabled and HAS_TQDM):
        return iterable
    return tqdm(iterable, total=total, desc=desc, file=sys.stderr, leave=False)


def comma_list(item_type):
    """argparse type for comma-separated values, e.g. ``--values 5,10,inf``."""
    def parse(text):
        items = [item.strip() for item in str(text).split(',') if item.strip()]
        if not items:
            raise argparse.ArgumentTypeError('expected a comma-separated list')
        try:
            return [item_type(item) for item in items]
        except ValueError:
            raise argparse.ArgumentTypeError(f"invalid {item_type.__name__} list: {text!r}")
    return parse


def _env_int(name, default=0):
    try:
        return int(os.environ.get(name, default))
    except ValueError:
        logger.warning("ignoring %s: not an integer", name)
        return default


class CommandParser(argparse.ArgumentParser):
    """ArgumentParser that exits with the usage code instead of argparse's 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def add_common_arguments(parser):
    """
    Options shared by every command.

    Defaults come from RTFGO_CONFIG and RTFGO_VERBOSITY, read when the
    parser is built.
    """
    parser.add_argument(
        '--config', default=os.environ.get('RTFGO_CONFIG'),
        help='engine configuration YAML (engine, solver and imu sections); '
             'explicit options override it [env RTFGO_CONFIG]',
    )
    parser.add_argument(
        '-v', '--verbose', dest='verbosity', action='count', default=_env_int('RTFGO_VERBOSITY'),
        help='-v logs progress, -vv solver and engine internals [env RTFGO_VERBOSITY]',
    )


def add_out_argument(parser, help):
    """--out, required unless RTFGO_OUT is set."""
    default = os.environ.get('RTFGO_OUT')
    parser.add_argument('--out', default=default, required=default is None,
                        help=f"{help} [env RTFGO_OUT]")


def run_command(execute, args):
    """
    Run one command and report its result.

    The result mapping is printed to stdout as JSON; failures are logged
    to stderr.

    Returns:
        int: Process exit code
    """
    setup_logging(args.verbosity or 0)
    try:
        result = execute(args)
    except Exception as e:
        return error_handler(e)
    print(json.dumps(result, indent=2, sort_keys=True, default=str))
    return EXIT_OK
