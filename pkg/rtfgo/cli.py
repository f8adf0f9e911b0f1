# -*- coding: utf-8 -*-

# GNU General Public License v3.0+ (see LICENSES/GPL-3.0-or-later.txt or https://www.gnu.org/licenses/gpl-3.0.txt)
# SPDX-License-Identifier: GPL-3.0-or-later

"""Single-binary dispatcher: rtfgo <command> [options]"""

import argparse
import importlib
import sys

from rtfgo import __version__
from rtfgo.module_utils.common import EXIT_USAGE, CommandParser, run_command

COMMANDS = ('simulate', 'run', 'evaluate', 'sweep')


def summary(command):
    return command.__doc__.strip().splitlines()[0]


def build_parser():
    parser = CommandParser(
        prog='rtfgo',
        description='Real-time GNSS/IMU fusion by factor graph optimization.',
        epilog="Run 'rtfgo <command> --help' for the options of a command.",
    )
    parser.add_argument('--version', action='version', version=f"rtfgo {__version__}")
    subparsers = parser.add_subparsers(dest='command', metavar='<command>', title='commands')
    for name in COMMANDS:
        command = importlib.import_module(f"rtfgo.modules.{name}")
        subparser = subparsers.add_parser(
            name, help=summary(command), description=summary(command),
            epilog=command.EXAMPLES, formatter_class=argparse.RawDescriptionHelpFormatter,
        )
        command.configure(subparser)
        subparser.set_defaults(execute=command.execute)
    return parser


def main(argv=None):
    """
    Parse the command line and run the selected command.

    Returns:
        int: Process exit code
    """
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    return run_command(args.execute, args)


if __name__ == '__main__':
    sys.exit(main())
