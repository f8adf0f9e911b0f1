#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""Unit tests for module_utils/common.py"""

import argparse
import json
import logging

import pytest

from rtfgo.module_utils.common import (
    EXIT_DATA,
    EXIT_NUMERICAL,
    EXIT_OK,
    EXIT_USAGE,
    CommandParser,
    ConfigurationError,
    EmptyOverlap,
    IoError,
    LinearSolveFailure,
    ParseError,
    RunTimeout,
    add_common_arguments,
    add_out_argument,
    comma_list,
    error_handler,
    progress,
    run_command,
    setup_logging,
)


def sample_parser():
    parser = CommandParser(prog='rtfgo sample')
    parser.add_argument('--dataset', required=True)
    parser.add_argument('--thresholds', type=comma_list(float))
    add_out_argument(parser, 'output directory')
    add_common_arguments(parser)
    return parser


class TestErrorHandler:
    """Tests for error_handler()"""

    @pytest.mark.parametrize('error, prefix, rc', [
        (ConfigurationError('bad tau'), 'Usage error', EXIT_USAGE),
        (EmptyOverlap('no overlap'), 'Data error', EXIT_DATA),
        (IoError('disk full'), 'Report error', EXIT_DATA),
        (LinearSolveFailure('singular'), 'Numerical failure', EXIT_NUMERICAL),
        (RunTimeout('deadline passed'), 'Numerical failure', EXIT_NUMERICAL),
        (RuntimeError('boom'), 'Unexpected error', EXIT_NUMERICAL),
    ])
    def test_maps_exit_codes(self, error, prefix, rc, caplog):
        """Test that each error family maps to its message prefix and exit code"""
        with caplog.at_level(logging.ERROR):
            assert error_handler(error) == rc
        assert caplog.records[-1].getMessage().startswith(prefix)

    def test_parse_error_line(self, caplog):
        """Test that parse errors report their file and line number"""
        with caplog.at_level(logging.ERROR):
            assert error_handler(ParseError(12, 'expected 7 fields', path='imu.csv')) == EXIT_DATA
        assert 'Parse error: imu.csv:12: expected 7 fields' in caplog.text


class TestHelpers:
    """Tests for comma_list(), logging and progress"""

    def test_comma_list(self):
        """Test that comma-separated text is split and converted"""
        assert comma_list(float)('1, 2.5,5') == [1.0, 2.5, 5.0]
        assert comma_list(str)('5,inf') == ['5', 'inf']

    @pytest.mark.parametrize('text', ['one,two', ' , '])
    def test_comma_list_rejects(self, text):
        """Test that unconvertible or empty lists raise ArgumentTypeError"""
        with pytest.raises(argparse.ArgumentTypeError):
            comma_list(int)(text)

    @pytest.mark.parametrize('verbosity, level', [(0, logging.WARNING), (1, logging.INFO), (3, logging.DEBUG)])
    def test_setup_logging(self, verbosity, level):
        """Test that -v counts map to log levels"""
        setup_logging(verbosity)
        assert logging.getLogger().level == level

    def test_progress_disabled(self):
        """Test that a disabled progress bar returns the iterable itself"""
        items = [1, 2, 3]
        assert progress(items, enabled=False) is items


class TestCommandParser:
    """Tests for CommandParser and the shared arguments"""

    def test_parses_options(self):
        """Test typed parsing, defaults and the -v count"""
        args = sample_parser().parse_args(['--dataset', 'd', '--out', 'o', '--thresholds', '1,2.5', '-vv'])
        assert args.thresholds == [1.0, 2.5]
        assert args.verbosity == 2
        assert args.config is None

    def test_environment_defaults(self, monkeypatch):
        """Test that RTFGO_* variables supply defaults and options still win"""
        monkeypatch.setenv('RTFGO_CONFIG', '/etc/rtfgo.yml')
        monkeypatch.setenv('RTFGO_OUT', '/tmp/results')
        monkeypatch.setenv('RTFGO_VERBOSITY', '1')
        args = sample_parser().parse_args(['--dataset', 'd'])
        assert args.config == '/etc/rtfgo.yml'
        assert args.out == '/tmp/results'
        assert args.verbosity == 1
        assert sample_parser().parse_args(['--dataset', 'd', '--out', 'x']).out == 'x'

    @pytest.mark.parametrize('argv', [
        [],
        ['--dataset', 'd'],
        ['--dataset', 'd', '--out', 'o', '--thresholds', 'one'],
        ['--dataset', 'd', '--out', 'o', '--unknown'],
    ])
    def test_usage_errors(self, argv, capsys):
        """Test that bad arguments exit with the usage code"""
        with pytest.raises(SystemExit) as exc:
            sample_parser().parse_args(argv)
        assert exc.value.code == EXIT_USAGE
        assert 'rtfgo sample: error:' in capsys.readouterr().err


class TestRunCommand:
    """Tests for run_command()"""

    def test_prints_result(self, capsys):
        """Test that the result is printed as JSON and the exit code is 0"""
        args = argparse.Namespace(verbosity=0)
        assert run_command(lambda a: {'rmse_3d': 1.5, 'files': {}}, args) == EXIT_OK
        assert json.loads(capsys.readouterr().out) == {'rmse_3d': 1.5, 'files': {}}

    def test_failure(self, capsys):
        """Test that a raised error is logged and mapped to its exit code"""
        def fail(args):
            raise EmptyOverlap('no estimate inside the ground-truth span')

        assert run_command(fail, argparse.Namespace(verbosity=0)) == EXIT_DATA
        captured = capsys.readouterr()
        assert captured.out == ''
        assert 'Data error: no estimate' in captured.err
