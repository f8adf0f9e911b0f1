# -*- coding: utf-8 -*-

# GNU General Public License v3.0+ (see LICENSES/GPL-3.0-or-later.txt or https://www.gnu.org/licenses/gpl-3.0.txt)
# SPDX-License-Identifier: GPL-3.0-or-later

"""
Sweep the smoothing latency or the marginalization lag

Runs the fusion engine once per parameter value and seed and tabulates
accuracy, availability and solve time. Data comes either from one dataset
bundle or from a scenario simulated once per seed.

Runs are spread over a thread pool. Each run gets --run-timeout seconds
from the moment it starts and is abandoned at the next GNSS fix after
that; a failed or timed-out run is recorded with its error and the sweep
continues. Writes sweep.csv (one row per value and seed) and
sweep_summary.csv (medians per value).
"""

import argparse
import csv
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor, as_completed

import numpy as np

from rtfgo.module_utils.common import (
    CommandParser,
    ConfigurationError,
    IoError,
    RunTimeout,
    add_common_arguments,
    add_out_argument,
    comma_list,
    progress,
    run_command,
)
from rtfgo.module_utils.config import load_scenario, parse_lag
from rtfgo.module_utils.datasets import DatasetBundle, ingest
from rtfgo.module_utils.evaluation import DEFAULT_THRESHOLDS, build_report
from rtfgo.module_utils.simulation import simulate_scenario
from rtfgo.modules.run import engine_config_from_params, run_dataset, segments_from_metadata

logger = logging.getLogger(__name__)

EXAMPLES = r'''
examples:
  # Marginalization lag sweep over ten simulated seeds
  rtfgo sweep --scenario urban --seeds 0,1,2,3,4,5,6,7,8,9 \
    --param marg-lag --values 5,10,20,50,inf --out results/lag

  # Smoothing latency sweep on a recorded bundle
  rtfgo sweep --dataset data/urban-3 --param tau --values 0,1,2,3,5 --out results/tau
'''

SWEPT_FIELDS = {'tau': 'smoothing_latency_tau', 'marg-lag': 'marginalization_lag'}


def parse_value(param, text):
    """Typed engine value of one swept setting"""
    if param == 'marg-lag':
        return parse_lag(text)
    if str(text).strip().lower() in ('inf', 'infinity'):
        return math.inf
    try:
        return int(text)
    except (TypeError, ValueError):
        raise ConfigurationError(f"invalid tau value {text!r}")


def availability_column(theta):
    return f"avail_{theta:g}m"


def load_streams(params):
    """
    Input streams of every sweep source.

    Returns:
        list of (seed, imu, gnss, gt, segments); seed is None for a dataset
    """
    if params.get('dataset'):
        bundle = DatasetBundle.from_directory(params['dataset'])
        imu, gnss, gt = ingest(bundle)
        return [(None, imu, gnss, gt, segments_from_metadata(bundle.metadata))]
    scenario = load_scenario(params['scenario'])
    streams = []
    for seed in params.get('seeds') or [0]:
        run = simulate_scenario(scenario, seed=seed)
        streams.append((seed, run.imu, run.gnss, run.gt, dict(scenario.segments)))
    return streams


def run_job(stream, config, thresholds, run_timeout=None):
    """One engine run, reduced to a table row"""
    seed, imu, gnss, gt, segments = stream
    deadline = None if run_timeout is None else time.monotonic() + run_timeout
    outputs, engine = run_dataset(imu, gnss, config, deadline=deadline)
    report = build_report(outputs, gt, thresholds=thresholds, timings=engine.timings, segments=segments)
    row = {
        'seed': seed,
        'rmse_3d': report.rmse_3d,
        'mean_optimize_ms': report.timing['mean_ms'],
        'outputs': len(outputs),
        'restarts': engine.restarts,
        'error': '',
    }
    for theta, percent in report.availability_curve:
        row[availability_column(theta)] = percent
    return row


def run_sweep(streams, base_config, param, values, thresholds, workers=4, run_timeout=600.0,
              show_progress=False):
    """
    Run every (value, stream) pair on a thread pool.

    Returns:
        list of row dicts in (value, seed) order; failed runs carry an error
    """
    field_name = SWEPT_FIELDS[param]
    jobs = [(text, stream) for text in values for stream in streams]
    rows = [None] * len(jobs)

    with ThreadPoolExecutor(max_workers=workers) as executor:
        future_to_job = {}
        for index, (text, stream) in enumerate(jobs):
            config = base_config.with_(**{field_name: parse_value(param, text)})
            future = executor.submit(run_job, stream, config, thresholds, run_timeout)
            future_to_job[future] = (index, text, stream[0])

        for future in progress(as_completed(future_to_job), total=len(jobs), desc=f"sweep {param}",
                               enabled=show_progress):
            index, text, seed = future_to_job[future]
            try:
                row = future.result()
                logger.info('%s=%s seed=%s: rmse %.3f m', param, text, seed, row['rmse_3d'])
            except RunTimeout:
                logger.warning('%s=%s seed=%s timed out after %ss', param, text, seed, run_timeout)
                row = {'seed': seed, 'error': f"Timeout after {run_timeout}s"}
            except Exception as e:
                logger.warning('%s=%s seed=%s failed: %s', param, text, seed, e)
                row = {'seed': seed, 'error': str(e) or type(e).__name__}
            rows[index] = dict(row, param=param, value=text)
    return rows


def summarize(rows, values, thresholds):
    """Median RMSE, availability and solve time per value"""
    summary = []
    for text in values:
        done = [row for row in rows if row['value'] == text and not row.get('error')]
        entry = {
            'value': text,
            'runs': sum(1 for row in rows if row['value'] == text),
            'failed': sum(1 for row in rows if row['value'] == text and row.get('error')),
        }
        columns = ['rmse_3d', 'mean_optimize_ms'] + [availability_column(float(t)) for t in sorted(thresholds)]
        for column in columns:
            samples = [row[column] for row in done if row.get(column) is not None]
            entry[f"median_{column}"] = float(np.median(samples)) if samples else None
        summary.append(entry)
    return summary


def write_table(path, rows, fieldnames):
    try:
        with open(path, 'w', newline='') as handle:
            writer = csv.DictWriter(handle, fieldnames=fieldnames, extrasaction='ignore',
                                    lineterminator='\n')
            writer.writeheader()
            for row in rows:
                writer.writerow({k: ('' if row.get(k) is None else row.get(k)) for k in fieldnames})
    except OSError as e:
        raise IoError(f"cannot write {path}: {e.strerror}")


def configure(parser):
    source = parser.add_mutually_exclusive_group(required=True)
    source.add_argument('--dataset', help='dataset bundle directory')
    source.add_argument('--scenario', help='shipped scenario name or scenario YAML path, simulated once per seed')
    parser.add_argument('--seeds', type=comma_list(int), default=[0],
                        help='seeds simulated with --scenario, comma-separated')
    parser.add_argument('--param', required=True, choices=sorted(SWEPT_FIELDS), help='engine setting that is swept')
    parser.add_argument('--values', required=True, type=comma_list(str),
                        help='comma-separated values of --param; inf is accepted for both settings')
    add_out_argument(parser, 'output directory of the sweep tables')
    parser.add_argument('--imu-propagation', action=argparse.BooleanOptionalAction, default=False,
                        help='emit IMU-propagated estimates between GNSS fixes (off: GNSS epochs only)')
    parser.add_argument('--imu', help='IMU noise model, as a shipped name or YAML path')
    parser.add_argument('--thresholds', type=comma_list(float),
                        help='availability thresholds in metres, comma-separated')
    parser.add_argument('--workers', type=int, default=4, help='maximum number of concurrent runs')
    parser.add_argument('--run-timeout', type=float, default=600.0,
                        help='seconds each run may take from its start before it is abandoned')
    parser.add_argument('--progress', action='store_true', help='show a progress bar on stderr when tqdm is installed')
    add_common_arguments(parser)


def execute(args):
    params = vars(args)
    thresholds = args.thresholds or DEFAULT_THRESHOLDS
    if args.workers < 1:
        raise ConfigurationError('workers must be at least 1')
    if not args.run_timeout > 0.0:
        raise ConfigurationError('run timeout must be positive')
    for text in args.values:
        parse_value(args.param, text)
    base_config = engine_config_from_params(params)
    streams = load_streams(params)
    rows = run_sweep(
        streams, base_config, args.param, args.values, thresholds,
        workers=args.workers, run_timeout=args.run_timeout,
        show_progress=args.progress,
    )
    summary = summarize(rows, args.values, thresholds)

    try:
        os.makedirs(args.out, exist_ok=True)
    except OSError as e:
        raise IoError(f"cannot create {args.out}: {e.strerror}")
    avail_columns = [availability_column(float(t)) for t in sorted(thresholds)]
    files = {
        'runs': os.path.join(args.out, 'sweep.csv'),
        'summary': os.path.join(args.out, 'sweep_summary.csv'),
    }
    write_table(files['runs'], rows, ['param', 'value', 'seed', 'rmse_3d', 'mean_optimize_ms']
                + avail_columns + ['outputs', 'restarts', 'error'])
    write_table(files['summary'], summary, ['value', 'runs', 'failed', 'median_rmse_3d',
                                            'median_mean_optimize_ms']
                + [f"median_{c}" for c in avail_columns])
    return dict(
        runs=len(rows),
        failed=sum(1 for row in rows if row.get('error')),
        summary=summary,
        files=files,
    )


def main(argv=None):
    parser = CommandParser(prog='rtfgo sweep', description=__doc__.strip().splitlines()[0],
                           epilog=EXAMPLES, formatter_class=argparse.RawDescriptionHelpFormatter)
    configure(parser)
    return run_command(execute, parser.parse_args(argv))


if __name__ == '__main__':
    raise SystemExit(main())
