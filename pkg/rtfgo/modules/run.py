# -*- coding: utf-8 -*-

# GNU General Public License v3.0+ (see LICENSES/GPL-3.0-or-later.txt or https://www.gnu.org/licenses/gpl-3.0.txt)
# SPDX-License-Identifier: GPL-3.0-or-later

"""
Run the fusion engine over a dataset bundle and evaluate it

Replays the IMU and GNSS streams of a bundle through the engine, compares
the emitted trajectory with the bundle ground truth and writes
metrics.json, timing.json, availability.csv and trajectory.csv.

The JSON result on stdout holds rmse_3d, the availability curve
(threshold in metres to percent of ground-truth epochs), the number of
outputs and restarts, timing statistics and the written files.
"""

import argparse

from rtfgo.module_utils.common import (
    CommandParser,
    add_common_arguments,
    add_out_argument,
    comma_list,
    run_command,
)
from rtfgo.module_utils.config import load_engine_config, load_imu_noise, parse_lag
from rtfgo.module_utils.datasets import DatasetBundle, ingest
from rtfgo.module_utils.engine import FusionEngine, replay
from rtfgo.module_utils.evaluation import DEFAULT_THRESHOLDS, build_report, emit_report

EXAMPLES = r'''
examples:
  # Real-time run with the default settings
  rtfgo run --dataset data/urban-3 --out results/rt

  # Smoothing latency of three epochs and a 50 s marginalization lag
  rtfgo run --dataset data/urban-3 --tau 3 --marg-lag 50 --out results/tau3

  # Batch solution of the same data
  rtfgo run --dataset data/urban-3 --mode batch --out results/batch
'''


def engine_config_from_params(params):
    """Build the EngineConfig from the config file and explicit options"""
    overrides = dict(
        smoothing_latency_tau=params.get('tau'),
        max_imu_propagation=params.get('max_imu_prop'),
        imu_propagation=params.get('imu_propagation'),
    )
    if params.get('marg_lag') is not None:
        overrides['marginalization_lag'] = parse_lag(params['marg_lag'])
    config = load_engine_config(params.get('config'), mode=params.get('mode') or 'rt', **overrides)
    if params.get('imu'):
        config = config.with_(imu_noise=load_imu_noise(params['imu']))
    return config


def run_label(mode, config):
    """Short description of a run for the metrics file"""
    tau = config.smoothing_latency_tau
    lag = config.marginalization_lag
    return f"{mode} tau={tau:g} lag={lag:g}"


def run_dataset(imu, gnss, config, deadline=None):
    """Replay streams through a fresh engine"""
    engine = FusionEngine(config)
    outputs = replay(engine, imu, gnss, deadline=deadline)
    return outputs, engine


def segments_from_metadata(metadata):
    """Named evaluation windows declared in bundle metadata"""
    return {name: (float(start), float(end)) for name, (start, end) in (metadata.get('segments') or {}).items()}


def configure(parser):
    parser.add_argument('--dataset', required=True,
                        help='directory holding imu.csv, gnss.csv, gt.csv and metadata.yml')
    add_out_argument(parser, 'output directory of the report')
    parser.add_argument('--mode', choices=['rt', 'batch'], default='rt',
                        help='rt runs the real-time engine; batch holds every state back, disables '
                             'IMU-only propagation and marginalization and re-solves at the end')
    parser.add_argument('--tau', type=int,
                        help='smoothing latency in GNSS epochs (ignored in batch mode)')
    parser.add_argument('--marg-lag',
                        help='marginalization lag in seconds, or inf (ignored in batch mode)')
    parser.add_argument('--max-imu-prop', type=float,
                        help='longest IMU-only propagation after the last GNSS fix, in seconds')
    parser.add_argument('--imu-propagation', action=argparse.BooleanOptionalAction, default=None,
                        help='emit IMU-propagated estimates between GNSS fixes (ignored in batch mode)')
    parser.add_argument('--imu', help='IMU noise model, as a shipped name or YAML path')
    parser.add_argument('--thresholds', type=comma_list(float),
                        help='availability thresholds in metres, comma-separated')
    add_common_arguments(parser)


def execute(args):
    params = vars(args)
    bundle = DatasetBundle.from_directory(args.dataset)
    imu, gnss, gt = ingest(bundle)
    config = engine_config_from_params(params)
    outputs, engine = run_dataset(imu, gnss, config)
    report = build_report(
        outputs, gt,
        thresholds=args.thresholds or DEFAULT_THRESHOLDS,
        timings=engine.timings,
        segments=segments_from_metadata(bundle.metadata),
        label=run_label(args.mode, config),
    )
    paths = emit_report(report, args.out, outputs)
    return dict(
        rmse_3d=report.rmse_3d,
        availability={str(theta): percent for theta, percent in report.availability_curve},
        outputs=len(outputs),
        restarts=engine.restarts,
        timing=report.timing,
        files=paths,
    )


def main(argv=None):
    parser = CommandParser(prog='rtfgo run', description=__doc__.strip().splitlines()[0],
                           epilog=EXAMPLES, formatter_class=argparse.RawDescriptionHelpFormatter)
    configure(parser)
    return run_command(execute, parser.parse_args(argv))


if __name__ == '__main__':
    raise SystemExit(main())
