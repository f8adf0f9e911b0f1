# -*- coding: utf-8 -*-

# GNU General Public License v3.0+ (see LICENSES/GPL-3.0-or-later.txt or https://www.gnu.org/licenses/gpl-3.0.txt)
# SPDX-License-Identifier: GPL-3.0-or-later

"""
Evaluate a trajectory file against ground truth

Reads a trajectory.csv written by run, compares it with a ground-truth
file or bundle and writes metrics.json, timing.json, availability.csv and
a copy of the trajectory. With --gnss the GNSS-only baseline of the same
dataset is evaluated next to it, into the baseline subdirectory.
"""

import argparse
import os

from rtfgo.module_utils.common import (
    CommandParser,
    add_common_arguments,
    add_out_argument,
    comma_list,
    run_command,
)
from rtfgo.module_utils.datasets import DatasetBundle, read_gnss_csv, read_gt_csv, read_trajectory_csv
from rtfgo.module_utils.evaluation import (
    DEFAULT_THRESHOLDS,
    build_report,
    emit_report,
    gnss_only_estimates,
)
from rtfgo.modules.run import segments_from_metadata

EXAMPLES = r'''
examples:
  # Evaluate a stored trajectory against the bundle it came from
  rtfgo evaluate --estimates results/rt/trajectory.csv --gt data/urban-3 --out results/rt-eval

  # Compare with the GNSS-only baseline at custom thresholds
  rtfgo evaluate --estimates results/rt/trajectory.csv --gt data/urban-3/gt.csv \
    --gnss data/urban-3/gnss.csv --thresholds 5,10,50 --out results/rt-eval
'''


def load_ground_truth(path):
    """Ground truth and named segments from a gt.csv file or a bundle directory"""
    if os.path.isdir(path):
        bundle = DatasetBundle.from_directory(path)
        return read_gt_csv(bundle.gt_path, bundle.time_offset), segments_from_metadata(bundle.metadata)
    return read_gt_csv(path), {}


def _curve(report):
    return {str(theta): percent for theta, percent in report.availability_curve}


def configure(parser):
    parser.add_argument('--estimates', required=True, help='trajectory CSV file')
    parser.add_argument('--gt', required=True,
                        help='ground-truth CSV file, or a bundle directory that also supplies '
                             'the time offset and named evaluation segments')
    add_out_argument(parser, 'output directory of the report')
    parser.add_argument('--gnss', help='GNSS CSV file evaluated as the GNSS-only baseline')
    parser.add_argument('--thresholds', type=comma_list(float),
                        help='availability thresholds in metres, comma-separated')
    add_common_arguments(parser)


def execute(args):
    thresholds = args.thresholds or DEFAULT_THRESHOLDS
    outputs = read_trajectory_csv(args.estimates)
    gt, segments = load_ground_truth(args.gt)
    report = build_report(outputs, gt, thresholds=thresholds, segments=segments,
                          label=os.path.basename(args.estimates))
    result = dict(
        files=emit_report(report, args.out, outputs),
        rmse_3d=report.rmse_3d,
        availability=_curve(report),
    )

    if args.gnss:
        baseline_outputs = gnss_only_estimates(read_gnss_csv(args.gnss))
        baseline = build_report(baseline_outputs, gt, thresholds=thresholds, segments=segments,
                                label='gnss-only')
        emit_report(baseline, os.path.join(args.out, 'baseline'), baseline_outputs)
        result['baseline'] = dict(rmse_3d=baseline.rmse_3d, availability=_curve(baseline))
    return result


def main(argv=None):
    parser = CommandParser(prog='rtfgo evaluate', description=__doc__.strip().splitlines()[0],
                           epilog=EXAMPLES, formatter_class=argparse.RawDescriptionHelpFormatter)
    configure(parser)
    return run_command(execute, parser.parse_args(argv))


if __name__ == '__main__':
    raise SystemExit(main())
