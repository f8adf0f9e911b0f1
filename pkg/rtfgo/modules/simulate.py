# -*- coding: utf-8 -*-

# GNU General Public License v3.0+ (see LICENSES/GPL-3.0-or-later.txt or https://www.gnu.org/licenses/gpl-3.0.txt)
# SPDX-License-Identifier: GPL-3.0-or-later

"""
Write a synthetic dataset bundle for a scenario

Generates the analytic ground truth of a scenario, simulates IMU and GNSS
streams from it and writes imu.csv, gnss.csv, gt.csv and metadata.yml.
Output is deterministic for a given scenario and seed.
"""

import argparse
import os

from rtfgo.module_utils.common import (
    CommandParser,
    add_common_arguments,
    add_out_argument,
    run_command,
)
from rtfgo.module_utils.config import load_scenario
from rtfgo.module_utils.datasets import write_bundle
from rtfgo.module_utils.simulation import simulate_scenario

EXAMPLES = r'''
examples:
  # Canned two-loop urban drive, seed 3
  rtfgo simulate --scenario urban --out data/urban-3 --seed 3

  # Custom scenario file
  rtfgo simulate --scenario ./my_scenario.yml --out data/custom
'''


def bundle_metadata(run):
    """Metadata written next to a simulated bundle"""
    scenario = run.scenario
    lat, lon, alt = scenario.anchor
    return {
        'anchor_lat_deg': float(lat),
        'anchor_lon_deg': float(lon),
        'anchor_alt_m': float(alt),
        'time_offset_s': 0.0,
        'scenario': scenario.name,
        'seed': int(run.seed),
        'gnss_availability': round(run.availability, 6),
        'segments': {name: [start, end] for name, (start, end) in scenario.segments.items()},
    }


def configure(parser):
    parser.add_argument('--scenario', default='urban',
                        help='shipped scenario name (urban, short) or scenario YAML path')
    add_out_argument(parser, 'output directory of the dataset bundle')
    parser.add_argument('--seed', type=int, default=os.environ.get('RTFGO_SEED', 0),
                        help='random seed of the IMU and GNSS noise [env RTFGO_SEED]')
    add_common_arguments(parser)


def execute(args):
    scenario = load_scenario(args.scenario)
    run = simulate_scenario(scenario, seed=args.seed)
    write_bundle(args.out, run.imu, run.gnss, run.gt, bundle_metadata(run))
    return dict(
        dataset=args.out,
        imu_samples=len(run.imu),
        gnss_fixes=len(run.gnss),
        gt_epochs=len(run.gt),
        availability=round(run.availability, 6),
    )


def main(argv=None):
    parser = CommandParser(prog='rtfgo simulate', description=__doc__.strip().splitlines()[0],
                           epilog=EXAMPLES, formatter_class=argparse.RawDescriptionHelpFormatter)
    configure(parser)
    return run_command(execute, parser.parse_args(argv))


if __name__ == '__main__':
    raise SystemExit(main())
