# -*- coding: utf-8 -*-

# GNU General Public License v3.0+ (see LICENSES/GPL-3.0-or-later.txt or https://www.gnu.org/licenses/gpl-3.0.txt)
# SPDX-License-Identifier: GPL-3.0-or-later

"""
Dataset bundles: CSV streams plus a metadata file.

A bundle directory holds imu.csv, gnss.csv, gt.csv and metadata.yml.
Coordinates are ENU metres relative to the anchor declared in the
metadata; all times are GPST seconds. Floats are written with repr() so
that reading and re-writing a canonical file is lossless.
"""

import csv
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np
import pymap3d
import yaml

from rtfgo.module_utils.common import IoError, NonMonotonicTime, ParseError
from rtfgo.module_utils.engine import OutputEstimate, OutputSource
from rtfgo.module_utils.factors import GnssFix, GnssQuality
from rtfgo.module_utils.lie import euler_from_rotation, rotation_from_euler
from rtfgo.module_utils.preintegration import ImuSample
from rtfgo.module_utils.simulation import GroundTruth
from rtfgo.module_utils.states import NavState

logger = logging.getLogger(__name__)

IMU_HEADER = ['t_gpst_s', 'acc_x', 'acc_y', 'acc_z', 'gyr_x', 'gyr_y', 'gyr_z']
GNSS_HEADER = ['t_gpst_s', 'east_m', 'north_m', 'up_m', 'cov_ee', 'cov_nn', 'cov_uu',
               'cov_en', 'cov_eu', 'cov_nu', 'quality']
GT_HEADER = ['t_gpst_s', 'east_m', 'north_m', 'up_m']
TRAJECTORY_HEADER = ['t_gpst_s', 'east_m', 'north_m', 'up_m', 'vel_e', 'vel_n', 'vel_u',
                     'roll_rad', 'pitch_rad', 'yaw_rad', 'source', 'latency_s']

FILE_NAMES = dict(imu='imu.csv', gnss='gnss.csv', gt='gt.csv', metadata='metadata.yml')


@dataclass
class DatasetBundle:
    """Paths of one dataset and its metadata (anchor, time offsets)."""
    imu_path: str
    gnss_path: str
    gt_path: str
    metadata_path: str = None
    metadata: dict = field(default_factory=dict)

    @classmethod
    def from_directory(cls, directory):
        """Locate the standard files of a bundle directory and read its metadata."""
        paths = {name: os.path.join(directory, fname) for name, fname in FILE_NAMES.items()}
        metadata = {}
        if os.path.exists(paths['metadata']):
            try:
                with open(paths['metadata']) as handle:
                    metadata = yaml.safe_load(handle) or {}
            except (OSError, yaml.YAMLError) as e:
                raise ParseError(1, f"unreadable metadata: {e}", path=paths['metadata'])
        return cls(paths['imu'], paths['gnss'], paths['gt'], paths['metadata'], metadata)

    @property
    def anchor(self):
        md = self.metadata
        if 'anchor_lat_deg' not in md:
            return None
        return (md['anchor_lat_deg'], md['anchor_lon_deg'], md.get('anchor_alt_m', 0.0))

    @property
    def time_offset(self):
        return float(self.metadata.get('time_offset_s', 0.0))


def _format(value):
    return repr(float(value))


def _read_rows(path, header):
    """Yield (line number, float-or-str fields) for each data row of a CSV file."""
    try:
        handle = open(path, newline='')
    except OSError as e:
        raise ParseError(0, f"cannot open: {e.strerror}", path=path)
    with handle:
        reader = csv.reader(handle)
        first = next(reader, None)
        if first is None or [c.strip() for c in first] != header:
            raise ParseError(1, f"expected header {','.join(header)}", path=path)
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(line, f"expected {len(header)} fields, got {len(row)}", path=path)
            yield line, row


def _floats(row, line, path, count):
    try:
        values = [float(c) for c in row[:count]]
    except ValueError as e:
        raise ParseError(line, f"invalid number: {e}", path=path)
    if not all(math.isfinite(v) for v in values):
        raise ParseError(line, 'non-finite value', path=path)
    return values


def _check_time(t, last, line, path):
    if t <= last:
        raise NonMonotonicTime(f"{path}:{line}: time {t!r} does not follow {last!r}")


def read_imu_csv(path, time_offset=0.0):
    samples, last = [], -math.inf
    for line, row in _read_rows(path, IMU_HEADER):
        v = _floats(row, line, path, 7)
        t = v[0] + time_offset
        _check_time(t, last, line, path)
        samples.append(ImuSample(t, v[1:4], v[4:7]))
        last = t
    return samples


def read_gnss_csv(path, time_offset=0.0):
    fixes, last = [], -math.inf
    for line, row in _read_rows(path, GNSS_HEADER):
        v = _floats(row, line, path, 10)
        t = v[0] + time_offset
        _check_time(t, last, line, path)
        ee, nn, uu, en, eu, nu = v[4:10]
        cov = np.array([[ee, en, eu], [en, nn, nu], [eu, nu, uu]])
        try:
            np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            raise ParseError(line, 'covariance is not positive definite', path=path)
        try:
            quality = GnssQuality(row[10].strip())
        except ValueError:
            raise ParseError(line, f"unknown quality flag '{row[10].strip()}'", path=path)
        fixes.append(GnssFix(t=t, p=v[1:4], cov=cov, quality=quality))
        last = t
    return fixes


def read_gt_csv(path, time_offset=0.0):
    times, positions, last = [], [], -math.inf
    for line, row in _read_rows(path, GT_HEADER):
        v = _floats(row, line, path, 4)
        t = v[0] + time_offset
        _check_time(t, last, line, path)
        times.append(t)
        positions.append(v[1:4])
        last = t
    return GroundTruth(np.array(times), np.array(positions).reshape(-1, 3))


def ingest(bundle):
    """
    Parse a bundle fully or fail.

    Returns:
        tuple: (list of ImuSample, list of GnssFix, GroundTruth), each time-sorted

    Raises:
        ParseError: Malformed row, with its line number
        NonMonotonicTime: Rows out of time order
    """
    offset = bundle.time_offset
    imu = read_imu_csv(bundle.imu_path, offset)
    gnss = read_gnss_csv(bundle.gnss_path, offset)
    gt = read_gt_csv(bundle.gt_path, offset)
    logger.info('ingested %d IMU samples, %d GNSS fixes, %d GT epochs', len(imu), len(gnss), len(gt))
    return imu, gnss, gt


def _write_rows(path, header, rows):
    try:
        with open(path, 'w', newline='') as handle:
            writer = csv.writer(handle, lineterminator='\n')
            writer.writerow(header)
            writer.writerows(rows)
    except OSError as e:
        raise IoError(f"cannot write {path}: {e.strerror}")


def write_imu_csv(path, samples):
    _write_rows(path, IMU_HEADER, (
        [_format(s.t)] + [_format(x) for x in s.accel] + [_format(x) for x in s.gyro]
        for s in samples
    ))


def write_gnss_csv(path, fixes):
    def row(fix):
        c = fix.cov
        values = [fix.t, *fix.p, c[0, 0], c[1, 1], c[2, 2], c[0, 1], c[0, 2], c[1, 2]]
        return [_format(x) for x in values] + [fix.quality.value]
    _write_rows(path, GNSS_HEADER, (row(fix) for fix in fixes))


def write_gt_csv(path, gt):
    _write_rows(path, GT_HEADER, (
        [_format(t)] + [_format(x) for x in p] for t, p in zip(gt.times, gt.positions)
    ))


def write_bundle(directory, imu, gnss, gt, metadata=None):
    """Write a complete bundle directory and return its DatasetBundle."""
    try:
        os.makedirs(directory, exist_ok=True)
    except OSError as e:
        raise IoError(f"cannot create {directory}: {e.strerror}")
    bundle = DatasetBundle(
        imu_path=os.path.join(directory, FILE_NAMES['imu']),
        gnss_path=os.path.join(directory, FILE_NAMES['gnss']),
        gt_path=os.path.join(directory, FILE_NAMES['gt']),
        metadata_path=os.path.join(directory, FILE_NAMES['metadata']),
        metadata=dict(metadata or {}),
    )
    write_imu_csv(bundle.imu_path, imu)
    write_gnss_csv(bundle.gnss_path, gnss)
    write_gt_csv(bundle.gt_path, gt)
    try:
        with open(bundle.metadata_path, 'w') as handle:
            yaml.safe_dump(bundle.metadata, handle, default_flow_style=False, sort_keys=True)
    except OSError as e:
        raise IoError(f"cannot write {bundle.metadata_path}: {e.strerror}")
    return bundle


def write_trajectory_csv(path, outputs):
    """Emitted estimates, one row per output."""
    def row(out):
        roll, pitch, yaw = euler_from_rotation(out.state.R)
        values = [out.t, *out.state.p, *out.state.v, roll, pitch, yaw]
        return [_format(x) for x in values] + [OutputSource(out.source).value, _format(out.latency)]
    _write_rows(path, TRAJECTORY_HEADER, (row(out) for out in outputs))


def read_trajectory_csv(path):
    outputs, last = [], -math.inf
    for line, row in _read_rows(path, TRAJECTORY_HEADER):
        v = _floats(row, line, path, 10)
        _check_time(v[0], last, line, path)
        try:
            source = OutputSource(row[10].strip())
        except ValueError:
            raise ParseError(line, f"unknown source '{row[10].strip()}'", path=path)
        latency = _floats(row[11:], line, path, 1)[0]
        state = NavState(R=rotation_from_euler(*v[7:10]), p=v[1:4], v=v[4:7], t=v[0])
        outputs.append(OutputEstimate(t=v[0], state=state, source=source, latency=latency,
                                      sequence=len(outputs) + 1))
        last = v[0]
    return outputs


def geodetic_to_enu(lat_deg, lon_deg, alt_m, anchor):
    """Geodetic coordinates to ENU metres relative to anchor (lat, lon, alt)."""
    e, n, u = pymap3d.geodetic2enu(lat_deg, lon_deg, alt_m, *anchor)
    return np.array([e, n, u], dtype=float)


def enu_to_geodetic(enu, anchor):
    lat, lon, alt = pymap3d.enu2geodetic(enu[0], enu[1], enu[2], *anchor)
    return float(lat), float(lon), float(alt)
