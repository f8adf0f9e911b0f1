# -*- coding: utf-8 -*-

# GNU General Public License v3.0+ (see LICENSES/GPL-3.0-or-later.txt or https://www.gnu.org/licenses/gpl-3.0.txt)
# SPDX-License-Identifier: GPL-3.0-or-later

"""
Accuracy, availability and timing metrics and report files.

Estimates are compared with ground truth interpolated linearly in each
ENU axis. Service availability A(theta) is counted over the ground-truth
grid: an epoch is available when an estimate lies within half a grid
period of it and its 3D error is at most theta. Epochs without any
estimate, including the cold-start gap, count as unavailable.
"""

import json
import logging
import math
import os
from dataclasses import dataclass, field
from importlib import resources

import jsonschema
import numpy as np

from rtfgo.module_utils.common import EmptyInput, EmptyOverlap, IoError, MissingEstimate, ReportError
from rtfgo.module_utils.datasets import write_trajectory_csv
from rtfgo.module_utils.engine import OutputEstimate, OutputSource
from rtfgo.module_utils.states import NavState

logger = logging.getLogger(__name__)

DEFAULT_THRESHOLDS = (1.0, 2.0, 5.0, 10.0, 15.0, 20.0, 30.0, 50.0, 100.0)
SCHEMA_RESOURCE = ('rtfgo.data', 'schemas/metrics.schema.json')


@dataclass
class PairedSeries:
    """Estimates paired with interpolated ground truth."""
    times: np.ndarray
    estimated: np.ndarray
    reference: np.ndarray
    sources: list
    dropped: int = 0

    def __len__(self):
        return len(self.times)

    @property
    def errors(self):
        return self.estimated - self.reference


@dataclass
class EvaluationReport:
    rmse_3d: float
    rmse_enu: tuple
    availability_curve: list
    timing: dict = field(default_factory=dict)
    counts: dict = field(default_factory=dict)
    segment_rmse: dict = field(default_factory=dict)
    label: str = None

    def metrics(self):
        """JSON-ready metrics; wall-clock timing is excluded."""
        return {
            'label': self.label,
            'rmse_3d_m': self.rmse_3d,
            'rmse_enu_m': {axis: value for axis, value in zip('enu', self.rmse_enu)},
            'availability': [
                {'threshold_m': theta, 'percent': percent}
                for theta, percent in self.availability_curve
            ],
            'counts': dict(self.counts),
            'segment_rmse_m': dict(self.segment_rmse),
        }


def _position(est):
    return est.state.p


def align_to_ground_truth(estimates, gt):
    """
    Pair each estimate with ground truth interpolated at its time.

    Estimates outside the ground-truth span are dropped and counted.

    Raises:
        EmptyOverlap: No estimate falls inside the ground-truth span
    """
    if len(gt) == 0:
        raise EmptyOverlap('ground truth is empty')
    t_first, t_last = gt.times[0], gt.times[-1]
    kept = [est for est in estimates if t_first <= est.t <= t_last]
    dropped = len(estimates) - len(kept)
    if dropped:
        logger.info('dropped %d estimates outside the ground-truth span', dropped)
    if not kept:
        raise EmptyOverlap(f"no estimate inside [{t_first}, {t_last}]")
    times = np.array([est.t for est in kept])
    reference = np.column_stack([np.interp(times, gt.times, gt.positions[:, i]) for i in range(3)])
    return PairedSeries(
        times=times,
        estimated=np.array([_position(est) for est in kept]),
        reference=reference,
        sources=[OutputSource(est.source) for est in kept],
        dropped=dropped,
    )


def rmse_3d(paired):
    if len(paired) == 0:
        raise EmptyInput('no paired estimates')
    err = paired.errors
    return float(np.sqrt(np.mean(np.sum(err * err, axis=1))))


def rmse_per_axis(paired):
    if len(paired) == 0:
        raise EmptyInput('no paired estimates')
    err = paired.errors
    return tuple(float(x) for x in np.sqrt(np.mean(err * err, axis=0)))


def segment_rmse(paired, segments):
    """
    RMSE inside named time windows.

    Args:
        paired: PairedSeries
        segments: dict name -> (start, end) absolute GPST seconds

    Returns:
        dict name -> RMSE, or None for windows without estimates
    """
    out = {}
    for name, (start, end) in segments.items():
        mask = (paired.times >= start) & (paired.times <= end)
        if not np.any(mask):
            out[name] = None
            continue
        err = paired.errors[mask]
        out[name] = float(np.sqrt(np.mean(np.sum(err * err, axis=1))))
    return out


def _epoch_matches(estimates, gt):
    """
    Index of the closest estimate for each ground-truth epoch, or -1.

    Epoch k owns the half-open window [t_k - T/2, t_k + T/2), so one
    estimate is credited to at most one epoch.
    """
    if not estimates:
        return np.full(len(gt), -1)
    times = np.array([est.t for est in estimates])
    order = np.argsort(times, kind='stable')
    times = times[order]
    half = 0.5 * gt.period
    pos = np.searchsorted(times, gt.times)
    matches = np.full(len(gt), -1)
    for k, t in enumerate(gt.times):
        best, best_dt = -1, math.inf
        for j in (pos[k] - 1, pos[k]):
            if 0 <= j < len(times):
                offset = times[j] - t
                if -half - 1e-9 <= offset < half - 1e-9 and abs(offset) < best_dt:
                    best, best_dt = j, abs(offset)
        matches[k] = order[best] if best >= 0 else -1
    return matches


def service_availability(estimates, gt, thresholds=DEFAULT_THRESHOLDS):
    """
    Availability curve A(theta) in percent of all ground-truth epochs.

    Returns:
        list of (theta, percent), sorted by theta
    """
    if len(gt) == 0:
        return [(float(theta), 0.0) for theta in sorted(thresholds)]
    matches = _epoch_matches(list(estimates), gt)
    errors = np.full(len(gt), math.inf)
    for k, j in enumerate(matches):
        if j < 0:
            continue
        est = estimates[j]
        ref = np.array([np.interp(est.t, gt.times, gt.positions[:, i]) for i in range(3)])
        errors[k] = np.linalg.norm(_position(est) - ref)
    total = len(gt)
    return [(float(theta), 100.0 * float(np.sum(errors <= theta)) / total) for theta in sorted(thresholds)]


def gnss_only_estimates(fixes):
    """The GNSS-only baseline: every fix as an estimate."""
    return [
        OutputEstimate(t=fix.t, state=NavState(p=fix.p, t=fix.t), source=OutputSource.GNSS, sequence=k + 1)
        for k, fix in enumerate(fixes)
    ]


def trajectory_cost(graph, outputs):
    """
    Cost of a graph evaluated at an emitted trajectory.

    Each graph epoch takes the optimized output at its timestamp.

    Raises:
        MissingEstimate: An epoch of the graph has no matching output
    """
    by_time = {round(out.t, 9): out.state for out in outputs if out.source == OutputSource.OPTIMIZED}
    estimates = {}
    for epoch in graph.epochs():
        t = graph.epoch_times[epoch]
        state = by_time.get(round(t, 9))
        if state is None:
            raise MissingEstimate(f"no output at t={t} for epoch {epoch}")
        estimates[epoch] = state
    return graph.total_cost(estimates)


def timing_stats(timings):
    """Mean, 95th percentile and max of per-epoch solve times, in milliseconds."""
    if not len(timings):
        return {'mean_ms': None, 'p95_ms': None, 'max_ms': None, 'count': 0}
    ms = np.asarray(timings, dtype=float) * 1000.0
    return {
        'mean_ms': float(ms.mean()),
        'p95_ms': float(np.percentile(ms, 95)),
        'max_ms': float(ms.max()),
        'count': int(len(ms)),
    }


def build_report(estimates, gt, thresholds=DEFAULT_THRESHOLDS, timings=(), segments=None, label=None):
    """Compute every metric of one run."""
    paired = align_to_ground_truth(estimates, gt)
    matches = _epoch_matches(list(estimates), gt)
    counts = {
        'optimized': sum(1 for e in estimates if e.source == OutputSource.OPTIMIZED),
        'propagated': sum(1 for e in estimates if e.source == OutputSource.IMU_PROPAGATED),
        'gnss': sum(1 for e in estimates if e.source == OutputSource.GNSS),
        'gap_epochs': int(np.sum(matches < 0)),
        'gt_epochs': int(len(gt)),
        'dropped': int(paired.dropped),
    }
    return EvaluationReport(
        rmse_3d=rmse_3d(paired),
        rmse_enu=rmse_per_axis(paired),
        availability_curve=service_availability(estimates, gt, thresholds),
        timing=timing_stats(list(timings)),
        counts=counts,
        segment_rmse=segment_rmse(paired, segments) if segments else {},
        label=label,
    )


def load_schema():
    package, name = SCHEMA_RESOURCE
    return json.loads(resources.files(package).joinpath(name).read_text())


def _dump(path, payload):
    try:
        with open(path, 'w') as handle:
            json.dump(payload, handle, indent=2, sort_keys=True)
            handle.write('\n')
    except OSError as e:
        raise IoError(f"cannot write {path}: {e.strerror}")


def emit_report(report, out_dir, outputs=()):
    """
    Write metrics.json, timing.json, availability.csv and trajectory.csv.

    Returns:
        dict: Name -> written path

    Raises:
        IoError: Output directory or files not writable
        ReportError: Metrics fail schema validation
    """
    metrics = report.metrics()
    try:
        jsonschema.validate(metrics, load_schema())
    except jsonschema.ValidationError as e:
        raise ReportError(f"metrics do not match the report schema: {e.message}")
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as e:
        raise IoError(f"cannot create {out_dir}: {e.strerror}")

    paths = {
        'metrics': os.path.join(out_dir, 'metrics.json'),
        'timing': os.path.join(out_dir, 'timing.json'),
        'availability': os.path.join(out_dir, 'availability.csv'),
        'trajectory': os.path.join(out_dir, 'trajectory.csv'),
    }
    _dump(paths['metrics'], metrics)
    _dump(paths['timing'], report.timing)
    try:
        with open(paths['availability'], 'w') as handle:
            handle.write('threshold_m,availability_percent\n')
            for theta, percent in report.availability_curve:
                handle.write(f"{theta!r},{percent!r}\n")
    except OSError as e:
        raise IoError(f"cannot write {paths['availability']}: {e.strerror}")
    write_trajectory_csv(paths['trajectory'], list(outputs))
    logger.info('report written to %s', out_dir)
    return paths
