# -*- coding: utf-8 -*-

# GNU General Public License v3.0+ (see LICENSES/GPL-3.0-or-later.txt or https://www.gnu.org/licenses/gpl-3.0.txt)
# SPDX-License-Identifier: GPL-3.0-or-later

"""
YAML configuration loading.

Names without a path separator or extension resolve to the files shipped
under rtfgo/data (imu/, engine/, scenarios/); anything else is read as a
path.
"""

import logging
import math
import os
from dataclasses import fields
from importlib import resources

import yaml

from rtfgo.module_utils.common import ConfigurationError, InvalidTrajectory
from rtfgo.module_utils.engine import EngineConfig
from rtfgo.module_utils.preintegration import ImuNoiseParams
from rtfgo.module_utils.simulation import (
    GnssCorruption,
    OutagePattern,
    Scenario,
    Segment,
    TrajectorySpec,
)
from rtfgo.module_utils.solver import SolverConfig
from rtfgo.module_utils.states import ImuBias

logger = logging.getLogger(__name__)

# Settings fixed by batch mode; file values and overrides for them are dropped
BATCH_SETTINGS = ('smoothing_latency_tau', 'marginalization_lag', 'imu_propagation', 'final_optimization')


def _shipped(kind, name):
    return resources.files('rtfgo.data').joinpath(kind, f"{name}.yml")


def shipped_names(kind):
    """Names of the shipped files of one kind (imu, engine, scenarios)."""
    folder = resources.files('rtfgo.data').joinpath(kind)
    return sorted(entry.name[:-4] for entry in folder.iterdir() if entry.name.endswith('.yml'))


def load_yaml(name_or_path, kind=None):
    """
    Read a YAML mapping from a path or a shipped name.

    Raises:
        ConfigurationError: Missing file, invalid YAML or not a mapping
    """
    if kind and os.sep not in str(name_or_path) and not str(name_or_path).endswith(('.yml', '.yaml')):
        resource = _shipped(kind, name_or_path)
        if not resource.is_file():
            raise ConfigurationError(
                f"unknown {kind} '{name_or_path}' (available: {', '.join(shipped_names(kind))})"
            )
        text, source = resource.read_text(), f"{kind}/{name_or_path}"
    else:
        try:
            with open(name_or_path) as handle:
                text = handle.read()
        except OSError as e:
            raise ConfigurationError(f"cannot read {name_or_path}: {e.strerror}")
        source = name_or_path
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigurationError(f"invalid YAML in {source}: {e}")
    if not isinstance(data, dict):
        raise ConfigurationError(f"{source} must contain a mapping")
    return data


def parse_lag(value):
    """Marginalization lag in seconds; 'inf', 'none' or null mean unbounded."""
    if value is None or str(value).strip().lower() in ('inf', 'infinity', 'none', '.inf'):
        return math.inf
    try:
        lag = float(value)
    except (TypeError, ValueError):
        raise ConfigurationError(f"invalid marginalization lag {value!r}")
    if not lag > 0.0:
        raise ConfigurationError('marginalization lag must be positive')
    return lag


def load_imu_noise(value):
    """ImuNoiseParams from a shipped name, a path or an inline mapping."""
    data = value if isinstance(value, dict) else load_yaml(value, kind='imu')
    return ImuNoiseParams.from_dict(data)


def _known(cls, data, section):
    names = {f.name for f in fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigurationError(f"unknown {section} settings: {', '.join(sorted(unknown))}")
    return data


def load_engine_config(path=None, mode='rt', **overrides):
    """
    EngineConfig from defaults, an optional YAML file and explicit overrides.

    Args:
        path: Engine YAML path or shipped name; None uses the shipped default
        mode: 'rt' or 'batch'
        overrides: EngineConfig fields; None values are ignored, and so are
            BATCH_SETTINGS in batch mode

    Returns:
        EngineConfig
    """
    data = load_yaml(path or 'default', kind='engine')
    engine = dict(data.get('engine') or {})
    if 'marginalization_lag' in engine:
        engine['marginalization_lag'] = parse_lag(engine['marginalization_lag'])
    solver = SolverConfig(**_known(SolverConfig, dict(data.get('solver') or {}), 'solver'))
    imu_noise = load_imu_noise(data['imu']) if 'imu' in data else ImuNoiseParams()
    _known(EngineConfig, engine, 'engine')
    engine.update(solver=solver, imu_noise=imu_noise)
    if mode == 'batch':
        for name in BATCH_SETTINGS:
            engine.pop(name, None)
        ignored = sorted(name for name in BATCH_SETTINGS if overrides.get(name) is not None)
        if ignored:
            logger.warning('batch mode ignores %s', ', '.join(ignored))
        overrides = {k: v for k, v in overrides.items() if k not in BATCH_SETTINGS}
    engine.update({k: v for k, v in overrides.items() if v is not None})
    return EngineConfig.for_mode(mode, **engine)


def _segment(data):
    try:
        return Segment(
            duration=float(data['duration']),
            motion=data.get('motion', 'straight'),
            speed=float(data.get('speed', 0.0)),
            yaw_rate=float(data.get('yaw_rate', 0.0)),
            end_speed=None if data.get('end_speed') is None else float(data['end_speed']),
        )
    except KeyError as e:
        raise ConfigurationError(f"segment is missing {e}")


def load_scenario(name_or_path):
    """
    Scenario from a shipped name or a YAML path.

    Raises:
        ConfigurationError: Invalid or inconsistent scenario description
    """
    data = load_yaml(name_or_path, kind='scenarios')
    try:
        trajectory = TrajectorySpec(
            segments=[_segment(seg) for seg in data['segments']],
            initial_position=tuple(data.get('initial_position', (0.0, 0.0, 0.0))),
            initial_yaw=float(data.get('initial_yaw', 0.0)),
            t0=float(data.get('t0', 0.0)),
            rate=float(data.get('gt_rate', 1.0)),
        )
    except KeyError as e:
        raise ConfigurationError(f"scenario is missing {e}")
    except InvalidTrajectory as e:
        raise ConfigurationError(f"invalid trajectory: {e}")

    imu = data.get('imu') or {}
    gnss = data.get('gnss') or {}
    bias = imu.get('bias') or {}
    outages = OutagePattern(intervals=tuple(tuple(iv) for iv in gnss.get('outages') or ()))
    generated = gnss.get('generate_outages')
    if generated:
        outages = OutagePattern.generate(
            span=trajectory.duration,
            rate=float(gnss.get('rate', 1.0)),
            target_availability=float(generated['availability']),
            min_burst=float(generated.get('min_burst', 5.0)),
            max_burst=float(generated.get('max_burst', 30.0)),
            lead_in=float(generated.get('lead_in', 0.0)),
            seed=generated.get('seed'),
        )
    outages.validate_span(trajectory.duration)
    corruptions = tuple(
        GnssCorruption(float(c['start']), float(c['end']), tuple(c.get('offset', (0.0, 0.0, 0.0))))
        for c in gnss.get('corruptions') or ()
    )
    t0 = trajectory.t0
    return Scenario(
        name=data.get('name', os.path.splitext(os.path.basename(str(name_or_path)))[0]),
        trajectory=trajectory,
        imu_noise=load_imu_noise(imu.get('noise', 'simulated_mems')),
        imu_rate=float(imu.get('rate', 200.0)),
        gnss_rate=float(gnss.get('rate', 1.0)),
        gnss_sigma=tuple(float(s) for s in gnss.get('sigma', (5.0, 5.0, 10.0))),
        true_bias=ImuBias(bias.get('accel', (0.0, 0.0, 0.0)), bias.get('gyro', (0.0, 0.0, 0.0))),
        bias_random_walk=bool(imu.get('random_walk', False)),
        outages=outages,
        corruptions=corruptions,
        segments={
            name: (t0 + float(start), t0 + float(end))
            for name, (start, end) in (data.get('segments_of_interest') or {}).items()
        },
        anchor=tuple(data.get('anchor', (22.3193, 114.1694, 0.0))),
    )
