#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""Pytest configuration and shared fixtures for unit tests"""

import json
import os
import sys

import numpy as np
import pytest


@pytest.fixture(scope='session', autouse=True)
def setup_package_path():
    """Ensure the package is in the Python path"""
    package_root = os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
    if package_root not in sys.path:
        sys.path.insert(0, package_root)


@pytest.fixture(autouse=True)
def clean_environment(monkeypatch):
    """Unset the RTFGO_* variables that supply option defaults"""
    for name in ('RTFGO_CONFIG', 'RTFGO_OUT', 'RTFGO_SEED', 'RTFGO_VERBOSITY'):
        monkeypatch.delenv(name, raising=False)


@pytest.fixture
def invoke(capsys):
    """Run a command main(argv) and return (exit code, JSON result or None, stderr)"""
    from rtfgo.module_utils.common import EXIT_OK

    def call(command, argv):
        try:
            rc = command.main(argv)
        except SystemExit as e:
            rc = e.code
        captured = capsys.readouterr()
        return rc, json.loads(captured.out) if rc == EXIT_OK else None, captured.err
    return call


@pytest.fixture
def noiseless_imu():
    """IMU noise model with every density set to zero"""
    from rtfgo.module_utils.preintegration import ImuNoiseParams
    return ImuNoiseParams(
        accel_noise_density=0.0,
        gyro_noise_density=0.0,
        accel_bias_rw=0.0,
        gyro_bias_rw=0.0,
    )


@pytest.fixture
def turning_trajectory():
    """Ten seconds of straight driving and a gentle left arc"""
    from rtfgo.module_utils.simulation import Segment, TrajectorySpec
    return TrajectorySpec(
        segments=(
            Segment(duration=4.0, motion='straight', speed=6.0),
            Segment(duration=6.0, motion='arc', speed=6.0, yaw_rate=0.1),
        ),
        initial_position=(10.0, -5.0, 2.0),
        initial_yaw=0.3,
        t0=100.0,
    )


@pytest.fixture
def short_scenario():
    """The shipped 60 s scenario with continuous GNSS"""
    from rtfgo.module_utils.config import load_scenario
    return load_scenario('short')


@pytest.fixture
def random_state():
    """Factory of NavStates with random attitude, position, velocity and small biases"""
    from rtfgo.module_utils.lie import so3_exp
    from rtfgo.module_utils.states import ImuBias, NavState

    def make(rng, t=0.0):
        return NavState(
            R=so3_exp(rng.normal(size=3)),
            p=rng.normal(scale=10.0, size=3),
            v=rng.normal(scale=3.0, size=3),
            bias=ImuBias(rng.normal(scale=0.05, size=3), rng.normal(scale=0.005, size=3)),
            t=t,
        )
    return make


@pytest.fixture
def numerical_jacobian():
    """Central differences of a function over the 15 local coordinates of a state"""
    from rtfgo.module_utils.lie import retract

    def differentiate(func, state, step=1e-6):
        base = np.asarray(func(state))
        J = np.zeros((base.shape[0], 15))
        for k in range(15):
            delta = np.zeros(15)
            delta[k] = step
            J[:, k] = (np.asarray(func(retract(state, delta)))
                       - np.asarray(func(retract(state, -delta)))) / (2 * step)
        return J
    return differentiate


@pytest.fixture
def small_bundle(tmp_path, short_scenario):
    """Dataset bundle of the first 25 s of the short scenario"""
    from dataclasses import replace

    from rtfgo.module_utils.datasets import write_bundle
    from rtfgo.module_utils.simulation import TrajectorySpec, simulate_scenario

    trajectory = TrajectorySpec(segments=short_scenario.trajectory.segments[:2], t0=short_scenario.trajectory.t0)
    run = simulate_scenario(replace(short_scenario, trajectory=trajectory), seed=0)
    directory = str(tmp_path / 'bundle')
    metadata = {'time_offset_s': 0.0, 'segments': {'straight': [1000.0, 1015.0], 'arc': [1015.0, 1025.0]}}
    write_bundle(directory, run.imu, run.gnss, run.gt, metadata)
    return directory
