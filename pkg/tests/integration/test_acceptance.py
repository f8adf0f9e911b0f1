#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
End-to-end checks of the fusion engine on simulated scenarios.

These runs take minutes; select them with ``pytest -m integration``.
"""

import math
from dataclasses import replace

import numpy as np
import pytest

from rtfgo.module_utils.engine import EngineConfig, FusionEngine, OutputEstimate, OutputSource, replay
from rtfgo.module_utils.evaluation import (
    align_to_ground_truth,
    gnss_only_estimates,
    rmse_3d,
    service_availability,
    trajectory_cost,
)
from rtfgo.module_utils.factors import (
    BiasWalkFactor,
    GnssFactor,
    GnssFix,
    ImuFactor,
    KeyKind,
    MarginalPriorFactor,
    PriorFactor,
    epoch_keys,
)
from rtfgo.module_utils.lie import retract, so3_exp, so3_log
from rtfgo.module_utils.preintegration import (
    PT,
    RT,
    VT,
    ImuNoiseParams,
    ImuSample,
    PreintegratedImu,
    integrate_sample,
    predict,
)
from rtfgo.module_utils.simulation import GnssCorruption, simulate_scenario
from rtfgo.module_utils.solver import SolverConfig, optimize_dense
from rtfgo.module_utils.states import ImuBias, NavState
from rtfgo.modules.sweep import run_sweep, summarize

pytestmark = pytest.mark.integration

POINTS_PER_FACTOR = 100
COLUMNS = {KeyKind.POSE: slice(0, 6), KeyKind.VELOCITY: slice(6, 9), KeyKind.BIAS: slice(9, 15)}


def numerical_jacobian(func, state, step=1e-6):
    base = np.asarray(func(state))
    J = np.zeros((base.shape[0], 15))
    for k in range(15):
        delta = np.zeros(15)
        delta[k] = step
        J[:, k] = (np.asarray(func(retract(state, delta))) - np.asarray(func(retract(state, -delta)))) / (2 * step)
    return J


def assert_jacobians(factor, estimates):
    _, blocks = factor.evaluate(estimates)
    for epoch in sorted({key.epoch_index for key in factor.keys}):
        analytic = np.zeros((factor.dim, 15))
        for key, block in blocks.items():
            if key.epoch_index == epoch:
                analytic[:, COLUMNS[key.kind]] = block

        def residual(state, epoch=epoch):
            moved = dict(estimates)
            moved[epoch] = state
            return factor.evaluate(moved)[0]

        np.testing.assert_allclose(analytic, numerical_jacobian(residual, estimates[epoch]), rtol=1e-4, atol=1e-6)


def random_state(rng, t=0.0):
    return NavState(
        R=so3_exp(rng.normal(size=3)),
        p=rng.normal(scale=50.0, size=3),
        v=rng.normal(scale=5.0, size=3),
        bias=ImuBias(rng.normal(scale=0.05, size=3), rng.normal(scale=0.005, size=3)),
        t=t,
    )


def preintegrate(samples, params, t_end):
    """Accumulate samples, each held until the next one"""
    acc = PreintegratedImu.empty()
    for k, sample in enumerate(samples):
        nxt = samples[k + 1].t if k + 1 < len(samples) else t_end
        acc = integrate_sample(acc, sample, nxt - sample.t, params)
    return acc


def nearby(rng, state, scale=0.2):
    return retract(state, rng.normal(scale=scale, size=15) * np.repeat([1.0, 1.0, 1.0, 0.1, 0.01], 3))


def random_preint(rng, params, seconds=1.0, rate=100.0):
    dt = 1.0 / rate
    samples = [
        ImuSample(k * dt, rng.normal(size=3) + [0.0, 0.0, 9.8], rng.normal(scale=0.3, size=3))
        for k in range(int(round(seconds * rate)))
    ]
    return preintegrate(samples, params, t_end=seconds)


def position_errors(outputs, gt):
    paired = align_to_ground_truth(outputs, gt)
    return dict(zip(np.round(paired.times, 6), np.linalg.norm(paired.errors, axis=1)))


def availability_at(outputs, gt, theta):
    return dict(service_availability(outputs, gt, thresholds=(theta,)))[theta]


class TestJacobianSuite:
    """Analytic factor Jacobians against central differences"""

    def test_prior(self):
        """Test prior factor Jacobians at random linearization points"""
        rng = np.random.default_rng(100)
        for _ in range(POINTS_PER_FACTOR):
            mean = random_state(rng)
            factor = PriorFactor(0, mean, np.diag(rng.uniform(0.01, 1.0, size=15)))
            assert_jacobians(factor, {0: nearby(rng, mean)})

    def test_imu(self):
        """Test IMU factor Jacobians at random linearization points"""
        rng = np.random.default_rng(101)
        params = ImuNoiseParams()
        for _ in range(POINTS_PER_FACTOR):
            preint = random_preint(rng, params, seconds=rng.uniform(0.2, 1.0))
            x_i = random_state(rng)
            x_j = nearby(rng, predict(preint, x_i, params.gravity), 0.05)
            factor = ImuFactor(0, 1, preint, params.gravity)
            assert_jacobians(factor, {0: x_i, 1: x_j})

    def test_bias_walk(self):
        """Test bias random-walk factor Jacobians at random linearization points"""
        rng = np.random.default_rng(102)
        params = ImuNoiseParams()
        for _ in range(POINTS_PER_FACTOR):
            x_i = random_state(rng)
            factor = BiasWalkFactor(0, 1, params.bias_walk_covariance(rng.uniform(0.1, 5.0)))
            assert_jacobians(factor, {0: x_i, 1: nearby(rng, x_i)})

    def test_gnss(self):
        """Test GNSS position factor Jacobians at random linearization points"""
        rng = np.random.default_rng(103)
        for _ in range(POINTS_PER_FACTOR):
            x = random_state(rng)
            fix = GnssFix(t=0.0, p=x.p + rng.normal(scale=5.0, size=3), cov=np.diag(rng.uniform(1.0, 100.0, size=3)))
            assert_jacobians(GnssFactor(0, fix), {0: x})

    def test_marginal_prior(self):
        """Test condensed marginal prior Jacobians at random linearization points"""
        rng = np.random.default_rng(104)
        keys = epoch_keys(0) + epoch_keys(1)
        for _ in range(POINTS_PER_FACTOR):
            lin_point = {0: random_state(rng), 1: random_state(rng, t=1.0)}
            A = rng.normal(size=(30, 30))
            factor = MarginalPriorFactor(keys, lin_point, A @ A.T + np.eye(30), rng.normal(size=30),
                                         constant=rng.uniform(0.0, 10.0))
            assert_jacobians(factor, {k: nearby(rng, lin_point[k]) for k in lin_point})


class TestPreintegrationConsistency:
    """Monte-Carlo check of the propagated preintegration covariance"""

    def test_covariance_matches_sample_spread(self):
        """Test that 500 noisy trials spread as the predicted covariance diagonal says"""
        params = ImuNoiseParams()
        rate, n = 200.0, 200
        dt = 1.0 / rate
        accel = np.array([0.5, 0.2, 9.8])
        gyro = np.array([0.05, -0.02, 0.1])
        clean = [ImuSample(k * dt, accel, gyro) for k in range(n)]
        nominal = preintegrate(clean, params, t_end=n * dt)

        rng = np.random.default_rng(0)
        accel_std = params.accel_noise_density * math.sqrt(rate)
        gyro_std = params.gyro_noise_density * math.sqrt(rate)
        errors = []
        for _ in range(500):
            acc_noise = rng.normal(scale=accel_std, size=(n, 3))
            gyro_noise = rng.normal(scale=gyro_std, size=(n, 3))
            noisy = [ImuSample(k * dt, accel + acc_noise[k], gyro + gyro_noise[k]) for k in range(n)]
            trial = preintegrate(noisy, params, t_end=n * dt)
            e = np.zeros(9)
            e[RT] = so3_log(nominal.delta_R.T @ trial.delta_R)
            e[VT] = trial.delta_v - nominal.delta_v
            e[PT] = trial.delta_p - nominal.delta_p
            errors.append(e)

        empirical = np.var(np.array(errors), axis=0, ddof=1)
        ratio = empirical / np.diag(nominal.cov)
        assert np.all(ratio <= 1.5), ratio
        assert np.all(ratio >= 1.0 / 1.5), ratio


class TestBatchEquivalence:
    """Holding every state back reproduces the batch MAP solution"""

    def test_matches_dense_solve(self, short_scenario):
        """Test that tau equal to the fix count matches a dense solve of the same graph within 1e-6 m"""
        run = simulate_scenario(short_scenario, seed=0)
        config = EngineConfig(
            smoothing_latency_tau=len(run.gnss),
            imu_noise=short_scenario.imu_noise,
            imu_propagation=False,
            final_optimization=True,
        )
        engine = FusionEngine(config)
        outputs = replay(engine, run.imu, run.gnss)
        assert len(outputs) == len(run.gnss)
        assert all(out.source == OutputSource.OPTIMIZED for out in outputs)

        rng = np.random.default_rng(1)
        initial = {epoch: nearby(rng, state, 0.05) for epoch, state in engine.estimates.items()}
        reference = optimize_dense(engine.graph, initial, SolverConfig.tight())
        by_time = {round(out.t, 6): out.state for out in outputs}
        for epoch, state in reference.estimates.items():
            emitted = by_time[round(engine.graph.epoch_times[epoch], 6)]
            assert np.linalg.norm(emitted.p - state.p) < 1e-6


class TestAvailabilityTradeoff:
    """IMU propagation buys availability, smoothing buys accuracy"""

    def test_urban_scenario(self, urban_runs):
        """Test availability against GNSS only and accuracy against batch over 10 seeds"""
        passed = 0
        for run in urban_runs:
            noise = run.scenario.imu_noise
            rt_config = EngineConfig(imu_noise=noise, max_imu_propagation=4.0, marginalization_lag=50.0)
            rt = replay(FusionEngine(rt_config), run.imu, run.gnss)
            # the final tight solve fixes the result, the per-fix solves only warm start it
            batch_config = EngineConfig.for_mode('batch', imu_noise=noise, solver=SolverConfig(max_iterations=2))
            batch = replay(FusionEngine(batch_config), run.imu, run.gnss)

            rt_avail = availability_at(rt, run.gt, 50.0)
            gnss_avail = availability_at(gnss_only_estimates(run.gnss), run.gt, 50.0)
            rt_rmse = rmse_3d(align_to_ground_truth(rt, run.gt))
            batch_rmse = rmse_3d(align_to_ground_truth(batch, run.gt))
            if rt_avail >= 1.3 * gnss_avail and rt_rmse > batch_rmse:
                passed += 1
        assert passed >= 8


class TestMarginalizationSweep:
    """A longer marginalization lag never hurts accuracy"""

    LAGS = ['5', '10', '20', '50', 'inf']

    def test_lag_sweep(self, urban_runs):
        """Test that median RMSE does not grow with the lag and that lag 50 solves stay fast"""
        streams = [(run.seed, run.imu, run.gnss, run.gt, dict(run.scenario.segments)) for run in urban_runs]
        base = EngineConfig(imu_noise=urban_runs[0].scenario.imu_noise, imu_propagation=False)
        rows = run_sweep(streams, base, 'marg-lag', self.LAGS, (50.0,), workers=1)
        assert not [row for row in rows if row['error']]

        summary = summarize(rows, self.LAGS, (50.0,))
        medians = [entry['median_rmse_3d'] for entry in summary]
        for shorter, longer in zip(medians, medians[1:]):
            assert longer <= shorter
        assert summary[self.LAGS.index('50')]['median_mean_optimize_ms'] < 50.0


class TestSmoothingLatency:
    """Waiting for future fixes lowers the cost but can raise individual errors"""

    def test_corrupted_burst(self, short_scenario):
        """Test that tau 3 has a larger error somewhere yet a lower total cost than tau 0"""
        scenario = replace(short_scenario, corruptions=(GnssCorruption(30.0, 35.0, (30.0, 0.0, 0.0)),))
        run = simulate_scenario(scenario, seed=0)
        config = EngineConfig(imu_noise=scenario.imu_noise, imu_propagation=False)

        immediate = FusionEngine(config)
        out_0 = replay(immediate, run.imu, run.gnss)
        out_3 = replay(FusionEngine(config.with_(smoothing_latency_tau=3)), run.imu, run.gnss)

        err_0 = position_errors(out_0, run.gt)
        err_3 = position_errors(out_3, run.gt)
        common = set(err_0) & set(err_3)
        assert any(err_3[t] > err_0[t] + 1e-3 for t in common)

        # cold-start epochs are never emitted at tau 0; both trajectories share the same states there
        emitted = {round(out.t, 9) for out in out_0}
        filler = [
            OutputEstimate(t=state.t, state=state, source=OutputSource.OPTIMIZED)
            for state in immediate.estimates.values() if round(state.t, 9) not in emitted
        ]
        cost_0 = trajectory_cost(immediate.graph, out_0 + filler)
        cost_3 = trajectory_cost(immediate.graph, out_3 + filler)
        assert cost_3 < cost_0
