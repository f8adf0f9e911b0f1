#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""Unit tests for module_utils/simulation.py"""

import math

import numpy as np
import pytest

from rtfgo.module_utils.common import ConfigurationError, InvalidTrajectory
from rtfgo.module_utils.simulation import (
    GnssCorruption,
    GroundTruth,
    OutagePattern,
    Segment,
    TrajectorySpec,
    generate_trajectory,
    simulate_gnss,
    simulate_imu,
    simulate_scenario,
)
from rtfgo.module_utils.states import ImuBias


class TestSegment:
    """Tests for Segment validation"""

    def test_unknown_motion(self):
        """Test that an unknown motion type is rejected"""
        with pytest.raises(InvalidTrajectory):
            Segment(duration=1.0, motion='hover')

    def test_non_positive_duration(self):
        """Test that a zero-length segment is rejected"""
        with pytest.raises(InvalidTrajectory):
            Segment(duration=0.0)

    def test_stop_with_speed(self):
        """Test that a stop segment cannot move"""
        with pytest.raises(InvalidTrajectory):
            Segment(duration=2.0, motion='stop', speed=3.0)

    def test_end_speed(self):
        """Test that a straight segment may accelerate"""
        seg = Segment(duration=5.0, speed=2.0, end_speed=7.0)
        assert seg.start_speed == 2.0
        assert seg.final_speed == 7.0


class TestTrajectorySpec:
    """Tests for TrajectorySpec validation"""

    def test_needs_segments(self):
        """Test that an empty trajectory is rejected"""
        with pytest.raises(InvalidTrajectory):
            TrajectorySpec(segments=())

    def test_speed_continuity(self):
        """Test that a speed jump between segments is rejected"""
        with pytest.raises(InvalidTrajectory, match='speed jumps'):
            TrajectorySpec(segments=(Segment(5.0, speed=8.0), Segment(5.0, 'stop')))

    def test_accelerate_then_stop(self):
        """Test that braking to zero may be followed by a stop"""
        spec = TrajectorySpec(segments=(Segment(4.0, speed=8.0, end_speed=0.0), Segment(3.0, 'stop')))
        assert spec.duration == 7.0

    def test_t_end(self, turning_trajectory):
        """Test the end time of a trajectory"""
        assert turning_trajectory.t_end == 110.0


class TestGenerateTrajectory:
    """Tests for generate_trajectory() and GroundTruth"""

    def test_grid_includes_end(self, turning_trajectory):
        """Test that ground truth is sampled at 1 Hz including both ends"""
        gt = generate_trajectory(turning_trajectory)
        np.testing.assert_allclose(gt.times, np.arange(100.0, 111.0))
        assert len(gt) == 11
        assert gt.period == 1.0

    def test_straight_then_arc(self, turning_trajectory):
        """Test analytic positions at the end of each segment"""
        gt = generate_trajectory(turning_trajectory)
        corner = np.array([10.0 + 24.0 * math.cos(0.3), -5.0 + 24.0 * math.sin(0.3), 2.0])
        np.testing.assert_allclose(gt.position_at(104.0), corner, atol=1e-9)
        end = corner + 60.0 * np.array([math.sin(0.9) - math.sin(0.3), math.cos(0.3) - math.cos(0.9), 0.0])
        np.testing.assert_allclose(gt.position_at(110.0), end, atol=1e-9)

    def test_arc_kinematics(self, turning_trajectory):
        """Test that the arc keeps its speed and turns the heading"""
        gt = generate_trajectory(turning_trajectory)
        kin = gt.kinematics_at(107.0)
        assert np.linalg.norm(kin.v) == pytest.approx(6.0)
        assert kin.yaw == pytest.approx(0.6)
        assert np.linalg.norm(kin.a) == pytest.approx(0.6)
        assert kin.v @ kin.a == pytest.approx(0.0, abs=1e-12)

    def test_states_follow_heading(self, turning_trajectory):
        """Test that the attitude is a pure yaw rotation along the track"""
        gt = generate_trajectory(turning_trajectory)
        state = gt.states[-1]
        forward = state.R @ [1.0, 0.0, 0.0]
        np.testing.assert_allclose(forward * 6.0, state.v, atol=1e-9)

    def test_sampled_ground_truth_interpolates(self):
        """Test that ground truth without a trajectory interpolates linearly"""
        gt = GroundTruth([0.0, 1.0], [[0.0, 0.0, 0.0], [2.0, 4.0, 6.0]])
        np.testing.assert_allclose(gt.position_at(0.25), [0.5, 1.0, 1.5])
        with pytest.raises(InvalidTrajectory):
            gt.kinematics_at(0.5)

    def test_length_mismatch(self):
        """Test that mismatched times and positions are rejected"""
        with pytest.raises(ValueError):
            GroundTruth([0.0, 1.0, 2.0], [[0.0, 0.0, 0.0]])


class TestSimulateImu:
    """Tests for simulate_imu()"""

    def test_sample_grid(self, turning_trajectory, noiseless_imu):
        """Test that samples cover [t0, t_end) at the IMU rate"""
        samples = simulate_imu(generate_trajectory(turning_trajectory), noiseless_imu, rate=200.0)
        assert len(samples) == 2000
        assert samples[0].t == 100.0
        assert samples[-1].t == pytest.approx(110.0 - 0.005)

    def test_straight_reads_gravity(self, turning_trajectory, noiseless_imu):
        """Test that constant-speed straight driving only senses gravity"""
        samples = simulate_imu(generate_trajectory(turning_trajectory), noiseless_imu)
        for sample in samples[10:700]:
            np.testing.assert_allclose(sample.accel, [0.0, 0.0, 9.80665], atol=1e-9)
            np.testing.assert_allclose(sample.gyro, np.zeros(3), atol=1e-12)

    def test_arc_reads_turn(self, turning_trajectory, noiseless_imu):
        """Test that the arc gives a yaw rate and a leftward centripetal force"""
        samples = simulate_imu(generate_trajectory(turning_trajectory), noiseless_imu)
        arc = [s for s in samples if 105.0 < s.t < 109.0]
        gyro = np.array([s.gyro for s in arc])
        accel = np.array([s.accel for s in arc])
        np.testing.assert_allclose(gyro[:, 2], 0.1, atol=1e-9)
        np.testing.assert_allclose(accel.mean(axis=0), [0.0, 0.6, 9.80665], atol=1e-3)

    def test_constant_bias(self, turning_trajectory, noiseless_imu):
        """Test that a true bias is added to every sample"""
        gt = generate_trajectory(turning_trajectory)
        bias = ImuBias([0.1, -0.2, 0.3], [0.01, 0.0, -0.01])
        clean = simulate_imu(gt, noiseless_imu)
        biased = simulate_imu(gt, noiseless_imu, true_bias=bias)
        np.testing.assert_allclose(biased[50].accel - clean[50].accel, bias.b_a, atol=1e-12)
        np.testing.assert_allclose(biased[50].gyro - clean[50].gyro, bias.b_g, atol=1e-12)

    def test_noise_scale(self, turning_trajectory):
        """Test that white noise scales with density times sqrt(rate)"""
        from rtfgo.module_utils.preintegration import ImuNoiseParams
        gt = generate_trajectory(turning_trajectory)
        params = ImuNoiseParams(accel_noise_density=0.01, gyro_noise_density=0.001)
        samples = simulate_imu(gt, params, seed=1)
        straight = np.array([s.accel for s in samples[:780]])
        assert straight[:, 0].std() == pytest.approx(0.01 * math.sqrt(200.0), rel=0.15)

    def test_random_walk_drifts(self, turning_trajectory, short_scenario):
        """Test that enabling the bias random walk changes later samples only"""
        gt = generate_trajectory(turning_trajectory)
        fixed = simulate_imu(gt, short_scenario.imu_noise, seed=4)
        walking = simulate_imu(gt, short_scenario.imu_noise, seed=4, bias_random_walk=True)
        np.testing.assert_array_equal(fixed[0].accel, walking[0].accel)
        assert not np.array_equal(fixed[-1].accel, walking[-1].accel)

    def test_rate_too_low(self, turning_trajectory, noiseless_imu):
        """Test that an IMU slower than twice the ground-truth rate is rejected"""
        with pytest.raises(ConfigurationError):
            simulate_imu(generate_trajectory(turning_trajectory), noiseless_imu, rate=1.5)

    def test_needs_analytic_ground_truth(self, noiseless_imu):
        """Test that sampled ground truth cannot drive the IMU model"""
        with pytest.raises(InvalidTrajectory):
            simulate_imu(GroundTruth([0.0, 1.0], np.zeros((2, 3))), noiseless_imu)


class TestSimulateGnss:
    """Tests for simulate_gnss()"""

    def test_grid_excludes_end(self, turning_trajectory):
        """Test that fixes cover [t0, t_end) at 1 Hz"""
        fixes = simulate_gnss(generate_trajectory(turning_trajectory), (1.0, 1.0, 2.0), seed=0)
        np.testing.assert_allclose([f.t for f in fixes], np.arange(100.0, 110.0))

    def test_covariance_floor(self, turning_trajectory):
        """Test that zero sigma gives exact fixes with the covariance floor"""
        gt = generate_trajectory(turning_trajectory)
        fixes = simulate_gnss(gt, (0.0, 0.0, 0.0))
        np.testing.assert_allclose(fixes[5].p, gt.position_at(105.0))
        np.testing.assert_allclose(fixes[5].cov, np.eye(3) * 1e-4)

    def test_outages_suppress_fixes(self, turning_trajectory):
        """Test that fixes inside [start, end) are dropped"""
        pattern = OutagePattern(intervals=((2.0, 5.0),))
        fixes = simulate_gnss(generate_trajectory(turning_trajectory), (0.0, 0.0, 0.0), pattern)
        assert [f.t - 100.0 for f in fixes] == [0.0, 1.0, 5.0, 6.0, 7.0, 8.0, 9.0]

    def test_corruption_offset(self, turning_trajectory):
        """Test that a corruption shifts the fixes it covers"""
        gt = generate_trajectory(turning_trajectory)
        corruption = GnssCorruption(start=3.0, end=6.0, offset=(30.0, 0.0, 0.0))
        fixes = simulate_gnss(gt, (0.0, 0.0, 0.0), corruptions=(corruption,))
        shifts = [f.p[0] - gt.position_at(f.t)[0] for f in fixes]
        np.testing.assert_allclose(shifts, [0, 0, 0, 30, 30, 30, 0, 0, 0, 0], atol=1e-9)

    def test_noise_statistics(self):
        """Test that per-axis noise follows sigma"""
        gt = GroundTruth(np.arange(1000.0), np.zeros((1000, 3)))
        fixes = simulate_gnss(gt, (1.0, 2.0, 3.0), seed=0)
        assert len(fixes) == 999
        errors = np.array([f.p for f in fixes])
        np.testing.assert_allclose(errors.std(axis=0), [1.0, 2.0, 3.0], rtol=0.1)

    @pytest.mark.parametrize('seed', [0, 7, 42])
    def test_generated_availability(self, seed):
        """Test that a 42% outage pattern keeps 42% of the grid, within one fix"""
        gt = GroundTruth(np.arange(301.0), np.zeros((301, 3)))
        pattern = OutagePattern.generate(300.0, 1.0, 0.42, seed=seed)
        fixes = simulate_gnss(gt, (1.0, 1.0, 2.0), pattern, seed=seed)
        assert abs(len(fixes) - 0.42 * 300) <= 1

    def test_rate_above_ground_truth(self, turning_trajectory):
        """Test that GNSS faster than ground truth is rejected"""
        with pytest.raises(ConfigurationError):
            simulate_gnss(generate_trajectory(turning_trajectory), (1.0, 1.0, 1.0), rate=2.0)

    def test_outage_outside_span(self, turning_trajectory):
        """Test that an outage past the trajectory end is rejected"""
        with pytest.raises(ConfigurationError):
            simulate_gnss(generate_trajectory(turning_trajectory), (1.0, 1.0, 1.0),
                          OutagePattern(intervals=((8.0, 12.0),)))


class TestOutagePattern:
    """Tests for OutagePattern"""

    def test_sorted_and_end_exclusive(self):
        """Test that intervals are sorted and contain their start only"""
        pattern = OutagePattern(intervals=((20, 25), (5, 10)))
        assert pattern.intervals == ((5.0, 10.0), (20.0, 25.0))
        assert pattern.contains(5.0)
        assert not pattern.contains(10.0)

    def test_overlap(self):
        """Test that overlapping intervals are rejected"""
        with pytest.raises(ConfigurationError):
            OutagePattern(intervals=((0.0, 10.0), (5.0, 15.0)))

    def test_empty_interval(self):
        """Test that an interval with end <= start is rejected"""
        with pytest.raises(ConfigurationError):
            OutagePattern(intervals=((5.0, 5.0),))

    def test_generate_hits_availability(self):
        """Test that generated bursts remove exactly the requested share of epochs"""
        pattern = OutagePattern.generate(300.0, 1.0, 0.8, lead_in=20.0, seed=3)
        kept = sum(not pattern.contains(float(k)) for k in range(300))
        assert kept == 240
        assert pattern.intervals[0][0] >= 20.0
        assert all(end - start >= 5.0 for start, end in pattern.intervals)
        assert pattern.target_availability == 0.8

    def test_generate_full_availability(self):
        """Test that full availability yields no outages"""
        assert OutagePattern.generate(100.0, 1.0, 1.0, seed=0).intervals == ()

    def test_generate_rejects_bad_target(self):
        """Test that a target outside (0, 1] is rejected"""
        with pytest.raises(ConfigurationError):
            OutagePattern.generate(100.0, 1.0, 0.0)


class TestSimulateScenario:
    """Tests for simulate_scenario()"""

    def test_stream_sizes(self, short_scenario):
        """Test the stream sizes of the 60 s scenario"""
        run = simulate_scenario(short_scenario, seed=5)
        assert len(run.imu) == 12000
        assert len(run.gnss) == 60
        assert len(run.gt) == 61
        assert run.availability == 1.0

    def test_deterministic_in_seed(self, short_scenario):
        """Test that equal seeds reproduce streams and different seeds do not"""
        first = simulate_scenario(short_scenario, seed=5)
        second = simulate_scenario(short_scenario, seed=5)
        other = simulate_scenario(short_scenario, seed=6)
        np.testing.assert_array_equal(first.gnss[10].p, second.gnss[10].p)
        np.testing.assert_array_equal(first.imu[100].accel, second.imu[100].accel)
        assert not np.array_equal(first.gnss[10].p, other.gnss[10].p)
