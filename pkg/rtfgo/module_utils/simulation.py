# -*- coding: utf-8 -*-

# GNU General Public License v3.0+ (see LICENSES/GPL-3.0-or-later.txt or https://www.gnu.org/licenses/gpl-3.0.txt)
# SPDX-License-Identifier: GPL-3.0-or-later

"""
Synthetic trajectories and sensor streams.

Trajectories are planar chains of analytic segments (straight, arc,
stop). The body frame is forward-left-up and R = Rz(yaw). An IMU sample
at t_k holds the mean motion over [t_k, t_k+1): the gyro reads the mean
yaw rate and the accelerometer reads the mean specific force resolved in
the body frame at t_k, so Euler preintegration of a noiseless stream
reproduces the trajectory.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from rtfgo.module_utils.common import ConfigurationError, InvalidTrajectory
from rtfgo.module_utils.factors import GnssFix, GnssQuality
from rtfgo.module_utils.lie import rotation_from_euler
from rtfgo.module_utils.preintegration import ImuNoiseParams, ImuSample
from rtfgo.module_utils.states import ImuBias, NavState

logger = logging.getLogger(__name__)

GNSS_COVARIANCE_FLOOR = 1e-4
CONTINUITY_TOLERANCE = 1e-9
MOTIONS = ('straight', 'arc', 'stop')


@dataclass(frozen=True)
class Segment:
    """
    One analytic motion segment.

    straight: speed, optional end_speed for constant acceleration
    arc: constant speed and yaw_rate (rad/s, counter-clockwise)
    stop: stationary
    """
    duration: float
    motion: str = 'straight'
    speed: float = 0.0
    yaw_rate: float = 0.0
    end_speed: float = None

    def __post_init__(self):
        if self.motion not in MOTIONS:
            raise InvalidTrajectory(f"unknown motion '{self.motion}'")
        if not self.duration > 0.0:
            raise InvalidTrajectory(f"segment duration must be positive, got {self.duration}")
        if self.motion == 'stop' and (self.speed or self.end_speed):
            raise InvalidTrajectory('stop segments cannot have a speed')

    @property
    def start_speed(self):
        return 0.0 if self.motion == 'stop' else self.speed

    @property
    def final_speed(self):
        if self.motion == 'straight' and self.end_speed is not None:
            return self.end_speed
        return self.start_speed


@dataclass(frozen=True)
class TrajectorySpec:
    segments: tuple
    initial_position: tuple = (0.0, 0.0, 0.0)
    initial_yaw: float = 0.0
    t0: float = 0.0
    rate: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, 'segments', tuple(self.segments))
        if not self.segments:
            raise InvalidTrajectory('a trajectory needs at least one segment')
        if not self.rate > 0.0:
            raise InvalidTrajectory('ground-truth rate must be positive')
        for prev, nxt in zip(self.segments, self.segments[1:]):
            if abs(prev.final_speed - nxt.start_speed) > CONTINUITY_TOLERANCE:
                raise InvalidTrajectory(
                    f"speed jumps from {prev.final_speed} to {nxt.start_speed} between segments"
                )

    @property
    def duration(self):
        return float(sum(seg.duration for seg in self.segments))

    @property
    def t_end(self):
        return self.t0 + self.duration


@dataclass(frozen=True)
class OutagePattern:
    """GNSS suppression intervals, in seconds relative to the trajectory start."""
    intervals: tuple = ()
    target_availability: float = None

    def __post_init__(self):
        intervals = tuple(sorted((float(a), float(b)) for a, b in self.intervals))
        for start, end in intervals:
            if not end > start:
                raise ConfigurationError(f"outage interval ({start}, {end}) is empty")
        for (_, end), (start, _) in zip(intervals, intervals[1:]):
            if start < end:
                raise ConfigurationError('outage intervals overlap')
        object.__setattr__(self, 'intervals', intervals)

    def contains(self, t_rel):
        return any(start <= t_rel < end for start, end in self.intervals)

    def validate_span(self, span):
        for start, end in self.intervals:
            if start < 0.0 or end > span + 1e-9:
                raise ConfigurationError(f"outage ({start}, {end}) outside trajectory span {span}")

    @classmethod
    def generate(cls, span, rate, target_availability, min_burst=5.0, max_burst=30.0,
                 lead_in=0.0, seed=None):
        """
        Random bursts hitting a target availability on the GNSS grid.

        Args:
            span: Trajectory duration (s)
            rate: GNSS rate (Hz)
            target_availability: Fraction of grid epochs that keep a fix
            min_burst: Shortest outage (s)
            max_burst: Longest outage (s)
            lead_in: Outage-free time at the start (s)
            seed: Random seed

        Returns:
            OutagePattern
        """
        if not 0.0 < target_availability <= 1.0:
            raise ConfigurationError('target_availability must be in (0, 1]')
        rng = np.random.default_rng(seed)
        n_total = int(round(span * rate))
        n_out = int(round((1.0 - target_availability) * n_total))
        min_b = max(int(round(min_burst * rate)), 1)
        max_b = max(int(round(max_burst * rate)), min_b)
        bursts = []
        remaining = n_out
        while remaining > 0:
            size = min(int(rng.integers(min_b, max_b + 1)), remaining)
            bursts.append(size)
            remaining -= size
        if len(bursts) > 1 and bursts[-1] < min_b:
            bursts[-2] += bursts.pop()
        lead = int(round(lead_in * rate))
        n_free = n_total - n_out - lead
        if bursts and n_free < len(bursts):
            raise ConfigurationError('not enough available epochs to separate the outage bursts')
        gaps = np.ones(len(bursts), dtype=int)
        if bursts:
            gaps += rng.multinomial(n_free - len(bursts), np.full(len(bursts) + 1, 1.0 / (len(bursts) + 1)))[:-1]
        intervals = []
        cursor = lead
        for gap, size in zip(gaps, bursts):
            cursor += int(gap)
            intervals.append((cursor / rate, (cursor + size) / rate))
            cursor += size
        return cls(intervals=tuple(intervals), target_availability=target_availability)


@dataclass(frozen=True)
class GnssCorruption:
    """Constant offset (m) added to fixes with start <= t_rel < end."""
    start: float
    end: float
    offset: tuple = (0.0, 0.0, 0.0)

    def applies(self, t_rel):
        return self.start <= t_rel < self.end


@dataclass(frozen=True)
class Kinematics:
    p: np.ndarray
    v: np.ndarray
    a: np.ndarray
    yaw: float
    yaw_rate: float


def _segment_kinematics(seg, p0, yaw0, s):
    heading = np.array([math.cos(yaw0), math.sin(yaw0), 0.0])
    if seg.motion == 'stop':
        return Kinematics(p0.copy(), np.zeros(3), np.zeros(3), yaw0, 0.0)
    if seg.motion == 'straight':
        accel = (seg.final_speed - seg.speed) / seg.duration
        speed = seg.speed + accel * s
        dist = seg.speed * s + 0.5 * accel * s * s
        return Kinematics(p0 + dist * heading, speed * heading, accel * heading, yaw0, 0.0)
    v, w = seg.speed, seg.yaw_rate
    yaw = yaw0 + w * s
    direction = np.array([math.cos(yaw), math.sin(yaw), 0.0])
    if abs(w) < 1e-12:
        p = p0 + v * s * heading
    else:
        p = p0 + (v / w) * np.array([
            math.sin(yaw) - math.sin(yaw0),
            -(math.cos(yaw) - math.cos(yaw0)),
            0.0,
        ])
    a = v * w * np.array([-math.sin(yaw), math.cos(yaw), 0.0])
    return Kinematics(p, v * direction, a, yaw, w)


class GroundTruth:
    """
    Reference trajectory sampled on a fixed grid.

    Simulated ground truth keeps its TrajectorySpec and evaluates the
    analytic kinematics at any time; ingested ground truth only holds
    positions.
    """

    def __init__(self, times, positions, states=None, spec=None):
        self.times = np.asarray(times, dtype=float)
        self.positions = np.asarray(positions, dtype=float).reshape(-1, 3)
        self.states = states
        self.spec = spec
        if len(self.times) != len(self.positions):
            raise ValueError('times and positions differ in length')
        self._starts = None
        if spec is not None:
            self._starts = self._segment_starts(spec)

    def __len__(self):
        return len(self.times)

    @property
    def period(self):
        if len(self.times) < 2:
            return 1.0
        return float(np.median(np.diff(self.times)))

    @staticmethod
    def _segment_starts(spec):
        starts = []
        t = spec.t0
        p = np.asarray(spec.initial_position, dtype=float)
        yaw = spec.initial_yaw
        for seg in spec.segments:
            starts.append((t, p, yaw))
            end = _segment_kinematics(seg, p, yaw, seg.duration)
            t, p, yaw = t + seg.duration, end.p, end.yaw
        return starts

    def kinematics_at(self, t):
        """Analytic kinematics at time t (simulated ground truth only)."""
        if self.spec is None:
            raise InvalidTrajectory('ground truth has no analytic trajectory')
        idx = len(self._starts) - 1
        for k, (start, _, _) in enumerate(self._starts):
            if t < start:
                idx = k - 1
                break
        idx = max(idx, 0)
        start, p0, yaw0 = self._starts[idx]
        return _segment_kinematics(self.spec.segments[idx], p0, yaw0, t - start)

    def state_at(self, t):
        kin = self.kinematics_at(t)
        return NavState(R=rotation_from_euler(0.0, 0.0, kin.yaw), p=kin.p, v=kin.v, t=t)

    def position_at(self, t):
        if self.spec is not None:
            return self.kinematics_at(t).p
        return np.array([np.interp(t, self.times, self.positions[:, i]) for i in range(3)])


def generate_trajectory(spec):
    """
    Sample the analytic trajectory on the ground-truth grid.

    Returns:
        GroundTruth: states at t0, t0 + 1/rate, ... up to and including the end
    """
    n = int(math.floor(spec.duration * spec.rate + 1e-9))
    gt = GroundTruth(np.zeros(0), np.zeros((0, 3)), spec=spec)
    times = spec.t0 + np.arange(n + 1) / spec.rate
    states = [gt.state_at(t) for t in times]
    return GroundTruth(times, [s.p for s in states], states=states, spec=spec)


def simulate_imu(gt, params, true_bias=None, rate=200.0, seed=None, bias_random_walk=False):
    """
    Forward IMU model over the ground-truth span.

    Args:
        gt: Simulated GroundTruth
        params: ImuNoiseParams (densities scale white noise by sqrt(rate))
        true_bias: Constant (initial) ImuBias added to every sample
        rate: IMU rate (Hz), at least twice the ground-truth rate
        seed: Random seed or SeedSequence
        bias_random_walk: Let the bias drift with the random-walk densities

    Returns:
        list of ImuSample
    """
    spec = gt.spec
    if spec is None:
        raise InvalidTrajectory('IMU simulation needs an analytic ground truth')
    if rate < 2.0 * spec.rate:
        raise ConfigurationError(f"IMU rate {rate} Hz must be at least twice the ground-truth rate")
    true_bias = true_bias or ImuBias()
    rng = np.random.default_rng(seed)
    dt = 1.0 / rate
    n = int(math.floor(spec.duration * rate + 1e-9))
    times = spec.t0 + np.arange(n + 1) * dt
    kin = [gt.kinematics_at(t) for t in times]
    gravity = params.gravity

    sigma_a = params.accel_noise_density * math.sqrt(rate)
    sigma_g = params.gyro_noise_density * math.sqrt(rate)
    noise_a = rng.standard_normal((n, 3)) * sigma_a
    noise_g = rng.standard_normal((n, 3)) * sigma_g
    b_a = np.array(true_bias.b_a)
    b_g = np.array(true_bias.b_g)
    walk_a = rng.standard_normal((n, 3)) * params.accel_bias_rw * math.sqrt(dt)
    walk_g = rng.standard_normal((n, 3)) * params.gyro_bias_rw * math.sqrt(dt)

    samples = []
    for k in range(n):
        R_k = rotation_from_euler(0.0, 0.0, kin[k].yaw)
        mean_accel = (kin[k + 1].v - kin[k].v) / dt
        f = R_k.T @ (mean_accel - gravity)
        omega = np.array([0.0, 0.0, (kin[k + 1].yaw - kin[k].yaw) / dt])
        samples.append(ImuSample(times[k], f + b_a + noise_a[k], omega + b_g + noise_g[k]))
        if bias_random_walk:
            b_a += walk_a[k]
            b_g += walk_g[k]
    return samples


def simulate_gnss(gt, sigma, pattern=None, rate=1.0, seed=None, corruptions=(),
                  quality=GnssQuality.SINGLE):
    """
    Noisy position fixes on a fixed grid, suppressed inside outages.

    Args:
        gt: GroundTruth (analytic or sampled)
        sigma: Per-axis standard deviation (m)
        pattern: OutagePattern relative to the trajectory start
        rate: GNSS rate (Hz)
        seed: Random seed or SeedSequence
        corruptions: GnssCorruption offsets applied on top of the noise
        quality: Quality flag recorded on every fix

    Returns:
        list of GnssFix with covariance diag(max(sigma^2, 1e-4))
    """
    t0 = gt.spec.t0 if gt.spec is not None else float(gt.times[0])
    span = gt.spec.duration if gt.spec is not None else float(gt.times[-1] - gt.times[0])
    gt_rate = gt.spec.rate if gt.spec is not None else 1.0 / gt.period
    if rate > gt_rate + 1e-9:
        raise ConfigurationError(f"GNSS rate {rate} Hz exceeds the ground-truth rate {gt_rate} Hz")
    pattern = pattern or OutagePattern()
    pattern.validate_span(span)
    sigma = np.asarray(sigma, dtype=float).reshape(3)
    cov = np.diag(np.maximum(sigma ** 2, GNSS_COVARIANCE_FLOOR))
    rng = np.random.default_rng(seed)
    n = int(math.floor(span * rate + 1e-9))
    noise = rng.standard_normal((n, 3)) * sigma

    fixes = []
    for k in range(n):
        t_rel = k / rate
        if pattern.contains(t_rel):
            continue
        p = gt.position_at(t0 + t_rel) + noise[k]
        for corruption in corruptions:
            if corruption.applies(t_rel):
                p = p + np.asarray(corruption.offset, dtype=float)
        fixes.append(GnssFix(t=t0 + t_rel, p=p, cov=cov, quality=quality))
    logger.debug('simulated %d of %d GNSS epochs', len(fixes), n)
    return fixes


@dataclass(frozen=True)
class Scenario:
    """A canned simulation setup, usually loaded from YAML."""
    name: str
    trajectory: TrajectorySpec
    imu_noise: ImuNoiseParams = field(default_factory=ImuNoiseParams)
    imu_rate: float = 200.0
    gnss_rate: float = 1.0
    gnss_sigma: tuple = (5.0, 5.0, 10.0)
    true_bias: ImuBias = field(default_factory=ImuBias)
    bias_random_walk: bool = False
    outages: OutagePattern = field(default_factory=OutagePattern)
    corruptions: tuple = ()
    segments: dict = field(default_factory=dict)
    anchor: tuple = (22.3193, 114.1694, 0.0)


@dataclass
class SimulatedRun:
    scenario: Scenario
    seed: int
    imu: list
    gnss: list
    gt: GroundTruth

    @property
    def availability(self):
        n = int(math.floor(self.scenario.trajectory.duration * self.scenario.gnss_rate + 1e-9))
        return len(self.gnss) / n if n else 0.0


def simulate_scenario(scenario, seed=0):
    """Ground truth plus IMU and GNSS streams for a scenario, deterministic in seed."""
    imu_seed, gnss_seed = np.random.SeedSequence(seed).spawn(2)
    gt = generate_trajectory(scenario.trajectory)
    imu = simulate_imu(gt, scenario.imu_noise, scenario.true_bias, scenario.imu_rate,
                       seed=imu_seed, bias_random_walk=scenario.bias_random_walk)
    gnss = simulate_gnss(gt, scenario.gnss_sigma, scenario.outages, scenario.gnss_rate,
                         seed=gnss_seed, corruptions=scenario.corruptions)
    logger.info('scenario %s seed %d: %d IMU samples, %d GNSS fixes, %d GT epochs',
                scenario.name, seed, len(imu), len(gnss), len(gt))
    return SimulatedRun(scenario=scenario, seed=seed, imu=imu, gnss=gnss, gt=gt)
