# -*- coding: utf-8 -*-

# GNU General Public License v3.0+ (see LICENSES/GPL-3.0-or-later.txt or https://www.gnu.org/licenses/gpl-3.0.txt)
# SPDX-License-Identifier: GPL-3.0-or-later

"""
Real-time GNSS/IMU fusion engine.

The engine is a sequential state machine fed with time-ordered IMU
samples and GNSS fixes. Every fix adds an epoch (pose, velocity, bias)
to a sliding-window factor graph which is re-solved immediately.
Estimates are emitted after a smoothing latency counted in GNSS epochs;
between fixes the newest state is propagated with IMU data alone for a
bounded time. Epochs older than the marginalization lag are condensed
into a prior.

Navigation frame is local ENU with gravity [0, 0, -9.80665] m/s^2.
"""

import enum
import heapq
import logging
import math
import time
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from rtfgo.module_utils.common import (
    ConfigurationError,
    InsufficientMotion,
    NonMonotonicTime,
    RunTimeout,
)
from rtfgo.module_utils.factors import (
    BiasWalkFactor,
    FactorGraph,
    GnssFactor,
    ImuFactor,
    PriorFactor,
)
from rtfgo.module_utils.lie import rotation_from_euler
from rtfgo.module_utils.preintegration import (
    ImuNoiseParams,
    PreintegratedImu,
    integrate_sample,
    predict,
)
from rtfgo.module_utils.solver import SolverConfig, marginalize, optimize
from rtfgo.module_utils.states import ImuBias, NavState

logger = logging.getLogger(__name__)

ACCEL_BUFFER_SIZE = 20000
INTERVAL_TOLERANCE = 1e-6


class EngineMode(str, enum.Enum):
    COLD_START = 'cold_start'
    TRACKING = 'tracking'
    OUTAGE_PROPAGATION = 'outage_propagation'
    OUTAGE_SUSPENDED = 'outage_suspended'


class OutputSource(str, enum.Enum):
    OPTIMIZED = 'optimized'
    IMU_PROPAGATED = 'imu_propagated'
    GNSS = 'gnss'


@dataclass(frozen=True, eq=False)
class OutputEstimate:
    """
    One emitted estimate.

    latency is measured in stream time: the newest input timestamp seen
    when the estimate was emitted, minus the state time.
    """
    t: float
    state: NavState
    source: OutputSource
    latency: float = 0.0
    sequence: int = 0


@dataclass(frozen=True)
class EngineStatus:
    mode: EngineMode
    epochs_in_graph: int
    last_gnss_t: float
    last_imu_t: float


@dataclass(frozen=True)
class EngineConfig:
    """
    Engine knobs.

    smoothing_latency_tau counts GNSS epochs, not seconds; math.inf holds
    every state back until finalize (batch behaviour).
    """
    smoothing_latency_tau: float = 0
    marginalization_lag: float = math.inf
    max_imu_propagation: float = 4.0
    cold_start_fix_count: int = 4
    gnss_cov_scale: float = 2.0
    output_rate: float = 1.0
    imu_noise: ImuNoiseParams = field(default_factory=ImuNoiseParams)
    solver: SolverConfig = field(default_factory=SolverConfig)
    imu_propagation: bool = True
    gnss_nominal_period: float = 1.0
    max_preintegration_time: float = 30.0
    final_optimization: bool = False
    min_cold_start_displacement: float = 1.0
    yaw_prior_std: float = 0.3
    tilt_prior_std: float = 0.05
    velocity_prior_std: float = 1.0
    accel_bias_prior_std: float = 0.1
    gyro_bias_prior_std: float = 0.01

    def __post_init__(self):
        tau = self.smoothing_latency_tau
        if tau < 0 or (not math.isinf(tau) and int(tau) != tau):
            raise ConfigurationError(f"smoothing_latency_tau must be a non-negative integer or inf, got {tau}")
        if not math.isinf(tau):
            object.__setattr__(self, 'smoothing_latency_tau', int(tau))
        if not self.marginalization_lag > 0.0:
            raise ConfigurationError('marginalization_lag must be positive')
        if not self.max_imu_propagation > 0.0:
            raise ConfigurationError('max_imu_propagation must be positive')
        if self.cold_start_fix_count < 2:
            raise ConfigurationError('cold_start_fix_count must be at least 2')
        if not self.gnss_cov_scale > 0.0:
            raise ConfigurationError('gnss_cov_scale must be positive')
        if not 0.0 < self.output_rate <= 1.0 / self.imu_noise.max_imu_gap:
            raise ConfigurationError('output_rate must be positive and at most 1 / max_imu_gap')
        for name in ('gnss_nominal_period', 'max_preintegration_time', 'yaw_prior_std',
                     'tilt_prior_std', 'velocity_prior_std', 'accel_bias_prior_std',
                     'gyro_bias_prior_std', 'min_cold_start_displacement'):
            if not getattr(self, name) > 0.0:
                raise ConfigurationError(f"{name} must be positive")
        noise = self.imu_noise
        if min(noise.accel_noise_density, noise.gyro_noise_density,
               noise.accel_bias_rw, noise.gyro_bias_rw) <= 0.0:
            raise ConfigurationError('the engine needs strictly positive IMU noise densities')

    @classmethod
    def for_mode(cls, mode, **overrides):
        """Configuration for 'rt' (real-time) or 'batch' processing."""
        if mode == 'rt':
            return cls(**overrides)
        if mode == 'batch':
            settings = dict(
                smoothing_latency_tau=math.inf,
                marginalization_lag=math.inf,
                imu_propagation=False,
                final_optimization=True,
            )
            settings.update(overrides)
            return cls(**settings)
        raise ConfigurationError(f"unknown mode '{mode}'")

    def with_(self, **changes):
        return replace(self, **changes)


@dataclass
class ColdStartResult:
    states: list
    prior: PriorFactor


def initialize_cold_start(fixes, imu_samples, config, epoch_index=0):
    """
    Initial states for a buffered run of fixes.

    Position comes from each fix, velocity from a least-squares line
    through the fixes, yaw from the horizontal displacement and
    roll/pitch from the mean specific force. Biases start at zero.

    Args:
        fixes: Buffered GnssFix list, oldest first
        imu_samples: Buffered ImuSample list or an (N, 3) accel array
        config: EngineConfig
        epoch_index: Epoch index of the oldest fix

    Returns:
        ColdStartResult: One NavState per fix and the prior on the first one

    Raises:
        InsufficientMotion: Horizontal displacement below the threshold
    """
    if len(fixes) < 2:
        raise InsufficientMotion('at least two fixes are needed')
    t = np.array([fix.t for fix in fixes])
    P = np.array([fix.p for fix in fixes])
    disp = P[-1, :2] - P[0, :2]
    if np.linalg.norm(disp) < config.min_cold_start_displacement:
        raise InsufficientMotion(
            f"horizontal displacement {np.linalg.norm(disp):.2f} m below "
            f"{config.min_cold_start_displacement} m"
        )
    tc = t - t.mean()
    velocity = (tc @ (P - P.mean(axis=0))) / (tc @ tc)
    yaw = math.atan2(disp[1], disp[0])

    accel = np.asarray([getattr(s, 'accel', s) for s in imu_samples], dtype=float).reshape(-1, 3)
    if len(accel):
        f = accel.mean(axis=0)
        roll = math.atan2(f[1], f[2])
        pitch = math.atan2(-f[0], math.hypot(f[1], f[2]))
    else:
        logger.warning('no IMU data buffered at cold start; assuming level attitude')
        roll = pitch = 0.0
    R = rotation_from_euler(roll, pitch, yaw)

    states = [NavState(R=R, p=fix.p, v=velocity, bias=ImuBias(), t=fix.t) for fix in fixes]
    cov = np.zeros((15, 15))
    cov[0:3, 0:3] = np.diag([config.tilt_prior_std ** 2, config.tilt_prior_std ** 2, config.yaw_prior_std ** 2])
    cov[3:6, 3:6] = fixes[0].cov
    cov[6:9, 6:9] = np.eye(3) * config.velocity_prior_std ** 2
    cov[9:12, 9:12] = np.eye(3) * config.accel_bias_prior_std ** 2
    cov[12:15, 12:15] = np.eye(3) * config.gyro_bias_prior_std ** 2
    logger.info(
        'cold start at t=%.3f: yaw=%.1f deg roll=%.2f deg pitch=%.2f deg speed=%.2f m/s',
        fixes[0].t, math.degrees(yaw), math.degrees(roll), math.degrees(pitch),
        np.linalg.norm(velocity),
    )
    return ColdStartResult(states=states, prior=PriorFactor(epoch_index, states[0], cov))


class FusionEngine:
    """
    Streaming GNSS/IMU fusion engine.

    Callers must serialize push_imu, push_gnss and finalize. At equal
    timestamps a GNSS fix is pushed before the IMU sample.
    """

    def __init__(self, config=None):
        self.config = config or EngineConfig()
        self.mode = EngineMode.COLD_START
        self.timings = []
        self.costs = []
        self.restarts = 0
        self._next_epoch = 0
        self._sequence = 0
        self._last_gnss_t = -math.inf
        self._last_imu_t = -math.inf
        self._last_emitted_t = -math.inf
        self._last_sample = None
        self._cursor = None
        self._reset_window()

    def _reset_window(self):
        self.graph = FactorGraph()
        self.estimates = {}
        self._frozen = {}
        self._withheld = deque()
        self._newest_epoch = None
        self._pending = None
        self._pending_start = None
        self._imu_broken = False
        self._cold_fixes = []
        self._cold_preints = []
        self._cold_accel = deque(maxlen=ACCEL_BUFFER_SIZE)

    @property
    def gravity(self):
        return self.config.imu_noise.gravity

    def status(self):
        return EngineStatus(
            mode=self.mode,
            epochs_in_graph=len(self.graph.epochs()),
            last_gnss_t=self._last_gnss_t,
            last_imu_t=self._last_imu_t,
        )

    def _stream_time(self):
        return max(self._last_gnss_t, self._last_imu_t)

    def _output(self, t, state, source):
        if t <= self._last_emitted_t:
            logger.warning('dropping out-of-order output at t=%.3f (last %.3f)', t, self._last_emitted_t)
            return None
        self._sequence += 1
        self._last_emitted_t = t
        return OutputEstimate(
            t=t,
            state=state,
            source=source,
            latency=max(self._stream_time() - t, 0.0),
            sequence=self._sequence,
        )

    def _state_of(self, epoch):
        if epoch in self.estimates:
            return self.estimates[epoch]
        return self._frozen[epoch]

    def _emit_epochs(self, force=False):
        outputs = []
        tau = self.config.smoothing_latency_tau
        while self._withheld and (force or self._newest_epoch - self._withheld[0] >= tau):
            epoch = self._withheld.popleft()
            state = self._state_of(epoch)
            self._frozen.pop(epoch, None)
            out = self._output(state.t, state, OutputSource.OPTIMIZED)
            if out is not None:
                outputs.append(out)
        return outputs

    # IMU handling

    def _next_grid(self, after):
        rate = self.config.output_rate
        return (math.floor(after * rate + 1e-9) + 1) / rate

    def _propagation_allowed(self, t):
        return (self.config.imu_propagation
                and self.config.smoothing_latency_tau == 0
                and self.mode in (EngineMode.TRACKING, EngineMode.OUTAGE_PROPAGATION)
                and self._pending is not None
                and not self._imu_broken
                and t > self._last_gnss_t
                and t - self._last_gnss_t <= self.config.max_imu_propagation + 1e-9)

    def _integrate_to(self, t):
        dt = t - self._cursor
        if dt <= 0.0:
            return
        if self._pending is not None and not self._imu_broken:
            self._pending = integrate_sample(self._pending, self._last_sample, dt, self.config.imu_noise)
        self._cursor = t

    def _update_outage_mode(self):
        if self.mode not in (EngineMode.TRACKING, EngineMode.OUTAGE_PROPAGATION):
            return
        since = self._cursor - self._last_gnss_t
        if since > self.config.max_imu_propagation + 1e-9:
            logger.info('no GNSS for %.1fs; suspending IMU-only propagation', since)
            self.mode = EngineMode.OUTAGE_SUSPENDED
        elif since > self.config.gnss_nominal_period + 1e-9 and self.mode == EngineMode.TRACKING:
            logger.debug('GNSS outage at t=%.3f; propagating with IMU only', self._cursor)
            self.mode = EngineMode.OUTAGE_PROPAGATION

    def _advance(self, target, emit_before=math.inf):
        """Integrate the held sample up to target, emitting grid outputs on the way."""
        outputs = []
        if self._last_sample is None or self._cursor is None:
            return outputs
        while self._cursor < target:
            grid = self._next_grid(self._cursor)
            stop = min(grid, target)
            self._integrate_to(stop)
            self._update_outage_mode()
            if stop == grid and grid < emit_before and self._propagation_allowed(grid):
                state = predict(self._pending, self.estimates[self._newest_epoch], self.gravity).with_(t=grid)
                out = self._output(grid, state, OutputSource.IMU_PROPAGATED)
                if out is not None:
                    outputs.append(out)
        return outputs

    def push_imu(self, sample):
        """
        Feed one IMU sample.

        Returns:
            OutputEstimate or None: an IMU-propagated estimate when this
            sample crosses a point of the output grid

        Raises:
            NonMonotonicTime: sample.t not after the previous sample
        """
        if sample.t <= self._last_imu_t:
            raise NonMonotonicTime(f"IMU sample at {sample.t} does not follow {self._last_imu_t}")
        self._last_imu_t = sample.t
        outputs = []
        if self._last_sample is not None:
            if sample.t - self._last_sample.t > self.config.imu_noise.max_imu_gap + 1e-12:
                logger.warning(
                    'IMU gap of %.3fs at t=%.3f; discarding the running preintegration',
                    sample.t - self._last_sample.t, sample.t,
                )
                self._imu_broken = True
                self._cursor = max(self._cursor, sample.t)
            else:
                outputs = self._advance(sample.t)
        if self._cursor is None or self._cursor < sample.t:
            self._cursor = sample.t
        self._last_sample = sample
        if self.mode == EngineMode.COLD_START and self._cold_fixes:
            self._cold_accel.append(sample.accel)
        return outputs[-1] if outputs else None

    # GNSS handling

    def _start_pending(self, t, bias):
        self._pending = PreintegratedImu.empty(bias)
        self._pending_start = t
        self._imu_broken = False

    def _pending_valid(self, t):
        if self._pending is None or self._imu_broken:
            return False
        if abs(self._pending.delta_t - (t - self._pending_start)) > INTERVAL_TOLERANCE:
            return False
        return 0.0 < self._pending.delta_t <= self.config.max_preintegration_time

    def _restart(self, reason):
        logger.warning('re-entering cold start: %s', reason)
        outputs = self._emit_epochs(force=True)
        self._reset_window()
        self.mode = EngineMode.COLD_START
        self.restarts += 1
        return outputs

    def _solve(self, t, solver=None):
        started = time.perf_counter()
        result = optimize(self.graph, self.estimates, solver or self.config.solver)
        self.timings.append(time.perf_counter() - started)
        self.estimates = result.estimates
        self.costs.append((t, result.cost))
        if logger.isEnabledFor(logging.DEBUG):
            breakdown = self.graph.cost_breakdown(self.estimates)
            logger.debug('t=%.3f: %d epochs, cost %.4f after %d iterations (%s)',
                         t, len(self.estimates), result.cost, result.iterations,
                         ', '.join(f"{kind} {cost:.4f}" for kind, cost in sorted(breakdown.items())))

        if math.isinf(self.config.marginalization_lag):
            return
        cutoff = t - self.config.marginalization_lag
        withheld = set(self._withheld)
        for epoch in self.graph.epochs():
            if self.graph.epoch_times[epoch] < cutoff and epoch in withheld:
                self._frozen[epoch] = self.estimates[epoch]
        marg = marginalize(self.graph, self.estimates, cutoff)
        for key in marg.removed_keys:
            self.estimates.pop(key.epoch_index, None)

    def _cold_start_step(self, fix):
        if self._cold_fixes:
            if self._pending_valid(fix.t):
                self._cold_preints.append(self._pending)
            else:
                logger.debug('IMU coverage broken during cold start; restarting the buffer')
                self._cold_fixes, self._cold_preints = [], []
                self._cold_accel.clear()
        self._cold_fixes.append(fix)
        self._start_pending(fix.t, ImuBias())

        if len(self._cold_fixes) < self.config.cold_start_fix_count:
            return []
        try:
            init = initialize_cold_start(
                self._cold_fixes, list(self._cold_accel), self.config, epoch_index=self._next_epoch,
            )
        except InsufficientMotion as e:
            logger.debug('cold start deferred: %s', e)
            self._cold_fixes.pop(0)
            self._cold_preints.pop(0)
            return []

        epochs = []
        for k, (buffered, state) in enumerate(zip(self._cold_fixes, init.states)):
            epoch = self._next_epoch
            self._next_epoch += 1
            self.graph.add_epoch(epoch, state)
            self.graph.add_factor(GnssFactor(epoch, buffered))
            if k > 0:
                preint = self._cold_preints[k - 1]
                self.graph.add_factor(ImuFactor(epochs[-1], epoch, preint, self.gravity))
                self.graph.add_factor(BiasWalkFactor(
                    epochs[-1], epoch, self.config.imu_noise.bias_walk_covariance(preint.delta_t),
                ))
            self.estimates[epoch] = state
            epochs.append(epoch)
        self.graph.add_factor(init.prior)
        self._newest_epoch = epochs[-1]
        tau = self.config.smoothing_latency_tau
        # states already older than tau at initialization are never emitted
        self._withheld = deque(e for e in epochs if self._newest_epoch - e <= tau)
        self._cold_fixes, self._cold_preints = [], []
        self._cold_accel.clear()

        self.mode = EngineMode.TRACKING
        self._solve(fix.t)
        self._start_pending(fix.t, self.estimates[self._newest_epoch].bias)
        return self._emit_epochs()

    def _add_epoch(self, fix):
        prev = self._newest_epoch
        epoch = self._next_epoch
        self._next_epoch += 1
        initial = predict(self._pending, self.estimates[prev], self.gravity).with_(t=fix.t)
        self.graph.add_epoch(epoch, initial)
        self.graph.add_factor(ImuFactor(prev, epoch, self._pending, self.gravity))
        self.graph.add_factor(BiasWalkFactor(
            prev, epoch, self.config.imu_noise.bias_walk_covariance(self._pending.delta_t),
        ))
        self.graph.add_factor(GnssFactor(epoch, fix))
        self.estimates[epoch] = initial
        self._newest_epoch = epoch
        self._withheld.append(epoch)

        self.mode = EngineMode.TRACKING
        self._solve(fix.t)
        self._start_pending(fix.t, self.estimates[epoch].bias)
        return self._emit_epochs()

    def push_gnss(self, fix):
        """
        Feed one GNSS fix.

        Returns:
            list of OutputEstimate emitted by this fix

        Raises:
            NonMonotonicTime: fix.t earlier than the previous fix
        """
        if fix.t < self._last_gnss_t:
            raise NonMonotonicTime(f"GNSS fix at {fix.t} precedes {self._last_gnss_t}")
        if fix.t == self._last_gnss_t:
            logger.warning('ignoring duplicate GNSS fix at t=%.3f', fix.t)
            return []

        outputs = self._advance(fix.t, emit_before=fix.t)
        self._last_gnss_t = fix.t
        fix = fix.scaled(self.config.gnss_cov_scale)

        if self.mode == EngineMode.COLD_START:
            return outputs + self._cold_start_step(fix)
        if not self._pending_valid(fix.t):
            outputs += self._restart(f"IMU preintegration unusable at t={fix.t:.3f}")
            return outputs + self._cold_start_step(fix)
        return outputs + self._add_epoch(fix)

    def finalize(self):
        """Flush every withheld state at its latest value."""
        if self.config.final_optimization and self.mode != EngineMode.COLD_START and len(self.graph):
            self._solve(self._last_gnss_t, solver=SolverConfig.tight())
        return self._emit_epochs(force=True)


def replay(engine, imu, gnss, deadline=None):
    """
    Drive an engine with two time-sorted streams and collect every output.

    GNSS fixes go first at equal timestamps; finalize() is called at the end.

    Args:
        deadline: Optional time.monotonic() value checked at every GNSS fix

    Raises:
        RunTimeout: The deadline passed before the streams were consumed
    """
    outputs = []
    merged = heapq.merge(
        ((s.t, 1, i) for i, s in enumerate(imu)),
        ((f.t, 0, i) for i, f in enumerate(gnss)),
    )
    for _, kind, idx in merged:
        if kind == 0:
            if deadline is not None and time.monotonic() > deadline:
                raise RunTimeout(f"deadline passed at GNSS fix {idx} of {len(gnss)}")
            outputs.extend(engine.push_gnss(gnss[idx]))
        else:
            out = engine.push_imu(imu[idx])
            if out is not None:
                outputs.append(out)
    outputs.extend(engine.finalize())
    return outputs
