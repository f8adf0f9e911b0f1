# -*- coding: utf-8 -*-

# GNU General Public License v3.0+ (see LICENSES/GPL-3.0-or-later.txt or https://www.gnu.org/licenses/gpl-3.0.txt)
# SPDX-License-Identifier: GPL-3.0-or-later

"""
IMU preintegration on the manifold.

Accumulates raw samples between two consecutive states into one relative
motion constraint (delta_R, delta_v, delta_p) with a 9x9 covariance of
(dtheta, dv, dp) and a 9x6 Jacobian with respect to the bias (ba, bg).
Integration is first-order Euler; a sample holds the mean measurement
over the interval that starts at its timestamp.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from rtfgo.module_utils.common import ConfigurationError, ExcessiveGap, NonMonotonicTime
from rtfgo.module_utils.lie import (
    normalize_rotation,
    skew,
    so3_exp,
    so3_log,
    so3_right_jacobian,
    so3_right_jacobian_inv,
)
from rtfgo.module_utils.states import ImuBias, NavState

logger = logging.getLogger(__name__)

STANDARD_GRAVITY = 9.80665
MAX_IMU_GAP = 0.1
BIAS_VALIDITY = 0.1
RENORMALIZE_EVERY = 64

# row blocks of the 9-dim preintegration error
RT = slice(0, 3)
VT = slice(3, 6)
PT = slice(6, 9)
# column blocks of the bias Jacobian
BA_COLS = slice(0, 3)
BG_COLS = slice(3, 6)


@dataclass(frozen=True, eq=False)
class ImuSample:
    """Specific force (m/s^2) and angular rate (rad/s) in the body frame."""
    t: float
    accel: np.ndarray
    gyro: np.ndarray

    def __post_init__(self):
        accel = np.asarray(self.accel, dtype=float).reshape(3)
        gyro = np.asarray(self.gyro, dtype=float).reshape(3)
        if not (np.isfinite(self.t) and np.all(np.isfinite(accel)) and np.all(np.isfinite(gyro))):
            raise ValueError(f"non-finite IMU sample at t={self.t}")
        object.__setattr__(self, 't', float(self.t))
        object.__setattr__(self, 'accel', accel)
        object.__setattr__(self, 'gyro', gyro)


@dataclass(frozen=True, eq=False)
class ImuNoiseParams:
    """
    Continuous-time IMU noise model.

    Attributes:
        accel_noise_density: m/s^2/sqrt(Hz)
        gyro_noise_density: rad/s/sqrt(Hz)
        accel_bias_rw: m/s^3/sqrt(Hz)
        gyro_bias_rw: rad/s^2/sqrt(Hz)
        gravity: Navigation-frame gravity vector (m/s^2)
        max_imu_gap: Largest sample interval accepted (s)
        allow_nonstandard_gravity: Skip the |g| in [9.7, 9.9] check
    """
    accel_noise_density: float = 0.01
    gyro_noise_density: float = 0.001
    accel_bias_rw: float = 0.001
    gyro_bias_rw: float = 0.0001
    gravity: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -STANDARD_GRAVITY]))
    max_imu_gap: float = MAX_IMU_GAP
    allow_nonstandard_gravity: bool = False

    def __post_init__(self):
        object.__setattr__(self, 'gravity', np.asarray(self.gravity, dtype=float).reshape(3))
        for name in ('accel_noise_density', 'gyro_noise_density', 'accel_bias_rw', 'gyro_bias_rw'):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0.0:
                raise ConfigurationError(f"{name} must be a non-negative number, got {value}")
        if self.max_imu_gap <= 0.0:
            raise ConfigurationError('max_imu_gap must be positive')
        g = np.linalg.norm(self.gravity)
        if not self.allow_nonstandard_gravity and not 9.7 <= g <= 9.9:
            raise ConfigurationError(f"gravity magnitude {g:.4f} outside [9.7, 9.9] m/s^2")

    @classmethod
    def from_dict(cls, data):
        """Build from a YAML mapping, ignoring documentation-only keys."""
        known = {
            'accel_noise_density', 'gyro_noise_density', 'accel_bias_rw',
            'gyro_bias_rw', 'gravity', 'max_imu_gap', 'allow_nonstandard_gravity',
        }
        unknown = set(data) - known - {'name', 'description', 'source'}
        if unknown:
            raise ConfigurationError(f"unknown IMU parameters: {', '.join(sorted(unknown))}")
        return cls(**{k: v for k, v in data.items() if k in known})

    def bias_walk_covariance(self, dt):
        """Covariance of the (ba, bg) change over dt seconds."""
        return np.diag(np.concatenate([
            np.full(3, self.accel_bias_rw ** 2 * dt),
            np.full(3, self.gyro_bias_rw ** 2 * dt),
        ]))


@dataclass(eq=False)
class PreintegratedImu:
    """
    Preintegrated relative motion between two states.

    Treat instances as values: integrate_sample and combine return new
    accumulators and leave their inputs untouched.
    """
    delta_R: np.ndarray
    delta_v: np.ndarray
    delta_p: np.ndarray
    delta_t: float
    cov: np.ndarray
    bias_jacobians: np.ndarray
    lin_bias: ImuBias
    sample_count: int = 0
    last_sample_t: float = -np.inf

    @classmethod
    def empty(cls, lin_bias=None):
        return cls(
            delta_R=np.eye(3),
            delta_v=np.zeros(3),
            delta_p=np.zeros(3),
            delta_t=0.0,
            cov=np.zeros((9, 9)),
            bias_jacobians=np.zeros((9, 6)),
            lin_bias=lin_bias if lin_bias is not None else ImuBias(),
        )

    def copy(self):
        return PreintegratedImu(
            delta_R=self.delta_R.copy(),
            delta_v=self.delta_v.copy(),
            delta_p=self.delta_p.copy(),
            delta_t=self.delta_t,
            cov=self.cov.copy(),
            bias_jacobians=self.bias_jacobians.copy(),
            lin_bias=self.lin_bias,
            sample_count=self.sample_count,
            last_sample_t=self.last_sample_t,
        )

    @property
    def J_R_bg(self):
        return self.bias_jacobians[RT, BG_COLS]

    @property
    def J_v_ba(self):
        return self.bias_jacobians[VT, BA_COLS]

    @property
    def J_v_bg(self):
        return self.bias_jacobians[VT, BG_COLS]

    @property
    def J_p_ba(self):
        return self.bias_jacobians[PT, BA_COLS]

    @property
    def J_p_bg(self):
        return self.bias_jacobians[PT, BG_COLS]


def integrate_sample(acc, sample, dt, params):
    """
    Advance an accumulator by one sample held over dt seconds.

    Args:
        acc: PreintegratedImu to advance
        sample: ImuSample whose measurement holds over [t, t + dt)
        dt: Integration interval (s)
        params: ImuNoiseParams

    Returns:
        PreintegratedImu: The advanced accumulator

    Raises:
        NonMonotonicTime: sample.t earlier than the previous sample, or dt <= 0
        ExcessiveGap: dt above params.max_imu_gap
    """
    if sample.t < acc.last_sample_t:
        raise NonMonotonicTime(f"IMU sample at {sample.t} precedes {acc.last_sample_t}")
    if not dt > 0.0:
        raise NonMonotonicTime(f"non-positive IMU interval {dt} at t={sample.t}")
    if dt > params.max_imu_gap + 1e-12:
        raise ExcessiveGap(f"IMU interval {dt:.4f}s at t={sample.t} exceeds {params.max_imu_gap}s")

    a = sample.accel - acc.lin_bias.b_a
    w = sample.gyro - acc.lin_bias.b_g
    dR_step = so3_exp(w * dt)
    Jr_step = so3_right_jacobian(w * dt)
    dR = acc.delta_R
    a_skew = skew(a)
    dR_a = dR @ a
    dR_askew = dR @ a_skew

    out = acc.copy()
    out.delta_p = acc.delta_p + acc.delta_v * dt + 0.5 * dR_a * dt * dt
    out.delta_v = acc.delta_v + dR_a * dt
    out.delta_R = dR @ dR_step
    out.delta_t = acc.delta_t + dt
    out.sample_count = acc.sample_count + 1
    out.last_sample_t = sample.t
    if out.sample_count % RENORMALIZE_EVERY == 0:
        out.delta_R = normalize_rotation(out.delta_R)

    A = np.eye(9)
    A[RT, RT] = dR_step.T
    A[VT, RT] = -dR_askew * dt
    A[PT, RT] = -0.5 * dR_askew * dt * dt
    A[PT, VT] = np.eye(3) * dt
    B = np.zeros((9, 6))
    B[RT, 0:3] = Jr_step * dt
    B[VT, 3:6] = dR * dt
    B[PT, 3:6] = 0.5 * dR * dt * dt
    Q = np.diag(np.concatenate([
        np.full(3, params.gyro_noise_density ** 2 / dt),
        np.full(3, params.accel_noise_density ** 2 / dt),
    ]))
    cov = A @ acc.cov @ A.T + B @ Q @ B.T
    out.cov = 0.5 * (cov + cov.T)

    J = acc.bias_jacobians
    Jn = np.zeros((9, 6))
    J_R_bg = J[RT, BG_COLS]
    Jn[RT, BG_COLS] = dR_step.T @ J_R_bg - Jr_step * dt
    Jn[VT, BA_COLS] = J[VT, BA_COLS] - dR * dt
    Jn[VT, BG_COLS] = J[VT, BG_COLS] - dR_askew @ J_R_bg * dt
    Jn[PT, BA_COLS] = J[PT, BA_COLS] + J[VT, BA_COLS] * dt - 0.5 * dR * dt * dt
    Jn[PT, BG_COLS] = J[PT, BG_COLS] + J[VT, BG_COLS] * dt - 0.5 * dR_askew @ J_R_bg * dt * dt
    out.bias_jacobians = Jn
    return out


def combine(first, second):
    """
    Compose two consecutive accumulators integrated at the same bias.

    Returns:
        PreintegratedImu: Equivalent to integrating both sample runs in one accumulator
    """
    if np.linalg.norm(first.lin_bias - second.lin_bias) > 1e-12:
        raise ValueError('accumulators were integrated at different biases')
    R1 = first.delta_R
    A1 = np.eye(9)
    A1[RT, RT] = second.delta_R.T
    A1[VT, RT] = -R1 @ skew(second.delta_v)
    A1[PT, RT] = -R1 @ skew(second.delta_p)
    A1[PT, VT] = np.eye(3) * second.delta_t
    A2 = np.eye(9)
    A2[VT, VT] = R1
    A2[PT, PT] = R1
    cov = A1 @ first.cov @ A1.T + A2 @ second.cov @ A2.T

    J1 = first.bias_jacobians
    J2 = second.bias_jacobians
    J = np.zeros((9, 6))
    J[RT] = second.delta_R.T @ J1[RT] + J2[RT]
    J[VT] = J1[VT] + R1 @ J2[VT] - R1 @ skew(second.delta_v) @ J1[RT]
    J[PT] = (J1[PT] + J1[VT] * second.delta_t + R1 @ J2[PT]
             - R1 @ skew(second.delta_p) @ J1[RT])

    return PreintegratedImu(
        delta_R=normalize_rotation(R1 @ second.delta_R),
        delta_v=first.delta_v + R1 @ second.delta_v,
        delta_p=first.delta_p + first.delta_v * second.delta_t + R1 @ second.delta_p,
        delta_t=first.delta_t + second.delta_t,
        cov=0.5 * (cov + cov.T),
        bias_jacobians=J,
        lin_bias=first.lin_bias,
        sample_count=first.sample_count + second.sample_count,
        last_sample_t=max(first.last_sample_t, second.last_sample_t),
    )


def bias_corrected_deltas(preint, new_bias):
    """First-order bias update of (delta_R, delta_v, delta_p)."""
    db = new_bias - preint.lin_bias
    if np.linalg.norm(db) > BIAS_VALIDITY:
        logger.warning(
            "bias correction |db|=%.3f exceeds first-order validity %.2f",
            np.linalg.norm(db), BIAS_VALIDITY,
        )
    dba, dbg = db[:3], db[3:]
    dR = preint.delta_R @ so3_exp(preint.J_R_bg @ dbg)
    dv = preint.delta_v + preint.J_v_ba @ dba + preint.J_v_bg @ dbg
    dp = preint.delta_p + preint.J_p_ba @ dba + preint.J_p_bg @ dbg
    return dR, dv, dp


def predict(preint, state_i, gravity):
    """Propagate state_i through the preintegrated motion."""
    gravity = np.asarray(gravity, dtype=float)
    dR, dv, dp = bias_corrected_deltas(preint, state_i.bias)
    dt = preint.delta_t
    R_i = state_i.R
    return NavState(
        R=normalize_rotation(R_i @ dR),
        p=state_i.p + state_i.v * dt + 0.5 * gravity * dt * dt + R_i @ dp,
        v=state_i.v + gravity * dt + R_i @ dv,
        bias=state_i.bias,
        t=state_i.t + dt,
    )


def residual_and_jacobians(preint, state_i, state_j, gravity):
    """
    Preintegration residual and its Jacobians.

    Args:
        preint: PreintegratedImu between the two states
        state_i: NavState at the start of the interval
        state_j: NavState at the end of the interval
        gravity: Navigation-frame gravity (m/s^2)

    Returns:
        tuple: (r, J_i, J_j) with r ordered (dtheta, dv, dp) and 9x15
        Jacobians over the local coordinates of each state
    """
    gravity = np.asarray(gravity, dtype=float)
    dt = preint.delta_t
    db = state_i.bias - preint.lin_bias
    dbg = db[3:]
    dR, dv, dp = bias_corrected_deltas(preint, state_i.bias)

    R_i, R_j = state_i.R, state_j.R
    Rt_i = R_i.T
    u = state_j.v - state_i.v - gravity * dt
    w = state_j.p - state_i.p - state_i.v * dt - 0.5 * gravity * dt * dt
    r_R = so3_log(dR.T @ Rt_i @ R_j)
    r_v = Rt_i @ u - dv
    r_p = Rt_i @ w - dp
    r = np.concatenate([r_R, r_v, r_p])

    Jr_inv = so3_right_jacobian_inv(r_R)
    J_i = np.zeros((9, 15))
    J_j = np.zeros((9, 15))
    # residual rows (R, v, p); state columns (theta, p, v, ba, bg)
    J_i[RT, 0:3] = -Jr_inv @ R_j.T @ R_i
    J_i[RT, 12:15] = (-Jr_inv @ so3_exp(r_R).T
                      @ so3_right_jacobian(preint.J_R_bg @ dbg) @ preint.J_R_bg)
    J_j[RT, 0:3] = Jr_inv

    J_i[VT, 0:3] = skew(Rt_i @ u)
    J_i[VT, 6:9] = -Rt_i
    J_i[VT, 9:12] = -preint.J_v_ba
    J_i[VT, 12:15] = -preint.J_v_bg
    J_j[VT, 6:9] = Rt_i

    J_i[PT, 0:3] = skew(Rt_i @ w)
    J_i[PT, 3:6] = -Rt_i
    J_i[PT, 6:9] = -Rt_i * dt
    J_i[PT, 9:12] = -preint.J_p_ba
    J_i[PT, 12:15] = -preint.J_p_bg
    J_j[PT, 3:6] = Rt_i
    return r, J_i, J_j
