# -*- coding: utf-8 -*-

# GNU General Public License v3.0+ (see LICENSES/GPL-3.0-or-later.txt or https://www.gnu.org/licenses/gpl-3.0.txt)
# SPDX-License-Identifier: GPL-3.0-or-later

"""Navigation state value types shared by every layer."""

import logging
from dataclasses import dataclass, field, replace

import numpy as np

logger = logging.getLogger(__name__)

ACCEL_BIAS_BOUND = 1.0
GYRO_BIAS_BOUND = 0.1


def _vec3(value):
    arr = np.asarray(value, dtype=float).reshape(3)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"non-finite vector: {arr}")
    return arr


@dataclass(frozen=True, eq=False)
class ImuBias:
    """Accelerometer (m/s^2) and gyroscope (rad/s) biases."""
    b_a: np.ndarray = field(default_factory=lambda: np.zeros(3))
    b_g: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, 'b_a', _vec3(self.b_a))
        object.__setattr__(self, 'b_g', _vec3(self.b_g))

    @classmethod
    def from_vector(cls, vec):
        vec = np.asarray(vec, dtype=float)
        return cls(vec[:3], vec[3:6])

    def vector(self):
        return np.concatenate([self.b_a, self.b_g])

    def within_bounds(self, accel_bound=ACCEL_BIAS_BOUND, gyro_bound=GYRO_BIAS_BOUND):
        """Check bias magnitudes against the sanity bounds."""
        return (np.linalg.norm(self.b_a) <= accel_bound
                and np.linalg.norm(self.b_g) <= gyro_bound)

    def __sub__(self, other):
        return self.vector() - other.vector()


@dataclass(frozen=True, eq=False)
class NavState:
    """
    Navigation state of one epoch.

    Attributes:
        R: Body-to-navigation rotation (3x3)
        p: Position in the local ENU frame (m)
        v: Velocity in the local ENU frame (m/s)
        bias: IMU biases
        t: GPST timestamp (s)
    """
    R: np.ndarray = field(default_factory=lambda: np.eye(3))
    p: np.ndarray = field(default_factory=lambda: np.zeros(3))
    v: np.ndarray = field(default_factory=lambda: np.zeros(3))
    bias: ImuBias = field(default_factory=ImuBias)
    t: float = 0.0

    def __post_init__(self):
        R = np.asarray(self.R, dtype=float).reshape(3, 3)
        if not np.all(np.isfinite(R)):
            raise ValueError('non-finite rotation')
        object.__setattr__(self, 'R', R)
        object.__setattr__(self, 'p', _vec3(self.p))
        object.__setattr__(self, 'v', _vec3(self.v))
        object.__setattr__(self, 't', float(self.t))

    def with_(self, **changes):
        return replace(self, **changes)
