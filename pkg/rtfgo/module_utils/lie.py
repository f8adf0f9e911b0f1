# -*- coding: utf-8 -*-

# GNU General Public License v3.0+ (see LICENSES/GPL-3.0-or-later.txt or https://www.gnu.org/licenses/gpl-3.0.txt)
# SPDX-License-Identifier: GPL-3.0-or-later

"""
SO(3) algebra and the navigation-state retraction.

Local coordinates of a NavState are always ordered
(dtheta, dp, dv, dba, dbg), 15 dimensions. Rotations are perturbed on
the right (body frame); every other block is additive.
"""

import numpy as np

from rtfgo.module_utils.states import ImuBias, NavState

EXP_TAYLOR_THRESHOLD = 1e-8
JACOBIAN_TAYLOR_THRESHOLD = 1e-6
LOG_NEAR_PI = 1e-6

STATE_DIM = 15
THETA = slice(0, 3)
POS = slice(3, 6)
VEL = slice(6, 9)
BA = slice(9, 12)
BG = slice(12, 15)


def skew(w):
    """Cross-product matrix [w]x."""
    return np.array([
        [0.0, -w[2], w[1]],
        [w[2], 0.0, -w[0]],
        [-w[1], w[0], 0.0],
    ])


def vee(W):
    return np.array([W[2, 1], W[0, 2], W[1, 0]])


def so3_exp(omega):
    """Rodrigues' formula, second-order Taylor expansion near zero."""
    omega = np.asarray(omega, dtype=float)
    theta = np.linalg.norm(omega)
    W = skew(omega)
    if theta < EXP_TAYLOR_THRESHOLD:
        return np.eye(3) + W + 0.5 * (W @ W)
    return (np.eye(3)
            + (np.sin(theta) / theta) * W
            + ((1.0 - np.cos(theta)) / theta ** 2) * (W @ W))


def so3_log(R):
    """
    Principal axis-angle of a rotation, with norm in [0, pi].

    At exactly pi the axis sign is chosen so that its largest-magnitude
    component is positive.
    """
    R = np.asarray(R, dtype=float)
    cos_theta = np.clip((np.trace(R) - 1.0) * 0.5, -1.0, 1.0)
    w = vee(R - R.T)
    sin_theta = 0.5 * np.linalg.norm(w)
    theta = np.arctan2(sin_theta, cos_theta)

    if theta < JACOBIAN_TAYLOR_THRESHOLD:
        return 0.5 * w * (1.0 + theta ** 2 / 6.0)
    if np.pi - theta > LOG_NEAR_PI:
        return 0.5 * w * (theta / sin_theta)

    # near pi: axis from the symmetric part, (R + R^T)/2 = cos I + (1 - cos) a a^T
    S = 0.5 * (R + R.T)
    A = (S - cos_theta * np.eye(3)) / (1.0 - cos_theta)
    k = int(np.argmax(np.diag(A)))
    axis = A[:, k] / np.sqrt(max(A[k, k], 1e-300))
    axis /= np.linalg.norm(axis)
    if sin_theta > 1e-12:
        if axis @ w < 0.0:
            axis = -axis
    elif axis[np.argmax(np.abs(axis))] < 0.0:
        axis = -axis
    return theta * axis


def so3_right_jacobian(omega):
    """Right Jacobian Jr(omega) of SO(3)."""
    omega = np.asarray(omega, dtype=float)
    theta = np.linalg.norm(omega)
    W = skew(omega)
    if theta < JACOBIAN_TAYLOR_THRESHOLD:
        return np.eye(3) - 0.5 * W + (W @ W) / 6.0
    return (np.eye(3)
            - ((1.0 - np.cos(theta)) / theta ** 2) * W
            + ((theta - np.sin(theta)) / theta ** 3) * (W @ W))


def so3_right_jacobian_inv(omega):
    omega = np.asarray(omega, dtype=float)
    theta = np.linalg.norm(omega)
    W = skew(omega)
    if theta < JACOBIAN_TAYLOR_THRESHOLD:
        return np.eye(3) + 0.5 * W + (W @ W) / 12.0
    coeff = 1.0 / theta ** 2 - (1.0 + np.cos(theta)) / (2.0 * theta * np.sin(theta))
    return np.eye(3) + 0.5 * W + coeff * (W @ W)


def normalize_rotation(R):
    """Project a near-rotation onto SO(3) via SVD."""
    U, _, Vt = np.linalg.svd(R)
    out = U @ Vt
    if np.linalg.det(out) < 0.0:
        U[:, -1] = -U[:, -1]
        out = U @ Vt
    return out


def rotation_from_euler(roll, pitch, yaw):
    """Body-to-ENU rotation from ZYX Euler angles (rad)."""
    cr, sr = np.cos(roll), np.sin(roll)
    cp, sp = np.cos(pitch), np.sin(pitch)
    cy, sy = np.cos(yaw), np.sin(yaw)
    Rz = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
    Ry = np.array([[cp, 0.0, sp], [0.0, 1.0, 0.0], [-sp, 0.0, cp]])
    Rx = np.array([[1.0, 0.0, 0.0], [0.0, cr, -sr], [0.0, sr, cr]])
    return Rz @ Ry @ Rx


def euler_from_rotation(R):
    """(roll, pitch, yaw) in radians; yaw counter-clockwise from east."""
    roll = np.arctan2(R[2, 1], R[2, 2])
    pitch = -np.arcsin(np.clip(R[2, 0], -1.0, 1.0))
    yaw = np.arctan2(R[1, 0], R[0, 0])
    return roll, pitch, yaw


def heading_deg(R):
    """Compass heading of the body x-axis: degrees clockwise from north in [0, 360)."""
    _, _, yaw = euler_from_rotation(R)
    return float((90.0 - np.degrees(yaw)) % 360.0)


def retract(state, delta):
    """
    Apply a 15-dim local update to a navigation state.

    Args:
        state: NavState linearization point
        delta: Update ordered (dtheta, dp, dv, dba, dbg)

    Returns:
        NavState: R * exp(dtheta) with every other block added
    """
    delta = np.asarray(delta, dtype=float)
    if not np.all(np.isfinite(delta)):
        raise ValueError('non-finite retraction update')
    return NavState(
        R=normalize_rotation(state.R @ so3_exp(delta[THETA])),
        p=state.p + delta[POS],
        v=state.v + delta[VEL],
        bias=ImuBias(state.bias.b_a + delta[BA], state.bias.b_g + delta[BG]),
        t=state.t,
    )


def local(a, b):
    """Inverse of retract: the update taking a to b."""
    return np.concatenate([
        so3_log(a.R.T @ b.R),
        b.p - a.p,
        b.v - a.v,
        b.bias.b_a - a.bias.b_a,
        b.bias.b_g - a.bias.b_g,
    ])
