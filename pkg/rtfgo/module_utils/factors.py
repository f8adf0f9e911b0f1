# -*- coding: utf-8 -*-

# GNU General Public License v3.0+ (see LICENSES/GPL-3.0-or-later.txt or https://www.gnu.org/licenses/gpl-3.0.txt)
# SPDX-License-Identifier: GPL-3.0-or-later

"""
Factor graph of the fusion problem.

Each epoch owns three variable nodes: pose (6 local dims: dtheta, dp),
velocity (3) and bias (6: dba, dbg). Estimates are kept per epoch as
NavState values; a key selects the component of its epoch's state.
Every factor whitens its residual with the upper Cholesky factor of its
information matrix at construction time.
"""

import enum
import logging
from collections import defaultdict
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse

from rtfgo.module_utils.common import (
    DuplicateKey,
    MissingEstimate,
    NonPositiveDefinite,
    UnknownKey,
)
from rtfgo.module_utils.lie import local, so3_log, so3_right_jacobian_inv
from rtfgo.module_utils.preintegration import residual_and_jacobians

logger = logging.getLogger(__name__)


class KeyKind(enum.IntEnum):
    POSE = 0
    VELOCITY = 1
    BIAS = 2


KEY_DIMS = {KeyKind.POSE: 6, KeyKind.VELOCITY: 3, KeyKind.BIAS: 6}
# columns of each key inside the 15-dim (dtheta, dp, dv, dba, dbg) state
KEY_STATE_COLUMNS = {
    KeyKind.POSE: slice(0, 6),
    KeyKind.VELOCITY: slice(6, 9),
    KeyKind.BIAS: slice(9, 15),
}


@dataclass(frozen=True, order=True)
class VariableKey:
    epoch_index: int
    kind: KeyKind

    def __post_init__(self):
        if self.epoch_index < 0:
            raise ValueError('epoch_index must be >= 0')
        object.__setattr__(self, 'kind', KeyKind(self.kind))

    @property
    def dim(self):
        return KEY_DIMS[self.kind]

    def __str__(self):
        return f"{self.kind.name.lower()}[{self.epoch_index}]"


def epoch_keys(epoch_index):
    """The pose, velocity and bias keys of one epoch."""
    return [VariableKey(epoch_index, kind) for kind in KeyKind]


class GnssQuality(str, enum.Enum):
    FIX = 'fix'
    FLOAT = 'float'
    SINGLE = 'single'


@dataclass(frozen=True, eq=False)
class GnssFix:
    """A processed GNSS position in the local ENU frame with its covariance (m^2)."""
    t: float
    p: np.ndarray
    cov: np.ndarray
    quality: GnssQuality = GnssQuality.SINGLE

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float).reshape(3)
        cov = np.asarray(self.cov, dtype=float).reshape(3, 3)
        if not (np.isfinite(self.t) and np.all(np.isfinite(p)) and np.all(np.isfinite(cov))):
            raise ValueError(f"non-finite GNSS fix at t={self.t}")
        object.__setattr__(self, 't', float(self.t))
        object.__setattr__(self, 'p', p)
        object.__setattr__(self, 'cov', cov)
        object.__setattr__(self, 'quality', GnssQuality(self.quality))

    def scaled(self, factor):
        return GnssFix(self.t, self.p, self.cov * factor, self.quality)


def sqrt_information(cov):
    """
    Upper Cholesky factor U of inv(cov), so that |U r|^2 = r^T inv(cov) r.

    Raises:
        NonPositiveDefinite: cov is not symmetric positive definite
    """
    cov = np.asarray(cov, dtype=float)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise NonPositiveDefinite(f"covariance must be square, got shape {cov.shape}")
    if not np.all(np.isfinite(cov)) or not np.allclose(cov, cov.T, rtol=1e-9, atol=1e-12):
        raise NonPositiveDefinite('covariance is not symmetric')
    try:
        factor = scipy.linalg.cho_factor(cov, lower=False)
        info = scipy.linalg.cho_solve(factor, np.eye(cov.shape[0]))
        return scipy.linalg.cholesky(0.5 * (info + info.T), lower=False)
    except np.linalg.LinAlgError as e:
        raise NonPositiveDefinite(f"covariance is not positive definite: {e}")


class Factor:
    """
    Base class of every factor.

    Subclasses implement evaluate(), returning the unwhitened residual and
    a dict of Jacobian blocks keyed by VariableKey.
    """
    kind = 'factor'

    def __init__(self, keys, sqrt_info):
        self.keys = tuple(keys)
        self.sqrt_info = sqrt_info

    @property
    def dim(self):
        return self.sqrt_info.shape[0]

    def evaluate(self, estimates):
        raise NotImplementedError

    def whitened(self, estimates):
        r, jacobians = self.evaluate(estimates)
        U = self.sqrt_info
        return U @ r, {key: U @ J for key, J in jacobians.items()}

    def cost(self, estimates):
        r, _ = self.evaluate(estimates)
        rw = self.sqrt_info @ r
        return float(rw @ rw)

    def _state(self, estimates, epoch_index):
        try:
            return estimates[epoch_index]
        except KeyError:
            raise MissingEstimate(f"no estimate for epoch {epoch_index}")


def _split_state_jacobian(J15, epoch_index, kinds=tuple(KeyKind)):
    """Split a 15-column state Jacobian into per-key blocks."""
    return {
        VariableKey(epoch_index, kind): J15[:, KEY_STATE_COLUMNS[kind]]
        for kind in kinds
    }


class PriorFactor(Factor):
    """Gaussian prior on the full 15-dim state of one epoch."""
    kind = 'prior'

    def __init__(self, epoch_index, mean, cov):
        super().__init__(epoch_keys(epoch_index), sqrt_information(cov))
        self.epoch_index = epoch_index
        self.mean = mean
        self.cov = np.asarray(cov, dtype=float)

    def evaluate(self, estimates):
        x = self._state(estimates, self.epoch_index)
        r = local(self.mean, x)
        J = np.eye(15)
        J[0:3, 0:3] = so3_right_jacobian_inv(r[0:3])
        return r, _split_state_jacobian(J, self.epoch_index)


class ImuFactor(Factor):
    """Preintegrated IMU constraint between epochs i and j."""
    kind = 'imu'

    def __init__(self, epoch_i, epoch_j, preint, gravity):
        keys = [
            VariableKey(epoch_i, KeyKind.POSE),
            VariableKey(epoch_i, KeyKind.VELOCITY),
            VariableKey(epoch_i, KeyKind.BIAS),
            VariableKey(epoch_j, KeyKind.POSE),
            VariableKey(epoch_j, KeyKind.VELOCITY),
        ]
        super().__init__(keys, sqrt_information(preint.cov))
        self.epoch_i = epoch_i
        self.epoch_j = epoch_j
        self.preint = preint
        self.gravity = np.asarray(gravity, dtype=float)

    def evaluate(self, estimates):
        x_i = self._state(estimates, self.epoch_i)
        x_j = self._state(estimates, self.epoch_j)
        r, J_i, J_j = residual_and_jacobians(self.preint, x_i, x_j, self.gravity)
        jacobians = _split_state_jacobian(J_i, self.epoch_i)
        jacobians.update(_split_state_jacobian(J_j, self.epoch_j, (KeyKind.POSE, KeyKind.VELOCITY)))
        return r, jacobians


class BiasWalkFactor(Factor):
    """Random-walk constraint b_j - b_i ~ N(0, diag(Sigma_ba, Sigma_bg))."""
    kind = 'bias_walk'

    def __init__(self, epoch_i, epoch_j, cov):
        keys = [VariableKey(epoch_i, KeyKind.BIAS), VariableKey(epoch_j, KeyKind.BIAS)]
        super().__init__(keys, sqrt_information(cov))
        self.epoch_i = epoch_i
        self.epoch_j = epoch_j

    def evaluate(self, estimates):
        b_i = self._state(estimates, self.epoch_i).bias
        b_j = self._state(estimates, self.epoch_j).bias
        return b_j - b_i, {self.keys[0]: -np.eye(6), self.keys[1]: np.eye(6)}


class GnssFactor(Factor):
    """Position measurement on one pose."""
    kind = 'gnss'

    def __init__(self, epoch_index, fix):
        super().__init__([VariableKey(epoch_index, KeyKind.POSE)], sqrt_information(fix.cov))
        self.epoch_index = epoch_index
        self.fix = fix

    def evaluate(self, estimates):
        x = self._state(estimates, self.epoch_index)
        J = np.zeros((3, 6))
        J[:, 3:6] = np.eye(3)
        return x.p - self.fix.p, {self.keys[0]: J}


class MarginalPriorFactor(Factor):
    """
    Condensed Gaussian prior left behind by marginalization.

    The residual is already whitened: r(x) = [L d(x) + r0; sqrt(c)] where
    d(x) stacks the local coordinates of each key relative to the
    linearization point, L^T L is the condensed information matrix and
    c is the constant part of the removed cost.
    """
    kind = 'marginal_prior'

    def __init__(self, keys, lin_point, information, gradient, constant=0.0):
        self.information = 0.5 * (np.asarray(information) + np.asarray(information).T)
        self.gradient = np.asarray(gradient, dtype=float)
        self.lin_point = dict(lin_point)
        evals, evecs = np.linalg.eigh(self.information)
        tol = max(evals.max(initial=0.0), 1.0) * 1e-12
        keep = evals > tol
        if np.any(evals < -1e3 * tol):
            logger.warning('condensed information has negative eigenvalue %.3e', evals.min())
        sqrt_evals = np.sqrt(evals[keep])
        self.L = sqrt_evals[:, None] * evecs[:, keep].T
        self.r0 = (evecs[:, keep].T @ self.gradient) / sqrt_evals
        self.constant = max(float(constant) - float(self.r0 @ self.r0), 0.0)
        super().__init__(keys, np.eye(self.L.shape[0] + 1))
        self._offsets = np.cumsum([0] + [key.dim for key in self.keys])

    def _local(self, estimates, key):
        x = self._state(estimates, key.epoch_index)
        x0 = self.lin_point[key.epoch_index]
        d = local(x0, x)[KEY_STATE_COLUMNS[key.kind]]
        if key.kind == KeyKind.POSE:
            J = np.eye(6)
            J[0:3, 0:3] = so3_right_jacobian_inv(so3_log(x0.R.T @ x.R))
        else:
            J = np.eye(key.dim)
        return d, J

    def evaluate(self, estimates):
        deltas, jacobians = [], {}
        for idx, key in enumerate(self.keys):
            d, J = self._local(estimates, key)
            deltas.append(d)
            block = self.L[:, self._offsets[idx]:self._offsets[idx + 1]] @ J
            jacobians[key] = np.vstack([block, np.zeros((1, key.dim))])
        r = np.concatenate([self.L @ np.concatenate(deltas) + self.r0, [np.sqrt(self.constant)]])
        return r, jacobians


@dataclass
class LinearSystem:
    """Whitened linearization: J is (m, n) sparse, r is (m,)."""
    J: scipy.sparse.csr_matrix
    r: np.ndarray
    ordering: list
    offsets: dict


class FactorGraph:
    """Variables and factors of the sliding-window problem."""

    def __init__(self):
        self._variables = {}
        self._factors = {}
        self._next_factor_id = 0
        self.epoch_times = {}

    def __len__(self):
        return len(self._factors)

    @property
    def variables(self):
        return list(self._variables)

    @property
    def factors(self):
        return dict(self._factors)

    def epochs(self):
        """Epoch indices present in the graph, oldest first."""
        return sorted({key.epoch_index for key in self._variables})

    def has_variable(self, key):
        return key in self._variables

    def add_variable(self, key, initial):
        """Register a variable with its initial estimate."""
        if key in self._variables:
            raise DuplicateKey(f"variable {key} already in graph")
        self._variables[key] = initial
        self.epoch_times.setdefault(key.epoch_index, initial.t)

    def add_epoch(self, epoch_index, initial):
        for key in epoch_keys(epoch_index):
            self.add_variable(key, initial)

    def add_factor(self, factor):
        """Add a factor and return its id."""
        for key in factor.keys:
            if key not in self._variables:
                raise UnknownKey(f"factor {factor.kind} references unknown variable {key}")
        factor_id = self._next_factor_id
        self._next_factor_id += 1
        self._factors[factor_id] = factor
        return factor_id

    def factors_touching(self, keys):
        keys = set(keys)
        return [fid for fid, factor in self._factors.items() if keys.intersection(factor.keys)]

    def remove_factors(self, factor_ids):
        for fid in factor_ids:
            del self._factors[fid]

    def remove_variables(self, keys):
        for key in keys:
            del self._variables[key]
        remaining = {key.epoch_index for key in self._variables}
        for epoch in list(self.epoch_times):
            if epoch not in remaining:
                del self.epoch_times[epoch]

    def is_gauge_fixed(self):
        return any(isinstance(f, (PriorFactor, MarginalPriorFactor)) for f in self._factors.values())

    def initial_estimates(self):
        """Per-epoch NavState assembled from each key's initial value."""
        estimates = {}
        for key in sorted(self._variables):
            value = self._variables[key]
            current = estimates.get(key.epoch_index, value)
            if key.kind == KeyKind.POSE:
                current = current.with_(R=value.R, p=value.p)
            elif key.kind == KeyKind.VELOCITY:
                current = current.with_(v=value.v)
            else:
                current = current.with_(bias=value.bias)
            estimates[key.epoch_index] = current.with_(t=self.epoch_times[key.epoch_index])
        return estimates

    def _check_estimates(self, estimates):
        for epoch in {key.epoch_index for key in self._variables}:
            if epoch not in estimates:
                raise MissingEstimate(f"no estimate for epoch {epoch}")

    def total_cost(self, estimates):
        """Sum of squared whitened residuals over every factor."""
        self._check_estimates(estimates)
        return float(sum(f.cost(estimates) for _, f in sorted(self._factors.items())))

    def cost_breakdown(self, estimates):
        """Cost per factor kind."""
        self._check_estimates(estimates)
        out = defaultdict(float)
        for _, factor in sorted(self._factors.items()):
            out[factor.kind] += factor.cost(estimates)
        return dict(out)

    def ordering(self):
        """Keys sorted chronologically, then pose, velocity, bias."""
        return sorted(self._variables)

    def linearize(self, estimates, factor_ids=None, ordering=None):
        """
        Whitened sparse linearization at estimates.

        Args:
            estimates: dict epoch_index -> NavState
            factor_ids: Optional subset of factors to linearize
            ordering: Optional column ordering; defaults to chronological

        Returns:
            LinearSystem
        """
        self._check_estimates(estimates)
        ordering = ordering if ordering is not None else self.ordering()
        offsets = {}
        col = 0
        for key in ordering:
            offsets[key] = col
            col += key.dim
        ids = sorted(self._factors) if factor_ids is None else sorted(factor_ids)

        rows, cols, data, residuals = [], [], [], []
        row = 0
        for fid in ids:
            r, jacobians = self._factors[fid].whitened(estimates)
            m = r.shape[0]
            for key, block in jacobians.items():
                if key not in offsets:
                    raise UnknownKey(f"variable {key} missing from ordering")
                nz_r, nz_c = np.nonzero(block)
                rows.append(nz_r + row)
                cols.append(nz_c + offsets[key])
                data.append(block[nz_r, nz_c])
            residuals.append(r)
            row += m

        if rows:
            rows, cols, data = np.concatenate(rows), np.concatenate(cols), np.concatenate(data)
        J = scipy.sparse.csr_matrix((data, (rows, cols)), shape=(row, col))
        r = np.concatenate(residuals) if residuals else np.zeros(0)
        return LinearSystem(J=J, r=r, ordering=list(ordering), offsets=offsets)


def total_cost(graph, estimates):
    return graph.total_cost(estimates)


def linearize(graph, estimates):
    return graph.linearize(estimates)
