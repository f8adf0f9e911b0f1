# -*- coding: utf-8 -*-

# GNU General Public License v3.0+ (see LICENSES/GPL-3.0-or-later.txt or https://www.gnu.org/licenses/gpl-3.0.txt)
# SPDX-License-Identifier: GPL-3.0-or-later

"""
Levenberg-Marquardt over the navigation-state manifold, and fixed-lag
marginalization by Schur complement.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

from rtfgo.module_utils.common import (
    ConfigurationError,
    EmptyGraphAfterMarginalization,
    LinearSolveFailure,
    NotGaugeFixed,
)
from rtfgo.module_utils.factors import KEY_STATE_COLUMNS, MarginalPriorFactor, epoch_keys
from rtfgo.module_utils.lie import STATE_DIM, retract

try:
    from sksparse.cholmod import CholmodError, cholesky
    HAS_CHOLMOD = True
except ImportError:
    HAS_CHOLMOD = False

logger = logging.getLogger(__name__)

DIAGONAL_FLOOR = 1e-12


@dataclass(frozen=True)
class SolverConfig:
    max_iterations: int = 20
    cost_rel_tol: float = 1e-6
    delta_norm_tol: float = 1e-8
    lm_initial_lambda: float = 1e-4
    lm_lambda_factor: float = 10.0
    lm_max_lambda: float = 1e10

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ConfigurationError('max_iterations must be positive')
        for name in ('cost_rel_tol', 'delta_norm_tol', 'lm_max_lambda'):
            if not getattr(self, name) > 0.0:
                raise ConfigurationError(f"{name} must be positive")
        if self.lm_initial_lambda < 0.0:
            raise ConfigurationError('lm_initial_lambda must be non-negative')
        if not self.lm_lambda_factor > 1.0:
            raise ConfigurationError('lm_lambda_factor must be greater than 1')

    @classmethod
    def tight(cls):
        """Settings for final batch solves and equivalence checks."""
        return cls(max_iterations=100, cost_rel_tol=1e-14, delta_norm_tol=1e-12)


@dataclass
class OptimizationResult:
    estimates: dict
    cost: float
    iterations: int
    converged: bool
    cost_history: list = field(default_factory=list)
    damping: float = 0.0


@dataclass
class MarginalizationResult:
    prior: MarginalPriorFactor
    removed_keys: list
    removed_factor_ids: list
    prior_factor_id: int = None


def solve_normal_equations(J, r, lam):
    """
    Solve (J^T J + lam * D) delta = -J^T r with Marquardt scaling D = diag(J^T J).

    Uses a CHOLMOD sparse Cholesky factorization when scikit-sparse is
    installed, otherwise a symmetric-mode SuperLU factorization. Both keep
    the given (chronological) column order.

    Raises:
        LinearSolveFailure: singular or non-finite system
    """
    if lam < 0.0:
        raise ValueError('lambda must be non-negative')
    J = scipy.sparse.csr_matrix(J)
    H = (J.T @ J).tocsc()
    g = J.T @ r
    diag = np.maximum(H.diagonal(), DIAGONAL_FLOOR)
    A = (H + scipy.sparse.diags(lam * diag)).tocsc()
    delta = _solve_cholmod(A, -g) if HAS_CHOLMOD else _solve_lu(A, -g)
    if not np.all(np.isfinite(delta)):
        raise LinearSolveFailure('normal equations produced a non-finite update')
    return delta


def _solve_cholmod(A, b):
    try:
        return cholesky(A, ordering_method='natural')(b)
    except CholmodError as e:
        raise LinearSolveFailure(f"normal equations are not positive definite: {e}")


def _solve_lu(A, b):
    try:
        lu = scipy.sparse.linalg.splu(
            A,
            permc_spec='NATURAL',
            diag_pivot_thresh=0.0,
            options=dict(SymmetricMode=True),
        )
    except RuntimeError as e:
        raise LinearSolveFailure(f"normal equations are singular: {e}")
    return lu.solve(b)


def _solve_dense(J, r, lam):
    Jd = J.toarray() if scipy.sparse.issparse(J) else np.asarray(J)
    H = Jd.T @ Jd
    A = H + lam * np.diag(np.maximum(np.diag(H), DIAGONAL_FLOOR))
    try:
        return scipy.linalg.solve(A, -Jd.T @ r, assume_a='sym')
    except (np.linalg.LinAlgError, ValueError) as e:
        raise LinearSolveFailure(f"dense normal equations are singular: {e}")


def retract_estimates(estimates, delta, system):
    """Apply a stacked update (in system column order) to per-epoch states."""
    per_epoch = {}
    for key in system.ordering:
        start = system.offsets[key]
        vec = per_epoch.setdefault(key.epoch_index, np.zeros(STATE_DIM))
        vec[KEY_STATE_COLUMNS[key.kind]] = delta[start:start + key.dim]
    out = dict(estimates)
    for epoch, vec in per_epoch.items():
        out[epoch] = retract(estimates[epoch], vec)
    return out


def _levenberg_marquardt(graph, initial, config, linear_solve):
    if not graph.is_gauge_fixed():
        raise NotGaugeFixed('graph has no prior or marginal prior factor')
    estimates = {epoch: initial[epoch] for epoch in graph.epochs()}
    cost = graph.total_cost(estimates)
    history = [cost]
    lam = config.lm_initial_lambda
    converged = False
    iterations = 0

    for iterations in range(1, config.max_iterations + 1):
        system = graph.linearize(estimates)
        while True:
            delta = linear_solve(system.J, system.r, lam)
            candidate = retract_estimates(estimates, delta, system)
            new_cost = graph.total_cost(candidate)
            if new_cost <= cost:
                break
            if lam == 0.0:
                lam = config.lm_initial_lambda or 1e-8
            else:
                lam *= config.lm_lambda_factor
            if lam > config.lm_max_lambda:
                logger.debug('damping exceeded %.1e at iteration %d; stopping', config.lm_max_lambda, iterations)
                return OptimizationResult(estimates, cost, iterations, True, history, lam)

        decrease = cost - new_cost
        estimates, cost = candidate, new_cost
        history.append(cost)
        lam /= config.lm_lambda_factor
        step = np.linalg.norm(delta)
        logger.debug('LM iteration %d: cost=%.9g step=%.3e lambda=%.1e', iterations, cost, step, lam)
        if step < config.delta_norm_tol or cost <= 0.0 or decrease <= config.cost_rel_tol * (cost + decrease):
            converged = True
            break

    if not converged:
        logger.info('LM stopped after %d iterations without converging (cost %.6g)', iterations, cost)
    return OptimizationResult(estimates, cost, iterations, converged, history, lam)


def optimize(graph, initial, config=None):
    """
    Minimize the graph cost starting from initial estimates.

    Args:
        graph: FactorGraph
        initial: dict epoch_index -> NavState covering every epoch
        config: SolverConfig

    Returns:
        OptimizationResult

    Raises:
        NotGaugeFixed: No prior or marginal prior in the graph
        LinearSolveFailure: The damped normal equations could not be solved
    """
    return _levenberg_marquardt(graph, initial, config or SolverConfig(), solve_normal_equations)


def optimize_dense(graph, initial, config=None):
    """Reference optimizer: same objective and damping, dense linear algebra."""
    return _levenberg_marquardt(graph, initial, config or SolverConfig(), _solve_dense)


def _inverse_psd(H):
    try:
        factor = scipy.linalg.cho_factor(H, lower=False)
        return lambda B: scipy.linalg.cho_solve(factor, B)
    except np.linalg.LinAlgError:
        logger.warning('marginalized block is singular; using pseudo-inverse')
        Hinv = scipy.linalg.pinvh(H)
        return lambda B: Hinv @ B


def marginalize(graph, estimates, cutoff_time):
    """
    Remove every epoch older than cutoff_time, condensing its factors
    onto the boundary epochs.

    All factors touching removed variables are linearized at the current
    estimates. The removed block is eliminated by Schur complement and
    the result is added to the graph as one MarginalPriorFactor over all
    keys of the boundary epochs.

    Args:
        graph: FactorGraph, modified in place
        estimates: dict epoch_index -> NavState
        cutoff_time: Epochs with t < cutoff_time are removed

    Returns:
        MarginalizationResult (prior is None when nothing is condensed)

    Raises:
        EmptyGraphAfterMarginalization: No epoch would remain
    """
    removed_epochs = [e for e in graph.epochs() if graph.epoch_times[e] < cutoff_time]
    if not removed_epochs:
        return MarginalizationResult(None, [], [])
    if len(removed_epochs) == len(graph.epochs()):
        raise EmptyGraphAfterMarginalization(f"cutoff {cutoff_time} removes every epoch")

    removed_keys = [key for epoch in removed_epochs for key in epoch_keys(epoch)]
    removed_set = set(removed_keys)
    factor_ids = graph.factors_touching(removed_keys)
    factors = graph.factors
    boundary_epochs = sorted({
        key.epoch_index
        for fid in factor_ids
        for key in factors[fid].keys
        if key not in removed_set
    })
    boundary_keys = [key for epoch in boundary_epochs for key in epoch_keys(epoch)]

    prior = None
    if boundary_keys:
        system = graph.linearize(estimates, factor_ids=factor_ids, ordering=removed_keys + boundary_keys)
        J = system.J.toarray()
        r = system.r
        m = sum(key.dim for key in removed_keys)
        H = J.T @ J
        g = J.T @ r
        H_mm, H_mb, H_bb = H[:m, :m], H[:m, m:], H[m:, m:]
        g_m, g_b = g[:m], g[m:]
        solve_mm = _inverse_psd(H_mm)
        X = solve_mm(np.column_stack([H_mb, g_m]))
        information = H_bb - H_mb.T @ X[:, :-1]
        gradient = g_b - H_mb.T @ X[:, -1]
        constant = float(r @ r - g_m @ X[:, -1])
        prior = MarginalPriorFactor(
            keys=boundary_keys,
            lin_point={epoch: estimates[epoch] for epoch in boundary_epochs},
            information=information,
            gradient=gradient,
            constant=constant,
        )

    graph.remove_factors(factor_ids)
    graph.remove_variables(removed_keys)
    result = MarginalizationResult(prior, removed_keys, factor_ids)
    if prior is not None:
        result.prior_factor_id = graph.add_factor(prior)
    logger.debug(
        'marginalized %d epochs (%d factors) onto %d boundary epochs',
        len(removed_epochs), len(factor_ids), len(boundary_epochs),
    )
    return result
