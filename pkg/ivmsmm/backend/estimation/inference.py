# inference.py
#
# Instrumental-variable weighting for marginal structural mean models
# Copyright (C) 2026 IvMsmm Team
#
# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.
#
# This program is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU General Public License for more details.
#
# You should have received a copy of the GNU General Public License
# along with this program. If not, see <https://www.gnu.org/licenses/>.

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from joblib import Parallel, delayed

from ivmsmm.backend.estimation.estimators import (
    EstimationResult,
    EstimatorConfig,
    estimate,
)
from ivmsmm.backend.exceptions import IvMsmmError
from ivmsmm.backend.logger import Logger
from ivmsmm.backend.models.panel import LongitudinalPanel
from ivmsmm.backend.models.report import EstimateReport
from ivmsmm.backend.utils.common import make_rng
from ivmsmm.backend.utils.numerics import SingularInformation, SingularMatrix, normal_ppf, solve_linear

logging = Logger("inference")

MAX_FAILURE_SHARE = 0.10
# Stream index reserved for bootstrap resampling
STREAM_BOOTSTRAP = 3


""" Custom exception class """
class TooManyFailures(IvMsmmError):
    pass

class InvalidArgument(IvMsmmError):
    pass


@dataclass(frozen=True, eq=False)
class BootstrapResult:
    cov: np.ndarray
    intervals: np.ndarray
    estimates: np.ndarray
    failures: int
    B: int


def influence_function(result: EstimationResult) -> np.ndarray:
    """
    Rows of −(E ∂s/∂θ)⁻¹ s for θ = (β, η), restricted to β.

    s stacks the estimating equation for β with the nuisance scores. The
    β row of the Jacobian is (−P_n h gᵀ/W̄, −P_n h (Y − m) ∂log|W̄|/∂ηᵀ / W̄);
    the nuisance rows are (0, −information).
    """
    if result.influence is not None:
        return result.influence

    beta = result.beta
    p = len(beta)
    nuisance = result.nuisance
    d = nuisance.dim
    n = result.blocks[0].index.shape[0]

    score_beta = np.zeros((n, p))
    jacobian_beta = np.zeros((p, p))
    jacobian_cross = np.zeros((p, d))
    for block in result.blocks:
        residual = block.outcome - block.basis @ beta
        weighted = block.index * (residual * block.inverse_weight)[:, None]
        score_beta += weighted
        jacobian_beta -= (block.index * block.inverse_weight[:, None]).T @ block.basis / n
        if d > 0 and block.log_gradient is not None:
            jacobian_cross -= weighted.T @ block.log_gradient / n

    if d == 0:
        stacked_scores = score_beta
        jacobian = jacobian_beta
    else:
        if nuisance.scores.shape != (n, d):
            raise SingularInformation("nuisance scores are not available for the sandwich")
        stacked_scores = np.hstack([score_beta, nuisance.scores])
        jacobian = np.block([
            [jacobian_beta, jacobian_cross],
            [np.zeros((d, p)), -nuisance.information],
        ])

    try:
        influence = -solve_linear(jacobian, stacked_scores.T).T
    except SingularMatrix as e:
        raise SingularInformation(f"stacked Jacobian is singular: {e}") from e

    return influence[:, :p]

def sandwich_variance(result: EstimationResult) -> np.ndarray:
    influence = influence_function(result)
    n = influence.shape[0]
    cov = influence.T @ influence / n ** 2
    return (cov + cov.T) / 2.0

def normal_intervals(beta, cov, level) -> np.ndarray:
    critical = normal_ppf(0.5 + level / 2.0)
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    return np.column_stack([beta - critical * se, beta + critical * se])

def _replicate(panel: LongitudinalPanel, config: EstimatorConfig, seed: int, b: int):
    rng = make_rng(seed, b, STREAM_BOOTSTRAP)
    indices = rng.integers(0, panel.n, size=panel.n)
    try:
        return estimate(panel.take(indices), config).beta
    except (IvMsmmError, np.linalg.LinAlgError, FloatingPointError) as e:
        logging.debug(f"Bootstrap replicate {b} failed: {e}")
        return None

def bootstrap(panel: LongitudinalPanel, config: EstimatorConfig, B: int, seed: int,
              level: float = 0.95, jobs: int = 1) -> BootstrapResult:
    """
    Subject-level nonparametric bootstrap refitting nuisances in every
    replicate. Replicate b always uses resampling stream (seed, b), so the
    result does not depend on `jobs`.
    """
    if B < 2:
        raise InvalidArgument(f"bootstrap needs at least 2 replicates, got {B}")
    if B < 100:
        logging.warning(f"Only {B} bootstrap replicates requested; intervals will be coarse")
    if not 0.0 < level < 1.0:
        raise InvalidArgument(f"confidence level must lie in (0, 1), got {level}")

    replicates = Parallel(n_jobs=jobs)(
        delayed(_replicate)(panel, config, seed, b) for b in range(B)
    )
    estimates = np.array([beta for beta in replicates if beta is not None])
    failures = B - len(estimates)

    if failures > MAX_FAILURE_SHARE * B:
        raise TooManyFailures(f"{failures} of {B} bootstrap replicates failed")
    if failures:
        logging.warning(f"{failures} of {B} bootstrap replicates failed and were excluded")

    cov = np.atleast_2d(np.cov(estimates, rowvar=False))
    alpha = 1.0 - level
    intervals = np.percentile(estimates, [100 * alpha / 2, 100 * (1 - alpha / 2)], axis=0).T

    return BootstrapResult(cov, intervals, estimates, failures, B)

def analyze(panel: LongitudinalPanel, config: EstimatorConfig, B: int = 0, seed: int = 0,
            level: float = 0.95, jobs: int = 1) -> EstimateReport:
    """Point estimate, sandwich covariance and, when B > 0, the bootstrap."""
    result = estimate(panel, config)
    sandwich = sandwich_variance(result)

    bootstrap_result = None
    if B > 0:
        bootstrap_result = bootstrap(panel, config, B, seed, level, jobs)

    diagnostics = {"condition_number": result.condition_number, "nuisance_converged": result.nuisance.converged}
    if result.weights is not None:
        diagnostics.update(result.weights.diagnostics())

    return EstimateReport(
        kind=result.kind.value,
        names=result.names,
        beta=result.beta,
        sandwich_cov=sandwich,
        bootstrap_cov=None if bootstrap_result is None else bootstrap_result.cov,
        level=level,
        ci_sandwich=normal_intervals(result.beta, sandwich, level),
        ci_bootstrap=None if bootstrap_result is None else bootstrap_result.intervals,
        B=B,
        bootstrap_failures=0 if bootstrap_result is None else bootstrap_result.failures,
        n=panel.n,
        T=panel.T,
        seed=seed,
        nuisance=str(result.nuisance) if result.nuisance.dim else "known",
        diagnostics=diagnostics,
    )
