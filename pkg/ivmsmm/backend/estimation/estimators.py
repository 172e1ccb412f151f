# estimators.py
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

from dataclasses import dataclass, field, replace
from enum import Enum
from fractions import Fraction
from typing import Optional

import numpy as np

from ivmsmm.backend.analysis.markov_analysis import default_gamma
from ivmsmm.backend.estimation import weights as weighting
from ivmsmm.backend.estimation.nuisance import (
    KnownInstrumentModel,
    LogisticInstrumentModel,
    MarkovTreatmentModel,
    ProbitTreatmentModel,
)
from ivmsmm.backend.exceptions import IvMsmmError
from ivmsmm.backend.logger import Logger
from ivmsmm.backend.models.nuisance_fit import NuisanceFit, empty_fit, merge_fits
from ivmsmm.backend.models.panel import CovariateSpec, LongitudinalPanel, MsmmSpec
from ivmsmm.backend.models.weight_set import WeightSet
from ivmsmm.backend.utils.numerics import SingularMatrix, solve_linear

logging = Logger("estimators")

CONDITION_LIMIT = 1e12
WALD_TOLERANCE = 1e-12


""" Custom exception class """
class SingularDesign(IvMsmmError):
    pass

class ZeroDenominator(IvMsmmError):
    pass

class EstimatorInputError(IvMsmmError):
    pass


class EstimatorKind(Enum):
    ASSOCIATIONAL = "associational"
    SRA = "sra"
    SRA_STABILIZED = "sra-stabilized"
    ORACLE = "oracle"
    IV = "iv"
    IV_STABILIZED = "iv-stabilized"
    WALD = "wald"
    REPEATED_MEASURES_IV = "repeated-measures-iv"


@dataclass(frozen=True)
class EstimatorConfig:
    """
    How to estimate. `treatment_model` is "probit", "markov" or "known"
    (true nuisances of `dgp`); `iv_model` is "known" or "logistic".
    """
    kind: EstimatorKind = EstimatorKind.IV
    spec: Optional[MsmmSpec] = None
    treatment_model: str = "probit"
    iv_model: str = "known"
    instrument_probability: float = 0.5
    covariate_spec: CovariateSpec = field(default_factory=CovariateSpec)
    marginal_spec: CovariateSpec = field(
        default_factory=lambda: CovariateSpec(columns=(), lagged_treatment=True)
    )
    q_known: float = 0.5
    per_time: bool = False
    dgp: object = None

    def resolved_spec(self) -> MsmmSpec:
        if self.spec is not None:
            return self.spec
        if self.dgp is not None:
            return self.dgp.spec
        return MsmmSpec()


@dataclass(frozen=True, eq=False)
class EquationBlock:
    """
    One stacked estimating equation Σ_i h_i (y_i − g_iᵀβ) / W̄_i.

    `log_gradient` is ∂ log|W̄_i| / ∂η for the nuisance parameters η.
    """
    index: np.ndarray
    basis: np.ndarray
    outcome: np.ndarray
    inverse_weight: np.ndarray
    log_gradient: Optional[np.ndarray] = None


@dataclass(frozen=True, eq=False)
class EstimationResult:
    kind: EstimatorKind
    beta: np.ndarray
    names: tuple
    blocks: tuple
    nuisance: NuisanceFit
    weights: Optional[WeightSet] = None
    condition_number: float = 1.0
    influence: Optional[np.ndarray] = None

    def residual_equation(self) -> np.ndarray:
        """Mean estimating equation at β̂."""
        total = 0.0
        for block in self.blocks:
            residual = block.outcome - block.basis @ self.beta
            total = total + (block.index * (residual * block.inverse_weight)[:, None]).mean(axis=0)
        return np.atleast_1d(total)


def solve_blocks(blocks) -> tuple:
    """Closed-form weighted least squares over stacked blocks; returns (β̂, condition number)."""
    jacobian = sum(
        (block.index * block.inverse_weight[:, None]).T @ block.basis for block in blocks
    )
    rhs = sum((block.index * block.inverse_weight[:, None]).T @ block.outcome for block in blocks)
    jacobian = np.atleast_2d(jacobian)

    if not np.all(np.isfinite(jacobian)):
        raise SingularDesign("estimating equation Jacobian is not finite")
    condition = float(np.linalg.cond(jacobian))
    if not np.isfinite(condition) or condition > CONDITION_LIMIT:
        raise SingularDesign(f"design crossed with inverse weights is singular (condition {condition:.3g})")

    try:
        beta = solve_linear(jacobian, np.atleast_1d(rhs))
    except SingularMatrix as e:
        raise SingularDesign(str(e)) from e
    return beta, condition

def terminal_block(panel: LongitudinalPanel, weights: WeightSet, spec: MsmmSpec) -> EquationBlock:
    gradient = weights.cumulative_log_gradient()
    return EquationBlock(
        index=spec.index_rows(panel.a),
        basis=spec.basis_rows(panel.a),
        outcome=panel.outcome,
        inverse_weight=weights.inverse_final(),
        log_gradient=None if gradient is None else gradient[:, -1, :],
    )

def wls_estimate(panel: LongitudinalPanel, weights: WeightSet, spec: MsmmSpec) -> np.ndarray:
    """β̂ = (P_n h gᵀ / W̄)⁻¹ P_n h Y / W̄."""
    beta, _ = solve_blocks([terminal_block(panel, weights, spec)])
    return beta


# Nuisance plumbing

def _treatment_model(config: EstimatorConfig):
    if config.treatment_model == "probit":
        return ProbitTreatmentModel(config.covariate_spec, per_time=config.per_time)
    if config.treatment_model == "markov":
        return MarkovTreatmentModel(config.q_known)
    raise EstimatorInputError(f"unknown treatment model {config.treatment_model!r}")

def _instrument_model(config: EstimatorConfig):
    if config.iv_model == "known":
        return KnownInstrumentModel(config.instrument_probability)
    if config.iv_model == "logistic":
        return LogisticInstrumentModel(per_time=config.per_time)
    raise EstimatorInputError(f"unknown instrument model {config.iv_model!r}")

def _require_dgp(config, what):
    if config.dgp is None:
        raise EstimatorInputError(f"{what} needs the true data-generating process (truth file)")
    return config.dgp

def empirical_gamma(panel: LongitudinalPanel, delta_magnitude: np.ndarray) -> tuple:
    """γ_a = mean |Δ_t| over periods with A_{t-1} = a (A_0 = 0)."""
    lagged = panel.lagged_treatment()
    gammas = []
    for level in (0.0, 1.0):
        mask = lagged == level
        gammas.append(float(np.abs(delta_magnitude[mask]).mean()) if mask.any() else 1.0)
    return tuple(gammas)

def _markov_gamma_gradient(theta, lagged):
    """∂ log γ_{A_{t-1}} / ∂(δ0, δ1, p_L) for the unnormalized default stabilizer."""
    delta0, delta1, p_l = theta
    gamma0 = p_l * delta0 + (1 - p_l) * delta1
    gamma1 = p_l * delta1 + (1 - p_l) * delta0
    gradient0 = np.array([p_l, 1 - p_l, delta0 - delta1]) / gamma0
    gradient1 = np.array([1 - p_l, p_l, delta1 - delta0]) / gamma1
    return np.where((lagged == 1.0)[:, None], gradient1, gradient0)

def build_weights(panel: LongitudinalPanel, config: EstimatorConfig) -> WeightSet:
    kind = config.kind

    if kind is EstimatorKind.ASSOCIATIONAL:
        return weighting.unit_weights(panel)

    if kind is EstimatorKind.ORACLE:
        return weighting.oracle_weights(panel, _require_dgp(config, "the oracle estimator"))

    if kind in (EstimatorKind.SRA, EstimatorKind.SRA_STABILIZED):
        if not panel.binary_treatment:
            raise EstimatorInputError("SRA weights need a binary treatment")

        if config.treatment_model == "known":
            dgp = _require_dgp(config, "known SRA nuisances")
            if kind is EstimatorKind.SRA:
                return weighting.sra_weights(panel, dgp.observed_propensity, evaluated_at_observed=True)
            marginal = ProbitTreatmentModel(config.marginal_spec, with_delta=False)
            marginal_fit = marginal.fit(panel)
            return weighting.sra_stabilized_weights(
                panel, lambda t, p: marginal.density(marginal_fit, p, t), dgp.observed_propensity,
                evaluated_at_observed=True,
                log_gradient=lambda t, p: -marginal.log_density_gradient(marginal_fit, p, t),
                fit=marginal_fit,
            )

        model = _treatment_model(config)
        fit = model.fit(panel)
        if kind is EstimatorKind.SRA:
            return weighting.sra_weights(
                panel, lambda t, p: model.density(fit, p, t), evaluated_at_observed=True,
                log_gradient=lambda t, p: model.log_density_gradient(fit, p, t), fit=fit,
            )

        marginal = ProbitTreatmentModel(config.marginal_spec, with_delta=False)
        marginal_fit = marginal.fit(panel)
        return weighting.sra_stabilized_weights(
            panel,
            lambda t, p: marginal.density(marginal_fit, p, t),
            lambda t, p: model.density(fit, p, t),
            evaluated_at_observed=True,
            log_gradient=lambda t, p: np.hstack([
                model.log_density_gradient(fit, p, t),
                -marginal.log_density_gradient(marginal_fit, p, t),
            ]),
            fit=merge_fits(fit, marginal_fit),
        )

    if kind in (EstimatorKind.IV, EstimatorKind.IV_STABILIZED, EstimatorKind.REPEATED_MEASURES_IV):
        return _build_iv_weights(panel, config, stabilized=kind is EstimatorKind.IV_STABILIZED)

    raise EstimatorInputError(f"{kind.value} does not use a weight set")

def _build_iv_weights(panel, config, stabilized) -> WeightSet:
    instrument = _instrument_model(config)
    instrument_fit = instrument.fit(panel)

    def fz(t, p):
        return instrument.density(instrument_fit, p, t)

    if config.treatment_model == "known":
        dgp = _require_dgp(config, "known IV nuisances")
        delta = dgp.compliance_delta
        treatment_fit = None

        def delta_gradient(t, p):
            return np.zeros((p.n, 0))
    else:
        if not panel.binary_treatment:
            raise EstimatorInputError("fitted compliance models need a binary treatment")
        model = _treatment_model(config)
        treatment_fit = model.fit(panel)

        def delta(t, p):
            return model.delta(treatment_fit, p, t)

        def delta_gradient(t, p):
            return model.log_delta_gradient(treatment_fit, p, t)

    fit = merge_fits(instrument_fit, treatment_fit)

    def log_gradient(t, p):
        return np.hstack([instrument.log_density_gradient(instrument_fit, p, t), delta_gradient(t, p)])

    if not stabilized:
        return weighting.iv_weights(panel, fz, delta, log_gradient, fit)

    lagged = panel.lagged_treatment()
    gamma_gradient = None
    if config.treatment_model == "markov":
        delta0, delta1, p_l = treatment_fit.theta
        gammas = default_gamma(p_l, delta0, delta1)
        theta = treatment_fit.theta

        def gamma_gradient(t, p):
            return _markov_gamma_gradient(theta, lagged[:, t])
    elif config.treatment_model == "known" and getattr(config.dgp, "name", "") == "markov":
        params = config.dgp.params
        gammas = default_gamma(params.p_L, params.delta0, params.delta1)
    else:
        magnitudes = np.abs(np.column_stack([delta(t, panel) for t in range(panel.T)]))
        gammas = empirical_gamma(panel, magnitudes)

    def gamma(t, a_previous):
        return np.where(a_previous == 1.0, gammas[1], gammas[0])

    def stabilized_gradient(t, p):
        gradient = log_gradient(t, p)
        if gamma_gradient is not None:
            gradient[:, -3:] -= gamma_gradient(t, p)
        return gradient

    return weighting.iv_stabilized_weights(panel, gamma, fz, delta, stabilized_gradient, fit)


# Estimators

def estimate(panel: LongitudinalPanel, config: EstimatorConfig) -> EstimationResult:
    """Builds the weights for `config.kind` and solves the estimating equation."""
    kind = config.kind
    spec = config.resolved_spec()

    if kind is EstimatorKind.ORACLE and not panel.has_latent:
        raise weighting.MissingLatent("latent columns required for the oracle estimator")
    if kind is EstimatorKind.WALD:
        return wald_result(panel)
    if kind is EstimatorKind.REPEATED_MEASURES_IV:
        return repeated_measures_result(panel, config)

    weights = build_weights(panel, config)
    block = terminal_block(panel, weights, spec)
    beta, condition = solve_blocks([block])
    nuisance = weights.fit if weights.fit is not None else empty_fit()

    logging.debug(f"{kind.value}: beta={np.round(beta, 6)}, condition={condition:.3g}")
    return EstimationResult(
        kind, beta, spec.coefficient_names(len(beta)), (block,), nuisance, weights, condition
    )

def _wald_means(panel):
    if panel.T != 1:
        raise EstimatorInputError("wald requires T=1")
    z = panel.z[:, 0]
    ones, zeros = z == 1.0, z == 0.0
    if not ones.any() or not zeros.any():
        raise EstimatorInputError("wald needs subjects in both instrument groups")
    return ones, zeros

def _check_wald_denominator(a, ones, zeros):
    if np.all(np.isin(a, (0.0, 1.0))):
        # exact rational comparison of the group treatment means
        if Fraction(int(a[ones].sum()), int(ones.sum())) == Fraction(int(a[zeros].sum()), int(zeros.sum())):
            raise ZeroDenominator("treatment means are equal across instrument groups")
        return

    difference = a[ones].mean() - a[zeros].mean()
    if abs(difference) <= WALD_TOLERANCE * max(1.0, np.abs(a).max()):
        raise ZeroDenominator("treatment means are equal across instrument groups")

def wald_estimate(panel: LongitudinalPanel) -> float:
    """(P_n Y{Z=1} − P_n Y{Z=0}) / (P_n A{Z=1} − P_n A{Z=0}) as group-mean differences."""
    ones, zeros = _wald_means(panel)
    a, y = panel.a[:, 0], panel.outcome
    _check_wald_denominator(a, ones, zeros)
    return float((y[ones].mean() - y[zeros].mean()) / (a[ones].mean() - a[zeros].mean()))

def wald_weighted_estimate(panel: LongitudinalPanel) -> float:
    """
    (P_n A(−1)^{1−Z}/f̂_Z(Z))⁻¹ P_n (−1)^{1−Z} Y / f̂_Z(Z) with the empirical
    instrument density f̂_Z(z) = n_z / n.
    """
    ones, zeros = _wald_means(panel)
    a, y = panel.a[:, 0], panel.outcome
    _check_wald_denominator(a, ones, zeros)
    n = panel.n
    weight = np.where(ones, n / ones.sum(), -n / zeros.sum())
    return float(np.mean(weight * y) / np.mean(weight * a))

def wald_result(panel: LongitudinalPanel) -> EstimationResult:
    beta = wald_estimate(panel)
    a, y, z = panel.a[:, 0], panel.outcome, panel.z[:, 0]
    z_centered = z - z.mean()
    covariance = np.mean((a - a.mean()) * z_centered)
    influence = ((y - y.mean()) - beta * (a - a.mean())) * z_centered / covariance

    block = EquationBlock(
        index=np.ones((panel.n, 1)), basis=np.zeros((panel.n, 1)),
        outcome=np.zeros(panel.n), inverse_weight=np.ones(panel.n),
    )
    return EstimationResult(
        EstimatorKind.WALD, np.array([beta]), ("beta1",), (block,), empty_fit(),
        influence=influence[:, None],
    )

def repeated_measures_result(panel: LongitudinalPanel, config: EstimatorConfig) -> EstimationResult:
    """
    Stacks one equation per period with rows x_t = (1, Σ_{τ≤t} A_τ), outcome
    Y_t and weight W̄_t.
    """
    if not panel.repeated_measures:
        raise EstimatorInputError("the repeated-measures estimator needs per-period outcomes y_t")

    if config.treatment_model == "unit":
        weights = weighting.unit_weights(panel)
    else:
        weights = build_weights(panel, replace(config, kind=EstimatorKind.IV))

    cumulative = np.cumsum(panel.a, axis=1)
    inverse = weights.inverse_cumulative()
    gradient = weights.cumulative_log_gradient()

    blocks = []
    for t in range(panel.T):
        rows = np.column_stack([np.ones(panel.n), cumulative[:, t]])
        blocks.append(EquationBlock(
            index=rows, basis=rows, outcome=panel.y_t[:, t], inverse_weight=inverse[:, t],
            log_gradient=None if gradient is None else gradient[:, t, :],
        ))

    beta, condition = solve_blocks(blocks)
    nuisance = weights.fit if weights.fit is not None else empty_fit()
    return EstimationResult(
        EstimatorKind.REPEATED_MEASURES_IV, beta, ("beta0", "beta1"), tuple(blocks),
        nuisance, weights, condition,
    )

def repeated_measures_iv_estimate(panel: LongitudinalPanel, config: EstimatorConfig = None) -> np.ndarray:
    config = config or EstimatorConfig(kind=EstimatorKind.REPEATED_MEASURES_IV)
    return repeated_measures_result(panel, config).beta

def theoretical_bias(kind: EstimatorKind, dgp, n: int = 200_000, seed: int = 0) -> np.ndarray:
    """
    Plug-in Monte Carlo value of the asymptotic bias

        (E h gᵀ/W̄)⁻¹ E h (Σ_t τ_t(L_t − E(L_t | ·)) + ρ_t U_t) / W̄

    with unit weights (associational) or true observed-data SRA weights.
    """
    if getattr(dgp, "name", None) != "linear":
        raise EstimatorInputError("theoretical bias is available for the linear DGP")
    if kind in (EstimatorKind.IV, EstimatorKind.IV_STABILIZED, EstimatorKind.ORACLE):
        return np.zeros(len(dgp.beta))

    output = dgp.simulate(n, seed)
    panel = output.panel
    if kind is EstimatorKind.ASSOCIATIONAL:
        weights = weighting.unit_weights(panel)
    elif kind is EstimatorKind.SRA:
        weights = weighting.sra_weights(panel, dgp.observed_propensity, evaluated_at_observed=True)
    else:
        raise EstimatorInputError(f"no bias formula for {kind.value}")

    spec = dgp.spec
    inverse = weights.inverse_final()
    index = spec.index_rows(panel.a)
    jacobian = (index * inverse[:, None]).T @ spec.basis_rows(panel.a) / n
    confounded = (index * (output.confounding * inverse)[:, None]).mean(axis=0)
    return solve_linear(jacobian, confounded)
