# nuisance.py
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

import warnings

import numpy as np
import statsmodels.api as sm
from statsmodels.tools import sm_exceptions

from ivmsmm.backend.exceptions import IvMsmmError
from ivmsmm.backend.logger import Logger
from ivmsmm.backend.models.nuisance_fit import NuisanceFit
from ivmsmm.backend.models.panel import CovariateSpec, LongitudinalPanel
from ivmsmm.backend.simulation.common import InvalidParams
from ivmsmm.backend.utils.numerics import (
    NewtonConfig,
    NoConvergence,
    newton_maximize,
    normal_cdf,
    normal_pdf,
)

logging = Logger("nuisance")

SEPARATION_TOLERANCE = 1e-10
# Every response predicted at least this well counts as perfect prediction
PERFECT_PREDICTION_TOLERANCE = 1e-6

# Raised or warned by statsmodels, depending on its version
SEPARATION_WARNINGS = tuple(
    c for c in (getattr(sm_exceptions, "PerfectSeparationWarning", None),) if c is not None
)
SEPARATION_SIGNALS = SEPARATION_WARNINGS + tuple(
    c for c in (getattr(sm_exceptions, "PerfectSeparationError", None),) if c is not None
)


""" Custom exception class """
class SeparationDetected(IvMsmmError):
    pass


def check_perfect_prediction(name: str, response, probability):
    """
    Raises when the fitted probabilities reproduce every binary response,
    which leaves the likelihood without a finite maximum.
    """
    response = np.asarray(response, dtype=float)
    probability = np.asarray(probability, dtype=float)
    at_response = np.where(response == 1.0, probability, 1.0 - probability)
    if np.all(at_response > 1.0 - PERFECT_PREDICTION_TOLERANCE):
        raise SeparationDetected(f"{name}: the covariates predict every response perfectly")


def _signed(z):
    """(−1)^{1−z}"""
    return np.where(z == 1.0, 1.0, -1.0)


class BernoulliModel:
    """
    Pooled Bernoulli likelihood of a binary response over periods.

    Subclasses give the success probability of period `t` and its first and
    second derivatives in θ; this class turns them into the log-likelihood,
    per-subject scores and the information matrix.
    """
    name = "bernoulli"

    def names(self, panel) -> list:
        raise NotImplementedError

    def blocks(self, panel) -> dict:
        raise NotImplementedError

    def initial(self, panel) -> np.ndarray:
        return np.zeros(len(self.names(panel)))

    def response(self, panel, t) -> np.ndarray:
        raise NotImplementedError

    def probability(self, theta, panel, t) -> np.ndarray:
        raise NotImplementedError

    def gradient(self, theta, panel, t) -> np.ndarray:
        raise NotImplementedError

    def hessian(self, theta, panel, t):
        """(n, d, d) second derivative of the probability, or None when it vanishes."""
        return None

    def options(self) -> dict:
        return {}

    def period_loglik(self, theta, panel, t) -> np.ndarray:
        pi = self.probability(theta, panel, t)
        if np.any(~np.isfinite(pi)) or np.any(pi <= 0.0) or np.any(pi >= 1.0):
            return np.full(panel.n, -np.inf)
        y = self.response(panel, t)
        return y * np.log(pi) + (1.0 - y) * np.log1p(-pi)

    def period_score(self, theta, panel, t) -> np.ndarray:
        pi = self.probability(theta, panel, t)
        y = self.response(panel, t)
        ratio = (y - pi) / (pi * (1.0 - pi))
        return ratio[:, None] * self.gradient(theta, panel, t)

    def loglik(self, theta, panel) -> float:
        total = sum(self.period_loglik(theta, panel, t) for t in range(panel.T))
        return float(np.mean(total))

    def subject_scores(self, theta, panel) -> np.ndarray:
        return sum(self.period_score(theta, panel, t) for t in range(panel.T))

    def score(self, theta, panel) -> np.ndarray:
        return self.subject_scores(theta, panel).mean(axis=0)

    def information(self, theta, panel, expected=False) -> np.ndarray:
        """Per-subject mean information; observed unless `expected`."""
        d = len(theta)
        total = np.zeros((d, d))
        for t in range(panel.T):
            pi = self.probability(theta, panel, t)
            y = self.response(panel, t)
            grad = self.gradient(theta, panel, t)
            if expected:
                curvature = 1.0 / (pi * (1.0 - pi))
            else:
                curvature = y / pi ** 2 + (1.0 - y) / (1.0 - pi) ** 2
            total += np.einsum("i,ij,ik->jk", curvature, grad, grad)

            second = self.hessian(theta, panel, t)
            if second is not None and not expected:
                ratio = (y - pi) / (pi * (1.0 - pi))
                total -= np.einsum("i,ijk->jk", ratio, second)
        total /= panel.n
        return (total + total.T) / 2.0

    def check_separation(self, theta, panel):
        """
        Newton stops on a flat likelihood before a diverging fit reaches
        the boundary, so perfect prediction is checked as well.
        """
        probabilities = []
        for t in range(panel.T):
            pi = self.probability(theta, panel, t)
            if np.any(pi < SEPARATION_TOLERANCE) or np.any(pi > 1.0 - SEPARATION_TOLERANCE):
                raise SeparationDetected(
                    f"{self.name}: fitted probabilities reach the boundary at period {t + 1}"
                )
            probabilities.append(pi)

        response = np.concatenate([self.response(panel, t) for t in range(panel.T)])
        check_perfect_prediction(self.name, response, np.concatenate(probabilities))

    def fit(self, panel: LongitudinalPanel, cfg: NewtonConfig = NewtonConfig()) -> NuisanceFit:
        theta = newton_maximize(
            lambda th: self.loglik(th, panel),
            lambda th: self.score(th, panel),
            lambda th: self.information(th, panel, expected=True),
            self.initial(panel),
            cfg,
        )
        self.check_separation(theta, panel)
        self.check_estimates(theta, panel)

        fit = NuisanceFit(
            model=self.name,
            names=tuple(self.names(panel)),
            theta=theta,
            blocks=self.blocks(panel),
            scores=self.subject_scores(theta, panel),
            information=self.information(theta, panel),
            converged=True,
            loglik=self.loglik(theta, panel),
            options=self.options(),
        )
        logging.debug(f"Fitted {fit}")
        return fit

    def check_estimates(self, theta, panel):
        pass

    def density(self, fit, panel, t) -> np.ndarray:
        """f(response_t) at the observed response."""
        pi = self.probability(fit.theta, panel, t)
        return np.where(self.response(panel, t) == 1.0, pi, 1.0 - pi)

    def log_density_gradient(self, fit, panel, t) -> np.ndarray:
        return self.period_score(fit.theta, panel, t)


class CovariateDesign:
    """Covariate rows, optionally interacted with period indicators."""

    def __init__(self, covariate_spec: CovariateSpec = None, per_time: bool = False):
        self.covariate_spec = covariate_spec or CovariateSpec()
        self.per_time = per_time

    def rows(self, panel, t) -> np.ndarray:
        base = self.covariate_spec.rows(panel, t)
        if not self.per_time:
            return base

        d = base.shape[1]
        rows = np.zeros((panel.n, panel.T * d))
        rows[:, t * d:(t + 1) * d] = base
        return rows

    def width(self, panel) -> int:
        return self.rows(panel, 0).shape[1]

    def names(self, panel, block) -> list:
        base = self.covariate_spec.names(panel)
        if self.per_time:
            base = [f"t{t + 1}:{name}" for t in range(panel.T) for name in base]
        return [f"{block}[{name}]" for name in base]


class ProbitTreatmentModel(BernoulliModel):
    """
    π_t = Φ(νᵀx_t)(1 − Φ(αᵀx_t)) + Z_t Φ(αᵀx_t), where Φ(αᵀx_t) is the
    compliance difference Δ_t. With `with_delta=False` this is a plain
    probit Φ(νᵀx_t), used for marginal treatment models.
    """

    def __init__(self, covariate_spec: CovariateSpec = None, with_delta: bool = True,
                 per_time: bool = False):
        self.design = CovariateDesign(covariate_spec, per_time)
        self.with_delta = with_delta
        self.name = "probit" if with_delta else "marginal"

    def options(self):
        return {"with_delta": self.with_delta, "per_time": self.design.per_time}

    def names(self, panel):
        names = self.design.names(panel, "nu")
        if self.with_delta:
            names = self.design.names(panel, "alpha") + names
        return names

    def blocks(self, panel):
        d = self.design.width(panel)
        if self.with_delta:
            return {"alpha": slice(0, d), "nu": slice(d, 2 * d)}
        return {"nu": slice(0, d)}

    def response(self, panel, t):
        return panel.a[:, t]

    def split(self, theta, panel):
        blocks = self.blocks(panel)
        nu = theta[blocks["nu"]]
        alpha = theta[blocks["alpha"]] if self.with_delta else None
        return alpha, nu

    def probability(self, theta, panel, t):
        x = self.design.rows(panel, t)
        alpha, nu = self.split(theta, panel)
        baseline = normal_cdf(x @ nu)
        if not self.with_delta:
            return baseline
        delta = normal_cdf(x @ alpha)
        return baseline * (1.0 - delta) + panel.z[:, t] * delta

    def gradient(self, theta, panel, t):
        x = self.design.rows(panel, t)
        alpha, nu = self.split(theta, panel)
        nu_index = x @ nu
        if not self.with_delta:
            return normal_pdf(nu_index)[:, None] * x

        alpha_index = x @ alpha
        d_alpha = (panel.z[:, t] - normal_cdf(nu_index)) * normal_pdf(alpha_index)
        d_nu = (1.0 - normal_cdf(alpha_index)) * normal_pdf(nu_index)
        return np.hstack([d_alpha[:, None] * x, d_nu[:, None] * x])

    def hessian(self, theta, panel, t):
        x = self.design.rows(panel, t)
        alpha, nu = self.split(theta, panel)
        nu_index = x @ nu
        outer = np.einsum("ij,ik->ijk", x, x)
        if not self.with_delta:
            return (-normal_pdf(nu_index) * nu_index)[:, None, None] * outer

        alpha_index = x @ alpha
        aa = -(panel.z[:, t] - normal_cdf(nu_index)) * normal_pdf(alpha_index) * alpha_index
        an = -normal_pdf(nu_index) * normal_pdf(alpha_index)
        nn = -(1.0 - normal_cdf(alpha_index)) * normal_pdf(nu_index) * nu_index
        top = np.concatenate([aa[:, None, None] * outer, an[:, None, None] * outer], axis=2)
        bottom = np.concatenate([an[:, None, None] * outer, nn[:, None, None] * outer], axis=2)
        return np.concatenate([top, bottom], axis=1)

    def delta(self, fit, panel, t):
        """Signed Δ_t at the observed A_t, Δ_t(0) = −Δ_t(1)."""
        delta = normal_cdf(self.design.rows(panel, t) @ fit.param("alpha"))
        return np.where(panel.a[:, t] == 1.0, delta, -delta)

    def log_delta_gradient(self, fit, panel, t):
        x = self.design.rows(panel, t)
        index = x @ fit.param("alpha")
        gradient = np.zeros((panel.n, fit.dim))
        gradient[:, fit.blocks["alpha"]] = (normal_pdf(index) / normal_cdf(index))[:, None] * x
        return gradient

    def delta_rows(self, fit, panel, t) -> np.ndarray:
        """Unsigned Δ_t = Φ(αᵀx_t)."""
        return normal_cdf(self.design.rows(panel, t) @ fit.param("alpha"))


class MarkovTreatmentModel(BernoulliModel):
    """
    Observed treatment model of the binary Markov chain with known mixing
    probability q:

        P(A = 1 | L = l, Z = z) = q/2 + (1 − q)(p_L if l = 1 else 1 − p_L)
                                  + (−1)^{1−z} δ_l / 2.

    The δ term is what identifies δ; it is absent from the U-marginal
    display of the same model in some write-ups.
    """
    name = "markov"

    def __init__(self, q: float):
        if not 0.0 < q < 1.0:
            raise InvalidParams(f"mixing probability q must lie in (0, 1), got {q}")
        self.q = q

    def options(self):
        return {"q": self.q}

    def names(self, panel):
        return ["delta[0]", "delta[1]", "p_L[0]"]

    def blocks(self, panel):
        return {"delta": slice(0, 2), "p_L": slice(2, 3)}

    def initial(self, panel):
        return np.array([0.1, 0.1, 0.5])

    def response(self, panel, t):
        return panel.a[:, t]

    def probability(self, theta, panel, t):
        delta0, delta1, p_l = theta
        l = panel.l[:, t, 0]
        sign = _signed(panel.z[:, t])
        concordant = np.where(l == 1.0, p_l, 1.0 - p_l)
        delta = np.where(l == 1.0, delta1, delta0)
        return self.q / 2.0 + (1.0 - self.q) * concordant + sign * delta / 2.0

    def gradient(self, theta, panel, t):
        l = panel.l[:, t, 0]
        sign = _signed(panel.z[:, t])
        return np.column_stack([
            sign * (1.0 - l) / 2.0,
            sign * l / 2.0,
            (1.0 - self.q) * (2.0 * l - 1.0),
        ])

    def check_estimates(self, theta, panel):
        delta0, delta1, p_l = theta
        if not 0.0 < p_l < 1.0:
            raise InvalidParams(f"estimated p_L={p_l:.4g} leaves (0, 1)")
        if delta0 == 0.0 or delta1 == 0.0:
            raise InvalidParams("estimated delta is exactly zero")

    def delta(self, fit, panel, t):
        delta0, delta1, _ = fit.theta
        l = panel.l[:, t, 0]
        delta = np.where(l == 1.0, delta1, delta0)
        return np.where(panel.a[:, t] == 1.0, delta, -delta)

    def log_delta_gradient(self, fit, panel, t):
        delta0, delta1, _ = fit.theta
        l = panel.l[:, t, 0]
        gradient = np.zeros((panel.n, fit.dim))
        gradient[:, 0] = np.where(l == 0.0, 1.0 / delta0, 0.0)
        gradient[:, 1] = np.where(l == 1.0, 1.0 / delta1, 0.0)
        return gradient


class LogisticInstrumentModel:
    """
    f_{Z_t}(1 | history) = logistic(γᵀx_t), fitted with statsmodels Logit
    on the pooled periods.
    """
    name = "instrument"

    def __init__(self, covariate_spec: CovariateSpec = None, per_time: bool = False):
        self.design = CovariateDesign(covariate_spec or CovariateSpec(lagged_treatment=True), per_time)

    def _stacked(self, panel):
        exog = np.vstack([self.design.rows(panel, t) for t in range(panel.T)])
        endog = np.concatenate([panel.z[:, t] for t in range(panel.T)])
        return endog, exog

    def probability(self, theta, panel, t):
        return 1.0 / (1.0 + np.exp(-(self.design.rows(panel, t) @ theta)))

    def fit(self, panel: LongitudinalPanel, cfg: NewtonConfig = NewtonConfig()) -> NuisanceFit:
        endog, exog = self._stacked(panel)
        model = sm.Logit(endog, exog)

        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                for category in SEPARATION_WARNINGS:
                    warnings.simplefilter("error", category)
                result = model.fit(method="newton", maxiter=cfg.max_iterations, disp=0,
                                   tol=cfg.tolerance)
        except SEPARATION_SIGNALS as e:
            raise SeparationDetected(f"instrument model: {e}") from e

        theta = np.asarray(result.params, dtype=float)
        if not result.mle_retvals.get("converged", False):
            raise NoConvergence("instrument model did not converge")

        fitted = model.predict(theta)
        if np.any(fitted < SEPARATION_TOLERANCE) or np.any(fitted > 1.0 - SEPARATION_TOLERANCE):
            raise SeparationDetected("instrument model: fitted probabilities reach the boundary")
        check_perfect_prediction(self.name, endog, fitted)

        n = panel.n
        observation_scores = model.score_obs(theta)
        scores = observation_scores.reshape(panel.T, n, -1).sum(axis=0)
        information = -model.hessian(theta) / n

        return NuisanceFit(
            model=self.name,
            names=tuple(self.design.names(panel, "gamma")),
            theta=theta,
            blocks={"gamma": slice(0, len(theta))},
            scores=scores,
            information=(information + information.T) / 2.0,
            converged=True,
            loglik=float(result.llf / n),
            options={"per_time": self.design.per_time},
        )

    def density(self, fit, panel, t):
        p = self.probability(fit.param("gamma"), panel, t)
        return np.where(panel.z[:, t] == 1.0, p, 1.0 - p)

    def log_density_gradient(self, fit, panel, t):
        p = self.probability(fit.param("gamma"), panel, t)
        residual = panel.z[:, t] - p
        gradient = np.zeros((panel.n, fit.dim))
        gradient[:, fit.blocks["gamma"]] = residual[:, None] * self.design.rows(panel, t)
        return gradient


class KnownInstrumentModel:
    """Randomised instrument with known P(Z_t = 1)."""
    name = "known-instrument"

    def __init__(self, probability: float = 0.5):
        if not 0.0 < probability < 1.0:
            raise InvalidParams(f"instrument probability must lie in (0, 1), got {probability}")
        self.p = probability

    def fit(self, panel, cfg=None) -> None:
        return None

    def density(self, fit, panel, t):
        return np.where(panel.z[:, t] == 1.0, self.p, 1.0 - self.p)

    def log_density_gradient(self, fit, panel, t):
        return np.zeros((panel.n, 0))


def fit_probit_treatment(panel: LongitudinalPanel, covariate_spec: CovariateSpec = None,
                         per_time: bool = False, cfg: NewtonConfig = NewtonConfig()) -> NuisanceFit:
    if not panel.binary_treatment:
        raise InvalidParams("the probit treatment model needs a binary treatment")
    return ProbitTreatmentModel(covariate_spec, per_time=per_time).fit(panel, cfg)

def fit_logistic_iv_density(panel: LongitudinalPanel, covariate_spec: CovariateSpec = None,
                            per_time: bool = False, cfg: NewtonConfig = NewtonConfig()) -> NuisanceFit:
    return LogisticInstrumentModel(covariate_spec, per_time).fit(panel, cfg)

def fit_markov_treatment(panel: LongitudinalPanel, q_known: float,
                         cfg: NewtonConfig = NewtonConfig()) -> NuisanceFit:
    if not panel.binary_treatment:
        raise InvalidParams("the Markov treatment model needs a binary treatment")
    return MarkovTreatmentModel(q_known).fit(panel, cfg)

def delta_from_fit(fit: NuisanceFit, history_covariates) -> np.ndarray:
    """Δ = Φ(αᵀx) for covariate rows x (a single row or a matrix of rows)."""
    if not fit.converged:
        raise NoConvergence("cannot evaluate delta from an unconverged fit")
    x = np.atleast_2d(np.asarray(history_covariates, dtype=float))
    delta = normal_cdf(x @ fit.param("alpha"))
    return delta[0] if np.ndim(history_covariates) == 1 else delta
