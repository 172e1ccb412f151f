# linear.py
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

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from ivmsmm.backend.models.panel import LongitudinalPanel, MsmmSpec
from ivmsmm.backend.simulation.common import Dgp, InvalidParams, at_observed, bernoulli
from ivmsmm.backend.utils.numerics import normal_cdf


@dataclass(frozen=True)
class LinearDgpParams:
    lambda0: float = 0.5
    lambda1: float = 0.5
    alpha0: float = 0.3
    alpha1: float = 0.3
    nu0: float = -0.2
    nu1: float = 0.2
    nu2: float = 0.2
    tau: Union[float, tuple] = 1.0
    rho: Union[float, tuple] = 1.0
    beta0: float = 0.0
    beta1: float = 1.0
    T: int = 2

    def loading(self, values, t: int) -> float:
        if isinstance(values, tuple):
            return values[t]
        return values


class LinearDgp(Dgp):
    """
    Linear-Gaussian covariates with a probit compliance model:

        L_t = λ0 + λ1 A_{t-1} + ε_t,  Δ_t = Φ(α0 + α1 L_t),
        P(A_t = 1 | L, U, Z) = Φ(ν0 + ν1 L_t + ν2 U_t)(1 − Δ_t) + Z_t Δ_t.
    """
    name = "linear"
    params_class = LinearDgpParams

    @property
    def beta(self) -> np.ndarray:
        return np.array([self.params.beta0, self.params.beta1])

    @property
    def spec(self) -> MsmmSpec:
        return MsmmSpec()

    def check_params(self):
        p = self.params
        if p.T < 1:
            raise InvalidParams(f"T must be at least 1, got {p.T}")

        for name in ("tau", "rho"):
            values = getattr(p, name)
            if isinstance(values, tuple) and len(values) != p.T:
                raise InvalidParams(f"{name} has {len(values)} loadings for T={p.T}")

        scalars = [p.lambda0, p.lambda1, p.alpha0, p.alpha1, p.nu0, p.nu1, p.nu2, p.beta0, p.beta1]
        loadings = [v for name in ("tau", "rho") for v in np.atleast_1d(getattr(p, name))]
        if not all(math.isfinite(v) for v in scalars + loadings):
            raise InvalidParams("linear DGP parameters must be finite")

        # Φ saturates to exactly 0 or 1 in double precision beyond ~±38
        if abs(p.alpha0) + abs(p.alpha1) * (abs(p.lambda0) + abs(p.lambda1) + 8.0) > 37.0:
            raise InvalidParams("implied compliance probabilities leave (0, 1)")

    def delta_at(self, l) -> np.ndarray:
        return normal_cdf(self.params.alpha0 + self.params.alpha1 * l)

    def _draw(self, n, rng, forced_treatment):
        p = self.params
        T = p.T
        a = np.zeros((n, T))
        z = np.zeros((n, T))
        l = np.zeros((n, T))
        u = np.zeros((n, T))
        confounding = np.zeros(n)
        previous = np.zeros(n)

        for t in range(T):
            u[:, t] = rng.standard_normal(n)
            z[:, t] = bernoulli(rng, np.full(n, 0.5))
            expected_l = p.lambda0 + p.lambda1 * previous
            l[:, t] = expected_l + rng.standard_normal(n)

            delta = self.delta_at(l[:, t])
            baseline = normal_cdf(p.nu0 + p.nu1 * l[:, t] + p.nu2 * u[:, t])
            probability = baseline * (1.0 - delta) + z[:, t] * delta
            draw = bernoulli(rng, probability)
            a[:, t] = draw if forced_treatment is None else forced_treatment[:, t]

            confounding += p.loading(p.tau, t) * (l[:, t] - expected_l) + p.loading(p.rho, t) * u[:, t]
            previous = a[:, t]

        y = confounding + p.beta0 + p.beta1 * a.sum(axis=1) + rng.standard_normal(n)
        panel = LongitudinalPanel(a=a, z=z, l=l, y=y, u=u)
        return panel, confounding

    def compliance_delta(self, t, panel):
        delta = self.delta_at(panel.l[:, t, 0])
        return np.where(panel.a[:, t] == 1.0, delta, -delta)

    def oracle_propensity(self, t, panel):
        p = self.params
        delta = self.delta_at(panel.l[:, t, 0])
        baseline = normal_cdf(p.nu0 + p.nu1 * panel.l[:, t, 0] + p.nu2 * panel.u[:, t, 0])
        return at_observed(baseline * (1.0 - delta) + panel.z[:, t] * delta, panel.a[:, t])

    def observed_nu(self) -> np.ndarray:
        """Baseline coefficients after integrating U out of the probit."""
        p = self.params
        scale = math.sqrt(1.0 + p.nu2 ** 2)
        return np.array([p.nu0, p.nu1]) / scale

    def observed_propensity(self, t, panel):
        nu = self.observed_nu()
        delta = self.delta_at(panel.l[:, t, 0])
        baseline = normal_cdf(nu[0] + nu[1] * panel.l[:, t, 0])
        return at_observed(baseline * (1.0 - delta) + panel.z[:, t] * delta, panel.a[:, t])


def simulate_linear(params: LinearDgpParams, n: int, seed: int, replication: int = 0,
                    forced_treatment=None):
    return LinearDgp(params).simulate(n, seed, replication, forced_treatment)
