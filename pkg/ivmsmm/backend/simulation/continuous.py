# continuous.py
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
from functools import lru_cache

import numpy as np
from scipy import integrate

from ivmsmm.backend.logger import Logger
from ivmsmm.backend.models.panel import LongitudinalPanel, MsmmSpec
from ivmsmm.backend.simulation.common import Dgp, InvalidParams, RejectionFailure, bernoulli
from ivmsmm.backend.utils.numerics import normal_pdf

logging = Logger("simulation.continuous")

# Proposals allowed for each treatment draw before the sampler gives up
ATTEMPT_BUDGET = 10 ** 6


@dataclass(frozen=True)
class ContinuousDgpParams:
    beta: float = 2.0
    T: int = 1
    # Restrict (L, U) to the region where f(a | l, u, z=1) is a density
    valid_region_only: bool = False


def upper_u(l):
    return np.minimum(1.0, l / np.maximum(1.0 - l, 1e-300))

def in_valid_region(l, u):
    """0 < l < 1 and l < u < min(1, l / (1 − l)), where the density is nonnegative."""
    l = np.asarray(l, dtype=float)
    u = np.asarray(u, dtype=float)
    return (l > 0.0) & (l < 1.0) & (u > l) & (u < upper_u(l))

def compliance_difference(a, l):
    """Δ(a | l) = φ(a) − φ(a / l) / l."""
    return normal_pdf(a) - normal_pdf(a / l) / l

def treatment_density(a, l, u, z):
    """f(a | l, u, z) = φ(a / u) / u + z Δ(a | l)."""
    return normal_pdf(a / u) / u + z * compliance_difference(a, l)

@lru_cache(maxsize=1)
def valid_region_means() -> tuple:
    """(E L, E U) for (L, U) uniform on the valid region."""
    def upper(l):
        return 1.0 if l >= 0.5 else l / (1.0 - l)

    def area_integral(func):
        value, _ = integrate.dblquad(func, 0.0, 1.0, lambda l: l, upper, epsabs=1e-12, epsrel=1e-12)
        return value

    area = area_integral(lambda u, l: 1.0)
    return area_integral(lambda u, l: l) / area, area_integral(lambda u, l: u) / area


class ContinuousDgp(Dgp):
    """
    Single-period continuous treatment with m_β(a) = βa. Given Z = 0,
    A | U ~ N(0, U²); Z = 1 adds the signed difference Δ(a | L), which
    integrates to 0.

    L and U are uniform on the unit square by default. Where
    f(a | l, u, 1) dips below zero the sampler draws from its positive
    part, so only `valid_region_only` makes the weighting identity exact.
    """
    name = "continuous"
    params_class = ContinuousDgpParams
    binary_treatment = False

    @property
    def beta(self) -> np.ndarray:
        return np.array([self.params.beta])

    @property
    def spec(self) -> MsmmSpec:
        return MsmmSpec(intercept=False)

    def check_params(self):
        if self.params.T != 1:
            raise InvalidParams("the continuous-treatment DGP has a single period")
        if not math.isfinite(self.params.beta):
            raise InvalidParams("beta must be finite")

    def confounder_means(self) -> tuple:
        if self.params.valid_region_only:
            return valid_region_means()
        return 0.5, 0.5

    def _draw_confounders(self, n, rng):
        if not self.params.valid_region_only:
            return rng.random(n), rng.random(n)

        l = np.empty(n)
        u = np.empty(n)
        pending = np.arange(n)
        while pending.size:
            candidate_l = rng.random(pending.size)
            candidate_u = rng.random(pending.size)
            accept = in_valid_region(candidate_l, candidate_u)
            l[pending[accept]] = candidate_l[accept]
            u[pending[accept]] = candidate_u[accept]
            pending = pending[~accept]
        return l, u

    def _draw_treatment(self, l, u, z, rng):
        """
        Rejection sampling from the mixture 0.5 N(0, u²) + 0.5 N(0, 1),
        whose density times 2 bounds f(a | l, u, z). Each proposal is
        accepted with probability at least 1/2.
        """
        n = l.size
        a = np.empty(n)
        attempts = np.zeros(n, dtype=np.int64)
        pending = np.arange(n)

        while pending.size:
            attempts[pending] += 1
            exhausted = attempts[pending] > ATTEMPT_BUDGET
            if np.any(exhausted):
                raise RejectionFailure(
                    f"{np.count_nonzero(exhausted)} treatment draws not accepted after "
                    f"{ATTEMPT_BUDGET} attempts per draw"
                )

            scale = np.where(rng.random(pending.size) < 0.5, u[pending], 1.0)
            candidate = scale * rng.standard_normal(pending.size)
            envelope = normal_pdf(candidate / u[pending]) / u[pending] + normal_pdf(candidate)
            target = treatment_density(candidate, l[pending], u[pending], z[pending])
            accept = rng.random(pending.size) * envelope < target

            a[pending[accept]] = candidate[accept]
            pending = pending[~accept]

        logging.debug(f"Continuous treatment sampled with {attempts.mean():.3g} attempts per draw")
        return a

    def _draw(self, n, rng, forced_treatment):
        l, u = self._draw_confounders(n, rng)
        z = bernoulli(rng, np.full(n, 0.5))
        drawn = self._draw_treatment(l, u, z, rng)
        a = drawn if forced_treatment is None else forced_treatment[:, 0]

        mean_l, mean_u = self.confounder_means()
        confounding = (l - mean_l) + (u - mean_u)
        y = confounding + self.params.beta * a + rng.standard_normal(n)

        panel = LongitudinalPanel(
            a=a[:, None], z=z[:, None], l=l[:, None], y=y, u=u[:, None], binary_treatment=False
        )
        return panel, confounding

    def compliance_delta(self, t, panel):
        return compliance_difference(panel.a[:, t], panel.l[:, t, 0])

    def oracle_propensity(self, t, panel):
        return treatment_density(panel.a[:, t], panel.l[:, t, 0], panel.u[:, t, 0], panel.z[:, t])

    def observed_propensity(self, t, panel):
        raise NotImplementedError("the continuous DGP has no observed-data propensity model")


def simulate_continuous(n: int, seed: int, beta: float = 2.0, replication: int = 0,
                        forced_treatment=None, valid_region_only: bool = False):
    params = ContinuousDgpParams(beta=beta, valid_region_only=valid_region_only)
    return ContinuousDgp(params).simulate(n, seed, replication, forced_treatment)
