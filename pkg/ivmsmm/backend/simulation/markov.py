# markov.py
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

import itertools
import math
from dataclasses import dataclass

import numpy as np

from ivmsmm.backend.models.panel import LongitudinalPanel, MsmmSpec
from ivmsmm.backend.simulation.common import Dgp, InvalidParams, at_observed, bernoulli
from ivmsmm.backend.utils.common import make_rng

# Order of the (L, U) states used when drawing the next covariates
STATES = np.array(list(itertools.product((0.0, 1.0), repeat=2)))


@dataclass(frozen=True)
class MarkovDgpParams:
    q: float = 0.5
    p_L: float = 0.7
    p_U: float = 0.7
    delta0: float = 0.2
    delta1: float = 0.3
    beta: float = 1.0
    T: int = 3
    tau: float = 1.0
    rho: float = 1.0


@dataclass(frozen=True)
class TwoStateChain:
    """Draws of A_0 → L_1 → A_1 → ... → L_T → A_T."""
    a_initial: np.ndarray
    l: np.ndarray
    a: np.ndarray


def concordance(p, x, y):
    """p when x == y, 1 − p otherwise."""
    return np.where(x == y, p, 1.0 - p)


class MarkovDgp(Dgp):
    """
    Binary (L, U, Z) → A → (L, U, Z) chain where U confounds and Z shifts
    the treatment probability by ±δ_L/2.
    """
    name = "markov"
    params_class = MarkovDgpParams

    @property
    def beta(self) -> np.ndarray:
        return np.array([self.params.beta])

    @property
    def spec(self) -> MsmmSpec:
        return MsmmSpec(intercept=False)

    @property
    def delta(self) -> np.ndarray:
        return np.array([self.params.delta0, self.params.delta1])

    def check_params(self):
        p = self.params
        if p.T < 1:
            raise InvalidParams(f"T must be at least 1, got {p.T}")
        for name in ("q", "p_L", "p_U"):
            value = getattr(p, name)
            if not 0.0 < value < 1.0:
                raise InvalidParams(f"{name} must lie in (0, 1), got {value}")
        if p.delta0 == 0.0 or p.delta1 == 0.0:
            raise InvalidParams("delta0 and delta1 must be nonzero for the instrument to be relevant")
        if not all(math.isfinite(v) for v in (p.delta0, p.delta1, p.beta, p.tau, p.rho)):
            raise InvalidParams("Markov DGP parameters must be finite")

        for l, u, z in itertools.product((0.0, 1.0), repeat=3):
            probability = self.treatment_probability(np.array(l), np.array(u), np.array(z))
            if not 0.0 < probability < 1.0:
                raise InvalidParams(
                    f"P(A=1 | L={l:g}, U={u:g}, Z={z:g}) = {float(probability):.4g} leaves (0, 1)"
                )

    def baseline_probability(self, a, l, u):
        """P(A = a | L = l, U = u) without the instrument shift."""
        p = self.params
        return (1.0 - p.q) * concordance(p.p_L, l, a) + p.q * concordance(p.p_U, u, a)

    def treatment_probability(self, l, u, z):
        """P(A = 1 | L = l, U = u, Z = z)."""
        sign = np.where(z == 1.0, 1.0, -1.0)
        return self.baseline_probability(1.0, l, u) + sign * self.delta[l.astype(int)] / 2.0

    def expected_l(self, previous):
        p = self.params
        return (1.0 - p.q) * concordance(p.p_L, previous, 1.0) + p.q / 2.0

    def expected_u(self, previous):
        p = self.params
        return p.q * concordance(p.p_U, previous, 1.0) + (1.0 - p.q) / 2.0

    def _draw(self, n, rng, forced_treatment):
        p = self.params
        T = p.T
        a = np.zeros((n, T))
        z = np.zeros((n, T))
        l = np.zeros((n, T))
        u = np.zeros((n, T))
        confounding = np.zeros(n)

        l[:, 0] = bernoulli(rng, np.full(n, 0.5))
        u[:, 0] = bernoulli(rng, np.full(n, 0.5))

        for t in range(T):
            z[:, t] = bernoulli(rng, np.full(n, 0.5))
            draw = bernoulli(rng, self.treatment_probability(l[:, t], u[:, t], z[:, t]))
            a[:, t] = draw if forced_treatment is None else forced_treatment[:, t]

            if t == 0:
                mean_l = mean_u = np.full(n, 0.5)
            else:
                mean_l = self.expected_l(a[:, t - 1])
                mean_u = self.expected_u(a[:, t - 1])
            confounding += p.tau * (l[:, t] - mean_l) + p.rho * (u[:, t] - mean_u)

            if t + 1 < T:
                # P(L', U' | A = a) = P(A = a | L', U') / 2
                weights = self.baseline_probability(
                    a[:, t][:, None], STATES[None, :, 0], STATES[None, :, 1]
                ) / 2.0
                cumulative = np.cumsum(weights, axis=1)
                draws = rng.random(n)[:, None]
                index = np.minimum((draws > cumulative).sum(axis=1), len(STATES) - 1)
                l[:, t + 1] = STATES[index, 0]
                u[:, t + 1] = STATES[index, 1]

        y = confounding + p.beta * a.sum(axis=1) + rng.standard_normal(n)
        panel = LongitudinalPanel(a=a, z=z, l=l, y=y, u=u)
        return panel, confounding

    def compliance_delta(self, t, panel):
        delta = self.delta[panel.l[:, t, 0].astype(int)]
        return np.where(panel.a[:, t] == 1.0, delta, -delta)

    def oracle_propensity(self, t, panel):
        probability = self.treatment_probability(panel.l[:, t, 0], panel.u[:, t, 0], panel.z[:, t])
        return at_observed(probability, panel.a[:, t])

    def observed_propensity(self, t, panel):
        p = self.params
        l, z = panel.l[:, t, 0], panel.z[:, t]
        sign = np.where(z == 1.0, 1.0, -1.0)
        probability = p.q / 2.0 + (1.0 - p.q) * concordance(p.p_L, l, 1.0) + sign * self.delta[l.astype(int)] / 2.0
        return at_observed(probability, panel.a[:, t])


def simulate_markov(params: MarkovDgpParams, n: int, seed: int, replication: int = 0,
                    forced_treatment=None):
    return MarkovDgp(params).simulate(n, seed, replication, forced_treatment)

def sample_two_state_chain(p_LA: float, p_AL: float, n: int, T: int, seed: int,
                           replication: int = 0) -> TwoStateChain:
    """
    Chain without unmeasured confounding: L_t copies A_{t-1} with
    probability p_AL and A_t copies L_t with probability p_LA.
    """
    for name, value in (("p_LA", p_LA), ("p_AL", p_AL)):
        if not 0.0 < value < 1.0:
            raise InvalidParams(f"{name} must lie in (0, 1), got {value}")

    rng = make_rng(seed, replication, 0)
    a_initial = bernoulli(rng, np.full(n, 0.5))
    l = np.zeros((n, T))
    a = np.zeros((n, T))
    previous = a_initial

    for t in range(T):
        keep = rng.random(n) < p_AL
        l[:, t] = np.where(keep, previous, 1.0 - previous)
        keep = rng.random(n) < p_LA
        a[:, t] = np.where(keep, l[:, t], 1.0 - l[:, t])
        previous = a[:, t]

    return TwoStateChain(a_initial, l, a)
