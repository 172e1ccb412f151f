# markov_analysis.py
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
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np
import pandas as pd

from ivmsmm.backend.logger import Logger
from ivmsmm.backend.simulation.common import InvalidParams, bernoulli
from ivmsmm.backend.simulation.markov import (
    MarkovDgpParams,
    concordance,
    sample_two_state_chain,
    simulate_markov,
)
from ivmsmm.backend.utils.common import make_rng
from ivmsmm.backend.utils.numerics import eig2x2

logging = Logger("markov_analysis")


class GrowthModel(Enum):
    SRA_UNSTAB = "sra-unstab"
    SRA_STAB = "sra-stab"
    IV_UNSTAB = "iv-unstab"
    IV_STAB = "iv-stab"


@dataclass(frozen=True)
class GrowthReport:
    model: GrowthModel
    lambda1: float
    lambda2: float = 0.0
    second_moment: Optional[float] = None
    T: Optional[int] = None
    omega: Optional[float] = None
    kappa: Optional[float] = None
    recurrence_matrix: Optional[np.ndarray] = None
    bound: Optional[float] = None
    bound_holds: Optional[bool] = None
    extras: dict = field(default_factory=dict)


def _check_probability(**values):
    for name, value in values.items():
        if not 0.0 < value < 1.0:
            raise InvalidParams(f"{name} must lie in (0, 1), got {value}")

def _check_deltas(delta0, delta1):
    if delta0 == 0.0 or delta1 == 0.0:
        raise InvalidParams("delta0 and delta1 must be nonzero")

def binary_variance(p: float) -> float:
    return p * (1.0 - p)


# SRA weights on the two-state chain

def sra_unstab_second_moment(p_LA: float, T: int) -> float:
    _check_probability(p_LA=p_LA)
    return binary_variance(p_LA) ** (-T)

def sra_stab_growth_factor(p_LA: float, p_AL: float) -> float:
    _check_probability(p_LA=p_LA, p_AL=p_AL)
    ratio = binary_variance(p_AL) / binary_variance(p_LA)
    return 1.0 + 4.0 * ratio * (p_LA - 0.5) ** 2

def sra_stab_second_moment(p_LA: float, p_AL: float, T: int) -> float:
    return sra_stab_growth_factor(p_LA, p_AL) ** T

def sra_variance_approx(p_LA: float, T: int, lam: float, sigma2: float) -> float:
    """
    First-order variance of sqrt(n)(β̂ − β) for the unstabilized SRA
    estimator with h = ΣA_t and outcome λΣ(L_t − E(L_t | A_{t-1})) + βΣA_t + ε.
    """
    _check_probability(p_LA=p_LA)
    if T < 1:
        raise InvalidParams("T must be at least 1")
    rho = binary_variance(p_LA)
    return (lam ** 2 + sigma2 / (T * rho)) / ((T + 1) * (4.0 * rho) ** (T - 1))

def enumerate_sra_moment(p_LA: float, p_AL: float, T: int, stabilized: bool = False) -> float:
    """E(1/W̄²) by summing over every path (A_0, L_1, A_1, ..., L_T, A_T)."""
    _check_probability(p_LA=p_LA, p_AL=p_AL)
    stay = p_LA * p_AL + (1 - p_LA) * (1 - p_AL)
    total = 0.0

    for path in itertools.product((0, 1), repeat=2 * T + 1):
        a_previous = path[0]
        probability = 0.5
        inverse = 1.0
        for t in range(T):
            l, a = path[1 + 2 * t], path[2 + 2 * t]
            p_l = p_AL if l == a_previous else 1 - p_AL
            p_a = p_LA if a == l else 1 - p_LA
            probability *= p_l * p_a
            factor = 1.0 / p_a
            if stabilized:
                factor *= stay if a == a_previous else 1 - stay
            inverse *= factor
            a_previous = a
        total += probability * inverse ** 2

    return total

def sra_variance_mc(p_LA: float, T: int, lam: float, sigma2: float, n: int, replications: int,
                    seed: int, p_AL: float = 0.5, beta: float = 1.0) -> float:
    """Monte Carlo variance of sqrt(n)(β̂ − β) for the unstabilized SRA estimator."""
    estimates = np.empty(replications)
    for r in range(replications):
        chain = sample_two_state_chain(p_LA, p_AL, n, T, seed, replication=r)
        previous = np.column_stack([chain.a_initial, chain.a[:, :-1]])
        expected_l = np.where(previous == 1.0, p_AL, 1.0 - p_AL)
        noise = make_rng(seed, r, 1).standard_normal(n) * math.sqrt(sigma2)

        total = chain.a.sum(axis=1)
        y = lam * (chain.l - expected_l).sum(axis=1) + beta * total + noise
        inverse = np.prod(1.0 / concordance(p_LA, chain.a, chain.l), axis=1)
        estimates[r] = np.sum(total * y * inverse) / np.sum(total * total * inverse)

    return float(n * np.var(estimates, ddof=1))


# IV weights

def omega_kappa(delta0: float, delta1: float) -> tuple:
    """ω = 1/(δ0δ1), κ = 1/δ0² − 1/δ1²."""
    _check_deltas(delta0, delta1)
    return 1.0 / (delta0 * delta1), 1.0 / delta0 ** 2 - 1.0 / delta1 ** 2

def iv_recurrence_matrix(p: float, delta0: float, delta1: float) -> np.ndarray:
    return np.array([
        [p / delta0 ** 2, (1 - p) / delta1 ** 2],
        [(1 - p) / delta0 ** 2, p / delta1 ** 2],
    ])

def iv_unstab_growth(p: float, delta0: float, delta1: float) -> GrowthReport:
    _check_probability(p=p)
    omega, kappa = omega_kappa(delta0, delta1)
    total = 1.0 / delta0 ** 2 + 1.0 / delta1 ** 2
    discriminant = p ** 2 * total ** 2 / 4.0 - (2 * p - 1) * omega ** 2
    lambda1 = p * total / 2.0 + math.sqrt(max(discriminant, 0.0))
    lambda2 = p * total / 2.0 - math.sqrt(max(discriminant, 0.0))

    # λ1 ≤ p sqrt(κ² + 4ω²) only when p ≥ 1/2
    bound = p * math.sqrt(kappa ** 2 + 4 * omega ** 2)
    return GrowthReport(
        GrowthModel.IV_UNSTAB, lambda1, lambda2, omega=omega, kappa=kappa,
        recurrence_matrix=iv_recurrence_matrix(p, delta0, delta1),
        bound=bound, bound_holds=bool(lambda1 <= bound * (1 + 1e-12)),
    )

def iv_exact_second_moment(p: float, delta0: float, delta1: float, T: int) -> float:
    """
    E(Π_t δ_{L_t}^{-2}) for the symmetric L chain with stay probability p
    and L_1 uniform, from φ_t = P φ_{t+1}, φ_{T+1} = (1, 1).
    """
    _check_probability(p=p)
    _check_deltas(delta0, delta1)
    matrix = iv_recurrence_matrix(p, delta0, delta1)
    phi = np.ones(2)
    for _ in range(T - 1):
        phi = matrix @ phi
    return float(phi[0] / delta0 ** 2 / 2 + phi[1] / delta1 ** 2 / 2)

def enumerate_iv_moment(p: float, delta0: float, delta1: float, T: int) -> float:
    deltas = (delta0, delta1)
    total = 0.0
    for path in itertools.product((0, 1), repeat=T):
        probability = 0.5
        for previous, current in zip(path, path[1:]):
            probability *= p if previous == current else 1 - p
        total += probability * np.prod([deltas[l] ** -2.0 for l in path])
    return float(total)

def iv_weight_moment_mc(p: float, delta0: float, delta1: float, T: int, n: int,
                        seed: int, replication: int = 0) -> tuple:
    """Monte Carlo mean and standard error of Π_t δ_{L_t}^{-2}."""
    rng = make_rng(seed, replication, 0)
    deltas = np.array([delta0, delta1])
    l = bernoulli(rng, np.full(n, 0.5))
    values = deltas[l.astype(int)] ** -2.0
    for _ in range(T - 1):
        l = np.where(rng.random(n) < p, l, 1.0 - l)
        values = values * deltas[l.astype(int)] ** -2.0
    return float(values.mean()), float(values.std(ddof=1) / math.sqrt(n))


# Stabilized IV weights

def default_gamma(p_L: float, delta0: float, delta1: float, normalize: bool = True) -> tuple:
    """γ_a = p_L δ_a + (1 − p_L) δ_{1−a}, scaled to γ0 + γ1 = 1 when `normalize`."""
    gamma0 = p_L * delta0 + (1 - p_L) * delta1
    gamma1 = p_L * delta1 + (1 - p_L) * delta0
    if not normalize:
        return gamma0, gamma1

    total = gamma0 + gamma1
    if total == 0.0:
        raise InvalidParams("stabilizers sum to zero and cannot be normalized")
    return gamma0 / total, gamma1 / total

def iv_stab_recurrence_matrix(p_LA, p_AL, delta0, delta1, gamma0, gamma1) -> np.ndarray:
    """
    K[l, l'] = Σ_a P(A = a | L = l) P(L' = l' | A = a) γ_a² / δ_{l'}².
    """
    stay = p_LA * p_AL
    flip = (1 - p_LA) * (1 - p_AL)
    cross = p_LA * (1 - p_AL)
    reverse = p_AL * (1 - p_LA)
    g0, g1 = gamma0 ** 2, gamma1 ** 2
    return np.array([
        [(stay * g0 + flip * g1) / delta0 ** 2, (cross * g0 + reverse * g1) / delta1 ** 2],
        [(cross * g1 + reverse * g0) / delta0 ** 2, (stay * g1 + flip * g0) / delta1 ** 2],
    ])

def iv_stab_growth(p_LA: float, p_AL: float, delta0: float, delta1: float,
                   gamma0: float, gamma1: float) -> GrowthReport:
    _check_probability(p_LA=p_LA, p_AL=p_AL)
    omega, kappa = omega_kappa(delta0, delta1)
    total = gamma0 + gamma1
    if gamma0 == 0.0 and gamma1 == 0.0 or total == 0.0:
        raise InvalidParams("stabilizers must not sum to zero")
    g0, g1 = gamma0 / total, gamma1 / total

    matrix = iv_stab_recurrence_matrix(p_LA, p_AL, delta0, delta1, g0, g1)
    lambda1, lambda2 = eig2x2(matrix)
    trace = float(np.trace(matrix))
    det = float(np.linalg.det(matrix))

    stay = p_LA * p_AL
    flip = (1 - p_LA) * (1 - p_AL)
    spread = math.sqrt(kappa ** 2 + 4 * omega ** 2)
    omega_term = spread * (g0 ** 2 + g1 ** 2) * (stay + flip) / 4.0
    kappa_term = kappa * (g0 - g1) * (stay - flip) / 4.0
    half = omega_term + kappa_term
    rewritten = half * (1.0 + math.sqrt(max(1.0 - det / half ** 2, 0.0)))

    return GrowthReport(
        GrowthModel.IV_STAB, lambda1, lambda2, omega=omega, kappa=kappa,
        recurrence_matrix=matrix,
        extras={
            "trace": trace, "det": det, "gamma_raw": (gamma0, gamma1), "gamma": (g0, g1),
            "omega_term": omega_term, "kappa_term": kappa_term, "lambda1_rewritten": rewritten,
        },
    )

def iv_stab_exact_second_moment(p_LA, p_AL, delta0, delta1, gamma0, gamma1, T: int) -> float:
    """E(Π_t γ²_{A_{t-1}} / δ²_{L_t}) on the two-state chain with A_0 uniform."""
    matrix = iv_stab_recurrence_matrix(p_LA, p_AL, delta0, delta1, gamma0, gamma1)
    phi = np.ones(2)
    for _ in range(T - 1):
        phi = matrix @ phi

    deltas = (delta0, delta1)
    gammas = (gamma0, gamma1)
    total = 0.0
    for a0, l1 in itertools.product((0, 1), repeat=2):
        p_l = p_AL if l1 == a0 else 1 - p_AL
        total += 0.5 * p_l * gammas[a0] ** 2 / deltas[l1] ** 2 * phi[l1]
    return float(total)

def iv_stab_moment_mc(p_LA, p_AL, delta0, delta1, gamma0, gamma1, T, n, seed, replication=0) -> tuple:
    chain = sample_two_state_chain(p_LA, p_AL, n, T, seed, replication)
    previous = np.column_stack([chain.a_initial, chain.a[:, :-1]]).astype(int)
    deltas = np.array([delta0, delta1])
    gammas = np.array([gamma0, gamma1])
    values = np.prod(gammas[previous] ** 2 / deltas[chain.l.astype(int)] ** 2, axis=1)
    return float(values.mean()), float(values.std(ddof=1) / math.sqrt(n))

def sra_moment_mc(p_LA, p_AL, T, n, seed, stabilized=False, replication=0) -> tuple:
    chain = sample_two_state_chain(p_LA, p_AL, n, T, seed, replication)
    inverse = 1.0 / concordance(p_LA, chain.a, chain.l)
    if stabilized:
        previous = np.column_stack([chain.a_initial, chain.a[:, :-1]])
        stay = p_LA * p_AL + (1 - p_LA) * (1 - p_AL)
        inverse = inverse * concordance(stay, chain.a, previous)
    values = np.prod(inverse, axis=1) ** 2
    return float(values.mean()), float(values.std(ddof=1) / math.sqrt(n))

def estimate_back_transition(params: MarkovDgpParams, n: int, seed: int) -> float:
    """Monte Carlo P(L_{t-1} = 1 | L_t = 1) pooled over periods of a Markov DGP."""
    if params.T < 2:
        raise InvalidParams("the back-transition needs at least two periods")
    l = simulate_markov(params, n, seed).panel.l[:, :, 0]
    current, previous = l[:, 1:], l[:, :-1]
    ones = current == 1.0
    return float(previous[ones].mean())


# Sweeps

SWEEP_PARAMETERS = {
    GrowthModel.SRA_UNSTAB: ("p_LA",),
    GrowthModel.SRA_STAB: ("p_LA", "p_AL"),
    GrowthModel.IV_UNSTAB: ("p", "delta0", "delta1"),
    GrowthModel.IV_STAB: ("p_LA", "p_AL", "delta0", "delta1", "gamma0", "gamma1"),
}

def growth_point(model: GrowthModel, values: dict, T: int, mc_n: int = 0, seed: int = 0,
                 replication: int = 0) -> dict:
    """One sweep row: analytic second moment and λ1, plus MC columns when mc_n > 0."""
    v = values
    if model is GrowthModel.SRA_UNSTAB:
        moment = sra_unstab_second_moment(v["p_LA"], T)
        lambda1 = 1.0 / binary_variance(v["p_LA"])
        mc = lambda: sra_moment_mc(v["p_LA"], v.get("p_AL", 0.5), T, mc_n, seed, False, replication)
    elif model is GrowthModel.SRA_STAB:
        moment = sra_stab_second_moment(v["p_LA"], v["p_AL"], T)
        lambda1 = sra_stab_growth_factor(v["p_LA"], v["p_AL"])
        mc = lambda: sra_moment_mc(v["p_LA"], v["p_AL"], T, mc_n, seed, True, replication)
    elif model is GrowthModel.IV_UNSTAB:
        moment = iv_exact_second_moment(v["p"], v["delta0"], v["delta1"], T)
        lambda1 = iv_unstab_growth(v["p"], v["delta0"], v["delta1"]).lambda1
        mc = lambda: iv_weight_moment_mc(v["p"], v["delta0"], v["delta1"], T, mc_n, seed, replication)
    else:
        args = [v[name] for name in SWEEP_PARAMETERS[model]]
        report = iv_stab_growth(*args)
        g0, g1 = report.extras["gamma"]
        moment = iv_stab_exact_second_moment(*args[:4], g0, g1, T)
        lambda1 = report.lambda1
        mc = lambda: iv_stab_moment_mc(*args[:4], g0, g1, T, mc_n, seed, replication)

    row = {"model": model.value}
    row.update({name: v[name] for name in SWEEP_PARAMETERS[model]})
    row.update({"T": T, "second_moment": moment, "lambda1": lambda1})
    if mc_n > 0:
        row["mc_second_moment"], row["mc_se"] = mc()
    return row

def growth_sweep(model: GrowthModel, grid: dict, T_values, mc_n: int = 0, seed: int = 0) -> pd.DataFrame:
    """
    Rows over the cartesian product of `grid` (parameter name to list of
    values) and `T_values`. Every MC row uses its own substream.
    """
    names = SWEEP_PARAMETERS[model]
    missing = [name for name in names if name not in grid]
    if missing:
        raise InvalidParams(f"{model.value} sweep needs values for: {', '.join(missing)}")

    rows = []
    for index, combination in enumerate(itertools.product(*[grid[name] for name in names], T_values)):
        values = dict(zip(names, combination[:-1]))
        rows.append(growth_point(model, values, int(combination[-1]), mc_n, seed, index))
    logging.debug(f"{model.value} sweep produced {len(rows)} rows")

    frame = pd.DataFrame(rows)
    frame["seed"] = seed
    return frame
