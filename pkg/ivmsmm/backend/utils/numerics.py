# numerics.py
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

import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import linalg, special

from ivmsmm.backend.exceptions import IvMsmmError
from ivmsmm.backend.logger import Logger

logging = Logger("numerics")

PIVOT_TOLERANCE = 1e-12
SPECTRUM_TOLERANCE = 1e-12

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


""" Custom exception class """
class SingularMatrix(IvMsmmError):
    pass

class ComplexSpectrum(IvMsmmError):
    pass

class NoConvergence(IvMsmmError):
    pass

class SingularInformation(IvMsmmError):
    pass


@dataclass(frozen=True)
class NewtonConfig:
    tolerance: float = 1e-9
    max_iterations: int = 100
    step_halvings: int = 30

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("Newton tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("Newton needs at least one iteration")


def normal_cdf(x):
    return special.ndtr(x)

def normal_pdf(x):
    x = np.asarray(x, dtype=float)
    return _INV_SQRT_2PI * np.exp(-0.5 * x * x)

def normal_ppf(p):
    return special.ndtri(p)

def solve_linear(a, b) -> np.ndarray:
    """
    Solves `a x = b` by LU with partial pivoting.

    A pivot smaller than 1e-12 times the largest entry of `a` is treated
    as a zero pivot and raises SingularMatrix. `b` may be a vector or a
    matrix of right-hand sides.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"solve_linear expects a square matrix, got shape {a.shape}")
    if b.shape[0] != a.shape[0]:
        raise ValueError("right-hand side does not match the matrix dimension")

    scale = np.max(np.abs(a)) if a.size else 0.0
    if scale == 0.0 or not np.isfinite(scale):
        raise SingularMatrix("matrix is zero or not finite")

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", linalg.LinAlgWarning)
        lu, piv = linalg.lu_factor(a, check_finite=False)

    pivots = np.abs(np.diag(lu))
    if np.min(pivots) < PIVOT_TOLERANCE * scale:
        raise SingularMatrix(f"pivot {np.min(pivots):.3g} below relative tolerance")

    return linalg.lu_solve((lu, piv), b, check_finite=False)

def eig2x2(m) -> tuple:
    """Real eigenvalues of a 2x2 matrix, ordered by decreasing magnitude."""
    m = np.asarray(m, dtype=float)
    trace = m[0, 0] + m[1, 1]
    det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
    half = trace / 2.0
    discriminant = half * half - det

    if discriminant < -SPECTRUM_TOLERANCE * max(1.0, half * half):
        raise ComplexSpectrum(f"discriminant {discriminant:.3g} is negative")

    root = math.sqrt(max(discriminant, 0.0))
    lambda1, lambda2 = half + root, half - root
    if abs(lambda2) > abs(lambda1):
        lambda1, lambda2 = lambda2, lambda1

    return lambda1, lambda2

def newton_maximize(loglik: Callable, score: Callable, information: Callable,
                    init, cfg: NewtonConfig = NewtonConfig()) -> np.ndarray:
    """
    Damped Newton ascent.

    `information` returns the (positive definite) negative Hessian or its
    expectation. Each full step is halved up to `cfg.step_halvings` times
    until the log-likelihood does not decrease.
    """
    theta = np.array(init, dtype=float)
    current = loglik(theta)
    if not np.isfinite(current):
        raise NoConvergence("log-likelihood is not finite at the starting point")

    for iteration in range(cfg.max_iterations):
        gradient = np.atleast_1d(score(theta))
        if np.max(np.abs(gradient)) <= cfg.tolerance:
            logging.debug(f"Newton converged after {iteration} iterations, loglik={current:.10g}")
            return theta

        try:
            step = solve_linear(np.atleast_2d(information(theta)), gradient)
        except SingularMatrix as e:
            raise SingularInformation(str(e)) from e

        slack = 1e-14 * (1.0 + abs(current))
        for halving in range(cfg.step_halvings + 1):
            candidate = theta + step / (2.0 ** halving)
            value = loglik(candidate)
            if np.isfinite(value) and value >= current - slack:
                break
        else:
            raise NoConvergence(
                f"step halving failed at iteration {iteration}, "
                f"score sup-norm {np.max(np.abs(gradient)):.3g}"
            )

        theta, current = candidate, value

    gradient = np.atleast_1d(score(theta))
    if np.max(np.abs(gradient)) <= cfg.tolerance:
        return theta

    raise NoConvergence(
        f"no convergence after {cfg.max_iterations} iterations, "
        f"score sup-norm {np.max(np.abs(gradient)):.3g}"
    )
