# weights.py
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

from typing import Callable, Optional

import numpy as np

from ivmsmm.backend.exceptions import IvMsmmError
from ivmsmm.backend.logger import Logger
from ivmsmm.backend.models.nuisance_fit import NuisanceFit
from ivmsmm.backend.models.panel import LongitudinalPanel
from ivmsmm.backend.models.weight_set import WeightKind, WeightSet

logging = Logger("weights")

POSITIVITY_TOLERANCE = 1e-10
DELTA_TOLERANCE = 1e-10

# (t, panel) -> one value per subject
PeriodFunction = Callable[[int, LongitudinalPanel], np.ndarray]


""" Custom exception class """
class PositivityViolation(IvMsmmError):
    pass

class ZeroDelta(IvMsmmError):
    pass

class InvalidFz(IvMsmmError):
    pass

class ZeroGamma(IvMsmmError):
    pass

class MissingLatent(IvMsmmError):
    pass


def _collect(panel, func: PeriodFunction) -> np.ndarray:
    return np.column_stack([np.asarray(func(t, panel), dtype=float) for t in range(panel.T)])

def _collect_gradient(panel, func: Optional[PeriodFunction]) -> Optional[np.ndarray]:
    if func is None:
        return None
    return np.stack([np.asarray(func(t, panel), dtype=float) for t in range(panel.T)], axis=1)

def _at_observed(panel, probability) -> np.ndarray:
    return np.where(panel.a == 1.0, probability, 1.0 - probability)

def _check_positivity(panel, values, what):
    upper = 1.0 - POSITIVITY_TOLERANCE if panel.binary_treatment else np.inf
    bad = ~np.isfinite(values) | (values <= POSITIVITY_TOLERANCE) | (values >= upper)
    if np.any(bad):
        subject, t = np.argwhere(bad)[0]
        raise PositivityViolation(
            f"{what} {values[subject, t]:.3g} outside the positivity range "
            f"(subject {subject + 1}, period {t + 1})"
        )

def unit_weights(panel: LongitudinalPanel) -> WeightSet:
    shape = (panel.n, panel.T)
    return WeightSet(WeightKind.UNIT, np.zeros(shape), np.ones(shape))

def sra_weights(panel: LongitudinalPanel, propensity: PeriodFunction,
                evaluated_at_observed: bool = False, log_gradient: PeriodFunction = None,
                fit: NuisanceFit = None, kind: WeightKind = WeightKind.SRA) -> WeightSet:
    """
    w_t = f(A_t | Ā_{t-1}, L̄_t). `propensity` returns P(A_t = 1 | ·) for
    binary treatments, or the density at the observed A_t when
    `evaluated_at_observed` is set.
    """
    values = _collect(panel, propensity)
    if not evaluated_at_observed:
        _check_positivity(panel, values, "propensity")
        values = _at_observed(panel, values)
    _check_positivity(panel, values, "propensity")

    return WeightSet(kind, np.log(values), np.ones_like(values),
                     _collect_gradient(panel, log_gradient), fit)

def sra_stabilized_weights(panel: LongitudinalPanel, marginal: PeriodFunction,
                           propensity: PeriodFunction, evaluated_at_observed: bool = False,
                           log_gradient: PeriodFunction = None, fit: NuisanceFit = None) -> WeightSet:
    """w_t = f(A_t | Ā_{t-1}, L̄_t) / f(A_t | Ā_{t-1})."""
    numerator = sra_weights(panel, propensity, evaluated_at_observed)
    denominator = sra_weights(panel, marginal, evaluated_at_observed)

    return WeightSet(WeightKind.SRA_STABILIZED, numerator.log_abs - denominator.log_abs,
                     np.ones_like(numerator.log_abs), _collect_gradient(panel, log_gradient), fit)

def iv_weights(panel: LongitudinalPanel, fz: PeriodFunction, delta: PeriodFunction,
               log_gradient: PeriodFunction = None, fit: NuisanceFit = None) -> WeightSet:
    """
    w_t = (−1)^{1−Z_t} f_{Z_t}(Z_t | ·) Δ_t(A_t | ·).

    `fz` returns the instrument density at the observed Z_t and `delta` the
    signed compliance difference at the observed A_t.
    """
    density = _collect(panel, fz)
    if np.any(~np.isfinite(density)) or np.any(density <= 0.0) or np.any(density >= 1.0):
        raise InvalidFz("instrument density must lie in (0, 1)")

    deltas = _collect(panel, delta)
    if np.any(~np.isfinite(deltas)) or np.any(np.abs(deltas) < DELTA_TOLERANCE):
        subject, t = np.argwhere(~np.isfinite(deltas) | (np.abs(deltas) < DELTA_TOLERANCE))[0]
        raise ZeroDelta(
            f"compliance difference vanishes (subject {subject + 1}, period {t + 1}); "
            f"the instrument is irrelevant there"
        )

    sign = np.where(panel.z == 1.0, 1.0, -1.0) * np.sign(deltas)
    log_abs = np.log(density) + np.log(np.abs(deltas))

    return WeightSet(WeightKind.IV, log_abs, sign, _collect_gradient(panel, log_gradient), fit)

def iv_stabilized_weights(panel: LongitudinalPanel, gamma: Callable[[int, np.ndarray], np.ndarray],
                          fz: PeriodFunction, delta: PeriodFunction,
                          log_gradient: PeriodFunction = None, fit: NuisanceFit = None) -> WeightSet:
    """
    w'_t = w_t / γ_{A_{t-1}}, with A_0 = 0. `gamma(t, a_previous)` returns
    the stabilizer for each subject.
    """
    base = iv_weights(panel, fz, delta)
    lagged = panel.lagged_treatment()
    stabilizer = np.column_stack([
        np.broadcast_to(np.asarray(gamma(t, lagged[:, t]), dtype=float), (panel.n,))
        for t in range(panel.T)
    ])
    if np.any(~np.isfinite(stabilizer)) or np.any(stabilizer == 0.0):
        raise ZeroGamma("stabilizer is zero or not finite at an observed treatment level")

    return WeightSet(
        WeightKind.IV_STABILIZED,
        base.log_abs - np.log(np.abs(stabilizer)),
        base.sign * np.sign(stabilizer),
        _collect_gradient(panel, log_gradient),
        fit,
    )

def oracle_weights(panel: LongitudinalPanel, dgp) -> WeightSet:
    """SRA weights from the true propensity given (L̄, Ū, Z̄)."""
    if not panel.has_latent:
        raise MissingLatent("latent columns required for the oracle estimator")

    weights = sra_weights(panel, dgp.oracle_propensity, evaluated_at_observed=True)
    return WeightSet(WeightKind.ORACLE, weights.log_abs, weights.sign)

def binary_delta_symmetry(delta_at_1):
    """Δ_t(A_t = 0) = −Δ_t(A_t = 1) for a binary treatment."""
    return -delta_at_1
