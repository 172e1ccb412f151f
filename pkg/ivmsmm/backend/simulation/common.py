# common.py
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

from dataclasses import asdict, dataclass, fields
from typing import Optional

import numpy as np

from ivmsmm.backend.exceptions import IvMsmmError
from ivmsmm.backend.logger import Logger
from ivmsmm.backend.models.panel import LongitudinalPanel, MsmmSpec
from ivmsmm.backend.utils.common import format_value, make_rng, read_keyfile, write_keyfile

logging = Logger("simulation")

# Stream indices inside a replication
STREAM_OBSERVED = 0
STREAM_INTERVENTIONAL = 1
STREAM_PATHS = 2

TRUE_VALUES = ("1", "true", "yes", "on")


""" Custom exception class """
class InvalidParams(IvMsmmError):
    pass

class RejectionFailure(IvMsmmError):
    pass


@dataclass(frozen=True)
class DgpTruth:
    dgp: str
    beta: np.ndarray
    spec: MsmmSpec
    params: dict

    def counterfactual_mean(self, path) -> float:
        return float(self.spec.mean(self.beta, np.asarray(path, dtype=float)[None, :])[0])


@dataclass(frozen=True, eq=False)
class SimOutput:
    """
    A simulated panel with U retained, the truth it was generated from and
    the confounding part of the outcome, Y − m_β(Ā) − ε.
    """
    panel: LongitudinalPanel
    truth: DgpTruth
    confounding: np.ndarray
    dgp: "Dgp"


class Dgp:
    """
    Base class of the data-generating processes.

    Subclasses implement `_draw` and the true nuisance functions. Every
    nuisance function takes a 0-based period `t` and a panel and returns
    one value per subject, evaluated at the observed A_t.
    """
    name = "dgp"
    binary_treatment = True

    def __init__(self, params):
        self.params = params
        self.check_params()

    @property
    def T(self) -> int:
        return self.params.T

    @property
    def beta(self) -> np.ndarray:
        raise NotImplementedError

    @property
    def spec(self) -> MsmmSpec:
        raise NotImplementedError

    def check_params(self):
        pass

    def truth(self) -> DgpTruth:
        return DgpTruth(self.name, self.beta, self.spec, params_to_dict(self.params))

    def counterfactual_mean(self, path) -> float:
        return self.truth().counterfactual_mean(path)

    def simulate(self, n: int, seed: int, replication: int = 0,
                 forced_treatment: Optional[np.ndarray] = None) -> SimOutput:
        """
        Draws n subjects. With `forced_treatment` (n x T) the treatment is
        set by intervention and everything else follows the kernel, so the
        outcome is a draw of Y_ā.
        """
        if n < 1:
            raise InvalidParams(f"sample size must be at least 1, got {n}")

        stream = STREAM_OBSERVED if forced_treatment is None else STREAM_INTERVENTIONAL
        rng = make_rng(seed, replication, stream)

        if forced_treatment is not None:
            forced_treatment = np.broadcast_to(
                np.asarray(forced_treatment, dtype=float), (n, self.T)
            )

        panel, confounding = self._draw(n, rng, forced_treatment)
        return SimOutput(panel, self.truth(), confounding, self)

    def _draw(self, n, rng, forced_treatment):
        raise NotImplementedError

    def instrument_probability(self, t: int, panel: LongitudinalPanel) -> np.ndarray:
        return np.full(panel.n, 0.5)

    def compliance_delta(self, t: int, panel: LongitudinalPanel) -> np.ndarray:
        raise NotImplementedError

    def oracle_propensity(self, t: int, panel: LongitudinalPanel) -> np.ndarray:
        raise NotImplementedError

    def observed_propensity(self, t: int, panel: LongitudinalPanel) -> np.ndarray:
        raise NotImplementedError


def params_to_dict(params) -> dict:
    return {key: value for key, value in asdict(params).items()}

def params_from_dict(params_class, values: dict):
    kwargs = {}
    for item in fields(params_class):
        if item.name not in values:
            continue
        raw = values[item.name]
        if item.name == "T":
            kwargs[item.name] = int(float(raw))
        elif isinstance(item.default, bool):
            kwargs[item.name] = raw if isinstance(raw, bool) else str(raw).strip().lower() in TRUE_VALUES
        elif isinstance(raw, str) and "," in raw:
            kwargs[item.name] = tuple(float(v) for v in raw.split(","))
        else:
            kwargs[item.name] = float(raw)
    return params_class(**kwargs)

def bernoulli(rng: np.random.Generator, probability) -> np.ndarray:
    return (rng.random(np.shape(probability)) < probability).astype(float)

def at_observed(probability_one, a) -> np.ndarray:
    """f(A) for a binary A from P(A = 1)."""
    return np.where(a == 1.0, probability_one, 1.0 - probability_one)

def write_truth(output: SimOutput, path: str, n: int, seed: int) -> None:
    values = {"dgp": output.truth.dgp, "n": n, "seed": seed}
    for name, value in zip(output.truth.spec.coefficient_names(len(output.truth.beta)), output.truth.beta):
        values[name] = value
    values.update(output.truth.params)
    write_keyfile(path, values)
    logging.debug(f"Truth sidecar written to {path}")

def read_truth(path: str) -> Dgp:
    from ivmsmm.backend.simulation import registry

    values = read_keyfile(path)
    name = values.get("dgp")
    if name not in registry.DGPS:
        raise InvalidParams(f"unknown dgp {name!r} in truth file {path}")

    dgp_class = registry.DGPS[name]
    return dgp_class(params_from_dict(dgp_class.params_class, values))

def describe_params(params) -> str:
    return ", ".join(f"{k}={format_value(v)}" for k, v in params_to_dict(params).items())
