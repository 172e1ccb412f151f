# weight_set.py
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
from enum import Enum
from typing import Optional

import numpy as np
import pandas as pd

from ivmsmm.backend.logger import Logger
from ivmsmm.backend.models.nuisance_fit import NuisanceFit
from ivmsmm.backend.models.panel import CSV_FLOAT_FORMAT

logging = Logger("weight_set")


class WeightKind(Enum):
    UNIT = "unit"
    SRA = "sra"
    SRA_STABILIZED = "sra-stabilized"
    IV = "iv"
    IV_STABILIZED = "iv-stabilized"
    ORACLE = "oracle"


@dataclass(frozen=True, eq=False)
class WeightSet:
    """
    Per-period weight factors w_t kept as log|w_t| and sign(w_t).

    `log_gradient` is the optional (n, T, d) derivative of log|w_t| with
    respect to the parameters of `fit`, used by the sandwich variance.
    """
    kind: WeightKind
    log_abs: np.ndarray
    sign: np.ndarray
    log_gradient: Optional[np.ndarray] = None
    fit: Optional[NuisanceFit] = None

    @property
    def n(self) -> int:
        return self.log_abs.shape[0]

    @property
    def T(self) -> int:
        return self.log_abs.shape[1]

    @property
    def factors(self) -> np.ndarray:
        return self.sign * np.exp(self.log_abs)

    @property
    def cumulative(self) -> np.ndarray:
        """W̄_t = Π_{τ≤t} w_τ for every period."""
        return np.cumprod(self.factors, axis=1)

    @property
    def final(self) -> np.ndarray:
        return self.cumulative[:, -1]

    def inverse_cumulative(self) -> np.ndarray:
        """1 / W̄_t, assembled in log space."""
        sign = np.cumprod(self.sign, axis=1)
        return sign * np.exp(-np.cumsum(self.log_abs, axis=1))

    def inverse_final(self) -> np.ndarray:
        return self.inverse_cumulative()[:, -1]

    def cumulative_log_gradient(self) -> Optional[np.ndarray]:
        """∂ log|W̄_t| / ∂η, shape (n, T, d)."""
        if self.log_gradient is None:
            return None
        return np.cumsum(self.log_gradient, axis=1)

    def second_moment(self) -> float:
        return float(np.mean(self.inverse_final() ** 2))

    def diagnostics(self) -> dict:
        inverse = self.inverse_final()
        magnitude = np.abs(self.final)
        return {
            "weight_second_moment": float(np.mean(inverse ** 2)),
            "weight_min_abs": float(magnitude.min()),
            "weight_max_abs": float(magnitude.max()),
            "negative_weight_share": float(np.mean(inverse < 0.0)),
        }

    def to_frame(self, subjects=None) -> pd.DataFrame:
        n, T = self.n, self.T
        if subjects is None:
            subjects = np.arange(1, n + 1)
        return pd.DataFrame({
            "subject": np.repeat(subjects, T),
            "t": np.tile(np.arange(1, T + 1), n),
            "w": self.factors.reshape(-1),
            "wbar": self.cumulative.reshape(-1),
        })

    def write_csv(self, path: str, subjects=None) -> None:
        try:
            self.to_frame(subjects).to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT,
                                           lineterminator="\n")
        except OSError as e:
            logging.error(f"Failed to write weights to location: {path}.", exc=e)
            raise
