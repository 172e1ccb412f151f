# report.py
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

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import pandas as pd

from ivmsmm.backend.logger import Logger
from ivmsmm.backend.models.panel import CSV_FLOAT_FORMAT

logging = Logger("report")


@dataclass(frozen=True, eq=False)
class EstimateReport:
    kind: str
    names: tuple
    beta: np.ndarray
    sandwich_cov: Optional[np.ndarray] = None
    bootstrap_cov: Optional[np.ndarray] = None
    level: float = 0.95
    ci_sandwich: Optional[np.ndarray] = None
    ci_bootstrap: Optional[np.ndarray] = None
    B: int = 0
    bootstrap_failures: int = 0
    n: int = 0
    T: int = 0
    seed: Optional[int] = None
    nuisance: str = ""
    diagnostics: dict = field(default_factory=dict)

    @staticmethod
    def _se(cov, dim) -> np.ndarray:
        if cov is None:
            return np.full(dim, np.nan)
        return np.sqrt(np.clip(np.diag(cov), 0.0, None))

    @property
    def se_sandwich(self) -> np.ndarray:
        return self._se(self.sandwich_cov, len(self.beta))

    @property
    def se_bootstrap(self) -> np.ndarray:
        return self._se(self.bootstrap_cov, len(self.beta))

    def to_row(self) -> dict:
        row = {"kind": self.kind}
        for i, name in enumerate(self.names):
            row[name] = self.beta[i]
        for i, name in enumerate(self.names):
            row[f"se_sw_{name}"] = self.se_sandwich[i]
            row[f"se_bs_{name}"] = self.se_bootstrap[i]
        row.update({"n": self.n, "T": self.T, "B": self.B, "seed": self.seed})
        row.update(self.diagnostics)
        return row

    def write_csv(self, path: str) -> None:
        try:
            pd.DataFrame([self.to_row()]).to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT,
                                                 lineterminator="\n")
        except OSError as e:
            logging.error(f"Failed to write report to location: {path}.", exc=e)
            raise
