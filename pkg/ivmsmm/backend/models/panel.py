# panel.py
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

import re
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Optional, Union

import numpy as np
import pandas as pd

from ivmsmm.backend.exceptions import IvMsmmError
from ivmsmm.backend.logger import Logger

logging = Logger("panel")

# Full round-trip precision for doubles
CSV_FLOAT_FORMAT = "%.17g"


""" Custom exception class """
class PanelError(IvMsmmError):
    def __init__(self, message, errors=None):
        super().__init__(message)
        self.errors = list(errors or [])


class MeanModel(Enum):
    LINEAR_CUMULATIVE = "linear-cumulative"
    LINEAR_GENERAL = "linear-general"


@dataclass(frozen=True)
class MsmmSpec:
    """
    Mean model m_β(ā) = βᵀg(ā) together with the index function h(ā).

    `basis` and `index_function` take an (n, T) array of treatment paths
    and return an (n, p) array. For LINEAR_CUMULATIVE the basis is
    (1, Σa_t), or (Σa_t,) without intercept. The index function defaults
    to the basis itself.
    """
    mean_model: MeanModel = MeanModel.LINEAR_CUMULATIVE
    intercept: bool = True
    basis: Optional[Callable[[np.ndarray], np.ndarray]] = None
    index_function: Optional[Callable[[np.ndarray], np.ndarray]] = None
    names: Optional[tuple] = None

    def __post_init__(self):
        if self.mean_model is MeanModel.LINEAR_GENERAL and self.basis is None:
            raise ValueError("LINEAR_GENERAL mean model needs a basis function")

    @classmethod
    def general(cls, basis, index_function=None, names=None) -> MsmmSpec:
        return cls(MeanModel.LINEAR_GENERAL, basis=basis,
                   index_function=index_function, names=names)

    def with_index(self, index_function) -> MsmmSpec:
        return replace(self, index_function=index_function)

    def basis_rows(self, paths) -> np.ndarray:
        paths = np.atleast_2d(np.asarray(paths, dtype=float))
        if self.mean_model is MeanModel.LINEAR_GENERAL:
            return np.atleast_2d(np.asarray(self.basis(paths), dtype=float))

        total = paths.sum(axis=1)
        if self.intercept:
            return np.column_stack([np.ones_like(total), total])
        return total[:, None]

    def index_rows(self, paths) -> np.ndarray:
        if self.index_function is None:
            return self.basis_rows(paths)

        paths = np.atleast_2d(np.asarray(paths, dtype=float))
        rows = np.asarray(self.index_function(paths), dtype=float)
        if rows.ndim == 1:
            rows = rows[:, None]
        return rows

    def mean(self, beta, paths) -> np.ndarray:
        return self.basis_rows(paths) @ np.asarray(beta, dtype=float)

    def coefficient_names(self, dim=None) -> tuple:
        if self.names is not None:
            return tuple(self.names)
        if self.mean_model is MeanModel.LINEAR_CUMULATIVE:
            return ("beta0", "beta1") if self.intercept else ("beta1",)
        return tuple(f"beta{i}" for i in range(dim or 0))


@dataclass(frozen=True, eq=False)
class LongitudinalPanel:
    """
    n subjects observed over T periods.

    a, z: (n, T); l: (n, T, k); u: optional (n, T, k_u) latent covariates
    kept only in simulated panels; y: (n,) terminal outcome or y_t: (n, T)
    per-period outcomes. Quantities at t = 0 are the constant 0.
    """
    a: np.ndarray
    z: np.ndarray
    l: np.ndarray
    y: Optional[np.ndarray] = None
    y_t: Optional[np.ndarray] = None
    u: Optional[np.ndarray] = None
    binary_treatment: bool = True
    subjects: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.a, dtype=float))
        n, T = a.shape
        z = np.asarray(self.z, dtype=float).reshape(n, T)
        l = np.asarray(self.l, dtype=float)
        if l.ndim == 2:
            l = l[:, :, None]
        if l.shape[:2] != (n, T):
            raise PanelError(f"covariates have shape {l.shape}, expected ({n}, {T}, k)")

        object.__setattr__(self, "a", a)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "l", l)

        if self.u is not None:
            u = np.asarray(self.u, dtype=float)
            if u.ndim == 2:
                u = u[:, :, None]
            if u.shape[:2] != (n, T):
                raise PanelError(f"latent covariates have shape {u.shape}, expected ({n}, {T}, k)")
            object.__setattr__(self, "u", u)

        if self.y is None and self.y_t is None:
            raise PanelError("panel needs a terminal outcome y or per-period outcomes y_t")
        if self.y is not None:
            object.__setattr__(self, "y", np.asarray(self.y, dtype=float).reshape(n))
        if self.y_t is not None:
            object.__setattr__(self, "y_t", np.asarray(self.y_t, dtype=float).reshape(n, T))

        if self.subjects is None:
            object.__setattr__(self, "subjects", np.arange(1, n + 1))

    @property
    def n(self) -> int:
        return self.a.shape[0]

    @property
    def T(self) -> int:
        return self.a.shape[1]

    @property
    def k(self) -> int:
        return self.l.shape[2]

    @property
    def has_latent(self) -> bool:
        return self.u is not None

    @property
    def repeated_measures(self) -> bool:
        return self.y_t is not None

    @property
    def outcome(self) -> np.ndarray:
        """Terminal outcome; in repeated-measurements mode the last y_t."""
        if self.y is not None:
            return self.y
        return self.y_t[:, -1]

    def lagged_treatment(self) -> np.ndarray:
        """A_{t-1} for t = 1..T with A_0 = 0."""
        lagged = np.zeros_like(self.a)
        lagged[:, 1:] = self.a[:, :-1]
        return lagged

    def cumulative_treatment(self) -> np.ndarray:
        return self.a.sum(axis=1)

    def drop_latent(self) -> LongitudinalPanel:
        return replace(self, u=None)

    def take(self, indices) -> LongitudinalPanel:
        """Subjects at `indices` (repetitions allowed), renumbered 1..len."""
        indices = np.asarray(indices, dtype=int)

        def pick(values):
            return None if values is None else values[indices]

        return LongitudinalPanel(
            a=self.a[indices], z=self.z[indices], l=self.l[indices],
            y=pick(self.y), y_t=pick(self.y_t), u=pick(self.u),
            binary_treatment=self.binary_treatment
        )

    def to_frame(self) -> pd.DataFrame:
        n, T = self.n, self.T
        columns = {
            "subject": np.repeat(self.subjects, T),
            "t": np.tile(np.arange(1, T + 1), n),
            "a": self.a.reshape(-1).astype(int) if self.binary_treatment else self.a.reshape(-1),
            "z": self.z.reshape(-1).astype(int),
        }
        for j in range(self.k):
            columns[f"l{j + 1}"] = self.l[:, :, j].reshape(-1)
        if self.u is not None:
            for j in range(self.u.shape[2]):
                columns[f"u{j + 1}"] = self.u[:, :, j].reshape(-1)
        if self.y_t is not None:
            columns["y_t"] = self.y_t.reshape(-1)
        else:
            columns["y"] = np.repeat(self.y, T)

        return pd.DataFrame(columns)


@dataclass(frozen=True)
class CovariateSpec:
    """
    Rows x_t used by the nuisance regressions: optional intercept, the
    observed covariates L_t (all of them unless `columns` selects some) and
    optionally the lagged treatment A_{t-1}.
    """
    intercept: bool = True
    columns: Optional[tuple] = None
    lagged_treatment: bool = False

    def rows(self, panel: LongitudinalPanel, t: int) -> np.ndarray:
        parts = []
        if self.intercept:
            parts.append(np.ones((panel.n, 1)))

        columns = range(panel.k) if self.columns is None else self.columns
        for j in columns:
            parts.append(panel.l[:, t, j][:, None])

        if self.lagged_treatment:
            parts.append(panel.lagged_treatment()[:, t][:, None])

        if not parts:
            raise PanelError("covariate specification selects no columns")
        return np.hstack(parts)

    def names(self, panel: LongitudinalPanel) -> list:
        names = ["intercept"] if self.intercept else []
        columns = range(panel.k) if self.columns is None else self.columns
        names += [f"l{j + 1}" for j in columns]
        if self.lagged_treatment:
            names.append("a_lag")
        return names


def cumulative_treatment(panel: LongitudinalPanel) -> np.ndarray:
    return panel.cumulative_treatment()

def design_row(spec: MsmmSpec, treatment_path) -> np.ndarray:
    return spec.index_rows(np.asarray(treatment_path, dtype=float)[None, :])[0]

def _covariate_columns(frame: pd.DataFrame, prefix: str) -> list:
    pattern = re.compile(rf"^{prefix}(\d+)$")
    found = [(int(m.group(1)), c) for c in frame.columns if (m := pattern.match(c))]
    return [c for _, c in sorted(found)]

def validate_frame(frame: pd.DataFrame) -> list:
    errors = []
    required = ["subject", "t", "a", "z"]
    missing = [c for c in required if c not in frame.columns]
    if missing:
        return [f"missing column {c}" for c in missing]
    if not _covariate_columns(frame, "l"):
        errors.append("missing covariate columns l1..lk")
    if "y" not in frame.columns and "y_t" not in frame.columns:
        errors.append("missing outcome column y or y_t")

    if frame.isna().any().any():
        errors.append("missing values")

    z = frame["z"].to_numpy(dtype=float)
    if not np.all(np.isin(z[~np.isnan(z)], (0.0, 1.0))):
        errors.append("instrument not binary")

    periods = frame.groupby("subject")["t"].apply(lambda t: tuple(sorted(t)))
    T = int(frame["t"].max()) if len(frame) else 0
    if any(p != tuple(range(1, T + 1)) for p in periods):
        errors.append("ragged subject")

    return errors

def validate(panel: Union[LongitudinalPanel, pd.DataFrame]) -> list:
    """Returns every invariant violation; an empty list means the panel is ok."""
    if isinstance(panel, pd.DataFrame):
        return validate_frame(panel)

    errors = []
    arrays = [panel.a, panel.z, panel.l, panel.outcome]
    if panel.y_t is not None:
        arrays.append(panel.y_t)
    if panel.u is not None:
        arrays.append(panel.u)
    if any(np.isnan(values).any() for values in arrays):
        errors.append("missing values")
    if not np.all(np.isin(panel.z, (0.0, 1.0))):
        errors.append("instrument not binary")
    if panel.binary_treatment and not np.all(np.isin(panel.a[~np.isnan(panel.a)], (0.0, 1.0))):
        errors.append("treatment not binary")

    return errors

def panel_from_frame(frame: pd.DataFrame) -> LongitudinalPanel:
    errors = validate_frame(frame)
    if errors:
        raise PanelError("invalid panel: " + "; ".join(errors), errors)

    frame = frame.sort_values(["subject", "t"], kind="stable")
    subjects = frame["subject"].drop_duplicates().to_numpy()
    n, T = len(subjects), int(frame["t"].max())

    def block(columns):
        return frame[columns].to_numpy(dtype=float).reshape(n, T, len(columns))

    l_columns = _covariate_columns(frame, "l")
    u_columns = _covariate_columns(frame, "u")
    a = frame["a"].to_numpy(dtype=float).reshape(n, T)

    y = y_t = None
    if "y_t" in frame.columns:
        y_t = frame["y_t"].to_numpy(dtype=float).reshape(n, T)
    else:
        y = frame["y"].to_numpy(dtype=float).reshape(n, T)[:, -1]

    return LongitudinalPanel(
        a=a, z=frame["z"].to_numpy(dtype=float).reshape(n, T), l=block(l_columns),
        y=y, y_t=y_t, u=block(u_columns) if u_columns else None,
        binary_treatment=bool(np.all(np.isin(a, (0.0, 1.0)))), subjects=subjects
    )

def read_panel_csv(path: str) -> LongitudinalPanel:
    try:
        frame = pd.read_csv(path, float_precision="round_trip", encoding="utf-8")
    except OSError as e:
        logging.error(f"Failed to read panel in location: {path}.", exc=e)
        raise

    return panel_from_frame(frame)

def write_panel_csv(panel: LongitudinalPanel, path: str) -> None:
    try:
        panel.to_frame().to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT,
                                encoding="utf-8", lineterminator="\n")
    except OSError as e:
        logging.error(f"Failed to write panel to location: {path}.", exc=e)
        raise
