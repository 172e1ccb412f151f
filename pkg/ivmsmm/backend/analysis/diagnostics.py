# diagnostics.py
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
import json
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import pandas as pd

from ivmsmm.backend.estimation.weights import iv_weights
from ivmsmm.backend.exceptions import IvMsmmError
from ivmsmm.backend.logger import Logger
from ivmsmm.backend.models.weight_set import WeightSet
from ivmsmm.backend.simulation.common import STREAM_PATHS, InvalidParams, at_observed, bernoulli
from ivmsmm.backend.utils.common import make_rng
from ivmsmm.backend.utils.numerics import normal_cdf, normal_pdf

logging = Logger("diagnostics")

TOLERANCE = 1e-10
Z_THRESHOLD = 3.0

ICT_COLUMNS = ["t", "history", "l", "u", "z", "a", "prob"]
OMEGA_COLUMNS = ["a", "z", "l", "omega"]
PA_COLUMNS = ["l", "u", "z", "p_a1"]


""" Custom exception class """
class UnnormalizedTable(IvMsmmError):
    pass

class MalformedTable(IvMsmmError):
    pass


@dataclass(frozen=True)
class IctReport:
    passed: bool
    max_deviation: float
    iv_irrelevant: bool
    worst_cell: Optional[dict] = None

    def to_row(self) -> dict:
        return {"check": "ict", "passed": self.passed, "max_deviation": self.max_deviation,
                "iv_irrelevant": self.iv_irrelevant}


@dataclass(frozen=True)
class PointExposureReport:
    passed: bool
    constant_in_u: bool
    proportional: Optional[bool]
    u_varying: bool
    max_deviation: float
    failures: tuple = ()
    constants: dict = field(default_factory=dict)

    def to_row(self) -> dict:
        return {"check": "point-exposure", "passed": self.passed, "max_deviation": self.max_deviation,
                "constant_in_u": self.constant_in_u, "proportional": self.proportional,
                "u_varying": self.u_varying}


@dataclass(frozen=True)
class IdentityCheck:
    function: str
    lhs: float
    rhs: float
    lhs_se: float
    rhs_se: float
    z: float

    @property
    def passed(self) -> bool:
        return abs(self.z) <= Z_THRESHOLD

    def to_row(self) -> dict:
        return {"check": "weighting-identity", "function": self.function, "lhs": self.lhs, "rhs": self.rhs,
                "lhs_se": self.lhs_se, "rhs_se": self.rhs_se, "z": self.z, "passed": self.passed}


def _require_columns(frame: pd.DataFrame, columns, what):
    missing = [c for c in columns if c not in frame.columns]
    if missing:
        raise MalformedTable(f"{what} table misses columns: {', '.join(missing)}")
    if frame[[c for c in columns if c != "history"]].isna().any().any():
        raise MalformedTable(f"{what} table has missing values")


# Independent compliance type

def check_ict(table: pd.DataFrame) -> IctReport:
    """
    Checks that Δ_t(a) = P(A=a | ·, Z=1) − P(A=a | ·, Z=0) is the same for
    every level of U within each (t, history, l, a) cell.
    """
    _require_columns(table, ICT_COLUMNS, "compliance")
    table = table.assign(history=table["history"].fillna("").astype(str))

    probabilities = table["prob"].to_numpy(dtype=float)
    if np.any(probabilities < -TOLERANCE) or np.any(probabilities > 1.0 + TOLERANCE):
        raise UnnormalizedTable("probabilities must lie in [0, 1]")

    totals = table.groupby(["t", "history", "l", "u", "z"])["prob"].sum()
    if np.any(np.abs(totals.to_numpy() - 1.0) > TOLERANCE):
        cell = totals.index[np.argmax(np.abs(totals.to_numpy() - 1.0))]
        raise UnnormalizedTable(f"probabilities of cell (t, history, l, u, z)={cell} sum to {totals[cell]:.12g}")

    by_z = table.pivot_table(index=["t", "history", "l", "u", "a"], columns="z", values="prob", aggfunc="first")
    if set(by_z.columns) != {0, 1} or by_z.isna().any().any():
        raise UnnormalizedTable("every cell needs both instrument levels z=0 and z=1")

    delta = (by_z[1] - by_z[0]).rename("delta").reset_index()
    spread = delta.groupby(["t", "history", "l", "a"])["delta"].agg(lambda d: d.max() - d.min())
    max_deviation = float(spread.max())
    worst = spread.index[int(np.argmax(spread.to_numpy()))]

    report = IctReport(
        passed=max_deviation <= TOLERANCE,
        max_deviation=max_deviation,
        iv_irrelevant=bool(np.all(np.abs(delta["delta"].to_numpy()) <= TOLERANCE)),
        worst_cell=dict(zip(["t", "history", "l", "a"], worst)),
    )
    logging.debug(f"ICT check: max deviation {max_deviation:.3g}")
    return report

def markov_ict_table(dgp) -> pd.DataFrame:
    """P(A_t = a | A_{t-1}, L_t, U_t, Z_t) of a Markov DGP, one row per cell."""
    rows = []
    for t in range(dgp.T):
        histories = [""] if t == 0 else ["0", "1"]
        for history, l, u, z in itertools.product(histories, (0, 1), (0, 1), (0, 1)):
            p_a1 = float(dgp.treatment_probability(np.array(float(l)), np.array(float(u)), np.array(float(z))))
            for a in (0, 1):
                rows.append({"t": t, "history": history, "l": l, "u": u, "z": z, "a": a,
                             "prob": p_a1 if a == 1 else 1.0 - p_a1})
    return pd.DataFrame(rows, columns=ICT_COLUMNS)

def linear_ict_table(dgp, l_grid=None, u_grid=None) -> pd.DataFrame:
    """The linear DGP's treatment model evaluated on a grid of (L, U)."""
    p = dgp.params
    l_grid = np.linspace(-2.0, 2.0, 5) if l_grid is None else l_grid
    u_grid = np.linspace(-2.0, 2.0, 5) if u_grid is None else u_grid

    rows = []
    for t in range(dgp.T):
        for l, u, z in itertools.product(l_grid, u_grid, (0, 1)):
            delta = float(dgp.delta_at(np.array(l)))
            baseline = float(normal_cdf(p.nu0 + p.nu1 * l + p.nu2 * u))
            p_a1 = baseline * (1.0 - delta) + z * delta
            for a in (0, 1):
                rows.append({"t": t, "history": "", "l": float(l), "u": float(u), "z": z, "a": a,
                             "prob": p_a1 if a == 1 else 1.0 - p_a1})
    return pd.DataFrame(rows, columns=ICT_COLUMNS)


# Point exposure converse

def check_point_exposure_converse(omega: pd.DataFrame, p_a: pd.DataFrame) -> PointExposureReport:
    """
    For T = 1 and binary A, Z the weights ω(a, z, l) identify the MSMM only if

        c_0(l) = ω(0,0,l) P(A=0 | Z=0,l,u) + ω(0,1,l) P(A=0 | Z=1,l,u)
        c_1(l) = ω(1,0,l) P(A=1 | Z=0,l,u) + ω(1,1,l) P(A=1 | Z=1,l,u)

    do not depend on u. When P(A=1 | Z, l, u) varies with u the two lines in
    (P(A=0 | Z=0), P(A=0 | Z=1)) must coincide, which gives
    ω01 ω10 = ω11 ω00 and c_0 ω10 = ω00 (ω10 + ω11 − c_1).
    """
    _require_columns(omega, OMEGA_COLUMNS, "weight")
    _require_columns(p_a, PA_COLUMNS, "treatment")

    values = p_a["p_a1"].to_numpy(dtype=float)
    if np.any(values < -TOLERANCE) or np.any(values > 1.0 + TOLERANCE):
        raise UnnormalizedTable("P(A=1 | Z, L, U) must lie in [0, 1]")

    weights = {(int(r.a), int(r.z), r.l): float(r.omega) for r in omega.itertuples(index=False)}
    treatment = {(r.l, r.u, int(r.z)): float(r.p_a1) for r in p_a.itertuples(index=False)}

    failures = []
    constants = {}
    max_deviation = 0.0
    constant_in_u = True
    proportional = None
    u_varying = False

    for l in sorted(p_a["l"].unique()):
        try:
            w = {(a, z): weights[(a, z, l)] for a in (0, 1) for z in (0, 1)}
        except KeyError:
            raise MalformedTable(f"weight table misses cells for l={l}") from None
        u_levels = sorted(p_a.loc[p_a["l"] == l, "u"].unique())
        try:
            p1 = np.array([[treatment[(l, u, z)] for z in (0, 1)] for u in u_levels])
        except KeyError:
            raise MalformedTable(f"treatment table misses instrument levels for l={l}") from None
        p0 = 1.0 - p1

        c0 = w[0, 0] * p0[:, 0] + w[0, 1] * p0[:, 1]
        c1 = w[1, 0] * p1[:, 0] + w[1, 1] * p1[:, 1]
        scale = max(1.0, max(abs(v) for v in w.values()))
        deviation = max(np.ptp(c0), np.ptp(c1)) / scale
        max_deviation = max(max_deviation, float(deviation))
        constants[l] = (float(c0[0]), float(c1[0]))

        if deviation > TOLERANCE:
            constant_in_u = False
            failures.append(f"l={l:g}: linear combinations vary with u (spread {deviation:.3g})")
            continue

        if np.ptp(p1, axis=0).max() <= TOLERANCE:
            continue
        u_varying = True

        ratio_gap = abs(w[0, 1] * w[1, 0] - w[1, 1] * w[0, 0]) / scale ** 2
        intercept_gap = abs(c0[0] * w[1, 0] - w[0, 0] * (w[1, 0] + w[1, 1] - c1[0])) / scale ** 2
        ok = ratio_gap <= TOLERANCE and intercept_gap <= TOLERANCE
        proportional = ok if proportional is None else proportional and ok
        max_deviation = max(max_deviation, ratio_gap, intercept_gap)
        if not ok:
            failures.append(f"l={l:g}: weight ratios are not proportional "
                            f"(ratio gap {ratio_gap:.3g}, intercept gap {intercept_gap:.3g})")

    return PointExposureReport(
        passed=not failures,
        constant_in_u=constant_in_u,
        proportional=proportional,
        u_varying=u_varying,
        max_deviation=max_deviation,
        failures=tuple(failures),
        constants=constants,
    )

def markov_point_exposure_tables(dgp, instrument_probability: float = 0.5) -> tuple:
    """Inverse IV weights ω(a, z, l) and P(A=1 | Z, L, U) of a single-period Markov kernel."""
    omega_rows = []
    for a, z, l in itertools.product((0, 1), (0, 1), (0, 1)):
        delta = dgp.delta[l] if a == 1 else -dgp.delta[l]
        density = instrument_probability if z == 1 else 1.0 - instrument_probability
        sign = 1.0 if z == 1 else -1.0
        omega_rows.append({"a": a, "z": z, "l": float(l), "omega": sign / (density * delta)})

    treatment_rows = []
    for l, u, z in itertools.product((0, 1), (0, 1), (0, 1)):
        p_a1 = float(dgp.treatment_probability(np.array(float(l)), np.array(float(u)), np.array(float(z))))
        treatment_rows.append({"l": float(l), "u": float(u), "z": z, "p_a1": p_a1})

    return pd.DataFrame(omega_rows, columns=OMEGA_COLUMNS), pd.DataFrame(treatment_rows, columns=PA_COLUMNS)


# Weighting identity by simulation

def true_iv_weights(dgp, panel) -> WeightSet:
    return iv_weights(
        panel,
        lambda t, p: at_observed(dgp.instrument_probability(t, p), p.z[:, t]),
        dgp.compliance_delta,
    )

def _mean_and_se(values) -> tuple:
    values = np.asarray(values, dtype=float)
    return float(values.mean()), float(values.std(ddof=1) / np.sqrt(len(values)))

def verify_theorem1_mc(dgp, g: Callable, n: int, seed: int, replication: int = 0,
                       weights: Callable = None, name: str = "g") -> IdentityCheck:
    """
    Compares E g(Y, Ā)/W̄ on observational draws with the integral of
    E g(Y_ā, ā) over treatment paths. For binary treatments the integral is
    a sum over the 2^T paths, estimated as 2^T times the mean under
    uniformly drawn paths; for a continuous treatment paths are drawn from
    N(0, 1) and divided by its density.

    `g(y, a)` takes outcomes (n,) and paths (n, T). `weights(panel)` may
    replace the true IV weights.
    """
    if n < 2:
        raise InvalidParams(f"n must be at least 2, got {n}")

    observed = dgp.simulate(n, seed, replication).panel
    weight_set = (weights or (lambda p: true_iv_weights(dgp, p)))(observed)
    lhs, lhs_se = _mean_and_se(np.asarray(g(observed.outcome, observed.a)) * weight_set.inverse_final())

    rng = make_rng(seed, replication, STREAM_PATHS)
    if dgp.binary_treatment:
        paths = bernoulli(rng, np.full((n, dgp.T), 0.5))
        scale = np.full(n, 2.0 ** dgp.T)
    else:
        paths = rng.standard_normal((n, dgp.T))
        scale = 1.0 / np.prod(normal_pdf(paths), axis=1)

    interventional = dgp.simulate(n, seed, replication, forced_treatment=paths).panel
    rhs, rhs_se = _mean_and_se(np.asarray(g(interventional.outcome, paths)) * scale)

    pooled = np.hypot(lhs_se, rhs_se)
    if pooled > 0:
        z = (lhs - rhs) / pooled
    else:
        z = 0.0 if abs(lhs - rhs) <= TOLERANCE else np.inf

    logging.debug(f"{dgp.name}/{name}: lhs={lhs:.5g} ± {lhs_se:.3g}, rhs={rhs:.5g} ± {rhs_se:.3g}, z={z:.3g}")
    return IdentityCheck(name, lhs, rhs, lhs_se, rhs_se, float(z))

def identity_battery(dgp) -> dict:
    """Five test functions g(y, ā) with finite integrals under the DGP's treatment measure."""
    spec, beta = dgp.spec, dgp.beta

    def residual(y, a):
        return y - spec.mean(beta, a)

    if dgp.binary_treatment:
        return {
            "residual": residual,
            "constant": lambda y, a: np.ones(len(y)),
            "cumulative_treatment": lambda y, a: a.sum(axis=1),
            "always_treated": lambda y, a: np.all(a == 1.0, axis=1).astype(float),
            "residual_times_dose": lambda y, a: residual(y, a) * a.sum(axis=1),
        }

    def density(a):
        return np.prod(normal_pdf(a), axis=1)

    return {
        "residual_density": lambda y, a: residual(y, a) * density(a),
        "density": lambda y, a: density(a),
        "dose_density": lambda y, a: a.sum(axis=1) * density(a),
        "outcome_density": lambda y, a: y * density(a),
        "squared_dose_density": lambda y, a: a.sum(axis=1) ** 2 * density(a),
    }

def run_identity_battery(dgp, n: int, seed: int) -> list:
    return [
        verify_theorem1_mc(dgp, g, n, seed, name=name)
        for name, g in identity_battery(dgp).items()
    ]


# Model files

def load_model_file(path: str) -> dict:
    """
    Reads a diagnose model file, a JSON object with a "check" of "ict"
    (rows of `ICT_COLUMNS` under "table") or "point-exposure" (rows of
    `OMEGA_COLUMNS` under "omega" and of `PA_COLUMNS` under "p_a").
    """
    try:
        with open(path, "r", encoding="utf-8") as file:
            model = json.load(file)
    except OSError as e:
        logging.error(f"Failed to open model file: {path}.", exc=e)
        raise
    except json.JSONDecodeError as e:
        raise MalformedTable(f"{path} is not valid JSON: {e}") from e

    if not isinstance(model, dict) or "check" not in model:
        raise MalformedTable(f"{path} must be an object with a \"check\" key")
    return model

def run_model(model: dict) -> list:
    check = model.get("check")
    try:
        if check == "ict":
            return [check_ict(pd.DataFrame(model["table"]))]
        if check == "point-exposure":
            return [check_point_exposure_converse(pd.DataFrame(model["omega"]), pd.DataFrame(model["p_a"]))]
    except KeyError as e:
        raise MalformedTable(f"model file misses the {e} entry") from e
    raise MalformedTable(f"unknown check {check!r}, expected one of: ict, point-exposure")
