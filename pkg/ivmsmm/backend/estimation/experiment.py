# experiment.py
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

from dataclasses import dataclass, replace

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from ivmsmm.backend.estimation.estimators import EstimatorConfig, EstimatorKind, estimate
from ivmsmm.backend.estimation.inference import (
    InvalidArgument,
    bootstrap,
    normal_intervals,
    sandwich_variance,
)
from ivmsmm.backend.exceptions import IvMsmmError
from ivmsmm.backend.logger import Logger
from ivmsmm.backend.simulation.common import InvalidParams
from ivmsmm.backend.simulation.registry import make_dgp
from ivmsmm.backend.utils.common import make_rng

logging = Logger("experiment")

COVERAGE_COLUMNS = ["dgp", "kind", "n", "T", "R", "bias", "mc_sd", "sw_sd", "bs_sd",
                    "sw_cover", "bs_cover", "seed"]
# Stream index for deriving per-replication bootstrap seeds
STREAM_BOOTSTRAP_SEED = 4


@dataclass(frozen=True)
class ReplicationOutcome:
    kind: str
    estimate: float = np.nan
    sw_se: float = np.nan
    bs_se: float = np.nan
    sw_cover: float = np.nan
    bs_cover: float = np.nan
    failed: bool = False
    bootstrap_failed: bool = False


def default_config(kind: EstimatorKind, dgp, **overrides) -> EstimatorConfig:
    """
    Nuisance models used for `dgp` in experiments: the probit-mixture on
    (1, L) for the linear DGP, the observed Markov model for the Markov DGP
    and the true nuisances for the continuous DGP. f_Z is known.
    """
    if dgp.name == "markov":
        config = EstimatorConfig(kind=kind, treatment_model="markov", q_known=dgp.params.q, dgp=dgp)
    elif dgp.name == "continuous":
        config = EstimatorConfig(kind=kind, treatment_model="known", dgp=dgp)
    else:
        config = EstimatorConfig(kind=kind, treatment_model="probit", dgp=dgp)
    return replace(config, **overrides)

def _run_replication(dgp, configs, n, seed, replication, level, B):
    output = dgp.simulate(n, seed, replication)
    observed = output.panel.drop_latent()
    target = len(dgp.beta) - 1
    truth = dgp.beta[target]

    bootstrap_seed = int(make_rng(seed, replication, STREAM_BOOTSTRAP_SEED).integers(2 ** 31))

    outcomes = []
    for config in configs:
        panel = output.panel if config.kind is EstimatorKind.ORACLE else observed
        try:
            result = estimate(panel, config)
            cov = sandwich_variance(result)
        except IvMsmmError as e:
            logging.debug(f"Replication {replication} of {config.kind.value} failed: {e}")
            outcomes.append(ReplicationOutcome(config.kind.value, failed=True))
            continue

        low, high = normal_intervals(result.beta, cov, level)[target]
        outcome = ReplicationOutcome(
            config.kind.value, result.beta[target], float(np.sqrt(max(cov[target, target], 0.0))),
            sw_cover=float(low <= truth <= high),
        )
        if B > 0:
            try:
                resampled = bootstrap(panel, config, B, bootstrap_seed, level)
            except IvMsmmError as e:
                logging.debug(f"Bootstrap of replication {replication} ({config.kind.value}) failed: {e}")
                outcome = replace(outcome, bootstrap_failed=True)
            else:
                low, high = resampled.intervals[target]
                outcome = replace(
                    outcome, bs_se=float(np.sqrt(resampled.cov[target, target])),
                    bs_cover=float(low <= truth <= high),
                )
        outcomes.append(outcome)
    return outcomes

def _summarize(dgp, kind, n, T, R, seed, outcomes) -> dict:
    kept = [o for o in outcomes if not o.failed]
    if len(kept) < len(outcomes):
        logging.warning(f"{kind}: {len(outcomes) - len(kept)} of {R} replications failed at n={n}, T={T}")
    bootstrap_failures = sum(o.bootstrap_failed for o in kept)
    if bootstrap_failures:
        logging.warning(f"{kind}: bootstrap failed in {bootstrap_failures} of {len(kept)} replications "
                        f"at n={n}, T={T}")
    estimates = np.array([o.estimate for o in kept])
    truth = dgp.beta[-1]

    def mean(values):
        values = np.array(values, dtype=float)
        return float(np.nanmean(values)) if len(values) and not np.all(np.isnan(values)) else np.nan

    return {
        "dgp": dgp.name, "kind": kind, "n": n, "T": T, "R": R,
        "bias": float(estimates.mean() - truth) if len(kept) else np.nan,
        "mc_sd": float(estimates.std(ddof=1)) if len(kept) > 1 else np.nan,
        "sw_sd": mean([o.sw_se for o in kept]),
        "bs_sd": mean([o.bs_se for o in kept]),
        "sw_cover": mean([o.sw_cover for o in kept]),
        "bs_cover": mean([o.bs_cover for o in kept]),
        "seed": seed,
    }

def coverage_experiment(dgp_name: str, kinds, n_grid, T_grid, R: int, level: float = 0.95,
                        seed: int = 0, B: int = 0, jobs: int = 1, params: dict = None,
                        config_overrides: dict = None) -> pd.DataFrame:
    """
    Monte Carlo study over every (n, T) cell. Each replication draws one
    panel from stream (seed, r) and fits all `kinds` on it; the summary
    reports the slope coefficient, the last entry of β.
    """
    if R < 1:
        raise InvalidArgument(f"replications must be at least 1, got {R}")
    if R < 100:
        logging.warning(f"Only {R} replications requested; coverage will be imprecise")

    kinds = [EstimatorKind(k) if isinstance(k, str) else k for k in kinds]
    rows = []
    for T in T_grid:
        values = dict(params or {})
        values["T"] = str(T)
        dgp = make_dgp(dgp_name, values)
        if dgp.name == "continuous" and T != 1:
            raise InvalidParams("the continuous DGP has a single period")
        configs = [default_config(kind, dgp, **(config_overrides or {})) for kind in kinds]

        for n in n_grid:
            logging.info(f"{dgp.name}: T={T}, n={n}, {R} replications")
            per_replication = Parallel(n_jobs=jobs)(
                delayed(_run_replication)(dgp, configs, n, seed, r, level, B) for r in range(R)
            )
            for i, kind in enumerate(kinds):
                outcomes = [replication[i] for replication in per_replication]
                rows.append(_summarize(dgp, kind.value, n, T, R, seed, outcomes))

    return pd.DataFrame(rows, columns=COVERAGE_COLUMNS)
