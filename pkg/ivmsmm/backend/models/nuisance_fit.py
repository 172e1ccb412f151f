# nuisance_fit.py
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

import numpy as np
from scipy import linalg

from ivmsmm.backend.logger import Logger
from ivmsmm.backend.utils.common import format_value, read_keyfile, write_keyfile

logging = Logger("nuisance_fit")


@dataclass(frozen=True, eq=False)
class NuisanceFit:
    """
    Fitted nuisance parameters.

    `scores` holds one row per subject (scores summed over periods) and
    `information` is the per-subject mean observed information, i.e. minus
    the Jacobian of the mean score at `theta`. `blocks` maps parameter
    groups (alpha, nu, gamma, delta, p_L, ...) to slices of `theta`.
    """
    model: str
    names: tuple
    theta: np.ndarray
    blocks: dict
    scores: np.ndarray
    information: np.ndarray
    converged: bool = True
    loglik: float = float("nan")
    options: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return len(self.theta)

    def param(self, block: str) -> np.ndarray:
        return self.theta[self.blocks[block]]

    @property
    def params(self) -> dict:
        return {block: self.param(block) for block in self.blocks}

    def mean_score(self) -> np.ndarray:
        if self.scores.size == 0:
            return np.zeros(self.dim)
        return self.scores.mean(axis=0)

    def to_dict(self) -> dict:
        values = {"model": self.model, "converged": self.converged, "loglik": self.loglik}
        values.update({f"option.{k}": v for k, v in self.options.items()})
        for name, value in zip(self.names, self.theta):
            values[f"coef.{name}"] = value
        return values

    def save(self, path: str) -> None:
        write_keyfile(path, self.to_dict())

    @classmethod
    def load(cls, path: str) -> NuisanceFit:
        """Reads coefficients back; scores and information are not stored."""
        values = read_keyfile(path)
        names = tuple(k[len("coef."):] for k in values if k.startswith("coef."))
        theta = np.array([float(values[f"coef.{name}"]) for name in names])

        blocks = {}
        for i, name in enumerate(names):
            block = name.split("[")[0]
            start = blocks.get(block, slice(i, i)).start
            blocks[block] = slice(start, i + 1)

        options = {k[len("option."):]: v for k, v in values.items() if k.startswith("option.")}
        return cls(
            model=values["model"], names=names, theta=theta, blocks=blocks,
            scores=np.zeros((0, len(theta))), information=np.zeros((len(theta), len(theta))),
            converged=values.get("converged", "true") == "true",
            loglik=float(values.get("loglik", "nan")), options=options
        )

    def __str__(self) -> str:
        pairs = ", ".join(f"{n}={format_value(round(float(v), 6))}" for n, v in zip(self.names, self.theta))
        return f"{self.model}({pairs})"


def empty_fit(model: str = "known") -> NuisanceFit:
    return NuisanceFit(model, (), np.zeros(0), {}, np.zeros((0, 0)), np.zeros((0, 0)))

def merge_fits(*fits: NuisanceFit) -> NuisanceFit:
    """Stacks independent fits into one parameter vector with block-diagonal information."""
    fits = [fit for fit in fits if fit is not None and fit.dim > 0]
    if not fits:
        return empty_fit()
    if len(fits) == 1:
        return fits[0]

    n = fits[0].scores.shape[0]
    names, blocks, offset = [], {}, 0
    for fit in fits:
        prefix = fit.model
        names += [f"{prefix}.{name}" for name in fit.names]
        for block, part in fit.blocks.items():
            blocks[f"{prefix}.{block}"] = slice(part.start + offset, part.stop + offset)
        offset += fit.dim

    scores = np.hstack([
        fit.scores if fit.scores.shape[0] == n else np.zeros((n, fit.dim)) for fit in fits
    ])

    return NuisanceFit(
        model="+".join(fit.model for fit in fits),
        names=tuple(names),
        theta=np.concatenate([fit.theta for fit in fits]),
        blocks=blocks,
        scores=scores,
        information=linalg.block_diag(*[fit.information for fit in fits]),
        converged=all(fit.converged for fit in fits),
        loglik=float(sum(fit.loglik for fit in fits)),
    )
