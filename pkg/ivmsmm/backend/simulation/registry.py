# registry.py
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

from ivmsmm.backend.simulation.common import InvalidParams, params_from_dict
from ivmsmm.backend.simulation.continuous import ContinuousDgp
from ivmsmm.backend.simulation.linear import LinearDgp
from ivmsmm.backend.simulation.markov import MarkovDgp

DGPS = {
    LinearDgp.name: LinearDgp,
    MarkovDgp.name: MarkovDgp,
    ContinuousDgp.name: ContinuousDgp,
}


def make_dgp(name: str, values: dict = None):
    """Builds a DGP from string-valued overrides of its default parameters."""
    if name not in DGPS:
        raise InvalidParams(f"unknown dgp {name!r}, expected one of: {', '.join(DGPS)}")

    dgp_class = DGPS[name]
    return dgp_class(params_from_dict(dgp_class.params_class, values or {}))
