# globals.py
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

import os

from ivmsmm.backend.utils.common import to_slug_case


data_dir = os.path.join(
    os.environ.get("XDG_DATA_HOME", os.path.expanduser("~/.local/share")),
    "ivmsmm"
)

experiments_dir = os.path.join(data_dir, "experiments")

# Default bootstrap replicate count, used when neither a config nor a flag sets B
default_bootstrap_replicates = 500

def default_jobs() -> int:
    try:
        jobs = int(os.environ.get("IVMSMM_JOBS", "1"))
    except ValueError:
        return 1

    return max(jobs, 1)

def experiment_output_path(name: str) -> str:
    return os.path.join(experiments_dir, f"{to_slug_case(name)}.csv")
