# exceptions.py
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

""" Custom exception class """
class IvMsmmError(Exception):
    """
    Root of every error raised by the library.

    Modules declare their own subclasses next to the code that raises them,
    so callers can either catch a precise failure (e.g. `ZeroDelta`) or
    everything the library reports with a single `except IvMsmmError`.
    """
    pass
