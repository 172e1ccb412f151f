# config.py
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

import os

from ivmsmm.backend.exceptions import IvMsmmError
from ivmsmm.backend.logger import Logger
from ivmsmm.backend.utils.common import parse_float_list, parse_int_list, read_keyfile

logging = Logger("config")


""" Custom exception class """
class ConfigError(IvMsmmError):
    pass


class Settings:
    """
    Values of one command, read from an optional flat `key = value` file and
    overridden by command-line flags. Flag values of None are unset.
    """

    def __init__(self, values: dict = None, source: str = None):
        self.values = dict(values or {})
        self.source = source or "command line"

    @classmethod
    def load(cls, path: str = None, flags: dict = None) -> Settings:
        values = {}
        if path:
            if not os.path.isfile(path):
                raise ConfigError(f"config file {path} does not exist")
            values = read_keyfile(path)
            logging.debug(f"Loaded {len(values)} settings from {path}")

        for key, value in (flags or {}).items():
            if value is not None:
                values[key] = value
        return cls(values, path)

    def __contains__(self, key) -> bool:
        return key in self.values

    def _convert(self, key, default, convert, what):
        if key not in self.values:
            if default is None:
                raise ConfigError(f"missing setting {key!r} ({self.source})")
            return default
        try:
            return convert(self.values[key])
        except (TypeError, ValueError):
            raise ConfigError(f"setting {key!r} must be {what}, got {self.values[key]!r}") from None

    def get_str(self, key, default=None) -> str:
        return self._convert(key, default, str, "text")

    def get_int(self, key, default=None) -> int:
        return self._convert(key, default, lambda v: int(float(v)), "an integer")

    def get_float(self, key, default=None) -> float:
        return self._convert(key, default, float, "a number")

    def get_bool(self, key, default=None) -> bool:
        def convert(value):
            if isinstance(value, bool):
                return value
            text = str(value).strip().lower()
            if text in ("1", "true", "yes", "on"):
                return True
            if text in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        return self._convert(key, default, convert, "true or false")

    def get_int_list(self, key, default=None) -> list:
        return self._convert(key, default, parse_int_list, "a comma-separated list of integers")

    def get_float_list(self, key, default=None) -> list:
        return self._convert(key, default, parse_float_list, "a comma-separated list of numbers")

    def subset(self, keys) -> dict:
        """String values of the given keys that are set."""
        return {key: str(self.values[key]) for key in keys if key in self.values}
