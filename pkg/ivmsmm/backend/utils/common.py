# common.py
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

import re
from configparser import ConfigParser

import numpy as np
from anyascii import anyascii

from ivmsmm.backend.logger import Logger

logging = Logger()

KEYFILE_SECTION = "ivmsmm"


def to_slug_case(non_slug) -> str:
    return re.sub(r"[^0-9a-z]+", "-", anyascii(non_slug).lower()).strip("-")

def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """
    Counter-based generator for the stream addressed by `keys`.

    The same (seed, keys) always yields the same stream, and distinct keys
    yield independent streams, so replications can run in any order and on
    any worker.
    """
    sequence = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(sequence))

def format_value(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (list, tuple, np.ndarray)):
        return ",".join(format_value(v) for v in value)
    return str(value)

def parse_flat_config(text: str) -> dict:
    """Parses `key = value` lines without a section header."""
    parser = ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    parser.read_string(f"[{KEYFILE_SECTION}]\n" + text)

    return dict(parser[KEYFILE_SECTION])

def read_keyfile(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as file:
            text = file.read()
    except OSError as e:
        logging.error(f"Failed to read key-value file in location: {path}.", exc=e)
        raise

    if text.lstrip().startswith("["):
        parser = ConfigParser()
        parser.optionxform = str
        parser.read_string(text)
        return dict(parser[parser.sections()[0]])

    return parse_flat_config(text)

def write_keyfile(path: str, values: dict) -> None:
    parser = ConfigParser()
    parser.optionxform = str
    parser[KEYFILE_SECTION] = {key: format_value(value) for key, value in values.items()}

    try:
        with open(path, "w", encoding="utf-8") as file:
            parser.write(file)
    except OSError as e:
        logging.error(f"Failed to write key-value file in location: {path}.", exc=e)
        raise

def parse_float_list(text: str) -> list:
    return [float(part) for part in str(text).split(",") if part.strip()]

def parse_int_list(text: str) -> list:
    return [int(float(part)) for part in str(text).split(",") if part.strip()]
