import logging

import pytest

from ivmsmm.backend.logger import PACKAGE_LOGGER


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False,
                     help="run Monte Carlo acceptance tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def package_log(caplog):
    """caplog wired to the package logger, which does not propagate."""
    package = logging.getLogger(PACKAGE_LOGGER)
    package.addHandler(caplog.handler)
    caplog.set_level(logging.DEBUG, logger=PACKAGE_LOGGER)
    yield caplog
    package.removeHandler(caplog.handler)
