"""
Shared fixtures for the citest test suite.
"""
import logging

import numpy as np
import pytest

from services.citest.observability import metrics


@pytest.fixture(autouse=True)
def reset_metrics():
    """Every test starts with empty counters."""
    metrics.reset()
    yield
    metrics.reset()


@pytest.fixture
def counter_value():
    """Look up one counter in the metrics snapshot, 0 when it was never touched."""
    def lookup(name, labels=None):
        for counter in metrics.get_metrics()['counters']:
            if counter['name'] == name and counter['labels'] == (labels or {}):
                return counter['value']
        return 0
    return lookup


@pytest.fixture(autouse=True)
def restore_package_logger():
    """Undo configure_logging so caplog keeps seeing package records."""
    package_logger = logging.getLogger("services.citest")
    yield
    for handler in list(package_logger.handlers):
        if getattr(handler, "_citest_handler", False):
            package_logger.removeHandler(handler)
    package_logger.propagate = True
    package_logger.setLevel(logging.NOTSET)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
