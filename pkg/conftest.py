import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long reproductions, run only with QPERC_RUN_SLOW=1")


def pytest_collection_modifyitems(config, items):
    if os.getenv("QPERC_RUN_SLOW", "0").lower() in ("1", "true", "yes"):
        return
    skip_slow = pytest.mark.skip(reason="set QPERC_RUN_SLOW=1 to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)
