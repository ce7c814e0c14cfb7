import collections
import collections.abc

# prefect 0.9.x still references the pre-3.10 `collections.Sequence` aliases.
for _name in ("Sequence", "Mapping", "MutableMapping", "Iterable", "Callable"):
    if not hasattr(collections, _name):
        setattr(collections, _name, getattr(collections.abc, _name))

import numpy as np
import pytest

from crtxnn import nets
from crtxnn.cortex import REGRESSION, LabeledDataset


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow reproduction tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: full experiment reproductions, run with --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def step_dataset():
    """A 1-D regression task with a jump no small network fits everywhere."""
    x = np.linspace(-1, 1, 120, endpoint=False)[:, None]
    y = np.where(x < 0, -0.5, 0.5) + 0.3 * x
    return LabeledDataset(inputs=x, targets=y, kind=REGRESSION)


@pytest.fixture
def small_regressor():
    return nets.mlp_regressor(input_size=1, hidden=(8,), output_size=1)
