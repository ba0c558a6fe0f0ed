import numpy as np
import pytest

from tapcast import data, nn, pool
from tapcast.core import SplitSpec


def last_weeks_split(ds, n_weeks=3):
    test_start = ds.end - (7 * n_weeks - 1)
    return SplitSpec(ds.start, test_start - 1, test_start, n_weeks)


@pytest.fixture(scope="session")
def small_dataset():
    ds, drivers = data.synth_generate(data.ScenarioSpec(n_topics=3, n_days=100, seed=3))
    return ds


@pytest.fixture(scope="session")
def small_pool(small_dataset):
    """Cheaply trained 12-model pool over the small dataset."""
    split = last_weeks_split(small_dataset)
    specs = pool.build_pool(small_dataset.platform, small_dataset.topics, base_seed=1)
    cfg = nn.TrainConfig(epochs=3, hidden_candidates=(4,))
    members, failures = pool.train_pool(specs, small_dataset, split, cfg)
    assert not failures
    return members, split


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("tests.test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
