import numpy as np
import pytest

from wamcast.grid import GridSpec
from wamcast.labeling import label_dataset
from wamcast.synth import SynthConfig, generate

# Acceptance results collected by tests/test_acceptance.py, echoed at the end of the run.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_synth():
    """A 4x6 grid over 10 years: quick enough for full LOOCV in unit tests."""
    config = SynthConfig(grid=GridSpec(8.0, -12.0, 4, 6, 1.0), years=10)
    cubes, panel, truth = generate(config)
    labels = label_dataset(cubes["observed"])
    return config, cubes, panel, truth, labels


@pytest.fixture(scope="session")
def default_synth():
    config = SynthConfig()
    cubes, panel, truth = generate(config)
    labels = label_dataset(cubes["observed"])
    return config, cubes, panel, truth, labels
