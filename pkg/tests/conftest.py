import pytest

from radarcal.dataset import generate_dataset
from radarcal.experiment import ExperimentConfig, default_dataset_config, run_experiment

# (criterion number, passed, detail) lines collected by the acceptance suite
ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def default_dataset():
    return generate_dataset(default_dataset_config())


@pytest.fixture(scope="session")
def default_experiment(default_dataset):
    """The full default benchmark: 4 policies x 10 seeds, with the corruption sweep."""
    return run_experiment(ExperimentConfig(), dataset=default_dataset)


@pytest.fixture
def record_criterion():
    def record(number, passed, detail):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
