import pytest

from unlearnbench.datagen import SampleSet
from unlearnbench.harness import ExperimentConfig, prepare

# (criterion number, passed, detail) lines collected by the acceptance suite
ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def work_config():
    return ExperimentConfig(clock="work")


@pytest.fixture(scope="session")
def prep(work_config):
    """Default bundle, forget split, and trained original/gold models for seed 0."""
    return prepare(work_config, 0)


class AuditedSampleSet(SampleSet):
    """SampleSet that counts every read of its feature, label or speaker columns."""

    def __init__(self, X, y, s):
        super().__init__(X, y, s)
        self.reads = 0

    @classmethod
    def wrap(cls, data):
        return cls(data.X, data.y, data.s)

    @property
    def X(self):
        self.reads += 1
        return super().X

    @property
    def y(self):
        self.reads += 1
        return super().y

    @property
    def s(self):
        self.reads += 1
        return super().s


@pytest.fixture
def audited():
    return AuditedSampleSet.wrap


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for num, ok, detail in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(f"criterion {num:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
