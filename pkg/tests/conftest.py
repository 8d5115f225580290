import numpy as np
import pytest

from shapnoise.core import dataset_from_records
from shapnoise.harness import SynthConfig, synth_gaussian


def gaussian_pair(n_pos, n_neg, seed, sep=3.0, dim=2):
    return synth_gaussian(SynthConfig(n_pos, n_neg, dim, sep, seed))


@pytest.fixture
def tiny_test():
    """2 positives, 3 negatives on a line."""
    return dataset_from_records(
        [
            (0, [2.0], "pos"),
            (1, [3.0], "pos"),
            (2, [-1.0], "neg"),
            (3, [-2.0], "neg"),
            (4, [-3.0], "neg"),
        ]
    )


@pytest.fixture
def five_point_pair():
    return gaussian_pair(2, 3, seed=11, sep=2.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list[str] = []


def record_criterion(number, name, passed, detail=""):
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {name}" + (f" -- {detail}" if detail else "")
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
