"""Shared fixtures and the acceptance-summary terminal hook."""

import os

import numpy as np
import pytest

FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures")


def fixture_path(*parts):
    return os.path.join(FIXTURES, *parts)


def run_cli(*argv):
    """Invoke the CLI in-process; returns the exit code."""
    from real2sim.cli import main

    return main(list(argv))


@pytest.fixture(scope="session")
def chain():
    from real2sim.kinematics import KinematicChain

    return KinematicChain.from_yaml(fixture_path("chain.yaml"))


@pytest.fixture
def rng():
    return np.random.default_rng(42)


# One line per acceptance criterion, echoed at the end of the run so the
# pass/fail status of each is visible regardless of pytest verbosity.
ACCEPTANCE_LINES = []


def record_acceptance(number, description, ok):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} - {description}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
