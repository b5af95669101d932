import numpy as np
import pytest

from coupledwave.config import DEFAULT_CONFIG, parse_config_text
from coupledwave.experiments import build_problem

# PASS/FAIL lines recorded by the acceptance tests, echoed in the terminal summary
ACCEPTANCE_LINES = []


def make_config(**overrides):
    """Default configuration with ``section__key=value`` overrides."""
    cfg = parse_config_text(DEFAULT_CONFIG, "<test>")
    for name, value in overrides.items():
        section, key = name.split("__")
        cfg.override(section, key, value)
    return cfg


@pytest.fixture(scope="session")
def small_problem():
    """41-node default layout, both components observed on omega."""
    return build_problem(make_config(grid__n_nodes=41, grid__dist_margin=0.0))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
