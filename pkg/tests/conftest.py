import numpy as np
import pytest

from sinrcolor import PhysicalParams, build_topology


@pytest.fixture
def params():
    """Default physical profile used across the suite (r_T ~ 1.28 * r_b)."""
    return PhysicalParams(alpha=4.0, beta=1.5, noise=1.0, power=4.0,
                          epsilon=0.1, r_b=1.0)


@pytest.fixture
def pair_topology(params):
    """Two nodes half a broadcasting range apart."""
    return build_topology({0: (0.0, 0.0), 1: (0.5, 0.0)}, params)


@pytest.fixture
def line_topology(params):
    """Three nodes on a line, 0.9*r_b apart (a path graph)."""
    return build_topology({0: (0.0, 0.0), 1: (0.9, 0.0), 2: (1.8, 0.0)}, params)


class ScriptedRng:
    """Stand-in for a numpy Generator whose integer draws follow a script;
    lets protocol tests force specific color choices."""

    def __init__(self, picks):
        self.picks = list(picks)

    def integers(self, low, high=None):
        if high is None:
            low, high = 0, low
        if self.picks:
            value = self.picks.pop(0)
        else:
            value = 0
        assert low <= value < high, f"scripted pick {value} outside [{low},{high})"
        return value


@pytest.fixture
def scripted_rng():
    return ScriptedRng
