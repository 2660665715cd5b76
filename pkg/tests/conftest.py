"""Shared fixtures: inclusions and towers are built once per session."""

import pytest

from rigidpa import towers as tw

# Tolerance ladder used across the suite.
TOL_EXACT = 0.0
TOL_TIGHT = 1e-10
TOL_NUM = 1e-9
TOL_LOOSE = 1e-8

FIXTURES = ("trace2", "state2", "diag")


@pytest.fixture(scope="session")
def inclusions():
    return {name: tw.load_inclusion(name) for name in FIXTURES}


@pytest.fixture(scope="session")
def towers(inclusions):
    return {name: tw.tower(inclusions[name], 3) for name in FIXTURES}


@pytest.fixture(scope="session")
def incl_trace2(inclusions):
    return inclusions["trace2"]


@pytest.fixture(scope="session")
def incl_state2(inclusions):
    return inclusions["state2"]


@pytest.fixture(scope="session")
def incl_diag(inclusions):
    return inclusions["diag"]


@pytest.fixture(scope="session")
def tower_trace2(towers):
    return towers["trace2"]


@pytest.fixture(scope="session")
def tower_state2(towers):
    return towers["state2"]


@pytest.fixture(scope="session")
def tower_diag(towers):
    return towers["diag"]
