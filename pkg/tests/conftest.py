import os

import pytest

import reports

from generate import grid, path
from space import build_space

PINNED = os.path.join(os.path.dirname(__file__), "data", "pinned.json")


def edge_space(m=1.0, length=1.0):
    """One interior and one boundary vertex joined by a single edge."""

    return build_space({
        "vertices": [{"id": "a", "mu": m, "role": "interior"},
                     {"id": "b", "mu": m, "role": "boundary"}],
        "edges": [{"a": "a", "b": "b", "length": length}],
    })


@pytest.fixture
def two_vertex():
    return edge_space()


@pytest.fixture
def path3():
    return build_space(path(3))


@pytest.fixture
def path4():
    return build_space(path(4))


@pytest.fixture
def path4_dipole():
    return build_space(path(4, profile="dipole"))


@pytest.fixture
def grid3():
    return build_space(grid(3))


@pytest.fixture
def grid3_dipole():
    return build_space(grid(3, profile="dipole"))


@pytest.fixture
def grid5_dipole():
    return build_space(grid(5, profile="dipole"))


@pytest.fixture(scope="session")
def pinned():
    """Regression values kept in tests/data/pinned.json. A key is recorded the
    first time it is looked up; later runs compare against the stored value."""

    values = reports.read_json(PINNED) if os.path.exists(PINNED) else {}

    def lookup(key, value):
        if key not in values:
            values[key] = value
            reports.write_json(values, PINNED)
        return values[key]

    return lookup
