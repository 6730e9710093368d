import math

import pytest

from pedmdp.lattice import GridPos, Lattice, build_static_field

# weight of the lower-potential state in a two-state exp(-U) split with dU = 1
P_NEAR = 1 / (1 + math.exp(-1))


@pytest.fixture
def corridor():
    """1x3 corridor (cells 1..3, exit at cell 1) plus one side cell for the agent.

    Row 1 is walled off except its last cell (index 6), which is not a
    euclidean neighbour of any corridor cell besides cell 3's diagonal.
    """
    lat = Lattice(3, 2, GridPos(0, 0), frozenset({GridPos(0, 1), GridPos(1, 1)}), "euclidean")
    return lat, build_static_field(lat)


@pytest.fixture
def grid3():
    lat = Lattice(3, 3, GridPos(0, 0))
    return lat, build_static_field(lat)


@pytest.fixture
def grid4():
    lat = Lattice(4, 4, GridPos(0, 0))
    return lat, build_static_field(lat)
