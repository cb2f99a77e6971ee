"""Shared fixtures: the 5-node reference digraph and bundled config paths."""

from pathlib import Path

import numpy as np
import pytest

from ratiosim.graph import Digraph

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"

# receiver <- sender pairs of the 5-node strongly connected reference digraph
FIVE_NODE_EDGES = frozenset(
    {(1, 0), (2, 0), (2, 1), (4, 1), (4, 2), (0, 3), (2, 4), (3, 4)})

# the weight matrix that out-degree weighting produces on it
FIVE_NODE_P = np.array([
    [1 / 3, 0,     0,     1 / 2, 0],
    [1 / 3, 1 / 3, 0,     0,     0],
    [1 / 3, 1 / 3, 1 / 2, 0,     1 / 3],
    [0,     0,     0,     1 / 2, 1 / 3],
    [0,     1 / 3, 1 / 2, 0,     1 / 3],
])

FIVE_NODE_Y0 = (-1.0, 2.0, 3.0, 4.0, 2.0)   # average 2


@pytest.fixture
def five_node_graph() -> Digraph:
    return Digraph(5, FIVE_NODE_EDGES)


@pytest.fixture
def config_dir() -> Path:
    return CONFIG_DIR
