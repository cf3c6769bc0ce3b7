import numpy as np
import pytest

from fbesag.graph import AdjacencyGraph, build_partition

# Five-area worked example: edges reverse-engineered from the stationary
# precision matrix (degrees 2, 3, 2, 4, 1) and validated against it in
# test_precision / test_acceptance.
FIVE_AREA_EDGES = [(0, 1), (0, 3), (1, 2), (1, 3), (2, 3), (3, 4)]


@pytest.fixture
def five_area_graph():
    return AdjacencyGraph.from_edges(5, FIVE_AREA_EDGES)


@pytest.fixture
def two_region_partition(five_area_graph):
    return build_partition(five_area_graph, [0, 0, 0, 1, 1])


def q_ns(tau1, tau2):
    """The two-sub-region precision matrix of the worked example."""
    h = 0.5 * (tau1 + tau2)
    return np.array([
        [1.5 * tau1 + 0.5 * tau2, -tau1, 0.0, -h, 0.0],
        [-tau1, 2.5 * tau1 + 0.5 * tau2, -tau1, -h, 0.0],
        [0.0, -tau1, 1.5 * tau1 + 0.5 * tau2, -h, 0.0],
        [-h, -h, -h, 1.5 * tau1 + 2.5 * tau2, -tau2],
        [0.0, 0.0, 0.0, -tau2, tau2],
    ])


def q_s(tau):
    """The stationary precision matrix of the worked example."""
    return tau * np.array([
        [2.0, -1.0, 0.0, -1.0, 0.0],
        [-1.0, 3.0, -1.0, -1.0, 0.0],
        [0.0, -1.0, 2.0, -1.0, 0.0],
        [-1.0, -1.0, -1.0, 4.0, -1.0],
        [0.0, 0.0, 0.0, -1.0, 1.0],
    ])
