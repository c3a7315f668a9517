import numpy as np
import pytest

from qperc.config import Settings
from qperc.netcore import Edge, LinkWeight, Network, build_bridge


P_BRIDGE = 0.304


@pytest.fixture
def settings():
    return Settings(seed=7, jobs=1)


@pytest.fixture
def bridge():
    return build_bridge(LinkWeight.from_p(P_BRIDGE).theta)


def random_sp_network(rng: np.random.Generator, max_edges: int = 10, dangling: bool = True) -> Network:
    """Grow a two-terminal series-parallel network from one 0-1 link by random splits and doublings."""
    edges = [(0, 1)]
    next_node = 2
    target_edges = int(rng.integers(1, max_edges + 1))
    while len(edges) < target_edges:
        i = int(rng.integers(len(edges)))
        u, v = edges[i]
        if rng.random() < 0.5:
            edges[i] = (u, next_node)
            edges.append((next_node, v))
            next_node += 1
        else:
            edges.append((u, v))
    nodes = list(range(next_node))
    if dangling and next_node > 2 and len(edges) < max_edges + 2:
        edges.append((int(rng.integers(next_node)), next_node))
        nodes.append(next_node)
    thetas = rng.uniform(0.0, np.pi / 4, len(edges))
    return Network(tuple(nodes), tuple(Edge(u, v, float(t)) for (u, v), t in zip(edges, thetas)),
                   frozenset({0}), frozenset({1}), "random-sp")


@pytest.fixture
def sp_networks():
    rng = np.random.default_rng(2024)
    return [random_sp_network(rng) for _ in range(200)]
