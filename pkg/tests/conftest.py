import networkx as nx
import numpy as np
import pytest

from clusterwalk.cluster import WeightedSubgraph, cluster_graph
from clusterwalk.percolation import Box, sample_bond_config


def path_graph(n):
    return WeightedSubgraph.from_edges(np.arange(n), [(i, i + 1) for i in range(n - 1)])


def cycle_graph(n):
    return WeightedSubgraph.from_edges(np.arange(n), [(i, (i + 1) % n) for i in range(n)])


def origin_vertex(graph):
    return int(np.argmin(np.abs(graph.coords).sum(axis=1)))


def small_cluster(seed, side=14, p=0.6, max_vertices=500):
    """Largest cluster of a random box, trimmed by shrinking the box until it fits the cap."""
    while True:
        g = cluster_graph(sample_bond_config(Box.centered(2, side), p, seed))
        if g.n <= max_vertices:
            return g
        side -= 2


def random_connected_graph(seed, size):
    """Random lattice animal of `size` sites with a spanning tree plus half of its other edges."""
    rng = np.random.default_rng(seed)
    pts = [(0, 0)]
    seen = {(0, 0)}
    while len(pts) < size:
        x = pts[rng.integers(len(pts))]
        a = rng.integers(2)
        s = rng.choice([-1, 1])
        y = (x[0] + s * (a == 0), x[1] + s * (a == 1))
        if y not in seen:
            seen.add(y)
            pts.append(y)
    idx = {p: i for i, p in enumerate(pts)}
    all_edges = [(idx[p], idx[q]) for p in pts for q in ((p[0] + 1, p[1]), (p[0], p[1] + 1)) if q in idx]
    tree = nx.minimum_spanning_tree(nx.Graph(all_edges))
    keep = [e for e in all_edges if tree.has_edge(*e) or rng.random() < 0.5]
    return WeightedSubgraph.from_edges(np.array(pts), keep)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def lattice_ball():
    """Fully open 2-d box of side 40 as a graph, with its center."""
    g = cluster_graph(sample_bond_config(Box.centered(2, 40), 1.0, 0))
    return g, origin_vertex(g)


@pytest.fixture(scope="session")
def cluster06():
    g = cluster_graph(sample_bond_config(Box.centered(2, 40), 0.6, 11))
    return g, origin_vertex(g)


@pytest.fixture
def tmp_artifacts(tmp_path):
    return tmp_path / "artifacts"
