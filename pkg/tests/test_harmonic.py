import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clusterwalk.cluster import WeightedSubgraph, cluster_graph
from clusterwalk.harmonic import (DirichletSolver, ball_closure, harnack_ensemble, harnack_onset, harnack_ratio,
                                  oscillation, oscillation_decay, pendant_cube_graph, random_boundary_data,
                                  solve_dirichlet, walk_exit_value)
from clusterwalk.percolation import Box, sample_bond_config

from conftest import origin_vertex, path_graph, small_cluster


def dense_dirichlet(graph, inside, boundary, g):
    """Harmonic extension by a dense linear solve of the mean-value equations."""
    A = graph.adj.toarray()
    I, B = np.flatnonzero(inside), np.flatnonzero(boundary)
    M = np.diag(A[I].sum(1)) - A[np.ix_(I, I)]
    return np.linalg.solve(M, A[np.ix_(I, B)] @ g)


def test_path_interior_is_linear():
    g = path_graph(5)
    inside = np.array([False, True, True, True, False])
    sol = solve_dirichlet(g, inside, lambda c: c[:, 0].astype(float))
    assert np.allclose(sol.h, np.arange(5), atol=1e-12)


def test_coordinate_function_is_harmonic_on_open_lattice(lattice_ball):
    g, x = lattice_ball
    inside, _ = ball_closure(g, x, 10)
    sol = solve_dirichlet(g, inside, lambda c: 2.0 * c[:, 0] - c[:, 1])
    want = 2.0 * g.coords[:, 0] - g.coords[:, 1]
    assert np.allclose(sol.values(inside), want[inside], atol=1e-9)
    assert sol.residual < 1e-9


@pytest.mark.parametrize("seed", range(4))
def test_solver_matches_dense_oracle(seed):
    g = small_cluster(seed, side=12)
    x = origin_vertex(g)
    inside, boundary = ball_closure(g, x, 5)
    data = random_boundary_data(boundary.sum(), 1, seed)[0]
    sol = DirichletSolver(g, inside).solve(data)
    assert np.allclose(sol.values(inside), dense_dirichlet(g, inside, boundary, data), atol=1e-10)


def test_iterative_path_matches_direct(monkeypatch):
    import clusterwalk.harmonic as hm
    g = small_cluster(3, side=14)
    x = origin_vertex(g)
    inside, boundary = ball_closure(g, x, 8)
    data = random_boundary_data(boundary.sum(), 1, 0)[0]
    direct = DirichletSolver(g, inside).solve(data).h
    monkeypatch.setattr(hm, "DIRECT_CAP", 0)
    iterative = DirichletSolver(g, inside).solve(data).h
    assert np.allclose(direct[inside], iterative[inside], atol=1e-8)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2 ** 32), R=st.integers(2, 6))
def test_maximum_principle(seed, R):
    g = small_cluster(seed % 1000, side=10)
    x = origin_vertex(g)
    inside, boundary = ball_closure(g, x, R)
    if not boundary.any():
        return
    data = np.random.default_rng(seed).normal(size=boundary.sum())
    h = DirichletSolver(g, inside).solve(data).values(inside)
    assert h.min() >= data.min() - 1e-9 and h.max() <= data.max() + 1e-9


def test_stranded_vertex_rejected():
    g = WeightedSubgraph.from_edges(np.arange(4), [(0, 1), (2, 3)])
    inside = np.array([True, False, True, True])
    with pytest.raises(ValueError, match="no path to the boundary"):
        DirichletSolver(g, inside, boundary=np.array([False, True, False, False]))


def test_harnack_ratio_requires_positive_values():
    g = path_graph(5)
    inside = np.array([False, True, True, True, False])
    sol = solve_dirichlet(g, inside, np.array([-1.0, 1.0]))
    with pytest.raises(ValueError):
        harnack_ratio(sol, inside)
    assert oscillation(sol.h, inside) == pytest.approx(1.0)


def test_walk_exit_value_matches_solution():
    g = cluster_graph(sample_bond_config(Box.centered(2, 20), 1.0, 0))
    x = origin_vertex(g)
    inside, boundary = ball_closure(g, x, 5)
    data = random_boundary_data(boundary.sum(), 1, 7)[0]
    h = DirichletSolver(g, inside).solve(data).h[x]
    mean, se = walk_exit_value(g, inside, data, x, trials=20000, seed=1)
    assert abs(mean - h) < 4 * se


def test_harnack_ensemble_on_open_lattice(lattice_ball):
    g, x = lattice_ball
    ens = harnack_ensemble(g, x, 8, datasets=10, seed=0)
    assert ens.max_principle and ens.max_residual < 1e-9
    assert np.all(ens.ratios >= 1) and np.all(ens.decay < 1)
    decay, worst = oscillation_decay(g, x, 8, datasets=10, seed=0)
    assert worst == decay.max() < 1


def test_harnack_onset():
    assert harnack_onset([2, 4, 8, 16, 32], [50.0, 3.0, 2.5, 2.4, 2.3]) == 4
    assert harnack_onset([2, 4, 8], [9.0, 1.0, 80.0], window=1) == math.inf


def test_pendant_cube_structure():
    pc = pendant_cube_graph(2, 3)
    assert pc.cube.sum() == 9
    cut = pc.graph.adj[pc.cube][:, ~pc.cube].sum()
    assert cut == 1
    assert pc.graph.is_connected() and pc.ratio > 0
