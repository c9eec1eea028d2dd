import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special

from clusterwalk.cluster import WeightedSubgraph, cluster_graph
from clusterwalk.percolation import Box, sample_bond_config
from clusterwalk.walk import (exact_heat_kernel, exit_probability, exit_time_stats, jump_matrix, lattice_oracle,
                              leak_bound, mc_heat_kernel, msd, nash_functionals, poisson_cutoff, simulate_walk,
                              walk_positions)

from conftest import cycle_graph, origin_vertex, path_graph, small_cluster


def expm_kernel(graph, t):
    """q_t from the matrix exponential of the generator, divided by mu."""
    A = graph.adj.toarray()
    deg = A.sum(1)
    G = A / deg[:, None] - np.eye(graph.n)
    return scipy.linalg.expm(t * G) / deg[None, :]


def test_single_edge_closed_form():
    g = path_graph(2)
    t = np.array([0.0, 0.3, 1.0, 5.0])
    k = exact_heat_kernel(g, t)
    assert np.allclose(k.q[:, 0, 0], (1 + np.exp(-2 * t)) / 2, atol=1e-12, rtol=0)
    assert np.allclose(k.q[:, 0, 1], (1 - np.exp(-2 * t)) / 2, atol=1e-12, rtol=0)


@pytest.mark.parametrize("method", ["uniformization", "spectral"])
def test_kernel_matches_matrix_exponential(method):
    g = small_cluster(4, side=8)
    k = exact_heat_kernel(g, [0.5, 3.0], method=method)
    for ti, t in enumerate([0.5, 3.0]):
        assert np.allclose(k.matrix(ti), expm_kernel(g, t), atol=1e-12)


def test_selected_rows_match_full_matrix():
    g = small_cluster(5, side=8)
    full = exact_heat_kernel(g, [2.0])
    rows = exact_heat_kernel(g, [2.0], sources=[3, 0])
    assert np.allclose(rows.q[0], full.q[0][[3, 0]], atol=1e-13)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2 ** 32), t=st.floats(0.05, 10), s=st.floats(0.05, 10))
def test_kernel_invariants(seed, t, s):
    g = small_cluster(seed, side=8)
    deg = np.asarray(g.adj.sum(1)).ravel()
    k = exact_heat_kernel(g, [t, s, t + s])
    qt, qs, qts = k.q
    assert np.allclose(qt, qt.T, atol=1e-10)
    assert np.allclose((qt * deg[None, :]).sum(1), 1.0, atol=1e-10)
    assert qt.min() > -1e-15
    assert np.allclose((qt * deg[None, :]) @ qs, qts, atol=1e-10)


def test_lattice_oracle_against_scipy_bessel():
    for d, t, y in [(1, 1.0, (10,)), (2, 3.5, (1, -2)), (3, 7.0, (0, 4, 1))]:
        want = np.prod([special.ive(abs(c), t / d) for c in y])
        assert lattice_oracle(d, t, y) == pytest.approx(want, rel=1e-10)


def test_lattice_oracle_sums_to_one():
    ys = np.arange(-60, 61)
    assert sum(lattice_oracle(1, 9.0, (y,)) for y in ys) == pytest.approx(1.0, abs=1e-12)


def test_box_kernel_agrees_with_lattice_within_leak_bound():
    g = cluster_graph(sample_bond_config(Box.centered(2, 40), 1.0, 0))
    x = origin_vertex(g)
    t = 4.0
    k = exact_heat_kernel(g, [t], sources=[x])
    bound = leak_bound(t, 20)
    for y in [(0, 0), (1, 0), (2, -1), (3, 3)]:
        p_box = k.q[0, 0, g.index(y)] * 4
        assert abs(p_box - lattice_oracle(2, t, y)) <= bound


def test_monte_carlo_kernel_within_error_bars():
    g = small_cluster(2, side=8)
    exact = exact_heat_kernel(g, [1.5], sources=[0]).q[0, 0]
    mc = mc_heat_kernel(g, 0, [1.5], trials=40000, seed=1)
    deg = np.asarray(g.adj.sum(1)).ravel()
    p = exact * deg
    # binomial error from the exact probabilities; 5 sigma over a few hundred vertices
    se = np.sqrt(p * (1 - p) / 40000) / deg
    assert np.all(np.abs(mc.q[0, 0] - exact) <= 5 * se + 1e-12)


def test_trajectory_is_a_nearest_neighbour_path():
    g = small_cluster(1, side=8)
    tr = simulate_walk(g, 0, 20.0, seed=3)
    A = g.adj
    for a, b in zip(tr.vertices, tr.vertices[1:]):
        assert A[a, b] == 1
    assert np.all(np.diff(tr.jump_times) > 0) and tr.jump_times[-1] <= 20.0
    assert tr.position(0.0) == 0


def test_walk_positions_seeded():
    g = cycle_graph(10)
    a = walk_positions(g, 0, [1.0, 2.0], 100, seed=5)
    b = walk_positions(g, 0, [1.0, 2.0], 100, seed=5)
    assert np.array_equal(a, b) and a.shape == (2, 100)


def test_isolated_start_rejected():
    g = WeightedSubgraph.from_edges(np.arange(3), [(0, 1)])
    with pytest.raises(ValueError):
        simulate_walk(g, 2, 1.0, 0)
    with pytest.raises(ValueError):
        jump_matrix(g)


def test_poisson_cutoff_tail():
    k, tail = poisson_cutoff(50.0)
    assert tail < 1e-13 and k > 50
    assert poisson_cutoff(0.0) == (0, 0.0)


def test_exit_from_unit_ball_is_exponential():
    g = cycle_graph(8)
    ts = np.array([0.5, 1.0, 2.0])
    assert np.allclose(exit_probability(g, 0, 1, ts), 1 - np.exp(-ts), atol=1e-12)
    st_ = exit_time_stats(g, 0, 1, trials=20000, times=ts, seed=2)
    assert np.all((st_.ci_lo <= 1 - np.exp(-ts)) & (1 - np.exp(-ts) <= st_.ci_hi))


def test_exit_probability_matches_monte_carlo():
    g = cluster_graph(sample_bond_config(Box.centered(2, 20), 1.0, 0))
    x = origin_vertex(g)
    ts = np.array([5.0, 15.0])
    exact = exit_probability(g, x, 4, ts)
    mc = exit_time_stats(g, x, 4, trials=20000, times=ts, seed=4)
    assert np.all((mc.ci_lo - 0.005 <= exact) & (exact <= mc.ci_hi + 0.005))


def test_killed_kernel_loses_mass():
    g = path_graph(21)
    inside = np.abs(np.arange(21) - 10) < 5
    k = exact_heat_kernel(g, [1.0, 4.0, 16.0], killed=inside, sources=[10])
    deg = np.asarray(g.adj.sum(1)).ravel()
    mass = (k.q[:, 0] * deg).sum(1)
    assert np.all(np.diff(mass) < 0) and mass[0] < 1
    assert np.all(k.q[:, 0, ~inside] == 0)


def test_nash_entropy_nondecreasing(cluster06):
    g, x = cluster06
    curves = nash_functionals(g, x, np.linspace(0.5, 30, 25))
    assert np.all(np.diff(curves.Q) >= -1e-10)
    assert np.all(np.diff(curves.M) >= -1e-10)


def test_msd_is_t_on_the_open_lattice(lattice_ball):
    g, x = lattice_ball
    ts = np.array([1.0, 2.0, 4.0])
    assert np.allclose(msd(g, x, ts), ts, atol=1e-10)


def test_msd_monte_carlo_close_to_exact(cluster06):
    g, x = cluster06
    exact = msd(g, x, [5.0])
    mc = msd(g, x, [5.0], trials=20000, seed=1)
    assert mc[0] == pytest.approx(exact[0], rel=0.05)


def test_kernel_csv(tmp_path):
    k = exact_heat_kernel(path_graph(3), [1.0], sources=[0])
    k.to_csv(tmp_path / "k.csv")
    lines = (tmp_path / "k.csv").read_text().splitlines()
    assert lines[0] == "t,x,y,q,stderr" and len(lines) == 4
