import itertools
import math
from fractions import Fraction

import networkx as nx
import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from clusterwalk.cluster import WeightedSubgraph, cluster_graph
from clusterwalk.inequality import (GoodBallConstants, classify_exceedingly_good, classify_good,
                                    classify_very_good, compute_weight, distance_to_complement, isoperimetry,
                                    poincare_constant, radius_grid, rayleigh_ratio, set_ratios,
                                    spectral_gap_poincare, weighted_poincare, whitney_cover)
from clusterwalk.percolation import Box, sample_bond_config

from conftest import cycle_graph, origin_vertex, path_graph, random_connected_graph


def brute_isoperimetry(H):
    """I, I*, J by enumerating subsets with networkx connectivity checks."""
    g = nx.Graph()
    g.add_nodes_from(range(H.n))
    g.add_edges_from(map(tuple, H.edges()))
    mu = H.mu0.astype(int)
    vol = int(mu.sum())
    I = Ic = J = math.inf
    for k in range(1, H.n):
        for A in itertools.combinations(range(H.n), k):
            S = set(A)
            cut = sum(1 for u, v in g.edges() if (u in S) != (v in S))
            vA = int(mu[list(A)].sum())
            J = min(J, Fraction(vol * cut, vA * (vol - vA)))
            if 2 * vA <= vol:
                I = min(I, Fraction(cut, vA))
                rest = [v for v in range(H.n) if v not in S]
                if nx.is_connected(g.subgraph(A)) and nx.is_connected(g.subgraph(rest)):
                    Ic = min(Ic, Fraction(cut, vA))
    return I, Ic, J


def test_path_of_four_by_hand():
    rep = isoperimetry(path_graph(4))
    assert rep.one_sided == Fraction(1, 3)
    assert rep.two_sided == Fraction(2, 3)
    assert rep.exact


@pytest.mark.parametrize("seed,size", [(0, 5), (1, 7), (2, 9), (3, 10)])
def test_exact_enumeration_matches_brute_force(seed, size):
    H = random_connected_graph(seed, size)
    rep = isoperimetry(H)
    assert (rep.one_sided, rep.one_sided_connected, rep.two_sided) == brute_isoperimetry(H)


def test_witness_attains_reported_value():
    H = random_connected_graph(7, 11)
    rep = isoperimetry(H)
    i, _ = set_ratios(H, rep.witness_one_sided)
    _, chi = set_ratios(H, rep.witness_two_sided)
    assert i == pytest.approx(float(rep.one_sided))
    assert chi == pytest.approx(float(rep.two_sided))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2 ** 32), size=st.integers(2, 12))
def test_isoperimetric_chain_of_inequalities(seed, size):
    H = random_connected_graph(seed, size)
    rep = isoperimetry(H)
    I, Ic, J = rep.one_sided, rep.one_sided_connected, rep.two_sided
    assert I >= Fraction(2, int(H.mu0.sum()))
    assert I <= Ic <= 2 * I
    assert I <= J <= 2 * I


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2 ** 32), size=st.integers(4, 14))
def test_search_mode_is_an_upper_bound(seed, size):
    H = random_connected_graph(seed, size)
    exact = isoperimetry(H)
    approx = isoperimetry(H, mode="search", seed=seed)
    assert float(approx.one_sided) >= float(exact.one_sided) - 1e-12
    assert float(approx.two_sided) >= float(exact.two_sided) - 1e-12
    assert not approx.exact


def test_disconnected_graph_rejected_with_witness():
    H = WeightedSubgraph.from_edges(np.arange(4), [(0, 1), (2, 3)])
    with pytest.raises(ValueError, match="different components"):
        isoperimetry(H)


def generalized_poincare_oracle(H):
    """1/lambda_2 of L v = lambda diag(mu) v via a dense scipy solve."""
    A = np.zeros((H.n, H.n))
    for u, v in H.edges():
        A[u, v] = A[v, u] = 1
    L = np.diag(A.sum(1)) - A
    lam = scipy.linalg.eigh(L, np.diag(H.mu.astype(float)), eigvals_only=True)
    return 1.0 / lam[1]


def test_cycle_poincare_by_hand():
    # lambda_2 of the normalized cycle Laplacian is 1 - cos(2 pi / n)
    assert poincare_constant(cycle_graph(6)) == pytest.approx(2.0, rel=1e-10)
    assert spectral_gap_poincare(cycle_graph(6)) == pytest.approx(2.0, rel=1e-10)


@pytest.mark.parametrize("seed", range(5))
def test_poincare_matches_generalized_eigen_oracle(seed):
    H = random_connected_graph(seed, 15)
    want = generalized_poincare_oracle(H)
    assert poincare_constant(H) == pytest.approx(want, rel=1e-8)
    assert spectral_gap_poincare(H) == pytest.approx(want, rel=1e-8)


def test_sparse_path_agrees_with_dense():
    H = random_connected_graph(3, 60)
    inner = np.arange(H.n) < 40
    assert poincare_constant(H, inner, dense_cap=10) == pytest.approx(poincare_constant(H, inner), rel=1e-6)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2 ** 32), size=st.integers(2, 10))
def test_poincare_dominates_every_rayleigh_quotient(seed, size):
    H = random_connected_graph(seed, size)
    rng = np.random.default_rng(seed)
    inner = rng.random(H.n) < 0.7
    inner[0] = True
    P = poincare_constant(H, inner)
    for f in rng.normal(size=(50, H.n)):
        assert rayleigh_ratio(H, f, inner) <= P * (1 + 1e-9)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2 ** 32), size=st.integers(3, 12))
def test_shrinking_the_inner_set_lowers_the_constant(seed, size):
    H = random_connected_graph(seed, size)
    inner = np.random.default_rng(seed).random(H.n) < 0.5
    inner[0] = True
    assert poincare_constant(H, inner) <= poincare_constant(H) * (1 + 1e-9)


def test_poincare_degenerate_cases():
    H = WeightedSubgraph.from_edges(np.arange(4), [(0, 1), (2, 3)])
    assert poincare_constant(H) == math.inf
    assert poincare_constant(H, np.array([True, True, False, False])) < math.inf
    with pytest.raises(ValueError):
        poincare_constant(H, np.zeros(4, dtype=bool))
    with pytest.raises(ValueError, match="positive"):
        poincare_constant(path_graph(1))


def test_lattice_ball_poincare_scales_like_r_squared(lattice_ball):
    g, x = lattice_ball
    dist = g.distances(x)
    vals = [poincare_constant(g.subgraph(dist < r)) / r ** 2 for r in (4, 8, 12)]
    assert max(vals) / min(vals) < 1.5


def test_lattice_balls_are_good(lattice_ball):
    g, x = lattice_ball
    for r in (2, 4, 8):
        assert classify_good(g, x, r).good


def test_unit_ball_is_a_point():
    # B(x, 1) = {x}: zero variance, so even C_P = 0 passes; failure shows from r = 2
    g = cluster_graph(sample_bond_config(Box.centered(2, 10), 1.0, 0))
    x = origin_vertex(g)
    strict = GoodBallConstants(poincare=0.0)
    assert classify_good(g, x, 1, strict).good
    assert not classify_good(g, x, 2, strict).good


def test_volume_failure_on_a_path():
    g = path_graph(40)
    rep = classify_good(g, 20, 10, GoodBallConstants(volume=4.0))
    assert not rep.good and rep.witness["failed"] == "volume"


def test_radius_grid():
    assert radius_grid(5) == [1, 2, 3, 4, 5]
    grid = radius_grid(100, kappa=1.25, exact_below=40)
    assert grid[0] == 1 and grid[-1] == 100
    assert all(b > a for a, b in zip(grid, grid[1:]))


def test_very_good_on_open_lattice(lattice_ball):
    g, x = lattice_ball
    rep = classify_very_good(g, x, 10)
    assert rep.level == "very good" and rep.N_B == 1


def test_very_good_detects_planted_bad_sub_ball():
    # two open boxes joined by one edge: balls over the bottleneck have large Poincare constants
    cfg = sample_bond_config(Box.cube((0, 0), 20), 1.0, 0)
    cut = cfg.edges.copy()
    cut[0, 9, :] = False
    cut[0, 9, 10] = True
    from clusterwalk.percolation import BondConfig
    g = cluster_graph(BondConfig(cfg.box, 1.0, 0, cut))
    rep = classify_very_good(g, g.index((9, 10)), 9, GoodBallConstants(poincare=0.5))
    assert rep.N_B > 1 and rep.witness is not None


def test_exceedingly_good_with_vacuous_chain(lattice_ball):
    g, x = lattice_ball
    rep = classify_exceedingly_good(g, x, 12, radii=[], pair_samples=0)
    assert rep.level == "exceedingly good" and rep.details["chain_vacuous"]


def test_distance_to_complement():
    g = path_graph(9)
    inside = np.zeros(9, dtype=bool)
    inside[2:7] = True
    assert distance_to_complement(g, inside).tolist() == [0, 0, 1, 2, 3, 2, 1, 0, 0]


def test_whitney_cover_on_a_path():
    g = path_graph(2001)
    cov = whitney_cover(g, 1000, 1000, scale=0.01, lam=100, K=10, strict=False)
    assert cov.checks["disjoint"] and cov.checks["sandwich"] and cov.checks["cover"]
    # boundary balls are those with radius below 2 (lam + 2K) scale
    assert cov.M == int((cov.radii >= 2 * 120 * 0.01).sum()) > 0
    assert cov.boundary.any()
    assert cov.checks["max_chain"] <= len(cov.centers)


def test_whitney_parameter_guard():
    with pytest.raises(ValueError):
        whitney_cover(path_graph(50), 25, 10, scale=1, lam=100)


def test_weight_vanishes_only_at_the_edge():
    g = path_graph(41)
    ball, phi, e, we = compute_weight(g, 20, 10)
    assert phi.max() <= 1 and phi.min() > 0
    assert np.all(we <= phi[e[:, 0]]) and np.all(we <= phi[e[:, 1]])
    assert weighted_poincare(g, 20, 10) < math.inf
