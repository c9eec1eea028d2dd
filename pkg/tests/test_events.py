import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import ndimage

from clusterwalk import events as ev
from clusterwalk.percolation import Box, BondConfig, SiteConfig, sample_bond_config, sample_site_config, shift_sites


def open_cfg(box):
    return sample_bond_config(box, 1.0, 0)


def test_exponents():
    assert ev.beta_exponent(2) == pytest.approx(1 / 3)
    assert ev.EventParams.alpha1(2) == pytest.approx(1 / 6)
    assert ev.EventParams.alpha2(2) == pytest.approx(1 / 44)
    assert ev.EventParams().eps(2) == pytest.approx(0.1)


def test_dense_crossing_extremes():
    Q = Box.centered(2, 8)
    assert ev.dense_crossing(sample_site_config(Q, 1.0, 0), Q, 0.875).verdict
    assert not ev.dense_crossing(sample_site_config(Q, 0.0, 0), Q, 0.875).verdict
    with pytest.raises(ValueError):
        ev.dense_crossing(sample_site_config(Q, 1.0, 0), Q, 1.0)


def pad(Q):
    return Box(tuple(v - 1 for v in Q.lo), tuple(v + 1 for v in Q.hi))


def test_sparse_closed_all_open_holds():
    Q = Box.centered(2, 8)
    assert ev.sparse_closed(sample_site_config(pad(Q), 1.0, 0), Q, 0.1).verdict
    with pytest.raises(ValueError, match="one layer"):
        ev.sparse_closed(sample_site_config(Q, 1.0, 0), Q, 0.1)


def test_sparse_closed_finds_planted_closed_block():
    Q = Box.cube((0, 0), 9)
    bits = np.ones(pad(Q).shape, dtype=bool)
    bits[3:7, 3:7] = False
    rep = ev.sparse_closed(SiteConfig(pad(Q), 0.9, 0, bits), Q, 0.1)
    assert not rep.verdict and rep.diagnostics["size"] >= rep.diagnostics["r_min"]


def witness_is_valid(cfg, Q, rep, eps):
    """Independent check of a violation witness: *-connected, large, and too closed."""
    sigma = tuple(rep.diagnostics["shift"])
    closed = ~shift_sites(cfg, sigma).open[cfg.box.local_slices(Q)]
    mask = np.zeros(Q.shape, dtype=bool)
    for c in rep.diagnostics["witness"]:
        mask[tuple(np.asarray(c) - Q.lo)] = True
    _, ncomp = ndimage.label(mask, structure=np.ones((3, 3)))
    size = int(mask.sum())
    return ncomp == 1 and size >= rep.diagnostics["r_min"] and closed[mask].sum() > eps * size


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2 ** 32), q=st.floats(0.6, 0.95))
def test_sparse_closed_witnesses_are_sound(seed, q):
    Q = Box.cube((0, 0), 5)
    cfg = sample_site_config(pad(Q), q, seed)
    for mode in ("search", "exact"):
        rep = ev.sparse_closed(cfg, Q, 0.1, mode=mode, seed=seed)
        if not rep.verdict:
            assert witness_is_valid(cfg, Q, rep, 0.1)
        else:
            assert rep.heuristic == (mode == "search")


def test_crossing_subcubes_inside_cube():
    Q = Box.centered(2, 32)
    subs = ev.crossing_subcubes(Q)
    assert all(Q.contains_box(Box.cube(lo, s)) for lo, s in subs)
    assert min(s for _, s in subs) == 4 and max(s for _, s in subs) == 32


@pytest.mark.parametrize("n", [8, 24, 40])
def test_subcube_grid_constraints(n):
    Q = Box.centered(2, n)
    enl = ev.enlarge_cube(Q)
    cubes, info = ev.subcube_grid(Q, 0.25)
    assert info["exact"] == (n <= 24)
    for c in cubes:
        assert enl.plus.contains_box(ev.enlarge_cube(c).plus)
        assert c.intersect(enl.oplus) is not None
        assert n ** 0.25 <= c.side <= n


def test_all_events_hold_on_the_open_lattice():
    Q, box = ev.trial_box(2, 8)
    e = ev.CubeEvents(open_cfg(box))
    assert e.unique_crossing(Q).verdict
    assert e.coarse_regular(Q).verdict
    assert e.multiscale_regular(Q).verdict
    assert e.chemical_bounded(Q).verdict
    assert e.good_tile_chain(Q).verdict
    assert e.cost


def test_cut_plane_breaks_unique_crossing():
    Q, box = ev.trial_box(2, 8)
    cfg = open_cfg(box)
    edges = cfg.edges.copy()
    edges[0, -box.lo[0], :] = False     # no edge between x = 0 and x = 1
    rep = ev.CubeEvents(BondConfig(box, 1.0, 0, edges)).unique_crossing(Q)
    assert not rep.verdict


def test_macro_field_all_good_when_open():
    _, box = ev.trial_box(2, 8)
    e = ev.CubeEvents(open_cfg(box))
    field = e.macro_field(4, Box.cube((-1, -1), 1))
    assert field.marginal == 1.0
    assert field.site_config().n_open == int((field.bits == 1).sum())


def test_chemical_sandwich_open_lattice():
    Q, box = ev.trial_box(2, 8)
    assert ev.chemical_sandwich(open_cfg(box), Q, 0.25, 2.0, pairs=50) == []


def test_bit_independence_degenerate_and_random():
    rng = np.random.default_rng(0)
    fields = [ev.MacroField(4, "phi", Box.cube((0, 0), 19), rng.integers(0, 2, (20, 20))) for _ in range(3)]
    out = ev.bit_independence(fields, seed=1)
    assert out["pairs"] > 1000 and out["p_value"] > 1e-3
    const = [ev.MacroField(4, "phi", Box.cube((0, 0), 9), np.ones((10, 10), dtype=int))]
    assert ev.bit_independence(const)["p_value"] == 1.0


def test_fit_tail_recovers_planted_decay():
    sizes = [8, 16, 32, 64]
    gamma = 0.5
    trials = 10 ** 6
    failures = [round(trials * math.exp(0.3 - 0.8 * n ** gamma)) for n in sizes]
    fit = ev.fit_tail(sizes, failures, [trials] * 4, gamma)
    assert fit["b"] == pytest.approx(0.8, rel=0.02) and fit["a"] == pytest.approx(0.3, abs=0.05)
    assert ev.fit_tail(sizes, [0, 0, 0, 0], [10] * 4, gamma) is None


def test_tail_estimate_is_thread_independent():
    a = ev.estimate_tail("K", 2, [4, 8], 12, 0.9, seed=3, threads=1)
    b = ev.estimate_tail("K", 2, [4, 8], 12, 0.9, seed=3, threads=2)
    assert a.failures == b.failures and a.ci_lo == b.ci_lo
    assert all(lo <= f <= hi for f, lo, hi in zip(a.frequencies, a.ci_lo, a.ci_hi))


def test_tail_estimate_rejects_unsorted_sizes():
    with pytest.raises(ValueError):
        ev.estimate_tail("K", 2, [8, 4], 2, 0.9)
    with pytest.raises(ValueError):
        ev.event_failure("Z", 2, 8, 0.5, 0)


def test_zero_failures_at_full_density():
    assert ev.estimate_tail("K", 2, [4, 8], 5, 1.0).failures == [0, 0]
    assert ev.estimate_tail("R", 2, [8], 3, 1.0).failures == [0]
    assert ev.estimate_tail("F", 2, [4, 8], 5, 1.0).failures == [0, 0]


def test_onset_scales_open_lattice():
    cfg = sample_bond_config(Box.centered(2, 40), 1.0, 0)
    out = ev.estimate_onset_scales([cfg], (0, 0), [8], positions=2)
    assert out[0]["onset"] == 8


def test_event_report_json(tmp_path):
    Q = Box.centered(2, 4)
    rep = ev.dense_crossing(sample_site_config(Q, 1.0, 0), Q, 0.5)
    rep.to_json(tmp_path / "r.json")
    assert '"verdict": true' in (tmp_path / "r.json").read_text()
