import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clusterwalk.percolation import (Box, SnapshotError, enlarge_cube, lattice_uniforms, read_snapshot,
                                     sample_bond_config, sample_site_config, shift_sites, tile, unit_shifts,
                                     write_snapshot)


def test_cube_side_counts_edges_not_vertices():
    b = Box.cube((0, 0), 4)
    assert b.side == 4
    assert b.shape == (5, 5)
    assert b.n_vertices == 25
    assert b.n_edges == 2 * 4 * 5


def test_centered_cube_contains_origin():
    for n in (1, 2, 7, 8):
        assert Box.centered(3, n).contains((0, 0, 0))


def test_empty_box_rejected():
    with pytest.raises(ValueError):
        Box((0, 0), (1, -1))


def test_index_and_coords_are_inverse():
    b = Box((-2, 3, 0), (1, 5, 2))
    flat = np.arange(b.n_vertices)
    assert np.array_equal(b.index(b.coords(flat)), flat)


def test_extreme_probabilities():
    b = Box.centered(2, 6)
    assert sample_bond_config(b, 0.0, 1).n_open == 0
    assert sample_bond_config(b, 1.0, 1).n_open == b.n_edges
    assert sample_site_config(b, 1.0, 1).n_open == b.n_vertices
    with pytest.raises(ValueError):
        sample_bond_config(b, 1.5, 0)


def test_same_seed_same_configuration():
    b = Box.centered(2, 10)
    a, c = sample_bond_config(b, 0.5, 42), sample_bond_config(b, 0.5, 42)
    assert np.array_equal(a.bits, c.bits)
    assert not np.array_equal(a.bits, sample_bond_config(b, 0.5, 43).bits)


def test_open_fraction_matches_p():
    # binomial 5-sigma band
    b = Box.centered(2, 100)
    cfg = sample_bond_config(b, 0.6, 5)
    n = b.n_edges
    assert abs(cfg.n_open / n - 0.6) < 5 * np.sqrt(0.24 / n)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2 ** 63), p1=st.floats(0, 1), p2=st.floats(0, 1))
def test_monotone_coupling_in_p(seed, p1, p2):
    lo, hi = sorted((p1, p2))
    b = Box.centered(2, 8)
    a = sample_bond_config(b, lo, seed).bits
    c = sample_bond_config(b, hi, seed).bits
    assert np.all(c[a])


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2 ** 63), dx=st.integers(0, 4), dy=st.integers(0, 4), n=st.integers(1, 5))
def test_sampling_is_consistent_across_boxes(seed, dx, dy, n):
    # the sub-box sample equals the restriction of a bigger sample
    big = Box.cube((0, 0), 10)
    sub = Box.cube((dx, dy), n)
    full = sample_bond_config(big, 0.5, seed)
    assert np.array_equal(full.restrict(sub).bits, sample_bond_config(sub, 0.5, seed).bits)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2 ** 64 - 1), pts=st.lists(st.tuples(st.integers(-50, 50), st.integers(-50, 50)),
                                                      min_size=1, max_size=20))
def test_uniforms_do_not_depend_on_batch(seed, pts):
    arr = np.array(pts)
    together = lattice_uniforms(seed, 3, arr)
    alone = np.array([lattice_uniforms(seed, 3, arr[i:i + 1])[0] for i in range(len(arr))])
    assert np.array_equal(together, alone)
    assert np.all((together >= 0) & (together < 1))


@pytest.mark.parametrize("kind", ["bond", "site"])
def test_snapshot_round_trip(tmp_path, kind):
    b = Box((-3, 0, 1), (2, 4, 3))
    cfg = sample_bond_config(b, 0.4, 9) if kind == "bond" else sample_site_config(b, 0.4, 9)
    path = tmp_path / "snap.bin"
    write_snapshot(cfg, path)
    back = read_snapshot(path)
    assert back.kind == kind and back.box == b and back.seed == 9
    assert np.array_equal(back.bits, cfg.bits)


def test_snapshot_corruption_detected(tmp_path):
    cfg = sample_bond_config(Box.centered(2, 4), 0.5, 1)
    path = tmp_path / "snap.bin"
    write_snapshot(cfg, path)
    data = path.read_bytes()
    (tmp_path / "bad.bin").write_bytes(b"XXXX" + data[4:])
    (tmp_path / "short.bin").write_bytes(data[:-1])
    with pytest.raises(SnapshotError):
        read_snapshot(tmp_path / "bad.bin")
    with pytest.raises(SnapshotError):
        read_snapshot(tmp_path / "short.bin")


def test_unit_shifts_and_site_shift():
    assert len(unit_shifts(3)) == 7
    cfg = sample_site_config(Box.cube((0, 0), 5), 0.5, 2)
    moved = shift_sites(cfg, (1, 0))
    assert np.array_equal(moved.open[:-1], cfg.open[1:])
    assert not moved.open[-1].any()
    with pytest.raises(ValueError):
        shift_sites(cfg, (1, 1))


def test_tiles_partition_the_box():
    b = Box((-5, -3), (6, 9))
    t = tile(b, 4)
    cover = np.zeros(b.shape, dtype=int)
    for tb in t.tiles().values():
        cover[b.local_slices(tb)] += 1
        assert all(s <= 3 for s in tb.sides)
    assert np.all(cover == 1)


@pytest.mark.parametrize("n", [8, 10, 15, 33])
def test_enlargement_sides(n):
    Q = Box.centered(2, n)
    e = enlarge_cube(Q)
    assert e.plus.side == (3 * n) // 2
    assert e.oplus.side == (6 * n) // 5
    assert e.plus.contains_box(e.oplus) and e.oplus.contains_box(Q)
    assert not e.clipped


def test_enlargement_clipped_to_ambient():
    Q = Box.cube((0, 0), 10)
    e = enlarge_cube(Q, ambient=Box.cube((0, 0), 12))
    assert e.clipped and Box.cube((0, 0), 12).contains_box(e.plus)
