"""Cube-level regularity events on sampled configurations and their failure tails.

Event names:
  dense_crossing        largest cluster crosses Q and fills more than a fraction lam of it
  sparse_closed         every *-connected set of size >= n^beta is mostly open (all unit shifts)
  unique_crossing       unique crossing cluster of Q+, small stragglers, crossing of sub-cubes
  coarse_regular        dense_crossing and sparse_closed for the tile-level field of a special cube
  multiscale_regular    unique_crossing and coarse_regular on every sub-cube of a scale range
  chemical_bounded      chemical distance within C_H times L-infinity distance, across scales
  good_tile_chain       the above plus chains of good tiles joining far-apart points
"""
from __future__ import annotations

import csv
import itertools
import json
import math
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage
from statsmodels.stats.proportion import proportion_confint

from . import _grid
from .cluster import _grid_args, _local_corners, is_crossing, label_clusters, largest_cluster
from .percolation import (Box, SiteConfig, derive_seed, enlarge_cube, sample_bond_config,
                          sample_site_config, shift_sites, unit_shifts)


def beta_exponent(d):
    return 1.0 - 2.0 / (1.0 + d)


@dataclass
class EventParams:
    tile: int = 4                 # k_0, vertices per tile edge for the coarse field
    density: float = 7 / 8        # lam for dense_crossing at tile level
    eps0: float | None = None     # default 1/(4d+2)
    alpha: float = 0.25
    C_H: float = 4.0
    lambda0: float = 2.0
    C_E: int = 2
    exact_below: int = 24
    size_ratio: float = 1.25
    pair_budget: int = 2000
    F_mode: str = "search"
    F_restarts: int = 10
    L_pairs: int = 50
    L_m_values: int = 3

    def eps(self, d):
        return 1.0 / (4 * d + 2) if self.eps0 is None else self.eps0

    @staticmethod
    def alpha1(d):
        return 1.0 / (4 + d)

    @staticmethod
    def alpha2(d):
        return 1.0 / (11 * (d + 2))


@dataclass(eq=False)
class EventReport:
    name: str
    cube: Box
    verdict: bool
    heuristic: bool = False
    diagnostics: dict = field(default_factory=dict)
    cost: dict = field(default_factory=dict)

    def __bool__(self):
        return bool(self.verdict)

    def to_dict(self):
        return {"name": self.name, "cube": {"lo": list(self.cube.lo), "hi": list(self.cube.hi)},
                "verdict": bool(self.verdict), "heuristic": self.heuristic,
                "diagnostics": _jsonable(self.diagnostics), "cost": dict(self.cost)}

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, Box):
        return {"lo": list(obj.lo), "hi": list(obj.hi)}
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


# site-field events

def dense_crossing(cfg, Q, lam):
    """Largest cluster of Q crosses Q and holds more than lam |Q| vertices."""
    if not 0 < lam < 1:
        raise ValueError("lam must lie in (0, 1)")
    C = largest_cluster(label_clusters(cfg, Q))
    size = int(C.sum())
    crossing = is_crossing(cfg, C, Q)
    frac = size / Q.n_vertices
    return EventReport("dense_crossing", Q, bool(crossing and frac > lam),
                       diagnostics={"crossing": bool(crossing), "fraction": frac, "lam": lam})


def _king_offsets(d):
    return [v for v in itertools.product((-1, 0, 1), repeat=d) if any(v)]


class _StarGrid:
    """*-adjacency on the vertices of a box (local flat indices)."""

    def __init__(self, shape):
        self.shape = tuple(shape)
        self.n = int(np.prod(shape))
        coords = np.stack(np.unravel_index(np.arange(self.n), self.shape), axis=-1)
        nbrs = []
        for off in _king_offsets(len(shape)):
            c = coords + np.asarray(off)
            ok = np.all((c >= 0) & (c < np.asarray(shape)), axis=1)
            idx = np.full(self.n, -1, dtype=np.int64)
            idx[ok] = np.ravel_multi_index(tuple(c[ok].T), self.shape)
            nbrs.append(idx)
        self.nbrs = np.stack(nbrs, axis=1)

    def neighbours(self, v):
        row = self.nbrs[v]
        return row[row >= 0]


def _closed_cluster_witness(closed, r0, d):
    """A *-connected all-closed set of size r0 when some closed *-cluster is that large."""
    lab, n = ndimage.label(closed, structure=ndimage.generate_binary_structure(d, d))
    if n == 0:
        return None
    sizes = np.bincount(lab.ravel())[1:]
    big = int(np.argmax(sizes))
    if sizes[big] < r0:
        return None
    grid = _StarGrid(closed.shape)
    member = (lab.ravel() == big + 1)
    start = int(np.flatnonzero(member)[0])
    seen, order = {start}, [start]
    i = 0
    while len(order) < r0:
        for w in grid.neighbours(order[i]):
            w = int(w)
            if member[w] and w not in seen:
                seen.add(w)
                order.append(w)
                if len(order) == r0:
                    break
        i += 1
    return order


def _violates(closed_count, size, eps, r0):
    return size >= r0 and closed_count > eps * size


def _greedy_search(closed, grid, r0, r_hi, eps, rng, restarts):
    flat = closed.ravel()
    seeds = [int(v) for v in np.flatnonzero(flat)]
    plans = [(s, None) for s in seeds]
    for _ in range(restarts if seeds else 0):
        plans.append((int(rng.choice(seeds)), rng))
    for seed, noise in plans:
        A = [seed]
        inA = {seed}
        c = 1
        frontier = set(int(w) for w in grid.neighbours(seed))
        while len(A) < r_hi and frontier:
            cand = sorted(frontier)
            if noise is not None and noise.random() < 0.1:
                w = cand[int(noise.integers(len(cand)))]
            else:
                def score(v):
                    nb = grid.neighbours(v)
                    pull = sum(1 for u in nb if flat[u] and int(u) not in inA)
                    tie = noise.random() if noise is not None else 0.0
                    return (flat[v], pull, tie, -v)
                w = max(cand, key=score)
            A.append(w)
            inA.add(w)
            c += int(flat[w])
            frontier.discard(w)
            frontier.update(int(u) for u in grid.neighbours(w) if int(u) not in inA)
            if _violates(c, len(A), eps, r0):
                return A
    return None


def _exact_search(closed, grid, r0, r_hi, eps):
    """Enumerate each *-connected set once (ESU-style extension); prune hopeless branches."""
    flat = closed.ravel()
    total = int(flat.sum())
    n = grid.n
    hopeless_cache = {}

    def hopeless(size, c):
        key = (size, c)
        if key not in hopeless_cache:
            ok = False
            for r in range(max(size, r0), r_hi + 1):
                if c + min(r - size, total - c) > eps * r:
                    ok = True
                    break
            hopeless_cache[key] = not ok
        return hopeless_cache[key]

    for root in range(n):
        stack = [([root], int(flat[root]), [int(w) for w in grid.neighbours(root) if w > root],
                  {root} | {int(w) for w in grid.neighbours(root)})]
        while stack:
            A, c, ext, closed_nbhd = stack.pop()
            if _violates(c, len(A), eps, r0):
                return A
            if len(A) >= r_hi or hopeless(len(A), c):
                continue
            ext = list(ext)
            while ext:
                w = ext.pop()
                new = [int(u) for u in grid.neighbours(w) if u > root and int(u) not in closed_nbhd]
                stack.append((A + [w], c + int(flat[w]), ext + new, closed_nbhd | set(new)))
    return None


def _padded(Q, width=1):
    return Box(tuple(v - width for v in Q.lo), tuple(v + width for v in Q.hi))


def sparse_closed(cfg, Q, eps, mode="search", r_cap=None, restarts=10, seed=0):
    """Every *-connected A in Q with |A| >= n^beta has at most eps|A| sites closed in each shifted field.

    Search mode is sound for False only. Sizes above r_cap are not examined.
    """
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    if not isinstance(cfg, SiteConfig):
        raise TypeError("sparse_closed needs a site configuration")
    if not cfg.box.contains_box(_padded(Q)):
        raise ValueError("configuration must cover Q plus one layer, the shifted fields read it")
    d = Q.d
    n = Q.side
    r0 = max(1, math.ceil(n ** beta_exponent(d) - 1e-12))
    size_Q = Q.n_vertices
    if r_cap is None:
        r_cap = max(r0, 64) if mode == "search" else min(size_Q, 8)
    r_cap = min(r_cap, size_Q)
    rng = np.random.default_rng(seed)
    sl = cfg.box.local_slices(Q)
    grid = None
    diag = {"r_min": r0, "r_cap": r_cap, "mode": mode}
    for sigma in unit_shifts(d):
        closed = ~shift_sites(cfg, sigma).open[sl]
        total = int(closed.sum())
        r_hi = min(r_cap, int(math.floor(total / eps)) + 1)
        if total == 0 or r_hi < r0:
            continue
        wit = _closed_cluster_witness(closed, r0, d)
        if wit is None:
            grid = grid or _StarGrid(closed.shape)
            if mode == "search":
                wit = _greedy_search(closed, grid, r0, r_hi, eps, rng, restarts)
            elif mode == "exact":
                wit = _exact_search(closed, grid, r0, r_hi, eps)
            else:
                raise ValueError(f"unknown mode {mode!r}")
        if wit is not None:
            local = np.stack(np.unravel_index(np.asarray(wit), closed.shape), axis=-1)
            coords = local + np.asarray(Q.lo)
            diag.update(shift=sigma, witness=coords.tolist(),
                        closed=int(closed.ravel()[np.asarray(wit)].sum()), size=len(wit))
            return EventReport("sparse_closed", Q, False, False, diag)
    return EventReport("sparse_closed", Q, True, mode == "search", diag)


# bond-configuration events

def _size_range(lo, hi, stride):
    vals = list(range(lo, hi + 1, stride))
    if vals[-1] != hi:
        vals.append(hi)
    return vals


def crossing_subcubes(Q):
    """Sub-cubes Q' of Q with side >= n/8, sides and corners on a stride max(1, n//16) lattice."""
    n = Q.side
    stride = max(1, n // 16)
    sides = _size_range(max(1, math.ceil(n / 8)), n, stride)
    out = []
    for s in sides:
        axes = [_size_range(l, l + n - s, stride) for l in Q.lo]
        for lo in itertools.product(*axes):
            out.append((lo, s))
    return out


def subcube_grid(Q, alpha, exact_below=24, ratio=1.25):
    """Cubes Q' with Q'+ inside Q+, Q' meeting Q-oplus and n^alpha <= side(Q') <= n."""
    n = Q.side
    enl = enlarge_cube(Q)
    plus, oplus = enl.plus, enl.oplus
    smin = max(1, math.ceil(n ** alpha - 1e-12))
    exact = n <= exact_below
    if exact:
        sides = list(range(smin, n + 1))
    else:
        sides = [smin]
        while True:
            nxt = max(sides[-1] + 1, math.ceil(ratio * sides[-1]))
            if nxt >= n:
                break
            sides.append(nxt)
        if sides[-1] != n:
            sides.append(n)
    out = []
    for s in sides:
        extra = (3 * s) // 2 - s
        e_lo, e_hi = extra // 2, extra - extra // 2
        axes = []
        for a in range(Q.d):
            lo_min = max(plus.lo[a] + e_lo, oplus.lo[a] - s)
            lo_max = min(plus.hi[a] - s - e_hi, oplus.hi[a])
            if lo_max < lo_min:
                axes = None
                break
            stride = 1 if exact else max(1, s // 4)
            axes.append(_size_range(lo_min, lo_max, stride))
        if axes is None:
            continue
        for lo in itertools.product(*axes):
            out.append(Box.cube(lo, s))
    return out, {"sides": sides, "exact": exact, "count": len(out)}


@dataclass
class MacroField:
    """Tile-level bits: 1 good, 0 bad, -1 unavailable (enlargement leaves the box)."""

    k: int
    kind: str
    index_box: Box
    bits: np.ndarray

    def site_config(self):
        return SiteConfig(self.index_box, float("nan"), 0, self.bits == 1)

    @property
    def marginal(self):
        ok = self.bits >= 0
        return float((self.bits[ok] == 1).mean()) if ok.any() else math.nan


class CubeEvents:
    """Event evaluation on one bond configuration with per-cube caches."""

    def __init__(self, cfg, params=None):
        self.cfg = cfg
        self.params = params or EventParams()
        self.d = cfg.box.d
        self.edges, self.shape, self.strides = _grid_args(cfg)
        self.allowed = np.ones(cfg.box.n_vertices, dtype=bool)
        self._R, self._H0, self._D0, self._HD = {}, {}, {}, {}
        self._plus_labels = {}
        self.cost = Counter()

    # helpers

    def _key(self, Q):
        return (Q.lo, Q.hi)

    def _plus(self, Q):
        enl = enlarge_cube(Q)
        if not self.cfg.box.contains_box(enl.plus):
            raise ValueError(f"enlargement of {Q} leaves the configuration box")
        return enl

    def _labels(self, region):
        key = self._key(region)
        if key not in self._plus_labels:
            lo, hi = _local_corners(self.cfg.box, region)
            labels, nlab = _grid.label_components(self.edges, self.shape, self.strides, lo, hi, self.allowed)
            sizes, mins, maxs = _grid.component_extents(labels, nlab, self.shape, self.strides)
            self._plus_labels[key] = (labels, sizes, mins, maxs, lo, hi)
            self.cost["labelings"] += 1
        return self._plus_labels[key]

    def largest_mask(self, region):
        """Flat mask of C^v(region) (empty if region has no open edge)."""
        labels, sizes, _, _, _, _ = self._labels(region)
        if sizes.size == 0:
            return np.zeros_like(self.allowed)
        return labels == int(np.argmax(sizes))

    def _spans(self, mins, maxs, lo, hi):
        return np.all(mins == lo, axis=1) & np.all(maxs == hi, axis=1)

    # unique crossing

    def unique_crossing(self, Q):
        key = self._key(Q)
        if key in self._R:
            return self._R[key]
        self.cost["unique_crossing"] += 1
        n = Q.side
        plus = self._plus(Q).plus
        labels, sizes, mins, maxs, plo, phi = self._labels(plus)
        diag = {}
        spans = self._spans(mins, maxs, plo, phi) & (sizes >= 2)
        crossing_ids = np.flatnonzero(spans)
        unique = crossing_ids.size == 1
        diag["crossing_clusters"] = int(crossing_ids.size)
        verdict = unique
        if unique:
            c = int(crossing_ids[0])
            diam = (maxs - mins).max(axis=1)
            others = np.ones(sizes.size, dtype=bool)
            others[c] = False
            small = bool(np.all(diam[others] <= n / 8))
            diag["stragglers_small"] = small
            verdict = small
            if verdict:
                subs = crossing_subcubes(Q)
                cube_lo = np.array([np.asarray(lo) - np.asarray(self.cfg.box.lo) for lo, _ in subs], dtype=np.int64)
                sides = np.array([s for _, s in subs], dtype=np.int64)
                bad = _grid.first_noncrossed(self.edges, self.shape, self.strides, labels == c, cube_lo, sides)
                diag["subcubes"] = len(subs)
                if bad >= 0:
                    diag["noncrossed"] = Box.cube(subs[bad][0], subs[bad][1])
                    verdict = False
        if verdict:
            # largest cluster of Q+ must cross Q+; largest cluster of Q must cross Q
            big = int(np.argmax(sizes))
            verdict = bool(spans[big])
            diag["largest_plus_crossing"] = verdict
        if verdict:
            q_lab, q_sizes, q_mins, q_maxs, qlo, qhi = self._labels(Q)
            qbig = int(np.argmax(q_sizes))
            ok = bool(self._spans(q_mins[qbig:qbig + 1], q_maxs[qbig:qbig + 1], qlo, qhi)[0] and q_sizes[qbig] >= 2)
            diag["largest_crossing"] = ok
            verdict = ok
            if ok:
                inner = q_lab == qbig
                diag["nested"] = bool(np.all(self.largest_mask(plus)[inner]))
        rep = EventReport("unique_crossing", Q, bool(verdict), diagnostics=diag)
        self._R[key] = rep
        return rep

    # tile-level field

    def tile_bit(self, idx, k, kind="phi", alpha=None):
        lo = tuple(k * int(i) for i in idx)
        T = Box.cube(lo, k - 1)
        if not self.cfg.box.contains_box(enlarge_cube(T).plus):
            return -1
        if kind == "phi":
            return int(self.unique_crossing(T).verdict)
        if kind == "psi":
            alpha = EventParams.alpha1(self.d) if alpha is None else alpha
            return int(self.regular_and_bounded(T, alpha))
        raise ValueError(f"unknown field kind {kind!r}")

    def macro_field(self, k, index_box, kind="phi", alpha=None):
        bits = np.empty(index_box.shape, dtype=np.int8)
        for local, idx in zip(np.ndindex(*index_box.shape), index_box.coords()):
            bits[local] = self.tile_bit(tuple(idx), k, kind, alpha)
        return MacroField(k, kind, index_box, bits)

    def special_cube(self, Q):
        """Largest special cube inside Q as (tile index box, microscopic cube), or None."""
        k = self.params.tile
        grown = (3 * (k - 1)) // 2
        extra = grown - (k - 1)
        e_lo, e_hi = extra // 2, extra - extra // 2
        m = (Q.side - grown) // k
        while m >= 0:
            a = []
            for l, h in zip(Q.lo, Q.hi):
                first = -((-(l + e_lo)) // k)
                if k * first + k * m + (k - 1) + e_hi > h:
                    break
                a.append(first)
            if len(a) == Q.d:
                tiles = Box.cube(a, m)
                micro = Box(tuple(k * v - e_lo for v in tiles.lo),
                            tuple(k * v + k - 1 + e_hi for v in tiles.hi))
                return tiles, micro
            m -= 1
        return None

    def coarse_regular(self, Q):
        key = self._key(Q)
        if key in self._H0:
            return self._H0[key]
        self.cost["coarse_regular"] += 1
        sp = self.special_cube(Q)
        if sp is None:
            rep = EventReport("coarse_regular", Q, True, diagnostics={"special_cube": None})
            self._H0[key] = rep
            return rep
        tiles, micro = sp
        layer = Box(tuple(v - 1 for v in tiles.lo), tuple(v + 1 for v in tiles.hi))
        field = self.macro_field(self.params.tile, layer, "phi")
        site = field.site_config()
        K = dense_crossing(site, tiles, self.params.density)
        diag = {"special_cube": micro, "tiles": tiles, "unavailable": int((field.bits < 0).sum()),
                "dense_crossing": K.verdict}
        verdict = K.verdict
        heuristic = False
        if verdict:
            F = sparse_closed(site, tiles, self.params.eps(self.d), self.params.F_mode,
                              restarts=self.params.F_restarts, seed=derive_seed(self.cfg.seed, "F", *tiles.lo))
            diag["sparse_closed"] = F.verdict
            verdict = F.verdict
            heuristic = F.heuristic
        rep = EventReport("coarse_regular", Q, bool(verdict), heuristic, diag)
        self._H0[key] = rep
        return rep

    def multiscale_regular(self, Q, alpha=None):
        alpha = self.params.alpha if alpha is None else alpha
        self.cost["multiscale_regular"] += 1
        R = self.unique_crossing(Q)
        if not R.verdict:
            return EventReport("multiscale_regular", Q, False, diagnostics={"failed": "unique_crossing", "cube": Q})
        cubes, info = subcube_grid(Q, alpha, self.params.exact_below, self.params.size_ratio)
        heuristic = False
        for Qp in cubes:
            r = self.unique_crossing(Qp)
            if not r.verdict:
                return EventReport("multiscale_regular", Q, False,
                                   diagnostics={"failed": "unique_crossing", "cube": Qp, "grid": info})
            h0 = self.coarse_regular(Qp)
            heuristic |= h0.heuristic
            if not h0.verdict:
                return EventReport("multiscale_regular", Q, False,
                                   diagnostics={"failed": "coarse_regular", "cube": Qp, "grid": info})
        return EventReport("multiscale_regular", Q, True, heuristic, {"grid": info})

    def local_chemical_bounded(self, Q):
        key = self._key(Q)
        if key in self._D0:
            return self._D0[key]
        self.cost["local_chemical_bounded"] += 1
        R = self.unique_crossing(Q)
        if not R.verdict:
            rep = EventReport("local_chemical_bounded", Q, False, diagnostics={"failed": "unique_crossing"})
            self._D0[key] = rep
            return rep
        plus = self._plus(Q).plus
        C = self.largest_mask(plus)
        inQ = np.zeros(self.cfg.box.shape, dtype=bool)
        inQ[self.cfg.box.local_slices(Q)] = True
        targets = np.flatnonzero(C & inQ.ravel())
        n = Q.side
        if Q.n_vertices <= 12 ** self.d:
            sources = targets
            sampling = "exhaustive"
        else:
            ns = min(targets.size, max(1, math.ceil(self.params.pair_budget / max(targets.size, 1))))
            sources = targets[np.unique(np.linspace(0, targets.size - 1, ns).round().astype(np.int64))]
            sampling = f"{sources.size} evenly spaced sources"
        lo, hi = _local_corners(self.cfg.box, plus)
        worst, npairs, bs, bt = _grid.chemical_ratio_scan(self.edges, self.shape, self.strides, lo, hi, C,
                                                          sources, targets, math.ceil(n / 12), self.params.C_H)
        self.cost["bfs"] += int(sources.size)
        diag = {"worst_ratio": float(worst), "pairs": int(npairs), "sampling": sampling, "C_H": self.params.C_H}
        verdict = bs < 0
        if not verdict:
            diag["violation"] = [self.cfg.box.coords(bs).tolist(), self.cfg.box.coords(bt).tolist()]
        rep = EventReport("local_chemical_bounded", Q, bool(verdict), diagnostics=diag)
        self._D0[key] = rep
        return rep

    def chemical_bounded(self, Q, alpha=None):
        alpha = self.params.alpha if alpha is None else alpha
        self.cost["chemical_bounded"] += 1
        cubes, info = subcube_grid(Q, alpha, self.params.exact_below, self.params.size_ratio)
        worst = 0.0
        for Qp in cubes:
            r = self.local_chemical_bounded(Qp)
            worst = max(worst, r.diagnostics.get("worst_ratio", 0.0))
            if not r.verdict:
                return EventReport("chemical_bounded", Q, False,
                                   diagnostics={"failed": r.diagnostics.get("failed", "ratio"), "cube": Qp,
                                                "grid": info})
        return EventReport("chemical_bounded", Q, True, diagnostics={"grid": info, "worst_ratio": worst})

    def regular_and_bounded(self, Q, alpha):
        key = (self._key(Q), alpha)
        if key not in self._HD:
            self._HD[key] = bool(self.multiscale_regular(Q, alpha).verdict and self.chemical_bounded(Q, alpha).verdict)
        return self._HD[key]

    def good_tile_chain_pair(self, Q, m, x0, x1):
        """Chain of psi-good m-tiles inside Q+ from near x0 to near x1 with m*k < 2 lambda0 |x0-x1|_inf."""
        n = Q.side
        plus = self._plus(Q).plus
        slack = n ** (2 / 9)
        C = self.largest_mask(plus).reshape(self.cfg.box.shape)
        x0, x1 = np.asarray(x0), np.asarray(x1)
        sep = int(np.abs(x0 - x1).max())
        budget = 2 * self.params.lambda0 * sep

        def near_tiles(x):
            lo = np.maximum(np.ceil(x - slack).astype(np.int64), plus.lo)
            hi = np.minimum(np.floor(x + slack).astype(np.int64), plus.hi)
            sub = Box(tuple(lo), tuple(hi))
            pts = sub.coords()[C[self.cfg.box.local_slices(sub)].ravel()]
            return {tuple(v) for v in np.floor_divide(pts, m)}

        def inside(t):
            T = Box.cube(tuple(m * v for v in t), m - 1)
            return plus.contains_box(T)

        alpha1 = EventParams.alpha1(self.d)
        good = {}

        def is_good(t):
            if t not in good:
                good[t] = inside(t) and self.tile_bit(t, m, "psi", alpha1) == 1
            return good[t]

        starts = [t for t in sorted(near_tiles(x0)) if is_good(t)]
        targets = near_tiles(x1)
        dist = {t: 0 for t in starts}
        frontier = list(starts)
        while frontier:
            nxt = []
            for t in frontier:
                if t in targets:
                    k = dist[t]
                    return EventReport("good_tile_chain", Q, m * k < budget,
                                       diagnostics={"m": m, "length": k, "budget": budget})
                if m * (dist[t] + 1) >= budget:
                    continue
                for a in range(self.d):
                    for s in (-1, 1):
                        u = list(t)
                        u[a] += s
                        u = tuple(u)
                        if u not in dist and is_good(u):
                            dist[u] = dist[t] + 1
                            nxt.append(u)
            frontier = nxt
        return EventReport("good_tile_chain", Q, False, diagnostics={"m": m, "length": None, "budget": budget})

    def good_tile_chain(self, Q, seed=0):
        """Multiscale regularity and chemical bounds at exponent alpha_2 plus sampled tile chains.

        The chain scales m run over [C_E, n^(1/9)]; when that range is empty only
        the first two conditions remain (recorded as chain_scales=[]).
        """
        a2 = EventParams.alpha2(self.d)
        n = Q.side
        H = self.multiscale_regular(Q, a2)
        if not H.verdict:
            return EventReport("good_tile_chain", Q, False, H.heuristic, {"failed": "multiscale_regular",
                                                                          "inner": H.diagnostics})
        D = self.chemical_bounded(Q, a2)
        if not D.verdict:
            return EventReport("good_tile_chain", Q, False, H.heuristic, {"failed": "chemical_bounded",
                                                                          "inner": D.diagnostics})
        mmax = int(math.floor(n ** (1 / 9) + 1e-12))
        scales = list(range(self.params.C_E, mmax + 1))
        if len(scales) > self.params.L_m_values:
            scales = [scales[int(i)] for i in np.linspace(0, len(scales) - 1, self.params.L_m_values).round()]
        rng = np.random.default_rng(seed)
        lo, hi = np.asarray(Q.lo), np.asarray(Q.hi)
        minsep = n ** (2 / 9)
        checked = 0
        for m in scales:
            for _ in range(self.params.L_pairs):
                x0 = rng.integers(lo, hi + 1)
                x1 = rng.integers(lo, hi + 1)
                if np.abs(x0 - x1).max() < minsep:
                    continue
                checked += 1
                r = self.good_tile_chain_pair(Q, m, x0, x1)
                if not r.verdict:
                    return EventReport("good_tile_chain", Q, False, True,
                                       {"failed": "chain", "m": m, "x0": x0, "x1": x1})
        return EventReport("good_tile_chain", Q, True, True if scales else H.heuristic,
                           {"chain_scales": scales, "pairs_checked": checked})


# module-level wrappers

def unique_crossing(cfg, Q, params=None):
    return CubeEvents(cfg, params).unique_crossing(Q)


def macro_field(cfg, k, index_box, kind="phi", params=None):
    return CubeEvents(cfg, params).macro_field(k, index_box, kind)


def coarse_regular(cfg, Q, params=None):
    return CubeEvents(cfg, params).coarse_regular(Q)


def multiscale_regular(cfg, Q, alpha=None, params=None):
    return CubeEvents(cfg, params).multiscale_regular(Q, alpha)


def local_chemical_bounded(cfg, Q, params=None):
    return CubeEvents(cfg, params).local_chemical_bounded(Q)


def chemical_bounded(cfg, Q, alpha=None, params=None):
    return CubeEvents(cfg, params).chemical_bounded(Q, alpha)


def good_tile_chain(cfg, Q, params=None, seed=0):
    return CubeEvents(cfg, params).good_tile_chain(Q, seed)


def chemical_sandwich(cfg, Q, alpha, C_H, pairs=200, seed=0):
    """Violations of |x-y|_inf <= d(x,y) <= C_H max(1 + n^alpha, |x-y|_inf) over sampled pairs in Q-oplus."""
    ev = CubeEvents(cfg)
    enl = ev._plus(Q)
    C = ev.largest_mask(enl.plus)
    inO = np.zeros(cfg.box.shape, dtype=bool)
    inO[cfg.box.local_slices(enl.oplus)] = True
    pts = np.flatnonzero(C & inO.ravel())
    rng = np.random.default_rng(seed)
    lo, hi = _local_corners(cfg.box, enl.plus)
    bad = []
    n = Q.side
    for _ in range(pairs):
        s, t = (int(v) for v in rng.choice(pts, 2))
        dist = _grid.bfs_distances(ev.edges, ev.shape, ev.strides, lo, hi, C, s)[t]
        sep = int(np.abs(cfg.box.coords(s) - cfg.box.coords(t)).max())
        if not (sep <= dist <= C_H * max(1 + n ** alpha, sep)):
            bad.append((s, t, int(dist)))
    return bad


def bit_independence(fields, min_sep=3, seed=0, max_pairs=20000):
    """Correlation and chi-square p-value of tile bits at L-infinity separation >= min_sep."""
    from scipy.stats import chi2_contingency

    rng = np.random.default_rng(seed)
    xs, ys = [], []
    for f in fields:
        idx = np.argwhere(f.bits >= 0)
        if len(idx) < 2:
            continue
        for _ in range(max(1, max_pairs // len(fields))):
            i, j = rng.integers(len(idx), size=2)
            if np.abs(idx[i] - idx[j]).max() >= min_sep:
                xs.append(f.bits[tuple(idx[i])])
                ys.append(f.bits[tuple(idx[j])])
    xs, ys = np.asarray(xs), np.asarray(ys)
    table = np.array([[np.sum((xs == a) & (ys == b)) for b in (0, 1)] for a in (0, 1)])
    if (table.sum(axis=0) == 0).any() or (table.sum(axis=1) == 0).any():
        return {"pairs": int(xs.size), "correlation": 0.0, "p_value": 1.0}
    p = chi2_contingency(table)[1]
    corr = float(np.corrcoef(xs, ys)[0, 1])
    return {"pairs": int(xs.size), "correlation": corr, "p_value": float(p)}


# tails

EVENT_KINDS = ("K", "F", "R", "H0", "H", "D", "L")


def tail_exponent(kind, d, params=None):
    params = params or EventParams()
    beta = beta_exponent(d)
    return {"K": d - 1, "F": beta, "H0": beta, "R": 1.0, "D": params.alpha, "H": params.alpha * beta,
            "L": EventParams.alpha2(d) * beta, "N": EventParams.alpha2(d) * beta}[kind]


def trial_box(d, n, params=None):
    """Cube Q of side n around the origin and a sampling box holding Q+ with a two-tile margin."""
    params = params or EventParams()
    Q = Box.centered(d, n)
    plus = enlarge_cube(Q).plus
    margin = 2 * params.tile
    return Q, Box(tuple(v - margin for v in plus.lo), tuple(v + margin for v in plus.hi))


def event_failure(kind, d, n, prob, seed, params=None):
    """True when the event fails on a fresh configuration for the centered side-n cube."""
    params = params or EventParams()
    if kind in ("K", "F"):
        Q = Box.centered(d, n)
        cfg = sample_site_config(_padded(Q), prob, seed)
        if kind == "K":
            return not dense_crossing(cfg, Q, params.density).verdict
        return not sparse_closed(cfg, Q, params.eps(d), params.F_mode, seed=seed).verdict
    Q, box = trial_box(d, n, params)
    ev = CubeEvents(sample_bond_config(box, prob, seed), params)
    if kind == "R":
        rep = ev.unique_crossing(Q)
    elif kind == "H0":
        rep = ev.coarse_regular(Q)
    elif kind == "H":
        rep = ev.multiscale_regular(Q)
    elif kind == "D":
        rep = ev.chemical_bounded(Q)
    elif kind == "L":
        rep = ev.good_tile_chain(Q, seed)
    else:
        raise ValueError(f"unknown event kind {kind!r}")
    return not rep.verdict


def _run_trial(args):
    return event_failure(*args)


@dataclass
class TailEstimate:
    kind: str
    sizes: list
    trials: list
    failures: list
    ci_lo: list
    ci_hi: list
    gamma: float
    fit: dict | None
    monotone: bool
    ci_method: str = "wilson 95%"

    @property
    def frequencies(self):
        return [f / t for f, t in zip(self.failures, self.trials)]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["size", "trials", "failures", "ci_lo", "ci_hi"])
            for row in zip(self.sizes, self.trials, self.failures, self.ci_lo, self.ci_hi):
                w.writerow([row[0], row[1], row[2], format(row[3], ".17g"), format(row[4], ".17g")])

    def to_dict(self):
        return _jsonable(asdict(self))


def fit_tail(sizes, failures, trials, gamma):
    """Weighted least squares of log frequency = a - b n^gamma over sizes with 0 < f < 1."""
    x, y, w = [], [], []
    for n, f, t in zip(sizes, failures, trials):
        if 0 < f < t:
            p = f / t
            x.append(n ** gamma)
            y.append(math.log(p))
            w.append(f * (1 - p))
    if len(x) < 2:
        return None
    A = np.stack([np.ones(len(x)), -np.asarray(x)], axis=1)
    sw = np.sqrt(np.asarray(w))
    (a, b), *_ = np.linalg.lstsq(A * sw[:, None], np.asarray(y) * sw, rcond=None)
    return {"a": float(a), "b": float(b), "gamma": gamma}


def estimate_tail(kind, d, sizes, trials, prob, seed=0, params=None, threads=1):
    """Failure frequencies over independent configurations; seeds derive from (seed, kind, size, trial)."""
    sizes = list(sizes)
    if sorted(sizes) != sizes or len(set(sizes)) != len(sizes):
        raise ValueError("sizes must be strictly increasing")
    params = params or EventParams()
    trials_list = [trials] * len(sizes) if np.isscalar(trials) else list(trials)
    jobs = [(kind, d, n, prob, derive_seed(seed, kind, n, t), params)
            for n, T in zip(sizes, trials_list) for t in range(T)]
    if threads > 1:
        with ProcessPoolExecutor(threads) as pool:
            outcomes = list(pool.map(_run_trial, jobs, chunksize=16))
    else:
        outcomes = [_run_trial(j) for j in jobs]
    failures, pos = [], 0
    for T in trials_list:
        failures.append(int(sum(outcomes[pos:pos + T])))
        pos += T
    lo, hi = [], []
    for f, T in zip(failures, trials_list):
        a, b = proportion_confint(f, T, alpha=0.05, method="wilson")
        lo.append(float(a))
        hi.append(float(b))
    freqs = [f / T for f, T in zip(failures, trials_list)]
    monotone = all(b <= a for a, b in zip(freqs, freqs[1:]))
    gamma = tail_exponent(kind, d, params)
    fit = fit_tail(sizes, failures, trials_list, gamma) if any(failures) else None
    return TailEstimate(kind, sizes, trials_list, failures, lo, hi, gamma, fit, monotone)


def cubes_containing(x, n, positions=3):
    """Side-n cubes containing x whose corners sit at evenly spaced offsets (positions per axis)."""
    x = np.asarray(x, dtype=np.int64)
    offs = sorted(set(np.linspace(0, n, positions).round().astype(np.int64).tolist()))
    return [Box.cube(tuple(x - np.asarray(o)), n) for o in itertools.product(offs, repeat=len(x))]


def estimate_onset_scales(configs, x, sizes, kind="HD", params=None, positions=3):
    """Per configuration the smallest grid size above which every checked cube containing x passes.

    kind "HD" uses multiscale_regular and chemical_bounded, "L" uses good_tile_chain.
    Returns a list of dicts with the onset (math.inf if the largest size fails).
    """
    out = []
    for cfg in configs:
        ev = CubeEvents(cfg, params)
        largest_fail = None
        for i, n in enumerate(sizes):
            for Q in cubes_containing(x, n, positions):
                if kind == "HD":
                    ok = ev.multiscale_regular(Q).verdict and ev.chemical_bounded(Q).verdict
                elif kind == "L":
                    ok = ev.good_tile_chain(Q).verdict
                else:
                    raise ValueError(f"unknown onset kind {kind!r}")
                if not ok:
                    largest_fail = i
                    break
        if largest_fail is None:
            onset = sizes[0]
        elif largest_fail + 1 < len(sizes):
            onset = sizes[largest_fail + 1]
        else:
            onset = math.inf
        out.append({"seed": cfg.seed, "onset": onset, "positions": positions})
    return out
