"""Numba kernels for bond-percolation graphs stored as (d, N) edge arrays.

Vertices are flat C-order indices of a box; edges[a, v] is the edge v -> v + e_a.
Sub-boxes are given by local (0-based) inclusive corners lo, hi. An `allowed`
mask restricts which vertices may be used.
"""
import numpy as np
from numba import njit

INF = np.iinfo(np.int32).max


@njit(cache=True)
def _coord(v, a, shape, strides):
    return (v // strides[a]) % shape[a]


@njit(cache=True)
def _sub_count(lo, hi):
    c = 1
    for a in range(lo.size):
        c *= hi[a] - lo[a] + 1
    return c


@njit(cache=True)
def _sub_vertex(i, lo, hi, strides):
    # i-th vertex (C order) of the sub-box
    d = lo.size
    v = 0
    for a in range(d - 1, -1, -1):
        w = hi[a] - lo[a] + 1
        v += (lo[a] + i % w) * strides[a]
        i //= w
    return v


@njit(cache=True)
def _neighbors(v, edges, shape, strides, lo, hi, allowed, out):
    # usable neighbours of v inside the sub-box; returns count
    d = shape.size
    cnt = 0
    for a in range(d):
        c = _coord(v, a, shape, strides)
        if c < hi[a] and edges[a, v]:
            w = v + strides[a]
            if allowed[w]:
                out[cnt] = w
                cnt += 1
        if c > lo[a]:
            w = v - strides[a]
            if edges[a, w] and allowed[w]:
                out[cnt] = w
                cnt += 1
    return cnt


@njit(cache=True)
def label_components(edges, shape, strides, lo, hi, allowed):
    """Component labels inside the sub-box; vertices without usable edges get -1.

    Labels are numbered in order of their smallest flat index.
    """
    n = allowed.size
    labels = np.full(n, -1, dtype=np.int32)
    queue = np.empty(n, dtype=np.int64)
    nb = np.empty(2 * shape.size, dtype=np.int64)
    count = _sub_count(lo, hi)
    nlab = 0
    for i in range(count):
        s = _sub_vertex(i, lo, hi, strides)
        if labels[s] >= 0 or not allowed[s]:
            continue
        if _neighbors(s, edges, shape, strides, lo, hi, allowed, nb) == 0:
            continue
        labels[s] = nlab
        head = 0
        tail = 1
        queue[0] = s
        while head < tail:
            v = queue[head]
            head += 1
            k = _neighbors(v, edges, shape, strides, lo, hi, allowed, nb)
            for j in range(k):
                w = nb[j]
                if labels[w] < 0:
                    labels[w] = nlab
                    queue[tail] = w
                    tail += 1
        nlab += 1
    return labels, nlab


@njit(cache=True)
def component_extents(labels, nlab, shape, strides):
    d = shape.size
    mins = np.full((nlab, d), 1 << 30, dtype=np.int64)
    maxs = np.full((nlab, d), -1, dtype=np.int64)
    sizes = np.zeros(nlab, dtype=np.int64)
    for v in range(labels.size):
        l = labels[v]
        if l < 0:
            continue
        sizes[l] += 1
        for a in range(d):
            c = _coord(v, a, shape, strides)
            if c < mins[l, a]:
                mins[l, a] = c
            if c > maxs[l, a]:
                maxs[l, a] = c
    return sizes, mins, maxs


@njit(cache=True)
def _crossing_into(edges, shape, strides, lo, hi, allowed, stamp, gen, queue, nb, crossed):
    d = shape.size
    for a in range(d):
        crossed[a] = False
    tlo = np.zeros(d, dtype=np.bool_)
    thi = np.zeros(d, dtype=np.bool_)
    count = _sub_count(lo, hi)
    ncrossed = 0
    for i in range(count):
        s = _sub_vertex(i, lo, hi, strides)
        if stamp[s] == gen or not allowed[s]:
            continue
        stamp[s] = gen
        for a in range(d):
            tlo[a] = False
            thi[a] = False
        head = 0
        tail = 1
        queue[0] = s
        size = 0
        while head < tail:
            v = queue[head]
            head += 1
            size += 1
            for a in range(d):
                c = _coord(v, a, shape, strides)
                if c == lo[a]:
                    tlo[a] = True
                if c == hi[a]:
                    thi[a] = True
            k = _neighbors(v, edges, shape, strides, lo, hi, allowed, nb)
            for j in range(k):
                w = nb[j]
                if stamp[w] != gen:
                    stamp[w] = gen
                    queue[tail] = w
                    tail += 1
        if size < 2:
            continue
        for a in range(d):
            if tlo[a] and thi[a] and not crossed[a]:
                crossed[a] = True
                ncrossed += 1
        if ncrossed == d:
            return True
    return ncrossed == d


@njit(cache=True)
def crossing_axes(edges, shape, strides, lo, hi, allowed):
    """Per axis: does some component of allowed-vertices-in-box touch both faces."""
    n = allowed.size
    stamp = np.zeros(n, dtype=np.int32)
    queue = np.empty(n, dtype=np.int64)
    nb = np.empty(2 * shape.size, dtype=np.int64)
    crossed = np.zeros(shape.size, dtype=np.bool_)
    _crossing_into(edges, shape, strides, lo, hi, allowed, stamp, 1, queue, nb, crossed)
    return crossed


@njit(cache=True)
def first_noncrossed(edges, shape, strides, allowed, cube_lo, sides):
    """Index of the first cube (cube_lo[i], sides[i]) not crossed in all axes, or -1."""
    n = allowed.size
    d = shape.size
    stamp = np.zeros(n, dtype=np.int32)
    queue = np.empty(n, dtype=np.int64)
    nb = np.empty(2 * d, dtype=np.int64)
    crossed = np.zeros(d, dtype=np.bool_)
    hi = np.empty(d, dtype=np.int64)
    for i in range(sides.size):
        if sides[i] == 0:
            continue
        for a in range(d):
            hi[a] = cube_lo[i, a] + sides[i]
        if not _crossing_into(edges, shape, strides, cube_lo[i], hi, allowed, stamp, i + 1, queue, nb, crossed):
            return i
    return -1


@njit(cache=True)
def bfs_distances(edges, shape, strides, lo, hi, allowed, src):
    n = allowed.size
    dist = np.full(n, INF, dtype=np.int32)
    if not allowed[src]:
        return dist
    queue = np.empty(n, dtype=np.int64)
    nb = np.empty(2 * shape.size, dtype=np.int64)
    dist[src] = 0
    queue[0] = src
    head = 0
    tail = 1
    while head < tail:
        v = queue[head]
        head += 1
        k = _neighbors(v, edges, shape, strides, lo, hi, allowed, nb)
        for j in range(k):
            w = nb[j]
            if dist[w] == INF:
                dist[w] = dist[v] + 1
                queue[tail] = w
                tail += 1
    return dist


@njit(cache=True)
def chemical_ratio_scan(edges, shape, strides, lo, hi, allowed, sources, targets, min_sep, bound):
    """Scan pairs (source, target) with L-infinity separation >= min_sep.

    Returns (max ratio d/|x-y|_inf, number of pairs, first violating source,
    first violating target) where a violation means d > bound * |x-y|_inf.
    """
    d = shape.size
    worst = 0.0
    npairs = 0
    bad_s = -1
    bad_t = -1
    for si in range(sources.size):
        s = sources[si]
        dist = bfs_distances(edges, shape, strides, lo, hi, allowed, s)
        for ti in range(targets.size):
            t = targets[ti]
            sep = 0
            for a in range(d):
                diff = abs(_coord(s, a, shape, strides) - _coord(t, a, shape, strides))
                if diff > sep:
                    sep = diff
            if sep < min_sep or sep == 0:
                continue
            npairs += 1
            dd = dist[t]
            ratio = np.inf if dd == INF else dd / sep
            if ratio > worst:
                worst = ratio
            if ratio > bound and bad_s < 0:
                bad_s = s
                bad_t = t
    return worst, npairs, bad_s, bad_t
