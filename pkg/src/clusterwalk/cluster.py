"""Cluster geometry on percolation configurations.

Vertex sets are boolean masks shaped like the configuration's box. Graph-level
computations (walks, inequalities) use WeightedSubgraph, a compact CSR graph
over an explicit vertex list.
"""
from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import ndimage, sparse
from scipy.sparse import csgraph

from . import _grid
from .percolation import BondConfig, Box, SiteConfig

INF_DIST = int(_grid.INF)


def _structure(d, adjacency):
    if adjacency == "nearest":
        return ndimage.generate_binary_structure(d, 1)
    if adjacency == "star":
        return ndimage.generate_binary_structure(d, d)
    raise ValueError(f"unknown adjacency {adjacency!r}")


def _grid_args(cfg):
    box = cfg.box
    return (cfg.edges.reshape(box.d, -1), np.asarray(box.shape, dtype=np.int64),
            np.asarray(box.strides, dtype=np.int64))


def _local_corners(box, sub):
    lo = np.asarray(sub.lo, dtype=np.int64) - np.asarray(box.lo, dtype=np.int64)
    hi = np.asarray(sub.hi, dtype=np.int64) - np.asarray(box.lo, dtype=np.int64)
    return lo, hi


def box_mask(box, sub):
    m = np.zeros(box.shape, dtype=bool)
    m[box.local_slices(sub)] = True
    return m


@dataclass(eq=False)
class ClusterLabeling:
    """Labels over the configuration box: -1 for vertices outside every cluster."""

    cfg: object
    region: Box
    adjacency: str
    labels: np.ndarray
    sizes: np.ndarray
    min_vertex: np.ndarray

    @property
    def n_clusters(self):
        return int(self.sizes.size)

    def mask(self, label):
        return self.labels == label

    def to_csv(self, path):
        box = self.cfg.box
        flat = np.flatnonzero(self.labels.ravel() >= 0)
        coords = box.coords(flat)
        ids = self.labels.ravel()[flat]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x{i}" for i in range(box.d)] + ["component"])
            for c, i in zip(coords, ids):
                w.writerow(list(map(int, c)) + [int(i)])


def label_clusters(cfg, region=None, adjacency="nearest"):
    box = cfg.box
    region = box if region is None else region
    if not box.contains_box(region):
        raise ValueError("region must lie inside the configuration box")
    if isinstance(cfg, BondConfig):
        if adjacency != "nearest":
            raise ValueError("star adjacency is only defined for site configurations")
        edges, shape, strides = _grid_args(cfg)
        lo, hi = _local_corners(box, region)
        allowed = np.ones(box.n_vertices, dtype=bool)
        flat, nlab = _grid.label_components(edges, shape, strides, lo, hi, allowed)
        labels = flat.reshape(box.shape)
    else:
        labels = np.full(box.shape, -1, dtype=np.int32)
        sl = box.local_slices(region)
        lab, nlab = ndimage.label(cfg.open[sl], structure=_structure(box.d, adjacency))
        labels[sl] = lab.astype(np.int32) - 1
    flat = labels.ravel()
    idx = np.flatnonzero(flat >= 0)
    sizes = np.bincount(flat[idx], minlength=nlab).astype(np.int64)
    # labels are numbered in scan order, so the first hit is the minimal vertex
    _, first = np.unique(flat[idx], return_index=True)
    min_vertex = box.coords(idx[first]) if nlab else np.zeros((0, box.d), dtype=np.int64)
    return ClusterLabeling(cfg, region, adjacency, labels, sizes, min_vertex)


def largest_label(labeling):
    """Label of the largest cluster (ties: lexicographically smallest minimal vertex), or -1."""
    if labeling.n_clusters == 0:
        return -1
    best = labeling.sizes.max()
    cands = np.flatnonzero(labeling.sizes == best)
    # label order follows the minimal vertex in C order, which is lexicographic
    return int(cands[0])


def largest_cluster(labeling, Q=None):
    """Mask of C^v(Q); relabels inside Q when Q differs from the labeled region.

    An empty mask signals that Q has no open vertex.
    """
    if Q is not None and Q != labeling.region:
        labeling = label_clusters(labeling.cfg, Q, labeling.adjacency)
    lab = largest_label(labeling)
    if lab < 0:
        return np.zeros(labeling.labels.shape, dtype=bool)
    return labeling.labels == lab


def is_crossing(cfg, cluster, Qprime, adjacency="nearest"):
    """Whether every axis has a component of cluster within Qprime touching both faces."""
    box = cfg.box
    cluster = np.asarray(cluster, dtype=bool)
    if not cluster.any():
        return False
    if max(Qprime.sides) == 0:
        return True
    if not box.contains_box(Qprime):
        raise ValueError("Qprime must lie inside the configuration box")
    if isinstance(cfg, BondConfig):
        edges, shape, strides = _grid_args(cfg)
        lo, hi = _local_corners(box, Qprime)
        return bool(_grid.crossing_axes(edges, shape, strides, lo, hi, cluster.ravel()).all())
    sl = box.local_slices(Qprime)
    sub = cluster[sl] & cfg.open[sl]
    lab, n = ndimage.label(sub, structure=_structure(box.d, adjacency))
    if n == 0:
        return False
    for a in range(box.d):
        lo_face = np.unique(np.take(lab, 0, axis=a))
        hi_face = np.unique(np.take(lab, -1, axis=a))
        common = np.intersect1d(lo_face[lo_face > 0], hi_face[hi_face > 0])
        if common.size == 0:
            return False
    return True


def _neighbour_shifts(d, adjacency):
    if adjacency == "nearest":
        out = []
        for a in range(d):
            for s in (1, -1):
                v = [0] * d
                v[a] = s
                out.append(tuple(v))
        return out
    if adjacency == "star":
        return [v for v in itertools.product((-1, 0, 1), repeat=d) if any(v)]
    raise ValueError(f"unknown adjacency {adjacency!r}")


def _shifted(mask, v):
    """out[x] = mask[x + v] (False outside)."""
    out = np.zeros_like(mask)
    src, dst = [], []
    for s, n in zip(v, mask.shape):
        if s >= 0:
            src.append(slice(s, n))
            dst.append(slice(0, n - s))
        else:
            src.append(slice(0, n + s))
            dst.append(slice(-s, n))
    out[tuple(dst)] = mask[tuple(src)]
    return out


def neighbourhood(mask, adjacency="nearest"):
    """Vertices adjacent to some vertex of mask."""
    out = np.zeros_like(mask)
    for v in _neighbour_shifts(mask.ndim, adjacency):
        out |= _shifted(mask, v)
    return out


class BoundarySets(NamedTuple):
    internal: np.ndarray
    external: np.ndarray
    edges: np.ndarray
    open_edges: np.ndarray


def edge_boundary(A1, A2, box):
    """Nearest-neighbour edges {x, y} with x in A1 and y in A2, as flat index pairs."""
    A1 = np.asarray(A1, dtype=bool)
    A2 = np.asarray(A2, dtype=bool)
    strides = box.strides
    out = []
    for a in range(box.d):
        v = [0] * box.d
        v[a] = 1
        up = _shifted(A2, tuple(v))   # x with x + e_a in A2
        down = _shifted(A2, tuple(-c for c in v))
        for src_mask, step in ((A1 & up, strides[a]), (A1 & down, -strides[a])):
            xs = np.flatnonzero(src_mask.ravel())
            out.append(np.stack([xs, xs + step], axis=1))
    if not out:
        return np.zeros((0, 2), dtype=np.int64)
    return np.concatenate(out).astype(np.int64)


def _edge_is_open(cfg, pairs):
    if pairs.size == 0:
        return np.zeros(0, dtype=bool)
    box = cfg.box
    lo = np.minimum(pairs[:, 0], pairs[:, 1])
    hi = np.maximum(pairs[:, 0], pairs[:, 1])
    step = hi - lo
    strides = np.asarray(box.strides)
    axis = np.array([int(np.flatnonzero(strides == s)[0]) for s in step])
    return cfg.edges.reshape(box.d, -1)[axis, lo]


def boundary_sets(A, Q, box, adjacency="nearest", cfg=None):
    """Internal and external boundary of A relative to Q, and the edge boundary to Q - A.

    Q may be a Box or a mask. When a bond configuration is given, open_edges
    flags which boundary edges are open.
    """
    A = np.asarray(A, dtype=bool)
    Qm = box_mask(box, Q) if isinstance(Q, Box) else np.asarray(Q, dtype=bool)
    if np.any(A & ~Qm):
        raise ValueError("A must be a subset of Q")
    rest = Qm & ~A
    internal = A & neighbourhood(rest, adjacency)
    external = rest & neighbourhood(A, adjacency)
    edges = edge_boundary(A, rest, box)
    open_edges = _edge_is_open(cfg, edges) if isinstance(cfg, BondConfig) else np.zeros(len(edges), dtype=bool)
    return BoundarySets(internal, external, edges, open_edges)


def open_vertex_mask(cfg, region=None):
    """Vertices with an open incident edge inside region (bond) or open sites (site)."""
    box = cfg.box
    region = box if region is None else region
    if isinstance(cfg, SiteConfig):
        return cfg.open & box_mask(box, region)
    m = np.zeros(box.shape, dtype=bool)
    m[box.local_slices(region)] = cfg.restrict(region).degree().astype(bool)
    return m


def _distances_from(cfg, x, region, allowed=None):
    box = cfg.box
    region = box if region is None else region
    if not isinstance(cfg, BondConfig):
        raise TypeError("chemical distances are defined on bond configurations")
    edges, shape, strides = _grid_args(cfg)
    lo, hi = _local_corners(box, region)
    if allowed is None:
        allowed = np.ones(box.n_vertices, dtype=bool)
    src = int(box.index(x))
    dist = _grid.bfs_distances(edges, shape, strides, lo, hi, np.asarray(allowed, dtype=bool).ravel(), src)
    return dist.reshape(box.shape)


def chemical_distance(cfg, x, y, region=None):
    """Length of the shortest open path inside region; math.inf when none exists."""
    box = cfg.box
    region = box if region is None else region
    if not (region.contains(x) and region.contains(y)):
        raise ValueError("x and y must lie in the region")
    if not open_vertex_mask(cfg, region)[tuple(np.asarray(x) - box.lo)]:
        return math.inf
    dist = _distances_from(cfg, x, region)
    v = int(dist[tuple(np.asarray(y) - box.lo)])
    return math.inf if v == INF_DIST else v


@dataclass(eq=False)
class ChemicalBall:
    center: tuple
    radius: float
    mask: np.ndarray
    dist: np.ndarray
    box: Box

    @property
    def vertices(self):
        return self.box.coords(np.flatnonzero(self.mask.ravel()))

    @property
    def size(self):
        return int(self.mask.sum())

    def to_csv(self, path):
        flat = np.flatnonzero(self.mask.ravel())
        coords = self.box.coords(flat)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x{i}" for i in range(self.box.d)] + ["distance"])
            for c, f in zip(coords, flat):
                w.writerow(list(map(int, c)) + [int(self.dist.ravel()[f])])


def chemical_ball(cfg, x, r, region=None):
    box = cfg.box
    region = box if region is None else region
    if not open_vertex_mask(cfg, region)[tuple(np.asarray(x) - box.lo)]:
        raise ValueError(f"center {tuple(x)} is not an open vertex")
    dist = _distances_from(cfg, x, region)
    return ChemicalBall(tuple(int(v) for v in x), r, dist < r, dist, box)


def diameter(A, box=None):
    """L-infinity diameter of a vertex set given as a mask (with box) or coordinates."""
    A = np.asarray(A)
    if A.dtype == bool:
        pts = np.argwhere(A)
    else:
        pts = A.reshape(-1, A.shape[-1]) if A.ndim > 1 else A.reshape(-1, 1)
    if len(pts) == 0:
        raise ValueError("diameter of an empty set")
    return int((pts.max(axis=0) - pts.min(axis=0)).max())


@dataclass(eq=False)
class WeightedSubgraph:
    """Finite graph with unit conductances on its edges.

    mu is the ambient open degree, mu0 the degree inside the vertex set. When the
    graph is not cut out of a configuration both coincide.
    """

    coords: np.ndarray
    adj: sparse.csr_matrix
    mu: np.ndarray
    mu0: np.ndarray
    box: Box | None = None
    sites: np.ndarray | None = None
    _lookup: dict = field(default=None, repr=False)

    @property
    def n(self):
        return int(self.coords.shape[0])

    @property
    def d(self):
        return int(self.coords.shape[1])

    def edges(self):
        coo = sparse.triu(self.adj, k=1).tocoo()
        order = np.lexsort((coo.col, coo.row))
        return np.stack([coo.row[order], coo.col[order]], axis=1).astype(np.int64)

    def index(self, x):
        if self._lookup is None:
            self._lookup = {tuple(map(int, c)): i for i, c in enumerate(self.coords)}
        return self._lookup[tuple(int(v) for v in x)]

    def distances(self, src):
        """BFS graph distances from local vertex src (np.inf where unreachable)."""
        return csgraph.shortest_path(self.adj, unweighted=True, directed=False, indices=[int(src)])[0]

    def multi_source_distances(self, sources):
        """Distance to the nearest vertex of sources (local indices)."""
        sources = np.asarray(sources, dtype=np.int64)
        if sources.size == 0:
            return np.full(self.n, np.inf)
        return csgraph.dijkstra(self.adj, directed=False, indices=sources, unweighted=True, min_only=True)

    def components(self):
        return csgraph.connected_components(self.adj, directed=False)

    def is_connected(self):
        return self.n > 0 and self.components()[0] == 1

    def subgraph(self, keep):
        """Induced subgraph on a local mask or index list; mu stays ambient."""
        keep = np.asarray(keep)
        idx = np.flatnonzero(keep) if keep.dtype == bool else np.sort(keep.astype(np.int64))
        adj = self.adj[idx][:, idx].tocsr()
        mu0 = np.asarray(adj.sum(axis=1)).ravel()
        sites = None if self.sites is None else self.sites[idx]
        return WeightedSubgraph(self.coords[idx], adj, self.mu[idx].copy(), mu0, self.box, sites)

    @classmethod
    def from_edges(cls, coords, pairs, mu=None):
        """Graph on explicit coordinates with the given local index pairs as edges."""
        coords = np.asarray(coords, dtype=np.int64)
        if coords.ndim == 1:
            coords = coords[:, None]
        n = coords.shape[0]
        pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        data = np.ones(len(pairs))
        a = sparse.coo_matrix((data, (pairs[:, 0], pairs[:, 1])), shape=(n, n))
        adj = (a + a.T).tocsr()
        adj.data[:] = 1.0
        mu0 = np.asarray(adj.sum(axis=1)).ravel()
        mu = mu0.copy() if mu is None else np.asarray(mu, dtype=float)
        return cls(coords, adj, mu, mu0)


def induced_graph(cfg, H=None):
    """WeightedSubgraph of a bond configuration on the vertex mask H (default: open vertices)."""
    box = cfg.box
    if H is None:
        H = cfg.degree() > 0
    H = np.asarray(H, dtype=bool)
    flat = np.flatnonzero(H.ravel())
    pos = np.full(box.n_vertices, -1, dtype=np.int64)
    pos[flat] = np.arange(flat.size)
    rows, cols = [], []
    emat = cfg.edges.reshape(box.d, -1)
    for a in range(box.d):
        src = flat[emat[a, flat]]
        dst = src + box.strides[a]
        ok = pos[dst] >= 0
        rows.append(pos[src[ok]])
        cols.append(pos[dst[ok]])
    rows = np.concatenate(rows) if rows else np.zeros(0, dtype=np.int64)
    cols = np.concatenate(cols) if cols else np.zeros(0, dtype=np.int64)
    n = flat.size
    a = sparse.coo_matrix((np.ones(rows.size), (rows, cols)), shape=(n, n))
    adj = (a + a.T).tocsr()
    mu0 = np.asarray(adj.sum(axis=1)).ravel()
    mu = cfg.degree().ravel()[flat].astype(float)
    return WeightedSubgraph(box.coords(flat), adj, mu, mu0, box, flat)


def cluster_graph(cfg, region=None):
    """WeightedSubgraph of C^v(region), the largest open cluster inside region."""
    region = cfg.box if region is None else region
    lab = label_clusters(cfg, region)
    mask = largest_cluster(lab)
    if region != cfg.box:
        return induced_graph(cfg.restrict(region), mask[cfg.box.local_slices(region)])
    return induced_graph(cfg, mask)
