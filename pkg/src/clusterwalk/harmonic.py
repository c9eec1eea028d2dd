"""Dirichlet problems on cluster balls, Harnack ratios, oscillation decay and the pendant-cube graph."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph
from scipy.sparse import linalg as splinalg

from .cluster import WeightedSubgraph
from .inequality import rayleigh_ratio
from .walk import _as_local, _jump

DIRECT_CAP = 3000
SOLVE_RTOL = 1e-10


def ball_closure(graph, x, R):
    """Masks of B(x, R) and its exterior vertex boundary."""
    x = _as_local(graph, x)
    inside = graph.distances(x) < R
    touched = np.asarray(graph.adj[inside].sum(axis=0)).ravel() > 0
    return inside, touched & ~inside


@dataclass(eq=False)
class HarmonicSolution:
    """h is NaN outside the closure of the ball."""

    graph: WeightedSubgraph
    inside: np.ndarray
    boundary: np.ndarray
    h: np.ndarray
    residual: float

    def values(self, mask):
        return self.h[np.asarray(mask, dtype=bool)]

    def to_csv(self, path):
        idx = np.flatnonzero(self.inside | self.boundary)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["vertex", "boundary", "h"])
            for i in idx:
                w.writerow([" ".join(map(str, self.graph.coords[i])), int(self.boundary[i]),
                            format(float(self.h[i]), ".17g")])


class DirichletSolver:
    """Factorizes L restricted to the ball once; solves for many boundary datasets."""

    def __init__(self, graph, inside, boundary=None):
        inside = np.asarray(inside, dtype=bool)
        if boundary is None:
            touched = np.asarray(graph.adj[inside].sum(axis=0)).ravel() > 0
            boundary = touched & ~inside
        self.graph, self.inside, self.boundary = graph, inside, np.asarray(boundary, dtype=bool)
        self.I = np.flatnonzero(inside)
        self.B = np.flatnonzero(self.boundary)
        closure = np.flatnonzero(inside | self.boundary)
        sub = graph.adj[closure][:, closure]
        _, lab = csgraph.connected_components(sub, directed=False)
        reached = np.isin(lab, lab[np.isin(closure, self.B)])
        stranded = closure[~reached & np.isin(closure, self.I)]
        if stranded.size:
            raise ValueError(f"vertex {tuple(graph.coords[stranded[0]])} has no path to the boundary")
        A = graph.adj
        deg = np.asarray(A.sum(axis=1)).ravel()
        self.deg = deg
        self.M = (sparse.diags(deg[self.I]) - A[self.I][:, self.I]).tocsc()
        self.coupling = A[self.I][:, self.B].tocsr()
        self._lu = splinalg.splu(self.M) if self.I.size <= DIRECT_CAP else None

    def _solve(self, rhs, scale):
        if self._lu is not None:
            return self._lu.solve(rhs)
        out, info = splinalg.cg(self.M, rhs, rtol=SOLVE_RTOL * 1e-2, atol=SOLVE_RTOL * 1e-2 * max(scale, 1e-300),
                                maxiter=20 * self.I.size)
        if info != 0:
            raise RuntimeError("conjugate gradient did not converge")
        return out

    def solve(self, g):
        """g: boundary values aligned with sorted boundary indices."""
        g = np.asarray(g, dtype=float)
        if g.shape != (self.B.size,):
            raise ValueError(f"expected {self.B.size} boundary values")
        span = float(g.max() - g.min()) if g.size else 0.0
        h = np.full(self.graph.n, np.nan)
        h[self.B] = g
        if self.I.size:
            h[self.I] = self._solve(self.coupling @ g, max(span, abs(g).max()))
        return HarmonicSolution(self.graph, self.inside, self.boundary, h, self.residual(h))

    def residual(self, h):
        if not self.I.size:
            return 0.0
        hz = np.nan_to_num(h)
        Lh = self.graph.adj[self.I] @ hz - self.deg[self.I] * hz[self.I]
        return float(np.abs(Lh).max())


def solve_dirichlet(graph, inside, boundary_values):
    """Harmonic extension into `inside` of values on its exterior boundary.

    boundary_values is a scalar, an array over the sorted boundary vertices,
    or a callable on their coordinates.
    """
    solver = DirichletSolver(graph, inside)
    g = boundary_values
    if callable(g):
        g = np.asarray(g(graph.coords[solver.B]), dtype=float)
    elif np.isscalar(g):
        g = np.full(solver.B.size, float(g))
    return solver.solve(g)


def harnack_ratio(solution, inner):
    vals = solution.values(inner)
    if vals.size == 0:
        raise ValueError("empty inner ball")
    if np.any(~np.isfinite(vals)) or vals.min() <= 0:
        raise ValueError("Harnack ratio needs positive values on the inner ball")
    return float(vals.max() / vals.min())


def oscillation(h, mask):
    v = h[np.asarray(mask, dtype=bool)]
    return float(v.max() - v.min()) if v.size else 0.0


def random_boundary_data(n_boundary, count, seed, low=0.1, high=1.1):
    return np.random.default_rng(seed).uniform(low, high, size=(count, n_boundary))


@dataclass
class HarnackEnsemble:
    R: float
    inner_radius: float
    ratios: np.ndarray
    decay: np.ndarray
    max_principle: bool
    max_residual: float

    @property
    def max_ratio(self):
        return float(self.ratios.max())

    @property
    def max_decay(self):
        return float(self.decay.max())

    def to_dict(self):
        return {"R": self.R, "inner_radius": self.inner_radius, "ratios": self.ratios.tolist(),
                "decay": self.decay.tolist(), "max_principle": self.max_principle,
                "max_residual": self.max_residual}


def harnack_ensemble(graph, x, R, datasets=50, seed=0, inner_radius=None, tol=1e-9):
    """Harnack ratios on B(x, R/2) and oscillation decay Osc(B(x,R/2))/Osc(B(x,R)) over random positive data."""
    x = _as_local(graph, x)
    inner_radius = R / 2 if inner_radius is None else inner_radius
    dist = graph.distances(x)
    inside = dist < R
    inner = dist < inner_radius
    solver = DirichletSolver(graph, inside)
    data = random_boundary_data(solver.B.size, datasets, seed)
    ratios, decay = np.empty(datasets), np.empty(datasets)
    ok, worst = True, 0.0
    for k in range(datasets):
        sol = solver.solve(data[k])
        ratios[k] = harnack_ratio(sol, inner)
        osc0 = oscillation(sol.h, inside)
        decay[k] = 0.0 if osc0 == 0 else oscillation(sol.h, inner) / osc0
        hi = sol.h[inside]
        ok &= bool(hi.min() >= data[k].min() - tol and hi.max() <= data[k].max() + tol)
        worst = max(worst, sol.residual)
    return HarnackEnsemble(R, inner_radius, ratios, decay, ok, worst)


def oscillation_decay(graph, x, R, datasets=50, seed=0):
    """Per-dataset decay factors and their maximum."""
    ens = harnack_ensemble(graph, x, R, datasets, seed)
    return ens.decay, ens.max_decay


def harnack_onset(radii, ratios, factor=2.0, window=3):
    """Smallest radius whose ratio is within `factor` of the median over the next `window` radii."""
    radii = list(radii)
    ratios = np.asarray(ratios, dtype=float)
    for i in range(len(radii) - window):
        med = float(np.median(ratios[i + 1:i + 1 + window]))
        if med / factor <= ratios[i] <= med * factor:
            return radii[i]
    return math.inf


def walk_exit_value(graph, inside, boundary_values, x, trials, seed):
    """Monte Carlo E_x g(walk at its exit from `inside`), with standard error."""
    inside = np.asarray(inside, dtype=bool)
    x = _as_local(graph, x)
    g = np.full(graph.n, np.nan)
    bidx = np.flatnonzero((np.asarray(graph.adj[inside].sum(axis=0)).ravel() > 0) & ~inside)
    g[bidx] = boundary_values
    rng = np.random.default_rng(seed)
    indptr, indices = graph.adj.indptr, graph.adj.indices
    pos = np.full(trials, x, dtype=np.int64)
    live = inside[pos]
    while live.any():
        idx = np.flatnonzero(live)
        pos[idx] = _jump(rng, pos[idx], indptr, indices)
        live[idx] = inside[pos[idx]]
    vals = g[pos]
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(trials)) if trials > 1 else math.inf


@dataclass(eq=False)
class PendantCube:
    graph: WeightedSubgraph
    x0: int
    cube: np.ndarray
    R: int
    s: int
    ratio: float


def pendant_cube_graph(d, R, s=None):
    """Lattice slab with a side-R cube hanging off one edge at L1 distance s from the origin.

    The slab is {0..s} x {-(3R//2)..3R//2}^(d-1); the cube has R vertices per
    axis and touches the slab only through the edge (s,0,..,0)-(s+1,0,..,0).
    ratio is the exp(-dist/R)-weighted variance of the cube indicator over
    R^2 times its weighted energy.
    """
    s = 10 * R if s is None else s
    w = (3 * R) // 2
    slab = [np.arange(0, s + 1)] + [np.arange(-w, w + 1)] * (d - 1)
    cube = [np.arange(s + 1, s + R + 1)] + [np.arange(0, R)] * (d - 1)
    parts = [np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d) for axes in (slab, cube)]
    coords = np.concatenate(parts)
    lookup = {tuple(c): i for i, c in enumerate(map(tuple, coords))}
    pairs = []
    n_slab = parts[0].shape[0]
    for i, c in enumerate(map(tuple, coords)):
        for a in range(d):
            nb = c[:a] + (c[a] + 1,) + c[a + 1:]
            j = lookup.get(nb)
            if j is not None and (i < n_slab) == (j < n_slab):
                pairs.append((i, j))
    a0 = lookup[(s,) + (0,) * (d - 1)]
    b0 = lookup[(s + 1,) + (0,) * (d - 1)]
    pairs.append((a0, b0))
    graph = WeightedSubgraph.from_edges(coords, pairs)
    x0 = lookup[(0,) * d]
    in_cube = np.zeros(graph.n, dtype=bool)
    in_cube[n_slab:] = True
    psi = np.exp(-graph.distances(x0) / R)
    ratio = rayleigh_ratio(graph, in_cube.astype(float), phi=psi) / R ** 2
    return PendantCube(graph, x0, in_cube, R, s, ratio)
