"""Continuous-time simple random walk: trajectories, heat kernels, exit times.

The walk holds for an Exp(1) time at x and then jumps along a uniformly chosen
edge of the graph, so its generator is mu(x)^-1 sum_y nu_xy (f(y) - f(x)) with
mu the degree in the graph. Heat kernels are q_t(x,y) = P^x(Y_t = y) / mu(y).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg, sparse, stats
from statsmodels.stats.proportion import proportion_confint


DENSE_CAP = 4000
TRUNCATION_TOL = 1e-13


def _walk_degree(graph):
    return np.asarray(graph.adj.sum(axis=1)).ravel()


def _as_local(graph, x):
    if isinstance(x, (int, np.integer)):
        return int(x)
    return graph.index(x)


def _as_local_list(graph, xs):
    if isinstance(xs, (int, np.integer)):
        xs = [xs]
    return np.array([_as_local(graph, x) for x in xs], dtype=np.int64)


@dataclass(eq=False)
class Trajectory:
    start: int
    jump_times: np.ndarray
    vertices: np.ndarray
    t_end: float
    seed: int

    def position(self, t):
        i = np.searchsorted(self.jump_times, t, side="right")
        return int(self.vertices[i])


def simulate_walk(graph, x, t_end, seed):
    """Single trajectory up to t_end; vertices[i] is the position after i jumps."""
    x = _as_local(graph, x)
    deg = _walk_degree(graph)
    if deg[x] <= 0:
        raise ValueError("walk started at an isolated vertex")
    rng = np.random.default_rng(seed)
    indptr, indices = graph.adj.indptr, graph.adj.indices
    times, verts = [], [x]
    t, v = 0.0, x
    while True:
        t += rng.exponential(1.0)
        if t > t_end:
            break
        k = int(rng.integers(indptr[v], indptr[v + 1]))
        v = int(indices[k])
        times.append(t)
        verts.append(v)
    return Trajectory(x, np.asarray(times), np.asarray(verts, dtype=np.int64), float(t_end), int(seed))


def _jump(rng, pos, indptr, indices):
    lo = indptr[pos]
    width = indptr[pos + 1] - lo
    return indices[lo + (rng.random(pos.size) * width).astype(np.int64)]


def walk_positions(graph, x, times, trials, seed):
    """Positions of `trials` independent walks from x at each grid time, shape (T, trials)."""
    x = _as_local(graph, x)
    deg = _walk_degree(graph)
    if deg[x] <= 0:
        raise ValueError("walk started at an isolated vertex")
    times = np.asarray(times, dtype=float)
    order = np.argsort(times)
    rng = np.random.default_rng(seed)
    indptr, indices = graph.adj.indptr, graph.adj.indices
    pos = np.full(trials, x, dtype=np.int64)
    clock = rng.exponential(1.0, trials)   # time of next jump
    out = np.empty((times.size, trials), dtype=np.int64)
    for ti in order:
        t = times[ti]
        while True:
            due = np.flatnonzero(clock <= t)
            if due.size == 0:
                break
            pos[due] = _jump(rng, pos[due], indptr, indices)
            clock[due] += rng.exponential(1.0, due.size)
        out[ti] = pos
    return out


@dataclass(eq=False)
class HeatKernel:
    """q[ti, si, y] = q_t(sources[si], y); stderr only for Monte Carlo kernels."""

    graph: object
    times: np.ndarray
    sources: np.ndarray
    q: np.ndarray
    mode: str
    stderr: np.ndarray | None = None
    killed: np.ndarray | None = None
    truncation_error: float = 0.0

    def row(self, ti, x):
        si = int(np.flatnonzero(self.sources == x)[0])
        return self.q[ti, si]

    def matrix(self, ti):
        if self.sources.size != self.graph.n:
            raise ValueError("kernel holds only selected rows")
        return self.q[ti]

    def to_csv(self, path):
        coords = self.graph.coords
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "x", "y", "q", "stderr"])
            for ti, t in enumerate(self.times):
                for si, s in enumerate(self.sources):
                    nz = np.flatnonzero(self.q[ti, si])
                    for y in nz:
                        se = 0.0 if self.stderr is None else self.stderr[ti, si, y]
                        w.writerow([format(float(t), ".17g"), " ".join(map(str, coords[s])),
                                    " ".join(map(str, coords[y])), format(float(self.q[ti, si, y]), ".17g"),
                                    format(float(se), ".17g")])


def poisson_cutoff(t, tol=TRUNCATION_TOL):
    """Smallest K with P(Poisson(t) > K) < tol, and that tail mass."""
    if t == 0:
        return 0, 0.0
    k = int(t + 10 * math.sqrt(t) + 20)
    while stats.poisson.sf(k, t) >= tol:
        k = int(k * 1.2) + 5
    lo = 0
    while lo < k:
        mid = (lo + k) // 2
        if stats.poisson.sf(mid, t) < tol:
            k = mid
        else:
            lo = mid + 1
    return k, float(stats.poisson.sf(k, t))


def jump_matrix(graph, inside=None):
    """Row-stochastic jump matrix D^-1 A (rows/columns outside `inside` removed by zeroing)."""
    deg = _walk_degree(graph)
    if np.any(deg <= 0):
        raise ValueError("graph has isolated vertices (mu = 0)")
    P = sparse.diags(1.0 / deg) @ graph.adj
    if inside is not None:
        keep = sparse.diags(np.asarray(inside, dtype=float))
        P = keep @ P @ keep
    return P.tocsr()


def _uniformize(P, start, times, dense):
    """sum_k Pois(t; k) start P^k for each t; start has shape (S, N)."""
    times = np.asarray(times, dtype=float)
    cut = [poisson_cutoff(t) for t in times]
    kmax = max(c[0] for c in cut)
    err = max(c[1] for c in cut)
    out = np.zeros((times.size,) + start.shape)
    weights = np.array([stats.poisson.pmf(np.arange(kmax + 1), t) if t > 0 else
                        np.r_[1.0, np.zeros(kmax)] for t in times])
    v = start.copy()
    PT = P.T.tocsr() if not dense else None
    Pd = P.toarray() if dense else None
    for k in range(kmax + 1):
        out += weights[:, k][:, None, None] * v[None]
        if k < kmax:
            v = v @ Pd if dense else (PT @ v.T).T
    return out, err


def exact_heat_kernel(graph, times, killed=None, sources=None, method="uniformization", dense_cap=DENSE_CAP):
    """Exact q_t on a finite graph.

    With sources=None the full matrix is computed (dense, capped at dense_cap
    vertices); otherwise only the requested rows, using sparse propagation.
    `killed` is a local mask of the region outside of which the walk is absorbed.
    """
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if np.any(times < 0):
        raise ValueError("times must be nonnegative")
    n = graph.n
    deg = _walk_degree(graph)
    inside = None if killed is None else np.asarray(killed, dtype=bool)
    full = sources is None
    if full:
        if n > dense_cap:
            raise ValueError(f"graph has {n} vertices, above the dense cap {dense_cap}; "
                             "request selected rows or use mc_heat_kernel")
        src = np.arange(n)
    else:
        src = _as_local_list(graph, sources)
    if method == "spectral":
        if n > dense_cap:
            raise ValueError("spectral mode needs a dense eigendecomposition")
        keep = np.ones(n, dtype=bool) if inside is None else inside
        idx = np.flatnonzero(keep)
        A = graph.adj[idx][:, idx].toarray()
        s = 1.0 / np.sqrt(deg[idx])
        S = s[:, None] * A * s[None, :]
        lam, U = linalg.eigh(S)
        rows = np.searchsorted(idx, src)
        q = np.zeros((times.size, src.size, n))
        for ti, t in enumerate(times):
            K = (U[rows] * np.exp(t * (lam - 1.0))) @ U.T
            sub = K * s[rows][:, None] * s[None, :]
            valid = keep[src]
            q[ti][:, idx] = np.where(valid[:, None], sub, 0.0)
        err = 0.0
    elif method == "uniformization":
        P = jump_matrix(graph, inside)
        start = np.zeros((src.size, n))
        start[np.arange(src.size), src] = 1.0
        if inside is not None:
            start[:, ~inside] = 0.0
        probs, err = _uniformize(P, start, times, dense=full)
        q = probs / deg[None, None, :]
    else:
        raise ValueError(f"unknown method {method!r}")
    return HeatKernel(graph, times, src, q, "exact", None, inside, err)


def mc_heat_kernel(graph, x, times, trials, seed):
    """Monte Carlo estimate of the row q_t(x, .) with binomial standard errors."""
    if trials < 1:
        raise ValueError("trials must be positive")
    x = _as_local(graph, x)
    times = np.atleast_1d(np.asarray(times, dtype=float))
    deg = _walk_degree(graph)
    pos = walk_positions(graph, x, times, trials, seed)
    freq = np.zeros((times.size, 1, graph.n))
    for ti in range(times.size):
        freq[ti, 0] = np.bincount(pos[ti], minlength=graph.n) / trials
    se = np.sqrt(freq * (1 - freq) / trials) / deg[None, None, :]
    return HeatKernel(graph, times, np.array([x]), freq / deg[None, None, :], "monte-carlo", se)


def _scaled_bessel_series(k, s, rtol=1e-12):
    """e^{-s} I_k(s) by its power series, summed in log space."""
    k = abs(int(k))
    if s == 0:
        return 1.0 if k == 0 else 0.0
    log_half = math.log(s / 2.0)
    terms = []
    m = 0
    while True:
        lt = -s + (2 * m + k) * log_half - math.lgamma(m + 1) - math.lgamma(m + k + 1)
        term = math.exp(lt)
        terms.append(term)
        total = math.fsum(terms)
        if m > s and term <= rtol * total:
            return total
        m += 1


def lattice_oracle(d, t, y):
    """P^0(Y_t = y) for the walk on the full lattice Z^d."""
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    if y.size != d:
        raise ValueError("y must have d coordinates")
    if t < 0:
        raise ValueError("t must be nonnegative")
    s = t / d
    out = 1.0
    for c in y:
        out *= _scaled_bessel_series(int(c), s)
    return out


def leak_bound(t, dist):
    """Upper bound on P(walk reaches graph distance dist by time t): P(Poisson(t) >= dist)."""
    if dist <= 0:
        return 1.0
    return float(stats.poisson.sf(dist - 1, t))


@dataclass(eq=False)
class ExitTimeStats:
    times: np.ndarray
    cdf: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    trials: int
    exited: int


def exit_time_stats(graph, x, r, trials, times, seed):
    """Monte Carlo CDF of the exit time from the chemical ball B(x, r) = {d < r}."""
    x = _as_local(graph, x)
    times = np.atleast_1d(np.asarray(times, dtype=float))
    dist = graph.distances(x)
    inside = dist < r
    if not inside[x]:
        raise ValueError("radius must be positive")
    rng = np.random.default_rng(seed)
    indptr, indices = graph.adj.indptr, graph.adj.indices
    horizon = times.max()
    tau = np.full(trials, np.inf)
    pos = np.full(trials, x, dtype=np.int64)
    clock = np.zeros(trials)
    active = np.arange(trials)
    while active.size:
        clock[active] += rng.exponential(1.0, active.size)
        late = clock[active] > horizon
        active = active[~late]
        if active.size == 0:
            break
        pos[active] = _jump(rng, pos[active], indptr, indices)
        out = ~inside[pos[active]]
        tau[active[out]] = clock[active[out]]
        active = active[~out]
    counts = np.array([(tau < t).sum() for t in times])
    lo, hi = proportion_confint(counts, trials, alpha=0.05, method="wilson")
    return ExitTimeStats(times, counts / trials, np.asarray(lo), np.asarray(hi), trials, int(np.isfinite(tau).sum()))


def exit_probability(graph, x, r, times):
    """Exact P(tau(x, r) < t) from the kernel killed outside B(x, r)."""
    x = _as_local(graph, x)
    dist = graph.distances(x)
    inside = dist < r
    k = exact_heat_kernel(graph, times, killed=inside, sources=[x])
    deg = _walk_degree(graph)
    survive = (k.q[:, 0, :] * deg[None, :]).sum(axis=1)
    return np.clip(1.0 - survive, 0.0, 1.0)


@dataclass(eq=False)
class NashCurves:
    x: int
    times: np.ndarray
    M: np.ndarray
    Q: np.ndarray

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "M", "Q"])
            for t, m, q in zip(self.times, self.M, self.Q):
                w.writerow([format(float(t), ".17g"), format(float(m), ".17g"), format(float(q), ".17g")])


def nash_functionals(graph, x1, times, kernel=None):
    """M(t) = sum_y d(x1,y) q_t(x1,y) mu(y) and Q(t) = -sum_y q log q mu (0 log 0 = 0)."""
    x1 = _as_local(graph, x1)
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if kernel is None:
        kernel = exact_heat_kernel(graph, times, sources=[x1])
    deg = _walk_degree(graph)
    dist = graph.distances(x1)
    dist = np.where(np.isfinite(dist), dist, 0.0)
    M = np.empty(times.size)
    Q = np.empty(times.size)
    for ti in range(times.size):
        q = kernel.row(ti, x1)
        M[ti] = np.sum(dist * q * deg)
        pos = q > 0
        Q[ti] = -np.sum(q[pos] * np.log(q[pos]) * deg[pos])
    return NashCurves(x1, times, M, Q)


def msd(graph, x, times, trials=None, seed=0):
    """E|Y_t - x|^2 (Euclidean); exact from the kernel row unless trials is given."""
    x = _as_local(graph, x)
    times = np.atleast_1d(np.asarray(times, dtype=float))
    sq = ((graph.coords - graph.coords[x]) ** 2).sum(axis=1).astype(float)
    if trials is None:
        k = exact_heat_kernel(graph, times, sources=[x])
        deg = _walk_degree(graph)
        return (k.q[:, 0, :] * deg[None, :] * sq[None, :]).sum(axis=1)
    pos = walk_positions(graph, x, times, trials, seed)
    return sq[pos].mean(axis=1)

