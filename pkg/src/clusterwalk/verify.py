"""End-to-end fits of heat-kernel bounds: on-diagonal decay, Gaussian envelopes, onset times,
annealed averages, short-time regimes and chemical-distance constants.

Finite-box surrogate: the infinite cluster is replaced by the largest cluster of
a sampled box, and only times at which the walk cannot feel the box boundary
(leak bound below BOUNDARY_BUDGET) are used.
"""
from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from . import _grid
from .events import EventParams, beta_exponent
from .cluster import _grid_args, _local_corners, cluster_graph, label_clusters, largest_cluster
from .walk import _as_local, _walk_degree, exact_heat_kernel, leak_bound

BOUNDARY_BUDGET = 1e-3


def linear_fit(x, y):
    """Least-squares line y = a + b x; returns (a, b, r2)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    b, a = np.polyfit(x, y, 1)
    resid = y - (a + b * x)
    ss = ((y - y.mean()) ** 2).sum()
    r2 = 1.0 - (resid ** 2).sum() / ss if ss > 0 else 1.0
    return float(a), float(b), float(r2)


def loglog_slope(t, v):
    a, b, r2 = linear_fit(np.log(t), np.log(v))
    return b, r2


@dataclass(eq=False)
class EnvelopeFit:
    bound: str
    constants: dict
    region: list
    violations: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self):
        return {"bound": self.bound, "constants": self.constants, "region_size": len(self.region),
                "violations": len(self.violations), "diagnostics": self.diagnostics}

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)

    def violations_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "x", "y", "q", "bound"])
            for row in self.violations:
                w.writerow([format(float(v), ".17g") if isinstance(v, float) else v for v in row])


def eccentricity(graph, x):
    dist = graph.distances(x)
    return float(dist[np.isfinite(dist)].max())


def fit_ondiagonal(kernel, window, x=None):
    """Slope of log q_t(x,x) against log t and the tightest on-diagonal constants on the window.

    Rejects windows shorter than half a decade and graphs whose eccentricity
    from x is below the diffusive scale sqrt(t_hi).
    """
    t_lo, t_hi = window
    if t_hi < t_lo * math.sqrt(10):
        raise ValueError("window must span at least half a decade")
    graph = kernel.graph
    x = int(kernel.sources[0]) if x is None else _as_local(graph, x)
    if eccentricity(graph, x) < math.sqrt(t_hi):
        raise ValueError("graph is smaller than the diffusive scale of the window")
    d = graph.d
    sel = (kernel.times >= t_lo) & (kernel.times <= t_hi)
    t = kernel.times[sel]
    q = np.array([kernel.row(ti, x)[x] for ti in np.flatnonzero(sel)])
    a, slope, r2 = linear_fit(np.log(t), np.log(q))
    upper = float((q * t ** (d / 2)).max())
    lower = float((q * (t * np.log(t)) ** (d / 2)).min()) if np.all(t > 1) else math.nan
    region = [(float(tt), x, x) for tt in t]
    return EnvelopeFit("ondiagonal", {"c_upper": upper, "c_lower_log": lower}, region, [],
                       {"slope": slope, "intercept": a, "r2": r2, "d": d})


def _metric_distances(graph, x, metric):
    if metric == "chemical":
        return graph.distances(x)
    if metric == "L1":
        return np.abs(graph.coords - graph.coords[x]).sum(axis=1).astype(float)
    raise ValueError(f"unknown metric {metric!r}")


def _ray_mask(graph, x):
    off = graph.coords - graph.coords[x]
    return (np.count_nonzero(off, axis=1) <= 1)


def boundary_distance(graph, x):
    """L1 distance from x to the outside of the graph's box (inf without a box)."""
    if graph.box is None:
        return math.inf
    c = graph.coords[x]
    return float(min(np.min(c - np.asarray(graph.box.lo)), np.min(np.asarray(graph.box.hi) - c)) + 1)


def admissible_times(graph, x, times, budget=BOUNDARY_BUDGET):
    bd = boundary_distance(graph, x)
    return np.array([leak_bound(t, bd) <= budget for t in times])


def envelope_points(kernel, x, metric="L1", dist_frac=1.0, t_min=0.0, rays_only=False):
    """(t, y, dist, q) over the region dist <= dist_frac * t, t >= t_min, q > 0."""
    graph = kernel.graph
    x = _as_local(graph, x)
    dist = _metric_distances(graph, x, metric)
    rays = _ray_mask(graph, x) if rays_only else np.ones(graph.n, dtype=bool)
    pts = []
    for ti, t in enumerate(kernel.times):
        if t < t_min or t <= 0:
            continue
        q = kernel.row(ti, x)
        sel = np.flatnonzero(rays & np.isfinite(dist) & (dist <= dist_frac * t) & (q > 0))
        pts.extend((float(t), int(y), float(dist[y]), float(q[y])) for y in sel)
    return pts


def _envelope_constants(fit_pts, region, d, upper_relax, lower_relax):
    t, D, q = (np.array([p[i] for p in fit_pts]) for i in (0, 2, 3))
    u = D ** 2 / t
    L = np.log(q) + (d / 2) * np.log(t)
    a, slope, r2 = linear_fit(u, L)
    b = max(-slope, 0.0)
    t, D, q = (np.array([p[i] for p in region]) for i in (0, 2, 3))
    u = D ** 2 / t
    L = np.log(q) + (d / 2) * np.log(t)
    c4, c2 = upper_relax * b, lower_relax * b
    c3 = float(np.exp((L + c4 * u).max()))
    c1 = float(np.exp((L + c2 * u).min()))
    consts = {"c1": c1, "c2": c2, "c3": c3, "c4": c4, "b": b, "d": d}
    return consts, {"slope": slope, "intercept": a, "r2": r2, "fit_points": len(fit_pts)}


def fit_gaussian_envelope(kernel, x, metric="L1", dist_frac=1.0, t_min=0.0, rays_only_fit=True,
                          upper_relax=0.5, lower_relax=2.0):
    """Two-sided envelope c1 t^-d/2 exp(-c2 D^2/t) <= q <= c3 t^-d/2 exp(-c4 D^2/t).

    The decay rate b comes from least squares of log(t^{d/2} q) on D^2/t over the
    fit sample (axis rays through x by default); c4 = upper_relax*b, c2 =
    lower_relax*b, and c1, c3 are shifted to the extreme residuals over the
    whole region, so the envelope holds on the region by construction.
    """
    graph = kernel.graph
    x = _as_local(graph, x)
    region = envelope_points(kernel, x, metric, dist_frac, t_min)
    if not region:
        raise ValueError("empty admissible region")
    fit_pts = envelope_points(kernel, x, metric, dist_frac, t_min, rays_only=rays_only_fit) or region
    consts, diag = _envelope_constants(fit_pts, region, graph.d, upper_relax, lower_relax)
    consts["metric"] = metric
    viol = envelope_violations(region, consts, graph, x)
    return EnvelopeFit("gaussian", consts, region, viol, diag)


def fit_reference_envelope(pairs, metric="L1", dist_frac=1.0, t_min=0.0, upper_relax=0.5, lower_relax=2.0):
    """One envelope fitted to the pooled points of several (kernel, x) pairs.

    Used to build onset-time reference constants from a held-out ensemble.
    """
    region, fit_pts, d = [], [], None
    for kernel, x in pairs:
        x = _as_local(kernel.graph, x)
        d = kernel.graph.d
        region += envelope_points(kernel, x, metric, dist_frac, t_min)
        fit_pts += envelope_points(kernel, x, metric, dist_frac, t_min, rays_only=True)
    if not region:
        raise ValueError("empty admissible region")
    consts, diag = _envelope_constants(fit_pts or region, region, d, upper_relax, lower_relax)
    consts["metric"] = metric
    diag["configurations"] = len(pairs)
    return EnvelopeFit("gaussian-reference", consts, region, [], diag)


def envelope_bounds(t, D, consts):
    d = consts["d"]
    lower = consts["c1"] * t ** (-d / 2) * np.exp(-consts["c2"] * D ** 2 / t)
    upper = consts["c3"] * t ** (-d / 2) * np.exp(-consts["c4"] * D ** 2 / t)
    return lower, upper


def envelope_violations(points, consts, graph=None, x=None, rtol=1e-9):
    out = []
    for t, y, D, q in points:
        lo, hi = envelope_bounds(t, D, consts)
        if q < lo * (1 - rtol):
            out.append((t, x, y, q, float(lo)))
        elif q > hi * (1 + rtol):
            out.append((t, x, y, q, float(hi)))
    return out


def relaxed(consts, factor=4.0):
    """Loosen an envelope by `factor` in every constant."""
    out = dict(consts)
    out["c1"] = consts["c1"] / factor
    out["c2"] = consts["c2"] * factor
    out["c3"] = consts["c3"] * factor
    out["c4"] = consts["c4"] / factor
    return out


@dataclass
class OnsetEstimate:
    S_x: float
    times: list
    passing: list
    constants: dict
    dropped_times: list

    def to_dict(self):
        return {"S_x": self.S_x, "times": self.times, "passing": self.passing,
                "constants": self.constants, "dropped_times": self.dropped_times}


def estimate_onset_time(graph, x, times, reference, relax=4.0, dist_frac=1.0, kernel=None,
                        budget=BOUNDARY_BUDGET):
    """Smallest grid time T such that the relaxed reference envelope holds for every grid t >= T
    and every y with |x-y|_1 <= dist_frac * t; math.inf when it fails at the last time.

    Times at which the walk could feel the box boundary are dropped (recorded).
    """
    x = _as_local(graph, x)
    times = np.asarray(sorted(times), dtype=float)
    ok_t = admissible_times(graph, x, times, budget)
    dropped = times[~ok_t].tolist()
    times = times[ok_t]
    if times.size == 0:
        raise ValueError("no admissible times")
    consts = relaxed(reference, relax)
    if kernel is None:
        kernel = exact_heat_kernel(graph, times, sources=[x])
    tindex = {float(t): i for i, t in enumerate(kernel.times)}
    D = np.abs(graph.coords - graph.coords[x]).sum(axis=1).astype(float)
    passing = []
    for t in times:
        q = kernel.row(tindex[float(t)], x)
        sel = D <= dist_frac * t
        lo, hi = envelope_bounds(t, D[sel], consts)
        passing.append(bool(np.all(q[sel] >= lo * (1 - 1e-9)) and np.all(q[sel] <= hi * (1 + 1e-9))))
    S = math.inf
    for t, ok in zip(times[::-1], passing[::-1]):
        if not ok:
            break
        S = float(t)
    return OnsetEstimate(S, times.tolist(), passing, consts, dropped)


@dataclass
class AnnealedResult:
    times: list
    targets: list
    mean: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    used: int
    fit: dict

    def to_dict(self):
        return {"times": self.times, "targets": self.targets, "mean": self.mean.tolist(),
                "ci_lo": self.ci_lo.tolist(), "ci_hi": self.ci_hi.tolist(), "used": self.used, "fit": self.fit}


def annealed_average(configs, x, ys, times):
    """Mean of q_t(x, y) over configurations where x and every y lie in the largest cluster.

    mean[ti, j] is the conditional average at times[ti], ys[j]; intervals are
    normal-approximation 95% intervals. The fit regresses log(t^{d/2} mean) on
    |x-y|_1^2/t.
    """
    times = np.atleast_1d(np.asarray(times, dtype=float))
    ys = [tuple(int(v) for v in y) for y in ys]
    x = tuple(int(v) for v in x)
    rows = []
    for cfg in configs:
        g = cluster_graph(cfg)
        try:
            xi = g.index(x)
            yi = [g.index(y) for y in ys]
        except KeyError:
            continue
        k = exact_heat_kernel(g, times, sources=[xi])
        rows.append(k.q[:, 0, yi])
    if not rows:
        raise ValueError("no configuration has x and all targets in its largest cluster")
    arr = np.stack(rows)
    mean = arr.mean(axis=0)
    se = arr.std(axis=0, ddof=1) / math.sqrt(len(rows)) if len(rows) > 1 else np.full_like(mean, np.inf)
    d = len(x)
    D = np.array([sum(abs(a - b) for a, b in zip(x, y)) for y in ys], dtype=float)
    tt, DD = np.meshgrid(times, D, indexing="ij")
    pos = mean > 0
    fit = {}
    if pos.sum() >= 3:
        u = (DD ** 2 / tt)[pos]
        L = np.log(mean[pos]) + (d / 2) * np.log(tt[pos])
        a, slope, r2 = linear_fit(u, L)
        fit = {"intercept": a, "slope": slope, "r2": r2,
               "c_lower": float(np.exp((L - slope * u).min())), "c_upper": float(np.exp((L - slope * u).max()))}
    return AnnealedResult(times.tolist(), ys, mean, mean - 1.96 * se, mean + 1.96 * se, len(rows), fit)


def check_short_time(kernel, x, c5=1.0):
    """Fits of the Gaussian regime D <= t and the Poisson-tail regime D >= t.

    Poisson regime: log q against D(1 + log(D/t)). Also the smallest c6 with
    q_t <= c6 t^-d whenever t <= c5 D^2 / log D (D >= 2), and the ratio of the
    two regime fits at D = t.
    """
    graph = kernel.graph
    d = graph.d
    x = _as_local(graph, x)
    dist = graph.distances(x)
    gauss, poisson, c6 = [], [], 0.0
    for ti, t in enumerate(kernel.times):
        q = kernel.row(ti, x)
        for y in np.flatnonzero(np.isfinite(dist) & (dist > 0) & (q > 0)):
            D = float(dist[y])
            if D <= t:
                gauss.append((t, D, q[y]))
            if D >= t:
                poisson.append((t, D, q[y]))
            if D >= 2 and t <= c5 * D * D / math.log(D):
                c6 = max(c6, q[y] * t ** d)
    out = {"c6": c6, "c5": c5}
    if len(gauss) >= 3:
        t, D, q = map(np.array, zip(*gauss))
        out["gaussian"] = dict(zip(("intercept", "slope", "r2"), linear_fit(D ** 2 / t, np.log(q) + d / 2 * np.log(t))))
    if len(poisson) >= 3:
        t, D, q = map(np.array, zip(*poisson))
        out["poisson"] = dict(zip(("intercept", "slope", "r2"), linear_fit(D * (1 + np.log(D / t)), np.log(q))))
    if "gaussian" in out and "poisson" in out:
        g, p = out["gaussian"], out["poisson"]
        ts = np.unique([tt for tt, DD, _ in gauss if DD == tt])
        if ts.size:
            pred_g = g["intercept"] + g["slope"] * ts - d / 2 * np.log(ts)
            pred_p = p["intercept"] + p["slope"] * ts
            out["overlap_log_ratio"] = float(np.abs(pred_g - pred_p).max())
    return out


@dataclass
class ChemicalFit:
    ratios: np.ndarray
    separations: np.ndarray
    C_H: float
    quantiles: dict
    exceedance: list
    exceedance_fit: dict | None

    def to_dict(self):
        return {"C_H": self.C_H, "quantiles": self.quantiles, "pairs": int(self.ratios.size),
                "exceedance": self.exceedance, "exceedance_fit": self.exceedance_fit}


def chemical_ratios(cfg, sources=50, sep_band=(8, 16), seed=0, region=None):
    """d_w(x,y)/|x-y|_inf for x among sampled sources and all y of the largest cluster in the band."""
    box = cfg.box
    region = box if region is None else region
    C = largest_cluster(label_clusters(cfg, region)).ravel()
    pts = np.flatnonzero(C)
    if pts.size == 0:
        return np.zeros(0), np.zeros(0)
    rng = np.random.default_rng(seed)
    src = rng.choice(pts, size=min(sources, pts.size), replace=False)
    edges, shape, strides = _grid_args(cfg)
    lo, hi = _local_corners(box, region)
    coords = box.coords(pts)
    rat, seps = [], []
    for s in src:
        dist = _grid.bfs_distances(edges, shape, strides, lo, hi, C, int(s))[pts]
        sep = np.abs(coords - box.coords(int(s))).max(axis=1)
        sel = (sep >= sep_band[0]) & (sep <= sep_band[1])
        rat.append(dist[sel] / sep[sel])
        seps.append(sep[sel])
    return np.concatenate(rat), np.concatenate(seps)


def fit_chemical_constant(configs, sources=50, sep_band=(8, 16), seed=0, quantile=0.999):
    """C_H as the 99.9th percentile of d_w/|x-y|_inf and the exceedance of 2 C_H by separation."""
    rs, ss = [], []
    for i, cfg in enumerate(configs):
        r, s = chemical_ratios(cfg, sources, sep_band, seed=seed + i)
        rs.append(r)
        ss.append(s)
    ratios, seps = np.concatenate(rs), np.concatenate(ss)
    if ratios.size == 0:
        raise ValueError("no pairs in the separation band")
    C_H = float(np.quantile(ratios, quantile))
    qs = {str(q): float(np.quantile(ratios, q)) for q in (0.5, 0.9, 0.99, 0.999)}
    exc = []
    for s in np.unique(seps):
        sel = seps == s
        exc.append((int(s), int(sel.sum()), float((ratios[sel] > 2 * C_H).mean())))
    pos = [(s, f) for s, _, f in exc if f > 0]
    fit = None
    if len(pos) >= 2:
        a, b, r2 = linear_fit([s for s, _ in pos], np.log([f for _, f in pos]))
        fit = {"intercept": a, "slope": b, "r2": r2}
    return ChemicalFit(ratios, seps, C_H, qs, exc, fit)


def fit_stretched_exponential(ns, P):
    """Free fit of log P = log c - c' n^eps over points with 0 < P < 1; None with fewer than three."""
    ns = np.asarray(ns, dtype=float)
    P = np.asarray(P, dtype=float)
    sel = (P > 0) & (P < 1)
    if sel.sum() < 3:
        return None
    n, y = ns[sel], np.log(P[sel])
    model = lambda n, a, b, e: a - b * n ** e  # noqa: E731
    with warnings.catch_warnings():
        # three points fit three parameters exactly; the covariance is not used
        warnings.simplefilter("ignore", optimize.OptimizeWarning)
        (a, b, e), _ = optimize.curve_fit(model, n, y, p0=(0.0, 1.0, 0.5),
                                          bounds=([-50, 0, 1e-3], [50, np.inf, 3]), maxfev=20000)
    resid = y - model(n, a, b, e)
    ss = ((y - y.mean()) ** 2).sum()
    return {"log_c": float(a), "rate": float(b), "exponent": float(e),
            "r2": float(1 - (resid ** 2).sum() / ss) if ss > 0 else 1.0}


def onset_tail(onsets, grid, d=2):
    """Empirical P(S_x >= n) on the grid, whether it is nonincreasing, and a free stretched-exponent fit.

    The exponent alpha_2 * beta suggested by the regularity events is reported
    next to the fitted one for comparison only.
    """
    onsets = np.asarray(onsets, dtype=float)
    grid = np.asarray(sorted(grid), dtype=float)
    if onsets.size == 0:
        raise ValueError("no onset times")
    P = np.array([(onsets >= n).mean() for n in grid])
    return {"grid": grid.tolist(), "survival": P.tolist(), "nonincreasing": bool(np.all(np.diff(P) <= 0)),
            "samples": int(onsets.size), "infinite": int(np.isinf(onsets).sum()),
            "fit": fit_stretched_exponential(grid, P),
            "suggested_exponent": EventParams.alpha2(d) * beta_exponent(d)}


def msd_band(times, values, onset, lo_t=10.0, hi_t=100.0):
    """max/min of msd/t over grid times in [max(onset, lo_t), hi_t]."""
    times = np.asarray(times, dtype=float)
    r = np.asarray(values, dtype=float) / times
    sel = (times >= max(onset, lo_t)) & (times <= hi_t)
    if not sel.any():
        return math.inf
    return float(r[sel].max() / r[sel].min())
