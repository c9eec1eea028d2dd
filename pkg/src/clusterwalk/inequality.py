"""Isoperimetric, Cheeger and Poincare constants; good-ball hierarchy; Whitney covers."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy import linalg, sparse
from scipy.sparse import csgraph
from scipy.sparse import linalg as splinalg

ENUM_CAP = 18
DENSE_EIG_CAP = 3000


# isoperimetry

@dataclass(eq=False)
class IsoperimetryReport:
    """one_sided = I_H, one_sided_connected = I*_H, two_sided = J_H; witnesses are local index arrays."""

    one_sided: Fraction | float
    one_sided_connected: Fraction | float
    two_sided: Fraction | float
    witness_one_sided: np.ndarray
    witness_connected: np.ndarray
    witness_two_sided: np.ndarray
    exact: bool
    mode: str

    def to_dict(self):
        return {
            "one_sided": float(self.one_sided),
            "one_sided_connected": float(self.one_sided_connected),
            "two_sided": float(self.two_sided),
            "witness_one_sided": self.witness_one_sided.tolist(),
            "witness_connected": self.witness_connected.tolist(),
            "witness_two_sided": self.witness_two_sided.tolist(),
            "exact": self.exact,
            "mode": self.mode,
        }


def _require_connected(H):
    ncomp, lab = H.components()
    if H.n == 0:
        raise ValueError("empty graph")
    if ncomp > 1:
        a = int(np.flatnonzero(lab == 0)[0])
        b = int(np.flatnonzero(lab != 0)[0])
        raise ValueError(f"graph is disconnected: vertices {tuple(H.coords[a])} and {tuple(H.coords[b])} "
                         "lie in different components")


def _mask_bits(mask, n):
    return np.array([v for v in range(n) if (mask >> v) & 1], dtype=np.int64)


def _connected_masks(masks, n, nbr_bits):
    """Vectorized test that each bitmask induces a connected subgraph."""
    reach = masks & (-masks)
    for _ in range(n):
        grow = reach.copy()
        for v in range(n):
            has = ((reach >> v) & 1).astype(bool)
            grow[has] |= nbr_bits[v]
        grow &= masks
        if np.array_equal(grow, reach):
            break
        reach = grow
    return reach == masks


def _isoperimetry_exact(H):
    n = H.n
    if n > ENUM_CAP:
        raise ValueError(f"exact mode is capped at {ENUM_CAP} vertices")
    if n == 1:
        empty = np.zeros(0, dtype=np.int64)
        inf = math.inf
        return IsoperimetryReport(inf, inf, inf, empty, empty, empty, True, "exact")
    mu0 = H.mu0.astype(np.int64)
    edges = H.edges()
    masks = np.arange(1, (1 << n) - 1, dtype=np.int64)
    volA = np.zeros(masks.size, dtype=np.int64)
    for v in range(n):
        volA += ((masks >> v) & 1) * mu0[v]
    cut = np.zeros(masks.size, dtype=np.int64)
    for u, v in edges:
        cut += ((masks >> u) ^ (masks >> v)) & 1
    volH = int(mu0.sum())
    volC = volH - volA
    small = 2 * volA <= volH
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(small & (volA > 0), cut / np.maximum(volA, 1), np.inf)
        chi = np.where((volA > 0) & (volC > 0), volH * cut / np.maximum(volA * volC, 1), np.inf)
    nbr_bits = np.zeros(n, dtype=np.int64)
    for u, v in edges:
        nbr_bits[u] |= 1 << int(v)
        nbr_bits[v] |= 1 << int(u)
    full = (1 << n) - 1
    conn = _connected_masks(masks, n, nbr_bits) & _connected_masks(full ^ masks, n, nbr_bits)
    ratio_c = np.where(conn, ratio, np.inf)

    def pick(vals, kind):
        i = int(np.argmin(vals))
        if not np.isfinite(vals[i]):
            return math.inf, np.zeros(0, dtype=np.int64)
        m = int(masks[i])
        if kind == "chi":
            val = Fraction(volH * int(cut[i]), int(volA[i]) * int(volC[i]))
        else:
            val = Fraction(int(cut[i]), int(volA[i]))
        return val, _mask_bits(m, n)

    I, wI = pick(ratio, "i")
    Ic, wIc = pick(ratio_c, "i")
    J, wJ = pick(chi, "chi")
    return IsoperimetryReport(I, Ic, J, wI, wIc, wJ, True, "exact")


def _cut_profile(H, order):
    """Cut size and mu0 volume of every prefix of a vertex ordering."""
    n = H.n
    pos = np.empty(n, dtype=np.int64)
    pos[order] = np.arange(n)
    edges = H.edges()
    # an edge is cut by prefix k iff exactly one endpoint has position < k
    first = np.minimum(pos[edges[:, 0]], pos[edges[:, 1]])
    last = np.maximum(pos[edges[:, 0]], pos[edges[:, 1]])
    delta = np.zeros(n + 1, dtype=np.int64)
    np.add.at(delta, first + 1, 1)
    np.add.at(delta, last + 1, -1)
    cut = np.cumsum(delta)[1:n]
    vol = np.cumsum(H.mu0[order])[: n - 1]
    return cut, vol


def _subset_connected(H, members):
    if members.size == 0:
        return False
    sub = H.adj[members][:, members]
    return csgraph.connected_components(sub, directed=False)[0] == 1


def _isoperimetry_search(H, restarts=10, seed=0):
    n = H.n
    rng = np.random.default_rng(seed)
    volH = float(H.mu0.sum())
    orders = []
    L = sparse.csgraph.laplacian(H.adj, normed=True)
    if n <= 400:
        _, vecs = linalg.eigh(L.toarray())
        fied = vecs[:, 1]
    else:
        _, vecs = splinalg.eigsh(L.tocsc(), k=2, sigma=-1e-3, which="LM")
        fied = vecs[:, 1]
    fied = fied / np.sqrt(np.maximum(H.mu0, 1))
    orders.append(np.argsort(fied, kind="stable"))
    orders.append(np.argsort(-fied, kind="stable"))
    for _ in range(restarts):
        c = int(rng.integers(n))
        dist = H.distances(c)
        orders.append(np.lexsort((rng.random(n), dist)))
    best = {"i": (math.inf, None), "ic": (math.inf, None), "chi": (math.inf, None)}
    for order in orders:
        cut, vol = _cut_profile(H, order)
        small = 2 * vol <= volH
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(small & (vol > 0), cut / np.maximum(vol, 1e-300), np.inf)
            chi = np.where((vol > 0) & (volH - vol > 0), volH * cut / np.maximum(vol * (volH - vol), 1e-300), np.inf)
        k = int(np.argmin(ratio))
        if ratio[k] < best["i"][0]:
            best["i"] = (float(ratio[k]), order[: k + 1].copy())
        k = int(np.argmin(chi))
        if chi[k] < best["chi"][0]:
            best["chi"] = (float(chi[k]), order[: k + 1].copy())
        checked = 0
        for k in np.argsort(ratio, kind="stable"):
            if not np.isfinite(ratio[k]) or ratio[k] >= best["ic"][0] or checked >= 50:
                break
            checked += 1
            A = np.sort(order[: k + 1])
            rest = np.setdiff1d(np.arange(n), A)
            if _subset_connected(H, A) and _subset_connected(H, rest):
                best["ic"] = (float(ratio[k]), A)
                break
    out = []
    for key in ("i", "ic", "chi"):
        val, w = best[key]
        out.append((val, np.zeros(0, dtype=np.int64) if w is None else np.sort(w)))
    return IsoperimetryReport(out[0][0], out[1][0], out[2][0], out[0][1], out[1][1], out[2][1], False, "search")


def isoperimetry(H, mode="exact", seed=0):
    """I_H, I*_H and J_H of a connected WeightedSubgraph (mu0 measures, unit conductances).

    Search mode only gives upper bounds from sweep cuts and BFS orderings.
    """
    _require_connected(H)
    if mode == "exact":
        return _isoperimetry_exact(H)
    if mode == "search":
        return _isoperimetry_search(H, seed=seed)
    raise ValueError(f"unknown mode {mode!r}")


def set_ratios(H, A):
    """(i(A), chi(A)) for a local index set A of H."""
    A = np.asarray(A, dtype=np.int64)
    inA = np.zeros(H.n, dtype=bool)
    inA[A] = True
    e = H.edges()
    cut = int((inA[e[:, 0]] != inA[e[:, 1]]).sum())
    volA = float(H.mu0[inA].sum())
    volH = float(H.mu0.sum())
    i = cut / volA if volA > 0 else math.inf
    rest = volH - volA
    chi = volH * cut / (volA * rest) if volA > 0 and rest > 0 else math.inf
    return i, chi


# Poincare constants

def _edge_weights(graph, phi, phi_edges):
    e = graph.edges()
    if phi_edges is not None:
        w = np.asarray(phi_edges, dtype=float)
    elif phi is not None:
        phi = np.asarray(phi, dtype=float)
        w = np.minimum(phi[e[:, 0]], phi[e[:, 1]])
    else:
        w = np.ones(len(e))
    return e, w


def _weighted_laplacian(n, e, w):
    a = sparse.coo_matrix((w, (e[:, 0], e[:, 1])), shape=(n, n))
    a = (a + a.T).tocsr()
    deg = np.asarray(a.sum(axis=1)).ravel()
    return (sparse.diags(deg) - a).tocsr(), a


def poincare_constant(graph, inner=None, phi=None, phi_edges=None, dense_cap=DENSE_EIG_CAP):
    """Best constant P with min_a sum_inner (f-a)^2 phi mu <= P sum_edges |grad f|^2 phi_edges.

    `graph` is the enlargement H*, `inner` a local mask (or index list) of H.
    Returns math.inf when a function constant on components of H* has
    positive weighted variance on H.
    """
    n = graph.n
    if n == 0:
        raise ValueError("empty graph")
    if inner is None:
        inner_mask = np.ones(n, dtype=bool)
    else:
        inner = np.asarray(inner)
        inner_mask = inner.astype(bool) if inner.dtype == bool else np.isin(np.arange(n), inner)
    if not inner_mask.any():
        raise ValueError("empty inner set")
    if np.any(graph.mu[inner_mask] <= 0):
        raise ValueError("mu must be positive on the inner set")
    vphi = np.ones(n) if phi is None else np.asarray(phi, dtype=float)
    w = np.where(inner_mask, vphi * graph.mu, 0.0)
    e, we = _edge_weights(graph, phi, phi_edges)
    pos = we > 0
    e, we = e[pos], we[pos]
    if not np.any(w > 0):
        return 0.0
    L, A = _weighted_laplacian(n, e, we)
    ncomp, lab = csgraph.connected_components(A, directed=False)
    carrying = np.unique(lab[w > 0])
    if carrying.size > 1:
        return math.inf
    comp = np.flatnonzero(lab == carrying[0])
    if comp.size == 1:
        return 0.0
    wc = w[comp]
    Lc = L[comp][:, comp].tocsr()
    # fix f at one vertex: both forms are invariant under adding constants
    keep = np.arange(1, comp.size)
    Lg = Lc[keep][:, keep]
    wg = wc[keep]
    total = wc.sum()
    if comp.size - 1 <= dense_cap:
        Avar = np.diag(wg) - np.outer(wg, wg) / total
        top = linalg.eigh(Avar, Lg.toarray(), eigvals_only=True, subset_by_index=[keep.size - 1, keep.size - 1])
        return float(max(top[0], 0.0))
    op = splinalg.LinearOperator((keep.size, keep.size), matvec=lambda v: wg * v - wg * (wg @ v) / total,
                                 dtype=float)
    lu = splinalg.splu(Lg.tocsc())
    minv = splinalg.LinearOperator((keep.size, keep.size), matvec=lu.solve, dtype=float)
    val = splinalg.eigsh(op, k=1, M=Lg.tocsc(), Minv=minv, which="LA", tol=1e-10, return_eigenvectors=False)
    return float(max(val[0], 0.0))


def spectral_gap_poincare(graph, dense_cap=200):
    """1 / (second smallest eigenvalue of L v = lam mu v) on a connected graph with unit weights."""
    n = graph.n
    if n == 1:
        return 0.0
    L = sparse.csgraph.laplacian(graph.adj).astype(float)
    mu = graph.mu.astype(float)
    if n <= dense_cap:
        lam = linalg.eigh(L.toarray(), np.diag(mu), eigvals_only=True, subset_by_index=[0, 1])
    else:
        lam = splinalg.eigsh(L.tocsc(), k=2, M=sparse.diags(mu).tocsc(), sigma=-1e-3, which="LM",
                             return_eigenvectors=False, tol=1e-10)
        lam = np.sort(lam)
    gap = lam[1]
    if gap <= 1e-12:
        return math.inf
    return float(1.0 / gap)


def rayleigh_ratio(graph, f, inner=None, phi=None, phi_edges=None):
    """Weighted variance of f on inner over its weighted energy on graph's edges."""
    f = np.asarray(f, dtype=float)
    n = graph.n
    inner_mask = np.ones(n, dtype=bool) if inner is None else np.asarray(inner, dtype=bool)
    vphi = np.ones(n) if phi is None else np.asarray(phi, dtype=float)
    w = np.where(inner_mask, vphi * graph.mu, 0.0)
    mean = (w * f).sum() / w.sum()
    var = (w * (f - mean) ** 2).sum()
    e, we = _edge_weights(graph, phi, phi_edges)
    energy = (we * (f[e[:, 0]] - f[e[:, 1]]) ** 2).sum()
    if energy == 0:
        return 0.0 if var == 0 else math.inf
    return var / energy


# good balls

@dataclass
class GoodBallConstants:
    volume: float = 0.25        # C_V
    poincare: float = 4.0       # C_P
    widening: float = 2.0       # C_W
    chain_min_radius: float = 3.0   # C_E
    chain_length: float = 4.0       # C_F

    def as_dict(self):
        return {"C_V": self.volume, "C_P": self.poincare, "C_W": self.widening,
                "C_E": self.chain_min_radius, "C_F": self.chain_length}


@dataclass(eq=False)
class GoodnessReport:
    level: str
    center: int
    radius: float
    constants: dict
    N_B: float | None = None
    witness: dict | None = None
    radius_grid: list = field(default_factory=list)
    centers_checked: int = 0
    unreliable: bool = False
    details: dict = field(default_factory=dict)

    @property
    def good(self):
        return self.level in ("good", "very good", "exceedingly good")

    def to_dict(self):
        return {"level": self.level, "center": self.center, "radius": self.radius,
                "constants": self.constants, "N_B": self.N_B, "witness": self.witness,
                "radius_grid": list(self.radius_grid), "centers_checked": self.centers_checked,
                "unreliable": self.unreliable, "details": self.details}


def _touches_box_face(graph, members):
    if graph.box is None:
        return False
    c = graph.coords[members]
    return bool(np.any(c == np.asarray(graph.box.lo)) or np.any(c == np.asarray(graph.box.hi)))


def _ball_checks(graph, dist, r, consts):
    """Volume and weak Poincare tests of B(center, r) given distances from its center."""
    d = graph.d
    ball = np.flatnonzero(dist < r)
    vol = float(graph.mu[ball].sum())
    info = {"volume": vol, "volume_needed": consts.volume * r ** d}
    if vol < consts.volume * r ** d:
        info["failed"] = "volume"
        return False, info
    bound = consts.poincare * r * r
    sub = graph.subgraph(ball)
    strong = spectral_gap_poincare(sub)
    info["poincare_strong"] = strong
    if strong <= bound:
        info["poincare"] = strong
        return True, info
    wide = np.flatnonzero(dist < consts.widening * r)
    big = graph.subgraph(wide)
    inner = np.isin(wide, ball)
    weak = poincare_constant(big, inner)
    info["poincare"] = weak
    if weak > bound:
        info["failed"] = "poincare"
        return False, info
    return True, info


def classify_good(graph, x, r, consts=None, dist=None):
    """Volume lower bound and weak Poincare inequality for B(x, r) with window B(x, C_W r)."""
    consts = consts or GoodBallConstants()
    x = int(x) if isinstance(x, (int, np.integer)) else graph.index(x)
    if dist is None:
        dist = graph.distances(x)
    ok, info = _ball_checks(graph, dist, r, consts)
    unreliable = _touches_box_face(graph, np.flatnonzero(dist < consts.widening * r))
    return GoodnessReport("good" if ok else "none", x, r, consts.as_dict(), None,
                          None if ok else {"center": x, "radius": r, **info}, [r], 1, unreliable, info)


def radius_grid(R, kappa=1.25, exact_below=40):
    if R <= exact_below:
        return list(range(1, int(math.floor(R)) + 1))
    out = [1]
    while out[-1] < R:
        nxt = max(out[-1] + 1, int(math.ceil(kappa * out[-1])))
        if nxt >= R:
            break
        out.append(nxt)
    out.append(int(math.floor(R)))
    return out


def distance_to_complement(graph, inside):
    """rho(y) = graph distance from y to the nearest vertex outside `inside`."""
    outside = np.flatnonzero(~np.asarray(inside, dtype=bool))
    return graph.multi_source_distances(outside)


def classify_very_good(graph, x, R, consts=None, kappa=1.25, exact_below=40, max_centers=None, seed=0):
    """Smallest grid scale N_B above which every sub-ball of B(x, R) is good.

    Radii are scanned from R downwards; the first failing radius fixes N_B as
    the next grid radius above it. With max_centers, each radius checks an
    evenly spaced subsample of the admissible centers (recorded).
    """
    consts = consts or GoodBallConstants()
    x = int(x) if isinstance(x, (int, np.integer)) else graph.index(x)
    d = graph.d
    dist_x = graph.distances(x)
    inside = dist_x < R
    rho = distance_to_complement(graph, inside)
    grid = radius_grid(R, kappa, exact_below)
    cache = {}
    checked = 0
    N_B = 1.0
    witness = None
    unreliable = _touches_box_face(graph, np.flatnonzero(dist_x < consts.widening * R))
    for gi in range(len(grid) - 1, -1, -1):
        r = grid[gi]
        centers = np.flatnonzero(inside & (rho >= r))
        if max_centers is not None and centers.size > max_centers:
            pick = np.linspace(0, centers.size - 1, max_centers).round().astype(np.int64)
            centers = centers[np.unique(pick)]
        failed = None
        for y in centers:
            y = int(y)
            if y not in cache:
                cache[y] = dist_x if y == x else graph.distances(y)
            ok, info = _ball_checks(graph, cache[y], r, consts)
            checked += 1
            if not ok:
                failed = {"center": y, "coords": graph.coords[y].tolist(), "radius": r, **info}
                break
        if failed is not None:
            N_B = float(grid[gi + 1]) if gi + 1 < len(grid) else math.inf
            witness = failed
            break
    threshold = R ** (1.0 / (d + 2))
    level = "very good" if N_B <= threshold else "none"
    return GoodnessReport(level, x, R, consts.as_dict(), N_B, witness, grid, checked, unreliable,
                          {"threshold": threshold})


def classify_exceedingly_good(graph, x0, R1, consts=None, pair_samples=20, radii=None, seed=0,
                              max_centers=None):
    """Very good with N_B^{10(d+2)} <= R1, plus sampled chains of very good small balls.

    radii overrides the sampled chain scales r in [C_E, N_B^{2+d}] (an empty
    range makes the chain condition vacuous, which is recorded).
    """
    consts = consts or GoodBallConstants()
    x0 = int(x0) if isinstance(x0, (int, np.integer)) else graph.index(x0)
    d = graph.d
    vg = classify_very_good(graph, x0, R1, consts, max_centers=max_centers)
    details = {"very_good": vg.to_dict()}
    if vg.level != "very good" or vg.N_B ** (10 * (d + 2)) > R1:
        return GoodnessReport("none", x0, R1, consts.as_dict(), vg.N_B,
                              {"condition": 1, "N_B": vg.N_B}, vg.radius_grid, vg.centers_checked,
                              vg.unreliable, details)
    if radii is None:
        hi = vg.N_B ** (2 + d)
        radii = [r for r in range(int(math.ceil(consts.chain_min_radius)), int(math.floor(hi)) + 1)]
    details["chain_radii"] = list(radii)
    dist0 = graph.distances(x0)
    ball = np.flatnonzero(dist0 < R1)
    rng = np.random.default_rng(seed)
    slack = R1 ** 0.25
    good_cache = {}

    def center_ok(z, r):
        key = (z, r)
        if key not in good_cache:
            rep = classify_very_good(graph, z, max(1.0, r * math.log(r)), consts, max_centers=max_centers)
            good_cache[key] = rep.level == "very good" and rep.N_B ** (2 + d) <= r
        return good_cache[key]

    pairs_checked = 0
    for _ in range(pair_samples if radii else 0):
        x1, x2 = (int(v) for v in rng.choice(ball, 2, replace=False))
        d1 = graph.distances(x1)
        if d1[x2] < slack:
            continue
        pairs_checked += 1
        d2 = graph.distances(x2)
        for r in radii:
            k = _chain_length(graph, d1, d2, slack, lambda z: center_ok(z, r))
            if k is None or k > consts.chain_length * d1[x2]:
                return GoodnessReport("none", x0, R1, consts.as_dict(), vg.N_B,
                                      {"condition": 2, "x1": x1, "x2": x2, "r": r, "chain": k},
                                      vg.radius_grid, vg.centers_checked, vg.unreliable, details)
    details["pairs_checked"] = pairs_checked
    details["chain_vacuous"] = not radii
    return GoodnessReport("exceedingly good", x0, R1, consts.as_dict(), vg.N_B, None, vg.radius_grid,
                          vg.centers_checked, vg.unreliable, details)


def _chain_length(graph, d1, d2, slack, admissible):
    """Shortest path length through admissible vertices from near x1 to near x2 (None if none)."""
    starts = [int(v) for v in np.flatnonzero(d1 <= slack) if admissible(int(v))]
    if not starts:
        return None
    targets = set(int(v) for v in np.flatnonzero(d2 <= slack))
    indptr, indices = graph.adj.indptr, graph.adj.indices
    seen = {s: 0 for s in starts}
    frontier = list(starts)
    while frontier:
        nxt = []
        for v in frontier:
            if v in targets:
                return seen[v]
            for w in indices[indptr[v]:indptr[v + 1]]:
                w = int(w)
                if w not in seen and admissible(w):
                    seen[w] = seen[v] + 1
                    nxt.append(w)
        frontier = nxt
    return None


# Whitney covers and weights

@dataclass(eq=False)
class WhitneyCover:
    x0: int
    R: float
    scale: float
    lam: float
    K: float
    centers: np.ndarray
    radii: np.ndarray
    rho: np.ndarray
    boundary: np.ndarray
    chains: list
    chains_star: list
    checks: dict
    coords: np.ndarray

    @property
    def M(self):
        return int((~self.boundary).sum())

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["i", "center", "s", "boundary"])
            for i, (c, s, b) in enumerate(zip(self.coords, self.radii, self.boundary)):
                w.writerow([i, " ".join(map(str, c)), format(float(s), ".17g"), int(b)])


def whitney_cover(graph, x0, R, scale, lam=1000.0, K=10.0, widening=2.0, strict=True):
    """Greedy maximal-first Whitney decomposition of B(x0, R) with vertex centers.

    scale is R_0 (= N_B). Balls have radius rho(y)/lam and are accepted largest
    first while disjoint from earlier ones, down to radius scale + 1.
    """
    x0 = int(x0) if isinstance(x0, (int, np.integer)) else graph.index(x0)
    if strict and (lam < max(1000.0, 21.0 * widening) or not 10.0 <= K <= lam / 10.0):
        raise ValueError("need lam >= max(1000, 21 C_W) and 10 <= K <= lam/10")
    dist0 = graph.distances(x0)
    inside = dist0 < R
    members = np.flatnonzero(inside)
    if not _subset_connected(graph, members):
        raise ValueError("ball is not connected")
    if inside.all():
        raise ValueError("ball exhausts the graph; the distance to its complement is undefined")
    rho = distance_to_complement(graph, inside)
    lam1, lam2 = lam - 2 * K, lam + 2 * K
    eta = 2 * lam2
    cand = members[np.lexsort(tuple(graph.coords[members].T[::-1]) + (-rho[members],))]
    slack = np.full(graph.n, np.inf)
    centers, radii, dists = [], [], []
    for y in cand:
        r = rho[y] / lam
        if r < scale + 1:
            break
        if slack[y] >= r:
            dy = graph.distances(int(y))
            centers.append(int(y))
            radii.append(r)
            dists.append(dy)
            slack = np.minimum(slack, dy - r)
    centers = np.asarray(centers, dtype=np.int64)
    radii = np.asarray(radii)
    boundary = radii < eta * scale
    checks = {}
    disjoint = True
    for i in range(len(centers)):
        for j in range(i):
            if dists[i][centers[j]] < radii[i] + radii[j]:
                disjoint = False
    checks["disjoint"] = disjoint
    sandwich = True
    for i, y in enumerate(centers):
        near = inside & (dists[i] < K * radii[i])
        if np.any(rho[near] < lam1 * radii[i] - (1 + lam) / 2) or np.any(rho[near] > lam2 * radii[i] + (1 + lam) / 2):
            sandwich = False
        if not (lam * radii[i] - 0.5 <= rho[y] <= (1 + lam) / 2 + lam * radii[i]):
            sandwich = False
    checks["sandwich"] = sandwich
    covered = np.zeros(graph.n, dtype=bool)
    for i, y in enumerate(centers):
        if not boundary[i]:
            covered |= inside & (dists[i] < 3 * radii[i])
        else:
            region = np.flatnonzero(inside & (dists[i] < 2 * lam * radii[i]))
            sub = graph.adj[region][:, region]
            _, lab = csgraph.connected_components(sub, directed=False)
            home = lab[np.searchsorted(region, y)]
            covered[region[lab == home]] = True
    checks["uncovered"] = int((inside & ~covered).sum())
    checks["cover"] = checks["uncovered"] == 0
    mult = np.zeros(graph.n, dtype=np.int64)
    for i in range(len(centers)):
        mult += inside & (dists[i] < K * radii[i])
    checks["max_multiplicity"] = int(mult.max()) if len(centers) else 0
    chains = _geodesic_chains(graph, x0, dist0, centers, radii, dists, K)
    chains_star = [np.array([i for i, F in enumerate(chains) if j in F], dtype=np.int64)
                   for j in range(len(centers))]
    checks["max_chain"] = max((len(F) for F in chains), default=0)
    return WhitneyCover(x0, R, scale, lam, K, centers, radii, rho[centers] if len(centers) else np.zeros(0),
                        boundary, chains, chains_star, checks, graph.coords[centers])


def _geodesic(graph, dist0, target):
    """Geodesic from the BFS root to target, stepping to the smallest-index closer neighbour."""
    indptr, indices = graph.adj.indptr, graph.adj.indices
    path = [int(target)]
    v = int(target)
    while dist0[v] > 0:
        nb = indices[indptr[v]:indptr[v + 1]]
        closer = nb[dist0[nb] == dist0[v] - 1]
        v = int(closer.min())
        path.append(v)
    return path[::-1]


def _geodesic_chains(graph, x0, dist0, centers, radii, dists, K):
    out = []
    for y in centers:
        path = np.asarray(_geodesic(graph, dist0, y))
        F = [j for j in range(len(centers)) if np.any(dists[j][path] < K * radii[j])]
        out.append(np.asarray(F, dtype=np.int64))
    return out


def compute_weight(graph, x0, R):
    """phi(y) = ((R ^ rho(y))/R)^2 on B(x0, R) and phi~(e) = min over the edge's endpoints.

    Returns (ball indices, phi on the ball, ball-local edges, edge weights).
    """
    x0 = int(x0) if isinstance(x0, (int, np.integer)) else graph.index(x0)
    inside = graph.distances(x0) < R
    ball = np.flatnonzero(inside)
    rho = distance_to_complement(graph, inside)[ball]
    phi = (np.minimum(R, rho) / R) ** 2
    sub = graph.subgraph(ball)
    e = sub.edges()
    return ball, phi, e, np.minimum(phi[e[:, 0]], phi[e[:, 1]])


def weighted_poincare(graph, x0, R):
    """Best constant of the weighted Poincare inequality on B(x0, R) with the Whitney weight."""
    ball, phi, e, we = compute_weight(graph, x0, R)
    sub = graph.subgraph(ball)
    return poincare_constant(sub, phi=phi, phi_edges=we)
