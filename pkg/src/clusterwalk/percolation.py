"""Bond and site percolation on finite boxes of Z^d, plus cube arithmetic.

Randomness is counter based: every edge (or site) gets a uniform variate
computed by hashing the master seed together with the edge's global lattice
coordinates. An edge is open iff its variate is below p. This makes sampling
independent of traversal order and gives the monotone coupling in p for free.
"""
from __future__ import annotations

import hashlib
import itertools
import struct
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

SNAPSHOT_MAGIC = b"PCLB"
SNAPSHOT_VERSION = 1
_KIND_CODES = {"bond": 0, "site": 1}

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_COORD_OFFSET = 1 << 31
_SITE_STREAM = 0x5157
_U64_MASK = (1 << 64) - 1


class SnapshotError(ValueError):
    pass


@dataclass(frozen=True)
class Box:
    """Closed integer box lo[i] <= x_i <= hi[i]."""

    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = tuple(int(v) for v in self.lo)
        hi = tuple(int(v) for v in self.hi)
        if len(lo) != len(hi) or len(lo) == 0:
            raise ValueError("lo and hi must have the same positive length")
        if any(h < l for l, h in zip(lo, hi)):
            raise ValueError(f"empty box: lo={lo} hi={hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def cube(cls, lo, n):
        """Cube with side n (n+1 vertices per axis) and lower corner lo."""
        lo = tuple(int(v) for v in lo)
        return cls(lo, tuple(v + int(n) for v in lo))

    @classmethod
    def centered(cls, d, n):
        """Side-n cube around the origin (lower corner at -(n//2))."""
        return cls.cube((-(n // 2),) * d, n)

    @property
    def d(self):
        return len(self.lo)

    @property
    def shape(self):
        return tuple(h - l + 1 for l, h in zip(self.lo, self.hi))

    @property
    def sides(self):
        return tuple(h - l for l, h in zip(self.lo, self.hi))

    @property
    def side(self):
        s = self.sides
        if len(set(s)) != 1:
            raise ValueError(f"box {self} is not a cube")
        return s[0]

    @property
    def n_vertices(self):
        return int(np.prod(self.shape, dtype=np.int64))

    @property
    def n_edges(self):
        shape = self.shape
        total = 0
        for a in range(self.d):
            total += (shape[a] - 1) * int(np.prod([s for b, s in enumerate(shape) if b != a], dtype=np.int64))
        return int(total)

    @property
    def strides(self):
        shape = self.shape
        st = [1] * self.d
        for a in range(self.d - 2, -1, -1):
            st[a] = st[a + 1] * shape[a + 1]
        return tuple(st)

    def contains(self, x):
        x = np.asarray(x)
        return bool(np.all(x >= self.lo) and np.all(x <= self.hi))

    def contains_box(self, other):
        return all(a <= b for a, b in zip(self.lo, other.lo)) and all(a >= b for a, b in zip(self.hi, other.hi))

    def intersect(self, other):
        lo = tuple(max(a, b) for a, b in zip(self.lo, other.lo))
        hi = tuple(min(a, b) for a, b in zip(self.hi, other.hi))
        if any(h < l for l, h in zip(lo, hi)):
            return None
        return Box(lo, hi)

    def index(self, x):
        """Flat C-order index of coordinates x (array of shape (..., d))."""
        x = np.asarray(x, dtype=np.int64)
        rel = x - np.asarray(self.lo, dtype=np.int64)
        return rel @ np.asarray(self.strides, dtype=np.int64)

    def coords(self, flat=None):
        """Coordinates of flat indices (all vertices when flat is None)."""
        if flat is None:
            flat = np.arange(self.n_vertices, dtype=np.int64)
        rel = np.stack(np.unravel_index(np.asarray(flat, dtype=np.int64), self.shape), axis=-1)
        return rel + np.asarray(self.lo, dtype=np.int64)

    def local_slices(self, sub):
        """Slices selecting sub (a box inside self) from an array shaped like self."""
        return tuple(slice(s - l, e - l + 1) for s, e, l in zip(sub.lo, sub.hi, self.lo))


def _splitmix(z):
    with np.errstate(over="ignore"):
        z = z + _GOLDEN
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
        return z ^ (z >> np.uint64(31))


def lattice_uniforms(seed, stream, coords):
    """Uniform variates in [0,1) keyed by (seed, stream, lattice coordinates).

    coords has shape (M, d). The value for a given key never depends on which
    other keys are evaluated alongside it.
    """
    coords = np.asarray(coords, dtype=np.int64)
    m = coords.shape[0]
    h = np.full(m, np.uint64(int(seed) & _U64_MASK), dtype=np.uint64)
    h = _splitmix(h ^ np.uint64(int(stream) & _U64_MASK))
    for a in range(coords.shape[1]):
        enc = (coords[:, a] + _COORD_OFFSET).astype(np.uint64)
        h = _splitmix(h ^ enc)
    return (h >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


def derive_seed(*parts):
    """64-bit seed from an arbitrary tuple of labels (master seed, kind, size, trial)."""
    digest = hashlib.blake2b(repr(tuple(parts)).encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


@dataclass(frozen=True, eq=False)
class BondConfig:
    """Open/closed state of every nearest-neighbour edge of a box.

    edges[a][x] is the edge from x to x + e_a; slots on the upper face of axis a
    are always False and are not part of the canonical bit vector.
    """

    box: Box
    p: float
    seed: int
    edges: np.ndarray

    kind = "bond"

    @property
    def d(self):
        return self.box.d

    @property
    def bits(self):
        """Canonical axis-major bit vector (one bit per edge of the box)."""
        parts = []
        for a in range(self.d):
            sl = [slice(None)] * self.d
            sl[a] = slice(0, self.box.shape[a] - 1)
            parts.append(self.edges[a][tuple(sl)].ravel())
        if not parts:
            return np.zeros(0, dtype=bool)
        return np.concatenate(parts)

    @property
    def n_open(self):
        return int(self.edges.sum())

    def degree(self):
        """Open degree of every vertex, shaped like the box."""
        deg = np.zeros(self.box.shape, dtype=np.int64)
        for a in range(self.d):
            e = self.edges[a].astype(np.int64)
            deg += e
            sl_dst = [slice(None)] * self.d
            sl_src = [slice(None)] * self.d
            sl_dst[a] = slice(1, None)
            sl_src[a] = slice(0, -1)
            deg[tuple(sl_dst)] += e[tuple(sl_src)]
        return deg

    def restrict(self, sub):
        """Configuration on a sub-box (edges with both endpoints inside)."""
        sl = self.box.local_slices(sub)
        edges = self.edges[(slice(None),) + sl].copy()
        for a in range(self.d):
            idx = [slice(None)] * self.d
            idx[a] = -1
            edges[a][tuple(idx)] = False
        return BondConfig(sub, self.p, self.seed, edges)

    @classmethod
    def from_bits(cls, box, p, seed, bits):
        bits = np.asarray(bits, dtype=bool)
        if bits.size != box.n_edges:
            raise ValueError(f"expected {box.n_edges} edge bits, got {bits.size}")
        edges = np.zeros((box.d,) + box.shape, dtype=bool)
        pos = 0
        for a in range(box.d):
            sub_shape = list(box.shape)
            sub_shape[a] -= 1
            cnt = int(np.prod(sub_shape, dtype=np.int64))
            sl = [slice(None)] * box.d
            sl[a] = slice(0, box.shape[a] - 1)
            edges[a][tuple(sl)] = bits[pos:pos + cnt].reshape(sub_shape)
            pos += cnt
        return cls(box, float(p), int(seed), edges)

    @classmethod
    def from_edge_list(cls, box, pairs, p=float("nan"), seed=0):
        """Config whose open edges are the given vertex pairs (lattice coordinates)."""
        edges = np.zeros((box.d,) + box.shape, dtype=bool)
        for x, y in pairs:
            x = np.asarray(x)
            y = np.asarray(y)
            diff = y - x
            if np.abs(diff).sum() != 1:
                raise ValueError(f"{tuple(x)} and {tuple(y)} are not lattice neighbours")
            a = int(np.flatnonzero(diff)[0])
            low = x if diff[a] > 0 else y
            edges[a][tuple(low - np.asarray(box.lo))] = True
        return cls(box, p, seed, edges)


@dataclass(frozen=True, eq=False)
class SiteConfig:
    """Open/closed state of every site of a box; open has the box's shape."""

    box: Box
    q: float
    seed: int
    open: np.ndarray

    kind = "site"

    @property
    def d(self):
        return self.box.d

    @property
    def bits(self):
        return self.open.ravel()

    @property
    def n_open(self):
        return int(self.open.sum())

    @classmethod
    def from_bits(cls, box, q, seed, bits):
        bits = np.asarray(bits, dtype=bool)
        if bits.size != box.n_vertices:
            raise ValueError(f"expected {box.n_vertices} site bits, got {bits.size}")
        return cls(box, float(q), int(seed), bits.reshape(box.shape).copy())


def _check_prob(p):
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"probability must lie in [0,1], got {p}")


def sample_bond_config(box, p, seed):
    _check_prob(p)
    coords = box.coords()
    edges = np.zeros((box.d,) + box.shape, dtype=bool)
    for a in range(box.d):
        inner = coords[:, a] < box.hi[a]
        u = lattice_uniforms(seed, 1 + a, coords[inner])
        flat = np.zeros(box.n_vertices, dtype=bool)
        flat[inner] = u < p
        edges[a] = flat.reshape(box.shape)
    return BondConfig(box, float(p), int(seed), edges)


def sample_site_config(box, q, seed):
    _check_prob(q)
    u = lattice_uniforms(seed, _SITE_STREAM, box.coords())
    return SiteConfig(box, float(q), int(seed), (u < q).reshape(box.shape))


def unit_shifts(d):
    """The shift set {0, +-e_i} as a list of integer tuples."""
    out = [(0,) * d]
    for a in range(d):
        for s in (1, -1):
            v = [0] * d
            v[a] = s
            out.append(tuple(v))
    return out


def shift_sites(cfg, sigma):
    """Shifted open set {x - sigma : x open}; sites shifted in from outside are closed."""
    sigma = tuple(int(v) for v in sigma)
    if len(sigma) != cfg.d or sum(abs(v) for v in sigma) > 1:
        raise ValueError(f"invalid shift {sigma}: need |sigma|_1 <= 1")
    # new(x) = old(x + sigma)
    out = np.zeros_like(cfg.open)
    src = []
    dst = []
    for s, n in zip(sigma, cfg.box.shape):
        if s >= 0:
            src.append(slice(s, n))
            dst.append(slice(0, n - s))
        else:
            src.append(slice(0, n + s))
            dst.append(slice(-s, n))
    out[tuple(dst)] = cfg.open[tuple(src)]
    return SiteConfig(cfg.box, cfg.q, cfg.seed, out)


@dataclass(frozen=True)
class Tiling:
    """Origin-anchored tiling of Z^d by cubes with k vertices per axis, clipped to box."""

    box: Box
    k: int

    def __post_init__(self):
        if self.k < 2:
            raise ValueError("tile parameter k must be at least 2")

    def tile_index(self, x):
        return tuple(int(v) for v in np.floor_divide(np.asarray(x, dtype=np.int64), self.k))

    def tile_box(self, idx, clip=True):
        lo = tuple(self.k * int(i) for i in idx)
        tb = Box(lo, tuple(v + self.k - 1 for v in lo))
        return self.box.intersect(tb) if clip else tb

    def index_range(self):
        """Per axis, the inclusive range of tile indices meeting the box."""
        return [(l // self.k, h // self.k) for l, h in zip(self.box.lo, self.box.hi)]

    def indices(self):
        ranges = [range(a, b + 1) for a, b in self.index_range()]
        return list(itertools.product(*ranges))

    def tiles(self):
        return {idx: self.tile_box(idx) for idx in self.indices()}


def tile(box, k):
    return Tiling(box, int(k))


class Enlargement(NamedTuple):
    plus: Box
    oplus: Box
    clipped: bool


def grow_cube(Q, new_side):
    """Cube of the given side sharing Q's center (extra length split low-side first)."""
    n = Q.side
    extra = new_side - n
    lo = tuple(v - extra // 2 for v in Q.lo)
    return Box.cube(lo, new_side)


def enlarge_cube(Q, ambient=None):
    """Concentric enlargements with sides floor(3n/2) and floor(6n/5).

    When an ambient box is given both are clipped to it and the clip is flagged.
    """
    n = Q.side
    plus = grow_cube(Q, (3 * n) // 2)
    oplus = grow_cube(Q, (6 * n) // 5)
    clipped = False
    if ambient is not None:
        p2 = ambient.intersect(plus)
        o2 = ambient.intersect(oplus)
        clipped = p2 != plus or o2 != oplus
        plus, oplus = p2, o2
    return Enlargement(plus, oplus, clipped)


def write_snapshot(cfg, path):
    kind = cfg.kind
    prob = cfg.p if kind == "bond" else cfg.q
    head = bytearray(SNAPSHOT_MAGIC)
    head += struct.pack("<HH", SNAPSHOT_VERSION, cfg.d)
    for l, h in zip(cfg.box.lo, cfg.box.hi):
        head += struct.pack("<ii", l, h)
    head += struct.pack("<dQB", prob, int(cfg.seed) & _U64_MASK, _KIND_CODES[kind])
    packed = np.packbits(np.asarray(cfg.bits, dtype=np.uint8), bitorder="little")
    with open(path, "wb") as fh:
        fh.write(bytes(head))
        fh.write(packed.tobytes())


def read_snapshot(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != SNAPSHOT_MAGIC:
        raise SnapshotError("bad magic")
    try:
        version, d = struct.unpack_from("<HH", data, 4)
    except struct.error as exc:
        raise SnapshotError("truncated header") from exc
    if version != SNAPSHOT_VERSION:
        raise SnapshotError(f"unsupported snapshot version {version}")
    off = 8
    lo, hi = [], []
    try:
        for _ in range(d):
            l, h = struct.unpack_from("<ii", data, off)
            lo.append(l)
            hi.append(h)
            off += 8
        prob, seed, kind_code = struct.unpack_from("<dQB", data, off)
    except struct.error as exc:
        raise SnapshotError("truncated header") from exc
    off += 17
    kinds = {v: k for k, v in _KIND_CODES.items()}
    if kind_code not in kinds:
        raise SnapshotError(f"unknown kind code {kind_code}")
    box = Box(tuple(lo), tuple(hi))
    kind = kinds[kind_code]
    nbits = box.n_edges if kind == "bond" else box.n_vertices
    nbytes = (nbits + 7) // 8
    payload = np.frombuffer(data, dtype=np.uint8, count=len(data) - off, offset=off)
    if payload.size != nbytes:
        raise SnapshotError(f"payload has {payload.size} bytes, expected {nbytes}")
    bits = np.unpackbits(payload, bitorder="little")[:nbits].astype(bool)
    if kind == "bond":
        return BondConfig.from_bits(box, prob, seed, bits)
    return SiteConfig.from_bits(box, prob, seed, bits)
