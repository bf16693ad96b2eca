"""Long-range percolation environments on finite boxes of Z^d.

The model: vertices are the lattice box [-n, n]^d; every unordered pair
{x, y} is an edge independently, with probability q when y - x is a unit
coordinate vector and 1 - exp(-|y - x|^-s) otherwise.  Setting
``long_range_enabled=False`` keeps only the nearest-neighbour edges (a
lattice oracle for tests, not a physical regime).

Sampling is exact: unordered pairs are grouped into displacement classes
(all pairs sharing the vector y - x), the number of open edges in a class
is drawn from the exact binomial law, and that many distinct pairs are
placed uniformly without replacement.  All randomness derives from
counter-based Philox streams keyed by (seed, stream id), so a given
(params, seed) always yields a bit-identical environment.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DivergenceError,
    FileFormatError,
    ParameterError,
    ResourceLimitError,
)
from .lattice import (
    NORM_EUCLIDEAN,
    box_vertex_count,
    check_norm,
    delinearize,
    linearize,
    vector_norm,
    weighted_probability_tail,
)

FORMAT_MAGIC = b"LRPG"
FORMAT_VERSION = 1
_NORM_CODES = {NORM_EUCLIDEAN: 0, "linf": 1}
_NORM_NAMES = {v: k for k, v in _NORM_CODES.items()}

# Philox stream ids reserved by the sampler
_STREAM_COUNTS = 0
_STREAM_SINGLES = 1
_STREAM_CLASS_BASE = 16


@dataclass(frozen=True)
class LrpParams:
    """Model knobs: dimension, decay exponent, box radius, seeding."""

    d: int
    s: float
    q: float = 1.0
    norm: str = NORM_EUCLIDEAN
    n: int = 1
    long_range_enabled: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.d < 1:
            raise ParameterError(f"dimension must be >= 1, got {self.d}")
        if self.s <= self.d:
            raise ParameterError(
                f"exponent s must exceed d for a locally finite graph "
                f"(got s={self.s}, d={self.d})"
            )
        if not 0.0 <= self.q <= 1.0:
            raise ParameterError(f"nearest-neighbour probability q={self.q} not in [0,1]")
        if self.n < 1:
            raise ParameterError(f"box radius must be >= 1, got {self.n}")
        if not 0 <= self.seed < 2**64:
            raise ParameterError("seed must fit in 64 unsigned bits")
        check_norm(self.norm)

    @property
    def vertex_count(self) -> int:
        return box_vertex_count(self.d, self.n)

    @property
    def side(self) -> int:
        return 2 * self.n + 1


class Graph:
    """Immutable undirected graph in CSR form with a canonical edge list.

    Edges are stored once as (u, v) with u < v, lexicographically sorted.
    """

    def __init__(self, vertex_count: int, edges: np.ndarray, _checked: bool = False):
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        lo = np.minimum(edges[:, 0], edges[:, 1])
        hi = np.maximum(edges[:, 0], edges[:, 1])
        order = np.lexsort((hi, lo))
        self.edges = np.stack([lo[order], hi[order]], axis=1)
        self.vertex_count = int(vertex_count)
        if not _checked:
            self._validate()
        ends = np.concatenate([self.edges[:, 0], self.edges[:, 1]])
        other = np.concatenate([self.edges[:, 1], self.edges[:, 0]])
        order = np.lexsort((other, ends))
        self.indices = other[order]
        counts = np.bincount(ends, minlength=self.vertex_count)
        self.indptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)

    def _validate(self):
        if self.edges.size:
            if self.edges.min() < 0 or self.edges.max() >= self.vertex_count:
                raise ParameterError("edge endpoint outside vertex range")
            if np.any(self.edges[:, 0] == self.edges[:, 1]):
                raise ParameterError("self-loops are not allowed")
            dup = np.all(self.edges[1:] == self.edges[:-1], axis=1)
            if np.any(dup):
                raise ParameterError("duplicate edges are not allowed")

    @property
    def edge_count(self) -> int:
        return self.edges.shape[0]

    @property
    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    def neighbors(self, u: int) -> np.ndarray:
        return self.indices[self.indptr[u] : self.indptr[u + 1]]


@dataclass
class Environment:
    """One sampled percolation graph on a box, plus its provenance."""

    params: LrpParams
    graph: Graph
    seed_trace: dict = field(default_factory=dict)

    @property
    def vertex_count(self) -> int:
        return self.graph.vertex_count

    @property
    def edge_count(self) -> int:
        return self.graph.edge_count

    @property
    def degrees(self) -> np.ndarray:
        return self.graph.degrees

    def coordinates(self, ids: np.ndarray) -> np.ndarray:
        return delinearize(np.asarray(ids), self.params.d, self.params.n)


@dataclass(frozen=True)
class DisplacementClass:
    """One translation class of unordered pairs inside the box."""

    v: tuple
    distance: float
    pair_count: int
    probability: float


def _is_unit_vector(v: np.ndarray) -> np.ndarray:
    return np.sum(np.abs(v), axis=-1) == 1


def edge_probability(params: LrpParams, v) -> float:
    """Probability that the pair {x, x+v} is an edge."""
    v = np.asarray(v, dtype=np.int64).reshape(-1)
    if v.shape[0] != params.d:
        raise ParameterError(f"displacement has dimension {v.shape[0]}, expected {params.d}")
    if np.all(v == 0):
        raise ParameterError("zero displacement has no edge probability")
    if np.any(np.abs(v) > 2 * params.n):
        raise ParameterError("displacement exceeds the box diameter")
    return float(edge_probability_array(params, v[None, :])[0])


def edge_probability_array(params: LrpParams, v: np.ndarray) -> np.ndarray:
    """Vectorized edge probability for an (K, d) array of displacements."""
    v = np.asarray(v, dtype=np.int64)
    unit = _is_unit_vector(v)
    out = np.empty(v.shape[0], dtype=np.float64)
    out[unit] = params.q
    if params.long_range_enabled:
        dist = vector_norm(v[~unit], params.norm)
        out[~unit] = -np.expm1(-(dist ** (-params.s)))
    else:
        out[~unit] = 0.0
    return out


def expected_degree(params: LrpParams, tail_tolerance: float = 1e-12) -> float:
    """Deterministic value of E[deg(x)] = sum over v != 0 of p(v) on Z^d.

    Evaluated as a finite lattice sum plus the exact analytic tail, so the
    result is accurate to far better than tail_tolerance.
    """
    if tail_tolerance <= 0:
        raise ParameterError("tail_tolerance must be positive")
    if params.s <= params.d:
        raise DivergenceError("expected degree diverges for s <= d")
    if not params.long_range_enabled:
        return 2.0 * params.d * params.q
    radius = 32
    from .lattice import displacement_grid

    pts = displacement_grid(params.d, radius)
    dist = vector_norm(pts, params.norm)
    inside = dist <= radius
    finite = float(np.sum(edge_probability_array(params, pts[inside])))
    tail = weighted_probability_tail(
        params.d, params.s, radius, params.norm, weight="p", rel_tol=min(tail_tolerance, 1e-14)
    )
    return finite + tail


def displacement_classes(params: LrpParams):
    """Canonical displacement classes of the box as parallel arrays.

    Returns (vectors, pair_counts, probabilities).  Canonical means the
    first nonzero coordinate is positive; every unordered pair {x, y} in
    the box belongs to exactly one class.
    """
    d, n = params.d, params.n
    span = 2 * n
    blocks = []
    for lead in range(d):
        # coordinates before `lead` are zero, coordinate `lead` is in [1, 2n],
        # later coordinates range freely
        axes = [np.array([0], dtype=np.int64)] * lead
        axes.append(np.arange(1, span + 1, dtype=np.int64))
        axes.extend(
            np.arange(-span, span + 1, dtype=np.int64) for _ in range(d - lead - 1)
        )
        mesh = np.meshgrid(*axes, indexing="ij")
        blocks.append(np.stack([m.ravel() for m in mesh], axis=-1))
    vectors = np.concatenate(blocks, axis=0)
    side = 2 * n + 1
    pair_counts = np.prod(side - np.abs(vectors), axis=1)
    probs = edge_probability_array(params, vectors)
    return vectors, pair_counts.astype(np.int64), probs


def displacement_class(params: LrpParams, v) -> DisplacementClass:
    """The class record for one displacement (canonicalized)."""
    v = np.asarray(v, dtype=np.int64).reshape(-1)
    nz = np.nonzero(v)[0]
    if nz.size == 0:
        raise ParameterError("zero displacement has no class")
    if v[nz[0]] < 0:
        v = -v
    side = 2 * params.n + 1
    pair_count = int(np.prod(side - np.abs(v)))
    return DisplacementClass(
        v=tuple(int(c) for c in v),
        distance=float(vector_norm(v, params.norm)),
        pair_count=pair_count,
        probability=edge_probability(params, v),
    )


def _class_stream(seed: int, stream: int) -> np.random.Generator:
    key = np.array([seed, stream], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _unrank_pairs(ranks: np.ndarray, v: np.ndarray, n: int) -> np.ndarray:
    """Decode base-point ranks of a class into (x, x+v) coordinate pairs."""
    d = v.shape[0]
    side = 2 * n + 1
    sizes = side - np.abs(v)
    starts = np.where(v >= 0, -n, -n - v)
    x = np.empty((ranks.shape[0], d), dtype=np.int64)
    rem = ranks.astype(np.int64).copy()
    for i in range(d):
        x[:, i] = starts[i] + rem % sizes[i]
        rem //= sizes[i]
    return x


def _sample_distinct(rng: np.random.Generator, population: int, k: int) -> np.ndarray:
    """k distinct integers from [0, population), unordered."""
    if k > population:
        raise ParameterError("cannot sample more pairs than the class holds")
    if k == population:
        return np.arange(population, dtype=np.int64)
    if k > population // 2:
        return rng.permutation(population)[:k].astype(np.int64)
    chosen = np.empty(0, dtype=np.int64)
    need = k
    while need > 0:
        draw = rng.integers(0, population, size=2 * need + 8)
        chosen = np.unique(np.concatenate([chosen, draw]))
        need = k - chosen.shape[0]
    if chosen.shape[0] > k:
        # a stream-driven subset keeps the retained set uniform
        keep = rng.permutation(chosen.shape[0])[:k]
        chosen = chosen[keep]
    return chosen.astype(np.int64)


def sample_environment(params: LrpParams, max_edges: int = 200_000_000) -> Environment:
    """Draw one environment; identical (params, seed) gives identical output."""
    vectors, pair_counts, probs = displacement_classes(params)
    expected_edges = float(np.sum(pair_counts * probs))
    if expected_edges > max_edges:
        raise ResourceLimitError(
            f"expected edge count {expected_edges:.3g} exceeds budget {max_edges:.3g}"
        )
    counts_rng = _class_stream(params.seed, _STREAM_COUNTS)
    counts = counts_rng.binomial(pair_counts, probs)

    n = params.n
    chunks = []

    singles = np.nonzero(counts == 1)[0]
    if singles.size:
        singles_rng = _class_stream(params.seed, _STREAM_SINGLES)
        ranks = singles_rng.integers(0, pair_counts[singles])
        vs = vectors[singles]
        side = 2 * n + 1
        sizes = side - np.abs(vs)
        starts = np.where(vs >= 0, -n, -n - vs)
        x = np.empty_like(vs)
        rem = ranks.astype(np.int64)
        for i in range(params.d):
            x[:, i] = starts[:, i] + rem % sizes[:, i]
            rem //= sizes[:, i]
        chunks.append(np.concatenate([x, x + vs], axis=1))

    multis = np.nonzero(counts >= 2)[0]
    for idx in multis:
        v = vectors[idx]
        rng = _class_stream(params.seed, _STREAM_CLASS_BASE + int(idx))
        ranks = _sample_distinct(rng, int(pair_counts[idx]), int(counts[idx]))
        x = _unrank_pairs(ranks, v, n)
        chunks.append(np.concatenate([x, x + v], axis=1))

    if chunks:
        pairs = np.concatenate(chunks, axis=0)
        u = linearize(pairs[:, : params.d], n)
        w = linearize(pairs[:, params.d :], n)
        edges = np.stack([u, w], axis=1)
    else:
        edges = np.empty((0, 2), dtype=np.int64)

    graph = Graph(params.vertex_count, edges, _checked=True)
    trace = {
        "counts": (params.seed, _STREAM_COUNTS),
        "singles": (params.seed, _STREAM_SINGLES),
        "class_base": (params.seed, _STREAM_CLASS_BASE),
    }
    return Environment(params=params, graph=graph, seed_trace=trace)


# ---------------------------------------------------------------------------
# binary environment files


_CRC64_POLY = 0x42F0E1EBA9EA3693  # ECMA-182
_CRC64_TABLE = None


def _crc64_table():
    global _CRC64_TABLE
    if _CRC64_TABLE is None:
        table = []
        for byte in range(256):
            crc = byte << 56
            for _ in range(8):
                if crc & (1 << 63):
                    crc = ((crc << 1) ^ _CRC64_POLY) & 0xFFFFFFFFFFFFFFFF
                else:
                    crc = (crc << 1) & 0xFFFFFFFFFFFFFFFF
            table.append(crc)
        _CRC64_TABLE = table
    return _CRC64_TABLE


def crc64(data: bytes, crc: int = 0) -> int:
    table = _crc64_table()
    for b in data:
        crc = (table[((crc >> 56) ^ b) & 0xFF] ^ (crc << 8)) & 0xFFFFFFFFFFFFFFFF
    return crc


_HEADER = struct.Struct("<HddBQBQQQ")


def serialize_environment(env: Environment, path) -> None:
    """Write the binary environment format (little-endian, CRC64 trailer)."""
    p = env.params
    header = _HEADER.pack(
        p.d,
        p.s,
        p.q,
        _NORM_CODES[p.norm],
        p.n,
        int(p.long_range_enabled),
        p.seed,
        env.vertex_count,
        env.edge_count,
    )
    payload = env.graph.edges.astype("<u8").tobytes()
    body = FORMAT_MAGIC + struct.pack("<H", FORMAT_VERSION) + header + payload
    checksum = struct.pack("<Q", crc64(body))
    with open(path, "wb") as fh:
        fh.write(body)
        fh.write(checksum)


def deserialize_environment(path, expected_d: int | None = None) -> Environment:
    """Read an environment file, verifying magic, version and checksum."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4 + 2 + _HEADER.size + 8:
        raise FileFormatError(f"{path}: truncated environment file")
    if blob[:4] != FORMAT_MAGIC:
        raise FileFormatError(f"{path}: bad magic {blob[:4]!r}")
    (version,) = struct.unpack_from("<H", blob, 4)
    if version != FORMAT_VERSION:
        raise FileFormatError(f"{path}: unsupported format version {version}")
    fields = _HEADER.unpack_from(blob, 6)
    d, s, q, norm_code, n, lre, seed, vertex_count, edge_count = fields
    if expected_d is not None and d != expected_d:
        raise FileFormatError(f"{path}: dimension mismatch (file d={d}, expected {expected_d})")
    if norm_code not in _NORM_NAMES:
        raise FileFormatError(f"{path}: unknown norm code {norm_code}")
    body_len = 6 + _HEADER.size + 16 * edge_count
    if len(blob) != body_len + 8:
        raise FileFormatError(f"{path}: truncated or oversized edge section")
    (stored_crc,) = struct.unpack_from("<Q", blob, body_len)
    if crc64(blob[:body_len]) != stored_crc:
        raise FileFormatError(f"{path}: checksum failure")
    edges = np.frombuffer(blob, dtype="<u8", count=2 * edge_count, offset=6 + _HEADER.size)
    edges = edges.reshape(-1, 2).astype(np.int64)
    params = LrpParams(
        d=d,
        s=s,
        q=q,
        norm=_NORM_NAMES[norm_code],
        n=n,
        long_range_enabled=bool(lre),
        seed=seed,
    )
    if vertex_count != params.vertex_count:
        raise FileFormatError(f"{path}: vertex count inconsistent with box radius")
    graph = Graph(int(vertex_count), edges, _checked=True)
    return Environment(params=params, graph=graph, seed_trace={})


def nearest_neighbour_lattice(d: int, n: int, q: float = 1.0, seed: int = 0) -> Environment:
    """Pure lattice oracle: the box with long-range edges disabled."""
    params = LrpParams(d=d, s=d + 1.0, q=q, norm=NORM_EUCLIDEAN, n=n,
                       long_range_enabled=False, seed=seed)
    return sample_environment(params)


def file_digest(path) -> str:
    """sha256 hex digest of a file, used for run manifests."""
    import hashlib

    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
