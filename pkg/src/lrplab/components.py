"""Cluster structure of sampled environments.

Provides exact connected-component labelling (union-find), extraction of
the largest box component with its inner window, Monte Carlo scans of the
largest-component volume, finite-box convergence diagnostics, and the
one-dimensional cut-point sweep.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError
from .graph import Environment, Graph, LrpParams, sample_environment
from .lattice import delinearize, linearize


@dataclass
class ComponentLabeling:
    label: np.ndarray            # per-vertex component id (smallest member id)
    component_sizes: dict        # id -> size
    largest_id: int


@dataclass
class BoxComponent:
    """Largest component of the box, with its inner window.

    ``vertices`` are environment vertex ids (sorted); ``graph`` is the
    induced subgraph on local ids 0..len(vertices)-1.  ``window`` holds the
    local ids of vertices inside [-n+a_n, n-a_n]^d.
    """

    environment: Environment
    vertices: np.ndarray
    graph: Graph
    a_n: int
    window: np.ndarray = field(repr=False)

    @property
    def vertex_count(self) -> int:
        return self.vertices.shape[0]

    @property
    def edge_count(self) -> int:
        return self.graph.edge_count

    def coordinates(self) -> np.ndarray:
        return self.environment.coordinates(self.vertices)

    def local_id(self, env_vertex: int) -> int:
        pos = np.searchsorted(self.vertices, env_vertex)
        if pos >= self.vertices.shape[0] or self.vertices[pos] != env_vertex:
            raise ParameterError(f"vertex {env_vertex} is not in the component")
        return int(pos)


def label_components(env: Environment | Graph) -> ComponentLabeling:
    """Exact connected components; labels are each component's smallest id."""
    graph = env.graph if isinstance(env, Environment) else env
    v = graph.vertex_count
    from scipy.sparse import csr_matrix
    from scipy.sparse.csgraph import connected_components as _cc

    adj = csr_matrix(
        (np.ones(graph.indices.shape[0], dtype=np.int8), graph.indices, graph.indptr),
        shape=(v, v),
    )
    n_comp, raw = _cc(adj, directed=False)
    reps = np.full(n_comp, v, dtype=np.int64)
    np.minimum.at(reps, raw, np.arange(v, dtype=np.int64))
    labels = reps[raw]
    counts = np.bincount(raw, minlength=n_comp)
    sizes = {int(reps[i]): int(counts[i]) for i in range(n_comp)}
    largest = max(sizes.items(), key=lambda kv: (kv[1], -kv[0]))[0]
    return ComponentLabeling(label=labels, component_sizes=sizes, largest_id=int(largest))


def default_window_margin(n: int) -> int:
    """Inner-window margin a_n = ceil(log(2n+1)^2): divergent but o(n)."""
    return math.ceil(math.log(2 * n + 1) ** 2)


def _induced_graph(graph: Graph, vertices: np.ndarray) -> Graph:
    mask = np.zeros(graph.vertex_count, dtype=bool)
    mask[vertices] = True
    e = graph.edges
    keep = mask[e[:, 0]] & mask[e[:, 1]]
    local = np.full(graph.vertex_count, -1, dtype=np.int64)
    local[vertices] = np.arange(vertices.shape[0])
    edges = local[e[keep]]
    return Graph(vertices.shape[0], edges, _checked=True)


def largest_component(env: Environment, a_n: int | None = None) -> BoxComponent:
    """Largest component of the box with its inner window [-n+a_n, n-a_n]^d."""
    if env.vertex_count < 1:
        raise ParameterError("environment has no vertices")
    labeling = label_components(env)
    vertices = np.nonzero(labeling.label == labeling.largest_id)[0].astype(np.int64)
    graph = _induced_graph(env.graph, vertices)
    n = env.params.n
    if a_n is None:
        a_n = default_window_margin(n)
    coords = env.coordinates(vertices)
    inner = np.all(np.abs(coords) <= n - a_n, axis=1) if n - a_n >= 0 else np.zeros(len(vertices), bool)
    window = np.nonzero(inner)[0].astype(np.int64)
    return BoxComponent(environment=env, vertices=vertices, graph=graph,
                        a_n=a_n, window=window)


def wilson_interval(successes: int, trials: int, z: float = 1.96):
    """Wilson score interval for a binomial proportion."""
    if trials == 0:
        return 0.0, 0.0, 1.0
    phat = successes / trials
    denom = 1 + z * z / trials
    centre = (phat + z * z / (2 * trials)) / denom
    half = z * math.sqrt(phat * (1 - phat) / trials + z * z / (4 * trials * trials)) / denom
    return phat, max(0.0, centre - half), min(1.0, centre + half)


def largest_component_volume_scan(
    params: LrpParams,
    c,
    sizes,
    reps: int,
    max_edges: int = 200_000_000,
):
    """Empirical P(|V_n| >= c * n^d) over a grid of box radii.

    Returns rows (n, c, reps, p_hat, ci_lo, ci_hi), one per (n, c) pair.
    ``c`` may be a scalar or a sequence of volume fractions.
    """
    if reps < 1:
        raise ParameterError("reps must be >= 1")
    c_values = np.atleast_1d(np.asarray(c, dtype=np.float64))
    rows = []
    for n in sizes:
        hits = np.zeros(c_values.shape[0], dtype=np.int64)
        for r in range(reps):
            p = LrpParams(
                d=params.d, s=params.s, q=params.q, norm=params.norm, n=int(n),
                long_range_enabled=params.long_range_enabled,
                seed=(params.seed + 0x9E3779B97F4A7C15 * (r + 1)) % 2**64,
            )
            env = sample_environment(p, max_edges=max_edges)
            sizes_map = label_components(env).component_sizes
            largest = max(sizes_map.values())
            hits += largest >= c_values * (n ** params.d)
        for ci, cv in enumerate(c_values):
            phat, lo, hi = wilson_interval(int(hits[ci]), reps)
            rows.append({
                "n": int(n), "c": float(cv), "reps": reps,
                "p_hat": phat, "ci_lo": lo, "ci_hi": hi,
            })
    return rows


def _in_cluster_proxy(env: Environment, labeling: ComponentLabeling) -> np.ndarray:
    """Finite-box surrogate for 'x lies in the infinite cluster'.

    True when x's component either touches the width-1 boundary shell of
    the box or has at least (log n)^(2d) vertices.
    """
    n, d = env.params.n, env.params.d
    coords = delinearize(np.arange(env.vertex_count), d, n)
    on_boundary = np.any(np.abs(coords) == n, axis=1)
    touching = np.unique(labeling.label[on_boundary])
    size_cut = math.log(max(n, 2)) ** (2 * d)
    big = [lab for lab, sz in labeling.component_sizes.items() if sz >= size_cut]
    is_qualifying = np.zeros(env.vertex_count, dtype=bool)
    is_qualifying[touching] = True
    is_qualifying[np.asarray(big, dtype=np.int64)] = True
    return is_qualifying[labeling.label]


def window_convergence_diagnostics(
    params: LrpParams,
    n_list,
    reps: int,
    a_n: int | None = None,
):
    """Monte Carlo estimates of the two finite-box window diagnostics.

    For each n: (a) the maximum over window sites x of the empirical
    probability that x belongs to a spanning-scale cluster but not to the
    windowed largest component, and (b) Var(|W_n|) / n^(2d).
    """
    if reps < 1:
        raise ParameterError("reps must be >= 1")
    rows = []
    for n in n_list:
        margin = default_window_margin(int(n)) if a_n is None else a_n
        inner_ids = None
        escape_counts = None
        wn_sizes = []
        for r in range(reps):
            p = LrpParams(
                d=params.d, s=params.s, q=params.q, norm=params.norm, n=int(n),
                long_range_enabled=params.long_range_enabled,
                seed=(params.seed + 0xD1B54A32D192ED03 * (r + 1)) % 2**64,
            )
            env = sample_environment(p)
            labeling = label_components(env)
            if inner_ids is None:
                coords = delinearize(np.arange(env.vertex_count), p.d, p.n)
                inner = np.all(np.abs(coords) <= p.n - margin, axis=1)
                inner_ids = np.nonzero(inner)[0]
                escape_counts = np.zeros(inner_ids.shape[0], dtype=np.int64)
            in_cluster = _in_cluster_proxy(env, labeling)
            in_largest = labeling.label == labeling.largest_id
            escaped = in_cluster[inner_ids] & ~in_largest[inner_ids]
            escape_counts += escaped
            wn_sizes.append(int(np.sum(in_largest[inner_ids])))
        wn = np.asarray(wn_sizes, dtype=np.float64)
        var_wn = float(np.var(wn, ddof=1)) if reps > 1 else 0.0
        worst = int(escape_counts.max()) if escape_counts.size else 0
        phat, lo, hi = wilson_interval(worst, reps)
        # variance-of-variance under approximate normality
        var_stderr = var_wn * math.sqrt(2.0 / max(reps - 1, 1))
        rows.append({
            "n": int(n), "reps": reps, "a_n": margin,
            "a_proxy": phat, "a_proxy_ci_lo": lo, "a_proxy_ci_hi": hi,
            "var_wn_over_n2d": var_wn / (float(n) ** (2 * params.d)),
            "var_wn_stderr_over_n2d": var_stderr / (float(n) ** (2 * params.d)),
        })
    return rows


def find_cut_points(env: Environment) -> np.ndarray:
    """Sites x where {x, x+1} is the only edge crossing x+1/2 (d = 1 only).

    Returned as sorted lattice coordinates in [-n, n-1].
    """
    if env.params.d != 1:
        raise ParameterError("cut-points are defined for d = 1 only")
    n = env.params.n
    edges = env.graph.edges
    crossings = np.zeros(2 * n + 1, dtype=np.int64)
    if edges.size:
        np.add.at(crossings, edges[:, 0], 1)
        np.add.at(crossings, edges[:, 1], -1)
    crossings = np.cumsum(crossings)[:-1]  # count of edges spanning (x, x+1)
    # nearest-neighbour presence: edge (x, x+1) exists
    nn_present = np.zeros(2 * n, dtype=bool)
    if edges.size:
        nn = edges[edges[:, 1] - edges[:, 0] == 1, 0]
        nn_present[nn] = True
    cuts = np.nonzero((crossings == 1) & nn_present)[0]
    return cuts - n


def bfs_component_oracle(graph: Graph, start: int) -> set:
    """Plain BFS used as an independent oracle in tests."""
    seen = {start}
    frontier = [start]
    while frontier:
        nxt = []
        for u in frontier:
            for v in graph.neighbors(u):
                v = int(v)
                if v not in seen:
                    seen.add(v)
                    nxt.append(v)
        frontier = nxt
    return seen


__all__ = [
    "BoxComponent",
    "ComponentLabeling",
    "bfs_component_oracle",
    "default_window_margin",
    "find_cut_points",
    "label_components",
    "largest_component",
    "largest_component_volume_scan",
    "wilson_interval",
    "window_convergence_diagnostics",
]
