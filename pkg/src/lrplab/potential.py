"""Discrete potential theory on environments and on the bare lattice.

Conventions, pinned once: the Dirichlet energy of f is the sum over
unordered present edges of (f(x) - f(y))^2 (equal to the half-sum over
ordered pairs); the capacity of a capacitor (A, Omega) is twice the
minimal energy among functions that are 1 on A and supported in Omega;
the effective resistance R(A, B) is the reciprocal of the minimal energy
with boundary data 1 on A, 0 on B, so R = 2 / cap_{V\\B}(A).

Expected-energy formulas for the linear cut-off function are evaluated
deterministically: pair sums are grouped by displacement, correlations of
the profile are computed by FFT, and the slowly decaying remainder over
far displacements is completed with the exact analytic lattice tails from
:mod:`lrplab.lattice` rather than merely truncated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve
from scipy.sparse import csr_matrix
from scipy.sparse.linalg import cg

from .errors import ParameterError, SolverError
from .graph import (
    Environment,
    Graph,
    LrpParams,
    edge_probability_array,
    nearest_neighbour_lattice,
)
from .lattice import (
    NORM_EUCLIDEAN,
    check_norm,
    displacement_grid,
    vector_norm,
    weighted_probability_tail,
)


def _as_graph(obj) -> Graph:
    if isinstance(obj, Graph):
        return obj
    if isinstance(obj, Environment):
        return obj.graph
    graph = getattr(obj, "graph", None)
    if isinstance(graph, Graph):
        return graph
    raise ParameterError(f"expected a graph-like object, got {type(obj)!r}")


def dirichlet_energy(graph_like, f: np.ndarray) -> float:
    """Sum over unordered present edges of (f(x) - f(y))^2."""
    graph = _as_graph(graph_like)
    f = np.asarray(f, dtype=np.float64)
    if f.shape[0] != graph.vertex_count:
        raise ParameterError("function must be defined on every vertex")
    e = graph.edges
    if e.size == 0:
        return 0.0
    diff = f[e[:, 0]] - f[e[:, 1]]
    return float(np.dot(diff, diff))


# ---------------------------------------------------------------------------
# linear cut-off profiles and their expected energies


@dataclass(frozen=True)
class CutoffSpec:
    """Linear radial cut-off: 1 inside radius N-M, ramp down to 0 at N."""

    N: int
    M: int
    center: tuple = ()
    norm: str = NORM_EUCLIDEAN

    def __post_init__(self):
        if self.N < 1 or not (1 <= self.M <= self.N):
            raise ParameterError("cut-off requires 1 <= M <= N")
        check_norm(self.norm)

    @property
    def beta(self) -> float:
        return self.N / self.M

    def value(self, coords: np.ndarray) -> np.ndarray:
        """phi(x) for an (K, d) array of lattice points (relative to center)."""
        coords = np.asarray(coords, dtype=np.int64)
        if self.center:
            coords = coords - np.asarray(self.center, dtype=np.int64)
        r = vector_norm(coords, self.norm)
        return np.clip((self.N - r) / self.M, 0.0, 1.0)


def _cutoff_grid(spec: CutoffSpec, d: int) -> np.ndarray:
    """phi sampled on [-N, N]^d as a dense d-dimensional array."""
    side = 2 * spec.N + 1
    axes = [np.arange(-spec.N, spec.N + 1, dtype=np.int64)] * d
    mesh = np.meshgrid(*axes, indexing="ij")
    coords = np.stack([m.ravel() for m in mesh], axis=-1)
    base = CutoffSpec(N=spec.N, M=spec.M, center=(), norm=spec.norm)
    return base.value(coords).reshape((side,) * d)


def _cross_correlation(f: np.ndarray, g: np.ndarray) -> np.ndarray:
    """C(v) = sum_x f(x) g(x+v) on lags [-2N, 2N]^d (index offset 2N)."""
    rev = f[tuple(slice(None, None, -1) for _ in range(f.ndim))]
    return fftconvolve(g, rev, mode="full")


class _PairSummer:
    """Shared machinery to evaluate sums over displacements v != 0 of
    p(v) * C(v) and p(v) * constant, with exact analytic tails."""

    def __init__(self, params: LrpParams, N: int, tail_rel_tol: float = 1e-14):
        self.params = params
        self.N = N
        self.radius = 2 * N + 1  # beyond this every profile correlation is 0
        d = params.d
        pts = displacement_grid(d, self.radius)
        dist = vector_norm(pts, params.norm)
        inside = dist <= self.radius
        self.pts = pts[inside]
        self.probs = edge_probability_array(params, self.pts)
        self.prob_sum_finite = float(self.probs.sum())
        if params.long_range_enabled:
            self.prob_tail = weighted_probability_tail(
                d, params.s, self.radius, params.norm, weight="p", rel_tol=tail_rel_tol
            )
        else:
            self.prob_tail = 0.0
        # indices of each displacement inside a correlation array of
        # side 4N+1 (lags -2N..2N); displacements beyond that have C = 0
        side = 4 * N + 1
        in_lag = np.all(np.abs(self.pts) <= 2 * N, axis=1)
        self.lag_mask = in_lag
        offs = self.pts[in_lag] + 2 * N
        strides = side ** np.arange(d - 1, -1, -1, dtype=np.int64)
        self.lag_flat = (offs * strides).sum(axis=1)

    def weighted(self, corr: np.ndarray) -> float:
        """sum over v != 0 of p(v) * C(v) for a profile correlation array."""
        return float(np.dot(self.probs[self.lag_mask], corr.ravel()[self.lag_flat]))

    def constant(self, const: float) -> float:
        """sum over all v != 0 of p(v) * const, tail completed analytically."""
        return const * (self.prob_sum_finite + self.prob_tail)


def expected_cutoff_energy(
    params: LrpParams, spec: CutoffSpec, tail_tolerance: float = 1e-6
) -> float:
    """Deterministic E[energy(phi)] = sum over unordered lattice pairs of
    p(y - x) * (phi(x) - phi(y))^2.

    Computed as sum_v p(v) (E0 - C(v)) with C the FFT autocorrelation of
    the profile; displacements beyond 2N contribute E0 * p(v), summed in
    closed form, so the result is exact to floating precision (far below
    tail_tolerance).
    """
    if tail_tolerance <= 0:
        raise ParameterError("tail_tolerance must be positive")
    phi = _cutoff_grid(spec, params.d)
    e0 = float(np.sum(phi * phi))
    corr = _cross_correlation(phi, phi)
    summer = _PairSummer(params, spec.N, tail_rel_tol=min(tail_tolerance, 1e-14))
    return summer.constant(e0) - summer.weighted(corr)


def energy_breakdown(params: LrpParams, spec: CutoffSpec):
    """The four region sums (S1, S2, S3, S4) of the expected energy.

    Regions by |x|: plateau (phi = 1), ramp annulus, and exterior.  Each
    S_i sums p * (phi(x) - phi(y))^2 over ordered pairs in its region
    product, so S1 + S2 + S3 + S4 = 2 E[energy(phi)] exactly.
    """
    d = params.d
    phi = _cutoff_grid(spec, d)
    plateau = (phi >= 1.0).astype(np.float64)
    ramp_mask = (phi > 0.0) & (phi < 1.0)
    ramp = np.where(ramp_mask, phi, 0.0)
    ind2 = ramp_mask.astype(np.float64)
    ball = plateau + ind2
    w2 = np.where(ramp_mask, (1.0 - phi) ** 2, 0.0)
    w3 = ramp * ramp

    summer = _PairSummer(params, spec.N)
    s1 = 2.0 * (summer.constant(float(plateau.sum()))
                - summer.weighted(_cross_correlation(plateau, ball)))
    s2 = 2.0 * summer.weighted(_cross_correlation(plateau, w2))
    s3 = 2.0 * (summer.constant(float(w3.sum()))
                - summer.weighted(_cross_correlation(w3, ball)))
    s4 = 2.0 * (summer.weighted(_cross_correlation(w3, ind2))
                - summer.weighted(_cross_correlation(ramp, ramp)))
    return s1, s2, s3, s4


def exact_energy_covariance(params: LrpParams, f_a: dict, f_b: dict) -> float:
    """Covariance of the two edge energies under independent edges.

    f_a, f_b map lattice points (tuples) to values; off-support values are
    zero.  The exact value is the sum over unordered pairs {x, y} of
    p(1-p) (f_a(x)-f_a(y))^2 (f_b(x)-f_b(y))^2; pairs reaching outside the
    supports contribute through closed-form lattice tails.
    """
    fa = {tuple(int(c) for c in k): float(v) for k, v in f_a.items() if v != 0.0}
    fb = {tuple(int(c) for c in k): float(v) for k, v in f_b.items() if v != 0.0}
    if not fa or not fb:
        return 0.0
    support = sorted(set(fa) | set(fb))
    pts = np.asarray(support, dtype=np.int64)
    if pts.shape[1] != params.d:
        raise ParameterError("support dimension does not match params.d")
    va = np.asarray([fa.get(p, 0.0) for p in support])
    vb = np.asarray([fb.get(p, 0.0) for p in support])
    k = len(support)
    total = 0.0
    # pairs within the joint support
    for i in range(k):
        for j in range(i + 1, k):
            wa = (va[i] - va[j]) ** 2
            wb = (vb[i] - vb[j]) ** 2
            if wa == 0.0 or wb == 0.0:
                continue
            v = pts[j] - pts[i]
            p = float(edge_probability_array(params, v[None, :])[0])
            total += p * (1.0 - p) * wa * wb
    # pairs {x, y} with y outside the joint support need f_a(x) f_b(x) != 0
    overlap = [i for i in range(k) if va[i] != 0.0 and vb[i] != 0.0]
    if overlap:
        radius = 4
        grid = displacement_grid(params.d, radius)
        dist = vector_norm(grid, params.norm)
        inside = dist <= radius
        grid = grid[inside]
        pg = edge_probability_array(params, grid)
        sigma_near = float(np.sum(pg * (1.0 - pg)))
        if params.long_range_enabled:
            sigma_far = weighted_probability_tail(
                params.d, params.s, radius, params.norm, weight="p1mp"
            )
        else:
            sigma_far = 0.0
        sigma_all = sigma_near + sigma_far
        for i in overlap:
            others = np.delete(pts, i, axis=0) - pts[i]
            if others.size:
                po = edge_probability_array(params, others)
                in_support = float(np.sum(po * (1.0 - po)))
            else:
                in_support = 0.0
            total += va[i] ** 2 * vb[i] ** 2 * (sigma_all - in_support)
    return total


# ---------------------------------------------------------------------------
# harmonic solves: capacities and effective resistance


@dataclass
class Capacitor:
    """Nested vertex sets A inside Omega (local vertex ids)."""

    A: np.ndarray
    omega: np.ndarray

    def __post_init__(self):
        self.A = np.unique(np.asarray(self.A, dtype=np.int64))
        self.omega = np.unique(np.asarray(self.omega, dtype=np.int64))
        if self.A.size == 0:
            raise ParameterError("capacitor core A must be nonempty")
        if not np.all(np.isin(self.A, self.omega)):
            raise ParameterError("capacitor requires A to be a subset of Omega")


@dataclass
class PotentialSolution:
    h: np.ndarray = field(repr=False)
    energy: float
    capacity: float
    flux: float
    residual: float
    iterations: int


def _harmonic_solve(graph: Graph, fixed_one, allowed, tol, max_iter):
    """Dirichlet solve: h = 1 on fixed_one, 0 outside the allowed set."""
    v = graph.vertex_count
    h = np.zeros(v)
    h[fixed_one] = 1.0
    free_mask = np.zeros(v, dtype=bool)
    free_mask[allowed] = True
    free_mask[fixed_one] = False
    free = np.nonzero(free_mask)[0]
    iterations = 0
    if free.size:
        adj = csr_matrix(
            (np.ones(graph.indices.shape[0]), graph.indices, graph.indptr),
            shape=(v, v),
        )
        a_ff = adj[free][:, free]
        deg = graph.degrees.astype(np.float64)
        one_mask = np.zeros(v)
        one_mask[fixed_one] = 1.0
        b = np.asarray(adj[free] @ one_mask).ravel()
        lap = csr_matrix(
            (deg[free], (np.arange(free.size), np.arange(free.size))),
            shape=(free.size, free.size),
        ) - a_ff
        if np.any(b != 0):
            diag = deg[free]
            precond = csr_matrix(
                (1.0 / diag, (np.arange(free.size), np.arange(free.size))),
                shape=(free.size, free.size),
            )
            if max_iter is None:
                max_iter = 50 * free.size
            count = [0]

            def _cb(_):
                count[0] += 1

            x, info = cg(lap, b, rtol=tol, atol=0.0, maxiter=max_iter,
                         M=precond, callback=_cb)
            iterations = count[0]
            if info != 0:
                raise SolverError(
                    f"conjugate gradient failed to reach rtol={tol} "
                    f"within {max_iter} iterations (info={info})"
                )
            h[free] = x
    return h, iterations


def _edge_energy_and_flux(graph: Graph, h: np.ndarray, core: np.ndarray):
    e = graph.edges
    if e.size == 0:
        return 0.0, 0.0
    diff = h[e[:, 0]] - h[e[:, 1]]
    energy = float(np.dot(diff, diff))
    in_core = np.zeros(graph.vertex_count, dtype=bool)
    in_core[core] = True
    c0 = in_core[e[:, 0]]
    c1 = in_core[e[:, 1]]
    boundary = c0 ^ c1
    signed = np.where(c0[boundary], diff[boundary], -diff[boundary])
    return energy, float(signed.sum())


def solve_capacitor(
    graph_like,
    capacitor: Capacitor,
    tol: float = 1e-10,
    max_iter: int | None = None,
) -> PotentialSolution:
    """Capacity of (A, Omega) via the discrete-harmonic minimizer.

    h solves the Dirichlet problem (1 on A, 0 off Omega, harmonic on
    Omega \\ A, CG with Jacobi preconditioning); capacity = 2 * energy.
    The boundary flux out of A equals the energy for the exact minimizer
    and is checked here as a convergence certificate.
    """
    graph = _as_graph(graph_like)
    if capacitor.omega.size and capacitor.omega.max() >= graph.vertex_count:
        raise ParameterError("capacitor does not fit in the graph")
    h, iterations = _harmonic_solve(graph, capacitor.A, capacitor.omega, tol, max_iter)
    energy, flux = _edge_energy_and_flux(graph, h, capacitor.A)
    deg = graph.degrees.astype(np.float64)
    adj = csr_matrix(
        (np.ones(graph.indices.shape[0]), graph.indices, graph.indptr),
        shape=(graph.vertex_count, graph.vertex_count),
    )
    lap_h = deg * h - adj @ h
    free_mask = np.zeros(graph.vertex_count, dtype=bool)
    free_mask[capacitor.omega] = True
    free_mask[capacitor.A] = False
    residual = float(np.max(np.abs(lap_h[free_mask]))) if free_mask.any() else 0.0
    if abs(energy - flux) > 1e-8 * max(energy, 1e-30):
        raise SolverError(
            f"energy-flux duality violated ({energy} vs {flux}); tighten tol"
        )
    return PotentialSolution(
        h=h,
        energy=energy,
        capacity=2.0 * energy,
        flux=flux,
        residual=residual,
        iterations=iterations,
    )


def effective_resistance(graph_like, A, B, tol: float = 1e-10) -> float:
    """R(A, B) = 1 / (minimal per-edge energy with h=1 on A, h=0 on B).

    Equals 2 / cap_{V \\ B}(A) by construction.  Returns inf when no path
    connects A to B.
    """
    graph = _as_graph(graph_like)
    A = np.unique(np.asarray(A, dtype=np.int64))
    B = np.unique(np.asarray(B, dtype=np.int64))
    if A.size == 0 or B.size == 0:
        raise ParameterError("A and B must be nonempty")
    if np.intersect1d(A, B).size:
        raise ParameterError("A and B must be disjoint")
    from .components import label_components

    labels = label_components(graph).label
    if not np.intersect1d(np.unique(labels[A]), np.unique(labels[B])).size:
        return math.inf
    allowed = np.nonzero(~np.isin(np.arange(graph.vertex_count), B))[0]
    h, _ = _harmonic_solve(graph, A, allowed, tol, None)
    energy, _ = _edge_energy_and_flux(graph, h, A)
    if energy <= 0:
        return math.inf
    return 1.0 / energy


# ---------------------------------------------------------------------------
# lattice cutsets and tilings


def lattice_shell_edge_count(d: int, radius: int) -> int:
    """Exact number of lattice edges from the linf-sphere of the given
    radius to the sphere of radius + 1."""
    if radius < 0:
        raise ParameterError("radius must be >= 0")
    if radius == 0:
        return 2 * d
    axes = [np.arange(-radius, radius + 1, dtype=np.int64)] * d
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=-1)
    shell = pts[np.max(np.abs(pts), axis=1) == radius]
    count = 0
    for axis in range(d):
        for step in (-1, 1):
            moved = shell.copy()
            moved[:, axis] += step
            count += int(np.sum(np.max(np.abs(moved), axis=1) == radius + 1))
    return count


def nash_williams_bound(d: int, m: int, n: int) -> float:
    """Cutset lower bound for R(B_m, B_n^c): sum of 1 / (exact number of
    edges crossing each linf shell between radius m and n)."""
    if not 0 <= m < n:
        raise ParameterError("need 0 <= m < n")
    return sum(1.0 / lattice_shell_edge_count(d, l) for l in range(m, n))


def lattice_ball_ids(d: int, n: int, radius: float, center=None) -> np.ndarray:
    """Vertex ids of the linf-ball of the given radius inside the box."""
    from .lattice import linearize

    r = int(math.floor(radius))
    axes = [np.arange(-r, r + 1, dtype=np.int64)] * d
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=-1)
    if center is not None:
        pts = pts + np.asarray(center, dtype=np.int64)
    keep = np.all(np.abs(pts) <= n, axis=1)
    return np.unique(linearize(pts[keep], n))


def lattice_resistance_ball_to_exterior(d: int, m: int, n: int, tol: float = 1e-10) -> float:
    """Lattice resistance between the closed ball B_m and {|x|_inf >= n}.

    The exterior is an equipotential, so it suffices to solve on the box
    of radius n with the outermost shell grounded.  The shell cutsets
    crossed are exactly those counted by :func:`nash_williams_bound`.
    """
    if not 0 <= m < n:
        raise ParameterError("need 0 <= m < n")
    env = nearest_neighbour_lattice(d, n)
    inner = lattice_ball_ids(d, n, m)
    coords = displacement_grid(d, n)
    from .lattice import linearize

    outer_pts = coords[np.max(np.abs(coords), axis=1) == n]
    outer = np.unique(linearize(outer_pts, n))
    return effective_resistance(env.graph, inner, outer, tol=tol)


def zd_tiling_capacity_sum(d: int, n: int, t: int, lam: float, tol: float = 1e-10):
    """Capacity sum for the translation tiling of the box by side-2*sqrt(t)
    boxes with inner cores shrunk by the factor (1 - 1/lam).

    Capacitors live on the lattice: each tile is solved on a local box
    with one ring of grounded exterior sites.  Every tile is an exact
    translate of the same capacitor, so one representative is solved and
    scaled by the tile count.  Returns a dict with the sum, tile count,
    and the ratio to n^d / t.
    """
    if lam <= 1:
        raise ParameterError("tiling requires lam > 1")
    root = math.sqrt(t)
    if n < root:
        raise ParameterError("tiling requires n >= sqrt(t)")
    r_out = max(1, int(math.floor(root)))
    r_in = int(math.floor((1.0 - 1.0 / lam) * root))
    r_in = min(max(r_in, 0), r_out)
    step = 2 * r_out + 1
    reach = n - r_out
    if reach < 0:
        raise ParameterError("box too small to hold one tile")
    per_axis = (2 * reach) // step + 1
    centers_1d = -reach + step * np.arange(per_axis, dtype=np.int64)
    k = per_axis**d

    # one representative solve on a local box with a grounded outer ring
    env = nearest_neighbour_lattice(d, r_out + 1)
    omega = lattice_ball_ids(d, r_out + 1, r_out)
    if r_in > 0:
        core = lattice_ball_ids(d, r_out + 1, r_in)
    else:
        core = lattice_ball_ids(d, r_out + 1, 0)
    solution = solve_capacitor(env.graph, Capacitor(A=core, omega=omega), tol=tol)
    total = k * solution.capacity
    return {
        "capacity_sum": total,
        "tile_capacity": solution.capacity,
        "tile_count": int(k),
        "outer_radius": r_out,
        "inner_radius": r_in,
        "ratio_to_volume_over_t": total / (float(n) ** d / t),
        "centers_1d": centers_1d,
    }


__all__ = [
    "Capacitor",
    "CutoffSpec",
    "PotentialSolution",
    "dirichlet_energy",
    "effective_resistance",
    "energy_breakdown",
    "exact_energy_covariance",
    "expected_cutoff_energy",
    "lattice_ball_ids",
    "lattice_resistance_ball_to_exterior",
    "lattice_shell_edge_count",
    "nash_williams_bound",
    "solve_capacitor",
    "zd_tiling_capacity_sum",
]
