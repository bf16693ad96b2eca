"""Capacitor tilings of box components and the return-probability bound.

Builds grid tilings (outer boxes with shrunken cores) at the scale
dictated by the walk time and regime, measures the three tiling bounds
(piece size, stationary mass captured by the cores, capacity sum), and
verifies the finite-graph inequality that converts capacitor data into a
lower bound on the mass of vertices with large return probability.  That
inequality holds on every finite connected graph, so it doubles as the
strongest oracle in the test suite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix

from .components import BoxComponent, label_components
from .errors import ParameterError
from .graph import Graph, LrpParams, sample_environment
from .potential import Capacitor, solve_capacitor

REGIME_STABLE = "stable"
REGIME_GAUSSIAN = "gaussian"
REGIME_CRITICAL = "critical"

LAMBDA_LOG = "log_t"
LAMBDA_CONSTANT = "constant"


@dataclass(frozen=True)
class RegimeParams:
    """Tiling scales and exponents for one heat-kernel regime."""

    regime: str
    d: int
    s: float
    kappa: float = 3.0
    lambda_mode: str = LAMBDA_LOG
    lambda0: float = 8.0

    def __post_init__(self):
        if self.lambda_mode not in (LAMBDA_LOG, LAMBDA_CONSTANT):
            raise ParameterError(f"unknown lambda mode {self.lambda_mode!r}")
        d, s = self.d, self.s
        if self.regime == REGIME_STABLE:
            if not d < s < min(d + 2, 2 * d):
                raise ParameterError(
                    f"stable regime needs s in (d, min(d+2, 2d)); got d={d}, s={s}"
                )
        elif self.regime == REGIME_GAUSSIAN:
            if d < 2 or s <= d + 2:
                raise ParameterError(f"gaussian tiling needs d >= 2, s > d+2; got d={d}, s={s}")
        elif self.regime == REGIME_CRITICAL:
            if d < 2 or s != d + 2:
                raise ParameterError(f"critical tiling needs d >= 2, s = d+2; got d={d}, s={s}")
            if self.lambda_mode == LAMBDA_CONSTANT:
                raise ParameterError("critical tiling has no constant-lambda variant")
        else:
            raise ParameterError(f"unknown regime {self.regime!r}")
        if self.lambda_mode == LAMBDA_CONSTANT and self.lambda0 < 2:
            raise ParameterError("constant lambda requires lambda0 >= 2")
        if self.kappa <= 0:
            raise ParameterError("kappa must be positive")

    @property
    def gamma(self) -> float:
        if self.regime == REGIME_STABLE:
            return self.d / (self.s - self.d)
        return self.d / 2.0

    @property
    def deltas(self) -> tuple:
        """(delta0, delta1, delta2, delta3); delta0 is unconstrained."""
        d, s, k = self.d, self.s, self.kappa
        if self.lambda_mode == LAMBDA_CONSTANT:
            if self.regime == REGIME_STABLE:
                return (math.inf, 2 * d / (s - d), 1.0, 1.0)
            return (math.inf, float(d), 1.0, 1.0)
        if self.regime == REGIME_STABLE:
            return (math.inf, 2 * d * k / (s - d), k, k)
        if self.regime == REGIME_GAUSSIAN:
            return (math.inf, d * k, k, k)
        return (math.inf, d * (k + 0.5), k, k)

    def lambda_value(self, t: int) -> float:
        if self.lambda_mode == LAMBDA_CONSTANT:
            return self.lambda0
        return max(1.0, math.log(t))

    def scales(self, t: int) -> tuple:
        """Outer radius N and ramp width M for walk time t (floats)."""
        if t < 2:
            raise ParameterError("tiling scales need t >= 2")
        d, s, k = self.d, self.s, self.kappa
        if self.lambda_mode == LAMBDA_CONSTANT:
            lam = self.lambda0
            if self.regime == REGIME_STABLE:
                N = (t * lam * lam) ** (1.0 / (s - d))
            else:
                N = math.sqrt(t) * lam
            return N, N / lam
        logt = math.log(t)
        if self.regime == REGIME_STABLE:
            N = t ** (1.0 / (s - d)) * logt ** (2 * k / (s - d))
        elif self.regime == REGIME_GAUSSIAN:
            N = math.sqrt(t) * logt**k
        else:
            N = math.sqrt(t) * logt ** (k + 0.5)
        M = N / max(1.0, math.log(N)) ** k
        return N, M


@dataclass
class CapacitorDecomposition:
    """Grid tiling of the inner box into capacitors on a component."""

    t: int
    N: int
    M: int
    centers: np.ndarray
    omegas: list = field(repr=False)
    cores: list = field(repr=False)
    dropped_empty: int = 0

    @property
    def k(self) -> int:
        return len(self.omegas)


def build_decomposition(component: BoxComponent, t: int, regime: RegimeParams) -> CapacitorDecomposition:
    """Lay disjoint side-(2N+1) boxes over the box interior and intersect
    with the component; cores are the boxes shrunk by the ramp width M."""
    env = component.environment
    n = env.params.n
    N_f, M_f = regime.scales(t)
    N = max(1, int(round(N_f)))
    M = min(max(1, int(round(M_f))), N)
    if N >= n / 2:
        raise ParameterError(
            f"tiling scale N={N} does not fit box radius n={n}; need n > 2N"
        )
    side = 2 * N + 1
    per_axis = (2 * n + 1) // side
    if per_axis < 1:
        raise ParameterError("no tile fits in the box")
    coords = component.coordinates()
    d = env.params.d
    axis_idx = (coords + n) // side
    valid = np.all(axis_idx < per_axis, axis=1)
    flat = np.zeros(coords.shape[0], dtype=np.int64)
    for i in range(d):
        flat = flat * per_axis + axis_idx[:, i]
    flat[~valid] = -1

    centers_1d = -n + N + side * np.arange(per_axis, dtype=np.int64)
    omegas, cores, centers = [], [], []
    dropped = 0
    order = np.argsort(flat, kind="stable")
    sorted_flat = flat[order]
    start = int(np.searchsorted(sorted_flat, 0, side="left"))
    boundaries = np.nonzero(np.diff(sorted_flat[start:]))[0] + 1
    groups = np.split(order[start:], boundaries)
    present = {}
    for grp in groups:
        if grp.size:
            present[int(flat[grp[0]])] = grp
    for box_id in range(per_axis**d):
        members = present.get(box_id)
        if members is None or members.size == 0:
            dropped += 1
            continue
        digits = []
        rem = box_id
        for _ in range(d):
            digits.append(rem % per_axis)
            rem //= per_axis
        center = centers_1d[np.asarray(digits[::-1], dtype=np.int64)]
        inner = np.all(np.abs(coords[members] - center) <= N - M, axis=1)
        omegas.append(np.sort(members))
        cores.append(np.sort(members[inner]))
        centers.append(center)
    if len(omegas) > component.vertex_count:
        raise ParameterError("tiling produced more pieces than vertices")
    return CapacitorDecomposition(
        t=t,
        N=N,
        M=M,
        centers=np.asarray(centers, dtype=np.int64).reshape(-1, d),
        omegas=omegas,
        cores=cores,
        dropped_empty=dropped,
    )


@dataclass
class TilingBoundsReport:
    t: int
    N: int
    M: int
    k: int
    lam: float
    max_omega: int
    bound_max_omega: float
    pi_sum: float
    bound_pi_sum: float
    cap_sum: float
    bound_cap_sum: float
    pass_size: bool
    pass_mass: bool
    pass_capacity: bool

    def as_dict(self):
        return {
            "t": self.t, "N": self.N, "M": self.M, "k": self.k, "lambda": self.lam,
            "measured": {
                "max_omega": self.max_omega,
                "pi_sum": self.pi_sum,
                "cap_sum": self.cap_sum,
            },
            "bounds": {
                "max_omega": self.bound_max_omega,
                "pi_sum": self.bound_pi_sum,
                "cap_sum": self.bound_cap_sum,
            },
            "ratios": {
                "max_omega": self.max_omega / self.bound_max_omega,
                "pi_deficit": (1.0 - self.pi_sum) / max(1.0 - self.bound_pi_sum, 1e-300),
                "cap_sum": self.cap_sum / max(self.bound_cap_sum, 1e-300),
            },
            "pass": {
                "size": self.pass_size,
                "mass": self.pass_mass,
                "capacity": self.pass_capacity,
            },
        }


def evaluate_tiling_bounds(
    component: BoxComponent,
    decomposition: CapacitorDecomposition,
    regime: RegimeParams,
    alpha: float = 1.0,
    tol: float = 1e-10,
) -> TilingBoundsReport:
    """Measure the three tiling quantities against their scale bounds."""
    graph = component.graph
    deg = graph.degrees.astype(np.float64)
    two_e = float(deg.sum())
    if two_e == 0:
        raise ParameterError("component has no edges")
    t = decomposition.t
    lam = regime.lambda_value(t)
    _, d1, d2, d3 = regime.deltas

    max_omega = max(len(o) for o in decomposition.omegas)
    bound_a = alpha * t**regime.gamma * lam**d1

    pi_sum = float(sum(deg[core].sum() for core in decomposition.cores)) / two_e
    bound_b = 1.0 - alpha * lam ** (-d2)

    cap_sum = 0.0
    for core, omega in zip(decomposition.cores, decomposition.omegas):
        if core.size == 0:
            continue
        sol = solve_capacitor(graph, Capacitor(A=core, omega=omega), tol=tol)
        cap_sum += sol.capacity
    bound_c = 2.0 * alpha * graph.edge_count / t * lam ** (-d3)

    return TilingBoundsReport(
        t=t, N=decomposition.N, M=decomposition.M, k=decomposition.k, lam=lam,
        max_omega=max_omega, bound_max_omega=bound_a,
        pi_sum=pi_sum, bound_pi_sum=bound_b,
        cap_sum=cap_sum, bound_cap_sum=bound_c,
        pass_size=max_omega <= bound_a,
        pass_mass=pi_sum >= bound_b,
        pass_capacity=cap_sum <= bound_c,
    )


def top_mass_fraction(graph_like, epsilon: float) -> float:
    """Largest stationary mass carried by at most epsilon * |V| vertices.

    Degrees are nonnegative, so the greedy choice (sum the largest
    floor(epsilon |V|) degrees) attains the maximum exactly.
    """
    if epsilon <= 0:
        raise ParameterError("epsilon must be positive")
    graph = graph_like.graph if hasattr(graph_like, "graph") else graph_like
    deg = graph.degrees.astype(np.float64)
    two_e = float(deg.sum())
    if two_e == 0:
        raise ParameterError("stationary measure undefined on an empty graph")
    m = int(math.floor(epsilon * graph.vertex_count))
    if m >= graph.vertex_count:
        return 1.0
    if m == 0:
        return 0.0
    top = np.partition(deg, -m)[-m:]
    return float(top.sum() / two_e)


def _all_return_probabilities(graph: Graph, t: int, dense_threshold: int) -> np.ndarray:
    """p_{2t}(x, x) for every vertex x."""
    deg = graph.degrees.astype(np.float64)
    v = graph.vertex_count
    if v <= dense_threshold:
        adj = np.zeros((v, v))
        for u in range(v):
            adj[u, graph.neighbors(u)] = 1.0
        scale = 1.0 / np.sqrt(deg)
        sym = adj * scale[:, None] * scale[None, :]
        w, q = np.linalg.eigh(sym)
        # P_x(X_2t = x) = sum_k w_k^{2t} q[x,k]^2  (similarity transform is
        # diagonal-preserving), then divide by deg for the kernel
        powers = w ** (2 * t)
        back = np.einsum("xk,k,xk->x", q, powers, q)
        return back / deg
    adj = csr_matrix(
        (np.ones(graph.indices.shape[0]), graph.indices, graph.indptr), shape=(v, v)
    )
    out = np.empty(v)
    for x in range(v):
        mu = np.zeros(v)
        mu[x] = 1.0
        for _ in range(2 * t):
            mu = adj @ (mu / deg)
        out[x] = mu[x] / deg[x]
    return out


def capacity_return_inequality(
    graph_like,
    capacitors,
    t: int,
    epsilon: float,
    dense_threshold: int = 4000,
    tol: float = 1e-10,
):
    """Both sides of the finite-graph return-probability bound.

    lhs: stationary mass of {x : p_{2t}(x,x) >= epsilon |V| / (8 M |E|)}
    with M = max |Omega_i|; rhs: -2 pi*(epsilon) + sum_i pi(A_i)
    - (t / |E|) sum_i cap(A_i, Omega_i).  Returns (lhs, rhs, holds) plus a
    detail dict; holds must be True on every valid input.
    """
    graph = graph_like.graph if hasattr(graph_like, "graph") else graph_like
    if t < 1:
        raise ParameterError("t must be >= 1")
    if epsilon <= 0:
        raise ParameterError("epsilon must be positive")
    labeling = label_components(graph)
    if len(labeling.component_sizes) != 1:
        raise ParameterError("the inequality requires a connected graph")
    seen = np.zeros(graph.vertex_count, dtype=bool)
    for cap in capacitors:
        if np.any(seen[cap.omega]):
            raise ParameterError("capacitor outer sets must be pairwise disjoint")
        seen[cap.omega] = True

    deg = graph.degrees.astype(np.float64)
    two_e = float(deg.sum())
    e_count = graph.edge_count
    m_size = max(int(cap.omega.size) for cap in capacitors)
    p_diag = _all_return_probabilities(graph, t, dense_threshold)
    threshold = epsilon * graph.vertex_count / (8.0 * m_size * e_count)
    lhs = float(deg[p_diag >= threshold].sum() / two_e)

    pi_star = top_mass_fraction(graph, epsilon)
    pi_cores = float(sum(deg[cap.A].sum() for cap in capacitors) / two_e)
    cap_sum = 0.0
    for cap in capacitors:
        cap_sum += solve_capacitor(graph, cap, tol=tol).capacity
    rhs = -2.0 * pi_star + pi_cores - t / e_count * cap_sum
    holds = lhs >= rhs - 1e-9
    detail = {
        "threshold": threshold,
        "pi_star": pi_star,
        "pi_cores": pi_cores,
        "cap_sum": cap_sum,
        "max_omega": m_size,
    }
    return lhs, rhs, holds, detail


def graph_moment_scan(
    params: LrpParams,
    n_list,
    reps: int,
    epsilon_list,
    max_edges: int = 200_000_000,
):
    """Monte Carlo scan of the two environment moments that feed the
    return-probability machinery: E[(|E_n|/|V_n|)^2] across box sizes and
    E[pi*(eps)^2]/eps across mass fractions.
    """
    if reps < 30:
        raise ParameterError("moment scans need reps >= 30")
    eps = [float(e) for e in epsilon_list]
    edge_rows = []
    mass_rows = []
    for n in n_list:
        ratio_sq = np.empty(reps)
        top_sq = np.empty((reps, len(eps)))
        for r in range(reps):
            p = LrpParams(
                d=params.d, s=params.s, q=params.q, norm=params.norm, n=int(n),
                long_range_enabled=params.long_range_enabled,
                seed=(params.seed + 0xBF58476D1CE4E5B9 * (r + 1)) % 2**64,
            )
            env = sample_environment(p, max_edges=max_edges)
            labeling = label_components(env)
            members = labeling.label == labeling.largest_id
            v_n = int(members.sum())
            e = env.graph.edges
            inside = members[e[:, 0]] & members[e[:, 1]]
            e_n = int(inside.sum())
            ratio_sq[r] = (e_n / v_n) ** 2
            deg_in = np.bincount(
                np.concatenate([e[inside, 0], e[inside, 1]]),
                minlength=env.vertex_count,
            )[members].astype(np.float64)
            two_e = deg_in.sum()
            for j, ev in enumerate(eps):
                m = int(math.floor(ev * v_n))
                if m >= v_n:
                    top_sq[r, j] = 1.0
                elif m == 0 or two_e == 0:
                    top_sq[r, j] = 0.0
                else:
                    top = np.partition(deg_in, -m)[-m:]
                    top_sq[r, j] = (top.sum() / two_e) ** 2
        edge_rows.append({
            "n": int(n), "reps": reps,
            "edge_ratio_sq_mean": float(ratio_sq.mean()),
            "edge_ratio_sq_stderr": float(ratio_sq.std(ddof=1) / math.sqrt(reps)),
        })
        for j, ev in enumerate(eps):
            col = top_sq[:, j]
            mass_rows.append({
                "n": int(n), "epsilon": ev, "reps": reps,
                "top_mass_sq_over_eps_mean": float(col.mean() / ev),
                "top_mass_sq_over_eps_stderr": float(col.std(ddof=1) / math.sqrt(reps) / ev),
            })
    means = [row["edge_ratio_sq_mean"] for row in edge_rows]
    upper = means[len(means) // 2 :]
    plateau = bool(max(upper) <= 1.5 * float(np.median(means))) if means else True
    flags = {
        "edge_ratio_plateau": plateau,
        "top_mass_bounded": bool(
            max(row["top_mass_sq_over_eps_mean"] for row in mass_rows) < math.inf
        ),
    }
    return {"edge_ratio": edge_rows, "top_mass": mass_rows, "flags": flags}


__all__ = [
    "CapacitorDecomposition",
    "RegimeParams",
    "TilingBoundsReport",
    "build_decomposition",
    "capacity_return_inequality",
    "evaluate_tiling_bounds",
    "graph_moment_scan",
    "top_mass_fraction",
    "REGIME_STABLE",
    "REGIME_GAUSSIAN",
    "REGIME_CRITICAL",
    "LAMBDA_LOG",
    "LAMBDA_CONSTANT",
]
