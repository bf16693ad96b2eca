"""Lattice geometry and exact lattice-sum helpers.

Boxes are always the integer boxes [-n, n]^d.  Vertices of a box are
addressed by the row-major linearization  x -> sum_i (x_i + n) * (2n+1)^i,
which is the index layout used throughout the package and in the binary
environment format.

The tail-sum routines evaluate sums of f(|v|^-s) over all lattice sites
with |v| > R in closed form (Hurwitz zeta / Dirichlet beta), so truncated
lattice series can be completed analytically instead of merely bounded.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import zeta as hurwitz_zeta

from .errors import DivergenceError, ParameterError

NORM_EUCLIDEAN = "euclidean"
NORM_LINF = "linf"
_NORMS = (NORM_EUCLIDEAN, NORM_LINF)


def check_norm(norm: str) -> str:
    if norm not in _NORMS:
        raise ParameterError(f"unknown norm {norm!r}; expected one of {_NORMS}")
    return norm


def vector_norm(v: np.ndarray, norm: str) -> np.ndarray:
    """Norm of displacement vectors, applied along the last axis."""
    v = np.asarray(v, dtype=np.float64)
    if norm == NORM_EUCLIDEAN:
        return np.sqrt(np.sum(v * v, axis=-1))
    if norm == NORM_LINF:
        return np.max(np.abs(v), axis=-1)
    raise ParameterError(f"unknown norm {norm!r}")


def box_vertex_count(d: int, n: int) -> int:
    return (2 * n + 1) ** d


def linearize(coords: np.ndarray, n: int) -> np.ndarray:
    """Map coordinates in [-n, n]^d to linear indices, row-major in axis 0."""
    coords = np.asarray(coords, dtype=np.int64)
    if coords.ndim == 1:
        coords = coords[None, :]
    side = 2 * n + 1
    strides = side ** np.arange(coords.shape[-1], dtype=np.int64)
    return ((coords + n) * strides).sum(axis=-1)


def delinearize(ids: np.ndarray, d: int, n: int) -> np.ndarray:
    """Inverse of :func:`linearize`; returns an (len(ids), d) array."""
    ids = np.asarray(ids, dtype=np.int64)
    side = 2 * n + 1
    out = np.empty(ids.shape + (d,), dtype=np.int64)
    rem = ids.copy()
    for i in range(d):
        out[..., i] = rem % side - n
        rem //= side
    return out


def displacement_grid(d: int, radius: int) -> np.ndarray:
    """All nonzero integer vectors v with |v|_inf <= radius, shape (K, d)."""
    axes = [np.arange(-radius, radius + 1, dtype=np.int64)] * d
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=-1)
    keep = np.any(pts != 0, axis=-1)
    return pts[keep]


def shell_polynomial(d: int) -> np.ndarray:
    """Coefficients c_m with #{v: |v|_inf = k} = sum_m c_m k^m for k >= 1."""
    # (2k+1)^d - (2k-1)^d expanded in powers of k
    coeffs = np.zeros(d, dtype=np.float64)
    for i in range(d):
        if (d - i) % 2 == 1:
            coeffs[i] = 2.0 * math.comb(d, i) * (2.0**i)
    return coeffs


def _dirichlet_beta(x: float) -> float:
    return 4.0 ** (-x) * (hurwitz_zeta(x, 0.25) - hurwitz_zeta(x, 0.75))


def power_tail_sum(d: int, a: float, radius: float, norm: str) -> float:
    """Exact value of sum over lattice v with |v| > radius of |v|^-a.

    Supported exactly for d = 1 (both norms), any d with the linf norm,
    and d = 2 with the euclidean norm.  Requires a > d for convergence.
    """
    check_norm(norm)
    if a <= d:
        raise DivergenceError(f"lattice power sum diverges: exponent {a} <= d={d}")
    if d == 1:
        k0 = math.floor(radius) + 1
        return 2.0 * float(hurwitz_zeta(a, k0))
    if norm == NORM_LINF:
        k0 = math.floor(radius) + 1
        coeffs = shell_polynomial(d)
        total = 0.0
        for m, c in enumerate(coeffs):
            if c != 0.0:
                total += c * float(hurwitz_zeta(a - m, k0))
        return total
    if d == 2:
        # full-plane value minus the finite disc part
        full = 4.0 * float(hurwitz_zeta(a / 2.0, 1.0)) * _dirichlet_beta(a / 2.0)
        r_int = math.floor(radius)
        if r_int >= 1:
            pts = displacement_grid(2, r_int)
            r2 = (pts.astype(np.float64) ** 2).sum(axis=1)
            inside = r2 <= radius * radius
            full -= float(np.sum(r2[inside] ** (-a / 2.0)))
        return full
    raise ParameterError(
        f"euclidean lattice tail sums are only implemented for d <= 2 (got d={d})"
    )


def weighted_probability_tail(
    d: int,
    s: float,
    radius: float,
    norm: str,
    weight: str = "p",
    rel_tol: float = 1e-14,
) -> float:
    """Sum of w(|v|^-s) over lattice sites with |v| > radius >= 1.

    weight 'p' uses w(u) = 1 - exp(-u), the long-range edge probability;
    weight 'p1mp' uses w(u) = p(1-p) = exp(-u) - exp(-2u), the Bernoulli
    variance.  Both are evaluated by expanding w as an alternating series
    in u and summing each power term with :func:`power_tail_sum`; the
    truncation remainder is driven below rel_tol of the result.
    """
    if radius < 1:
        raise ParameterError("tail sums require radius >= 1")
    if s <= d:
        raise DivergenceError(f"tail sum diverges: s={s} <= d={d}")
    total = 0.0
    for j in range(1, 60):
        if weight == "p":
            coeff = (-1.0) ** (j + 1) / math.factorial(j)
            next_mag = 1.0 / math.factorial(j + 1)
        elif weight == "p1mp":
            coeff = (-1.0) ** (j + 1) * (2.0**j - 1.0) / math.factorial(j)
            next_mag = (2.0 ** (j + 1) - 1.0) / math.factorial(j + 1)
        else:
            raise ParameterError(f"unknown weight {weight!r}")
        term = coeff * power_tail_sum(d, j * s, radius, norm)
        total += term
        # alternating and decreasing for |v|^-s <= 1, so the remainder is
        # bounded by the magnitude of the next term
        remainder = next_mag * power_tail_sum(d, (j + 1) * s, radius, norm)
        if remainder <= rel_tol * max(abs(total), 1e-300):
            return total
    raise RuntimeError("tail series failed to converge in 60 terms")
