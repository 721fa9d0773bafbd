"""Empirical measures and exact Wasserstein distances.

A uniform-weight point cloud mu_hat = (1/N) sum_i delta_{x_i} is the only
measure representation used anywhere in this library: interacting systems
see the empirical measure of the live particle positions, and the limit
law enters as a frozen large sample.  All L^k-Wasserstein computations are
exact couplings between equal-size clouds:

    W_k(mu, nu)^k = min_pi (1/N) sum_i |x_i - y_{pi(i)}|^k

over permutations pi.  In one dimension the minimum is attained by the
monotone (sorted) pairing, so W_k is a sort plus a mean; in higher
dimension it is an optimal assignment problem, solved exactly up to a
configured size cap.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import DimensionError, ParameterError

# Exact assignment is O(N^3); refuse above this size.
ASSIGNMENT_CAP = 512


class EmpiricalMeasure:
    """Uniform-weight atomic measure on a finite point cloud.

    ``points`` has shape (n, d).  Instances are immutable; derived
    statistics (means, trigonometric moments, ...) are memoised via
    :meth:`stat` so that coefficient evaluations against a shared frozen
    sample do not recompute reductions.
    """

    __slots__ = ("points", "_stats")

    def __init__(self, points):
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] == 0:
            raise DimensionError("need a non-empty (n, d) point array")
        if not np.all(np.isfinite(pts)):
            raise ParameterError("non-finite points in empirical measure")
        pts.setflags(write=False)
        self.points = pts
        self._stats = {}

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    def stat(self, key, fn):
        """Memoised statistic of the point cloud (e.g. its mean)."""
        try:
            return self._stats[key]
        except KeyError:
            val = fn(self.points)
            self._stats[key] = val
            return val

    def mean(self):
        return self.stat("mean", lambda p: p.mean(axis=0))

    def __repr__(self):
        return f"EmpiricalMeasure(n={self.n}, d={self.d})"


@dataclass(frozen=True)
class MomentEstimate:
    """Monte Carlo estimate of E|X|^k with its standard error."""

    order: float
    value: float
    replication_count: int
    std_error: float

    def __post_init__(self):
        if self.value < 0 or self.std_error < 0:
            raise ParameterError("moment value and std error must be >= 0")


def _as_measure(m) -> EmpiricalMeasure:
    return m if isinstance(m, EmpiricalMeasure) else EmpiricalMeasure(m)


def wasserstein_1d(a, b, k: float = 2.0) -> float:
    """Exact W_k between two equal-size one-dimensional empirical measures.

    For uniform atomic measures on the line the optimal coupling pairs
    order statistics, so

        W_k(a, b) = ((1/N) sum_j |x_(j) - y_(j)|^k)^(1/k).
    """
    a, b = _as_measure(a), _as_measure(b)
    if a.d != 1 or b.d != 1:
        raise DimensionError("wasserstein_1d requires d = 1")
    if a.n != b.n:
        raise DimensionError(f"sample counts differ: {a.n} vs {b.n}")
    if k < 1:
        raise ParameterError(f"order k must be >= 1, got {k}")
    # stable sort keeps duplicate atoms well-defined
    x = np.sort(a.points[:, 0], kind="stable")
    y = np.sort(b.points[:, 0], kind="stable")
    return float(np.mean(np.abs(x - y) ** k) ** (1.0 / k))


def wasserstein_assignment(a, b, k: float = 2.0) -> float:
    """Exact W_k between equal-size clouds in any dimension.

    Solves the optimal assignment problem on the cost matrix
    |x_i - y_j|^k.  Cost is O(N^3), hence the hard size cap.
    """
    a, b = _as_measure(a), _as_measure(b)
    if a.d != b.d:
        raise DimensionError(f"dimensions differ: {a.d} vs {b.d}")
    if a.n != b.n:
        raise DimensionError(f"sample counts differ: {a.n} vs {b.n}")
    if k < 1:
        raise ParameterError(f"order k must be >= 1, got {k}")
    if a.n > ASSIGNMENT_CAP:
        raise ParameterError(
            f"exact assignment refused for N={a.n} > {ASSIGNMENT_CAP} "
            "(O(N^3) cost); subsample or use wasserstein_1d for d=1"
        )
    diff = a.points[:, None, :] - b.points[None, :, :]
    cost = np.linalg.norm(diff, axis=2) ** k
    rows, cols = linear_sum_assignment(cost)
    return float(np.mean(cost[rows, cols]) ** (1.0 / k))


def empirical_moment(samples, k: float = 2.0) -> MomentEstimate:
    """Mean of |x|^k over a sample list, with standard error of the mean."""
    pts = np.asarray(samples, dtype=float)
    if pts.size == 0:
        raise ParameterError("empty sample list")
    if pts.ndim == 1:
        pts = pts[:, None]
    if k < 1:
        raise ParameterError(f"order k must be >= 1, got {k}")
    vals = np.linalg.norm(pts, axis=1) ** k
    n = vals.shape[0]
    value = float(vals.mean())
    sem = float(vals.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return MomentEstimate(order=k, value=value, replication_count=n, std_error=sem)


def subsample_indices(n_total: int, n_keep: int, seed: int) -> np.ndarray:
    """Seeded without-replacement subsample, used to evaluate W_k against
    an N-point slice of a larger frozen sample."""
    if n_keep > n_total:
        raise ParameterError(f"cannot subsample {n_keep} from {n_total}")
    gen = np.random.Generator(np.random.Philox(key=[seed, 0x5AB5]))
    return np.sort(gen.choice(n_total, size=n_keep, replace=False))
