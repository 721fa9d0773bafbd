"""Euler-Maruyama integration of interacting clouds and their coupled
limit copies.

Two systems share every driving increment (synchronous coupling):

  * the N-particle interacting system, whose coefficients see the live
    empirical measure of the pre-step positions (fully explicit scheme);
  * N "limit copies", identical recursions except that the measure
    argument is a frozen sample of the limit law, precomputed once by an
    independent large-M run (:func:`run_reference`).

Because copy i consumes the same bank stream as particle i, the gap
|X^{i,N} - X^i| isolates the mean-field approximation error: when the
interaction is switched off the two recursions coincide bit-exactly.

All mean-field reductions inside coefficient evaluations are plain numpy
sums over a fixed axis order, so results are independent of thread count.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DivergenceError, ParameterError
from .measures import EmpiricalMeasure, subsample_indices, wasserstein_1d, wasserstein_assignment
from .models import ModelSpec
from .noise import NoiseBank, TimeGrid

DIVERGENCE_THRESHOLD = 1e12


def apply_matrix(mat, vec):
    """(d,d) or (n,d,d) matrix field applied to an (n,d) vector field."""
    mat = np.asarray(mat)
    if mat.ndim == 2:
        return vec @ mat.T
    return np.einsum("nij,nj->ni", mat, vec)


def apply_diffusion(sig, dw):
    """(d,m) or (n,d,m) diffusion applied to (n,m) increments."""
    sig = np.asarray(sig)
    if sig.ndim == 2:
        return dw @ sig.T
    return np.einsum("ndm,nm->nd", sig, dw)


def check_finite(x: np.ndarray, node: int, label: str = "particle"):
    bad = ~np.isfinite(x).all(axis=1) | (np.abs(x).max(axis=1) > DIVERGENCE_THRESHOLD)
    if bad.any():
        i = int(np.argmax(bad))
        raise DivergenceError(
            f"{label} {i} diverged at node {node}: position {x[i]}")


@dataclass
class ParticleCloud:
    """Interacting-system state at one grid node."""

    positions: np.ndarray      # (N, d)
    node: int = 0

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    def measure(self) -> EmpiricalMeasure:
        return EmpiricalMeasure(self.positions)


class FrozenLaw:
    """Node-indexed large sample standing in for the limit law.

    ``positions`` has shape (n_nodes + 1, M, d).  Per-node measures are
    built lazily and cached so that coefficient-level statistics (means,
    trig moments) are computed once per node no matter how many ladder
    runs reuse the same reference.
    """

    def __init__(self, positions: np.ndarray, grid: TimeGrid, analytic=None):
        if positions.ndim != 3 or positions.shape[0] != grid.n_steps + 1:
            raise ParameterError("frozen law needs positions (n_nodes+1, M, d)")
        self.positions = positions
        self.grid = grid
        self.analytic = analytic
        self._measures: dict[int, EmpiricalMeasure] = {}
        self._subsample_idx: dict[tuple, np.ndarray] = {}

    @property
    def size(self) -> int:
        return self.positions.shape[1]

    def measure(self, node: int) -> EmpiricalMeasure:
        if node not in self._measures:
            self._measures[node] = EmpiricalMeasure(self.positions[node])
        return self._measures[node]

    def subsample(self, node: int, n: int, seed: int) -> np.ndarray:
        key = (n, seed)
        if key not in self._subsample_idx:
            self._subsample_idx[key] = subsample_indices(self.size, n, seed)
        return self.positions[node][self._subsample_idx[key]]


@dataclass
class LimitCloud:
    """Limit-copy state; same bank streams as the particle cloud."""

    positions: np.ndarray      # (N, d)
    frozen: FrozenLaw
    node: int = 0

    @property
    def n(self) -> int:
        return self.positions.shape[0]


def euler_step(model: ModelSpec, x: np.ndarray, mu: EmpiricalMeasure,
               t: float, dt: float, dw: np.ndarray, node: int,
               label: str = "particle") -> np.ndarray:
    b = model.drift(t, x, mu)
    sig = model.diffusion(t, x, mu)
    x_new = x + b * dt + apply_diffusion(sig, dw)
    check_finite(x_new, node + 1, label)
    return x_new


def step_particles(model: ModelSpec, cloud: ParticleCloud,
                   bank: NoiseBank, grid: TimeGrid) -> ParticleCloud:
    """Advance the interacting system one node, using the empirical
    measure of the pre-step positions."""
    n = cloud.node
    if n >= grid.n_steps:
        raise ParameterError("cloud already at the final node")
    x = cloud.positions
    mu = EmpiricalMeasure(x)
    x_new = euler_step(model, x, mu, grid.node(n), grid.dt,
                       bank.step(n)[: cloud.n], n, "particle")
    return ParticleCloud(positions=x_new, node=n + 1)


def step_limit_copies(model: ModelSpec, limit: LimitCloud,
                      bank: NoiseBank, grid: TimeGrid) -> LimitCloud:
    """Advance the limit copies one node against the frozen law,
    driven by the same increments as the interacting system."""
    n = limit.node
    if n >= grid.n_steps:
        raise ParameterError("cloud already at the final node")
    mu = limit.frozen.measure(n)
    x_new = euler_step(model, limit.positions, mu, grid.node(n), grid.dt,
                       bank.step(n)[: limit.n], n, "limit copy")
    return LimitCloud(positions=x_new, frozen=limit.frozen, node=n + 1)


def run_reference(model: ModelSpec, m_particles: int, bank_ref: NoiseBank,
                  grid: TimeGrid, init_sampler) -> FrozenLaw:
    """Large-M interacting run whose empirical flow is the frozen-law
    proxy for the limit distribution.

    ``bank_ref`` must be independent of any bank used for coupled runs.
    ``init_sampler(n)`` draws initial positions.  When the model exposes
    closed-form marginal moments they ride along on the result for
    oracle checks.
    """
    if bank_ref.n_particles < m_particles:
        raise ParameterError("reference bank smaller than requested M")
    x = np.asarray(init_sampler(m_particles), dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    out = np.empty((grid.n_steps + 1, m_particles, model.d))
    out[0] = x
    cloud = ParticleCloud(positions=x, node=0)
    for n in range(grid.n_steps):
        cloud = step_particles(model, cloud, bank_ref, grid)
        out[n + 1] = cloud.positions
    return FrozenLaw(out, grid, analytic=model.analytic_moments)


@dataclass
class MetricsConfig:
    """How path statistics are accumulated."""

    k: float = 2.0
    subsample_seed: int = 0
    # "frozen": W_k against an N-point seeded subsample of the frozen law.
    # "limit_cloud": W_k against the coupled limit copies themselves.
    wass_target: str = "frozen"
    track_wasserstein: bool = True


@dataclass
class PathStats:
    """Running pathwise statistics of a coupled pair of clouds."""

    k: float
    sup_gap: np.ndarray = None            # (N,) running max |X^{i,N} - X^i|
    wass_per_node: list = field(default_factory=list)

    def sup_gap_moment(self) -> np.ndarray:
        return self.sup_gap ** self.k


def collect_path_stats(particles: ParticleCloud, limits: LimitCloud,
                       metrics_cfg: MetricsConfig,
                       stats: PathStats | None = None) -> PathStats:
    """Fold one synchronized node into the running statistics."""
    if particles.node != limits.node:
        raise ParameterError("particle and limit clouds out of sync")
    gap = np.linalg.norm(particles.positions - limits.positions, axis=1)
    if stats is None:
        stats = PathStats(k=metrics_cfg.k, sup_gap=gap.copy())
    else:
        np.maximum(stats.sup_gap, gap, out=stats.sup_gap)
    if metrics_cfg.track_wasserstein:
        n = particles.n
        if metrics_cfg.wass_target == "limit_cloud":
            target = limits.positions
        else:
            target = limits.frozen.subsample(particles.node, n,
                                             metrics_cfg.subsample_seed)
        d = particles.positions.shape[1]
        if d == 1:
            w = wasserstein_1d(particles.positions, target, metrics_cfg.k)
        else:
            w = wasserstein_assignment(particles.positions, target, metrics_cfg.k)
        stats.wass_per_node.append(w)
    return stats
