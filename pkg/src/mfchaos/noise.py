"""Seeded Brownian increment banks with the coupling structure the
convergence checks require.

The same driving path W^i must be shared by particle i of the interacting
system, its limit copy, and every derivative flow attached to that index.
Increments are therefore generated from counter-based (Philox) streams
keyed by (seed, particle index):

  * identical (seed, N, n_steps, dt, m) reproduce bit-identical banks
    regardless of thread count or fill order;
  * stream i depends only on (seed, i), so extending a bank from N to N'
    particles leaves streams 0..N-1 bit-exact ("prefix stability") and
    rate ladders at growing N share their driving noise.

Banks at different dt are independent by default: halving dt does NOT
refine the same Brownian path.  When a refinement coupling is needed
(e.g. dt-halving studies of scheme error), generate the fine bank first
and derive the coarse one with :func:`coarsen_bank`, which sums adjacent
increments and therefore represents the same path on the coarse grid.

Reproducibility is promised per release: the normal generator is numpy's
(ziggurat) and is fixed by the pinned numpy version, not across versions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError

# Namespace tags for deriving independent sub-seeds from one user seed.
TAG_REFERENCE = 0x1EF
TAG_AUX = 0x2AD
TAG_REPLICATION = 0x3E9
TAG_INIT = 0x417
TAG_SUBSAMPLE = 0x5AB


def derive_seed(seed: int, tag: int, index: int = 0) -> int:
    """Deterministic 64-bit sub-seed for an independent noise context."""
    ss = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1),
                                spawn_key=(int(tag), int(index)))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid t_n = n * dt on [0, T] with T = n_steps * dt."""

    horizon: float
    n_steps: int

    def __post_init__(self):
        if self.horizon <= 0 or self.n_steps <= 0:
            raise ParameterError("horizon and n_steps must be positive")

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.n_steps + 1)

    def node(self, idx: int) -> float:
        return idx * self.dt


class NoiseBank:
    """Increments of N independent m-dimensional Brownian motions.

    ``increments[i, n]`` is W^i_{t_{n+1}} - W^i_{t_n} ~ Normal(0, dt*I_m).
    Construction fills each particle stream independently from
    Philox(key=(seed, i)); readers are lock-free.
    """

    __slots__ = ("seed", "n_particles", "n_steps", "dt", "m", "increments")

    def __init__(self, seed, n_particles, n_steps, dt, m, increments):
        self.seed = int(seed)
        self.n_particles = int(n_particles)
        self.n_steps = int(n_steps)
        self.dt = float(dt)
        self.m = int(m)
        increments.setflags(write=False)
        self.increments = increments

    def stream(self, i: int) -> np.ndarray:
        """All increments of particle i, shape (n_steps, m)."""
        return self.increments[i]

    def step(self, n: int) -> np.ndarray:
        """Increments of every particle over step n, shape (N, m)."""
        return self.increments[:, n, :]


def _fill_streams(seed: int, lo: int, hi: int, n_steps: int, dt: float, m: int) -> np.ndarray:
    out = np.empty((hi - lo, n_steps, m))
    scale = np.sqrt(dt)
    for i in range(lo, hi):
        gen = np.random.Generator(np.random.Philox(key=[seed, i]))
        out[i - lo] = gen.standard_normal((n_steps, m)) * scale
    return out


def make_noise_bank(seed: int, n_particles: int, n_steps: int, dt: float, m: int = 1) -> NoiseBank:
    """Deterministic bank of N x n_steps Brownian increments."""
    if n_particles <= 0 or n_steps <= 0 or m <= 0:
        raise ParameterError("particle, step and dimension counts must be positive")
    if dt <= 0:
        raise ParameterError("dt must be positive")
    inc = _fill_streams(int(seed), 0, n_particles, n_steps, dt, m)
    return NoiseBank(seed, n_particles, n_steps, dt, m, inc)


def extend_bank(bank: NoiseBank, extra_particles: int) -> NoiseBank:
    """Bank with additional particle streams; first N streams bit-exact."""
    if extra_particles < 0:
        raise ParameterError("extra_particles must be >= 0")
    if extra_particles == 0:
        return bank
    new = _fill_streams(bank.seed, bank.n_particles,
                        bank.n_particles + extra_particles,
                        bank.n_steps, bank.dt, bank.m)
    inc = np.concatenate([bank.increments, new], axis=0)
    return NoiseBank(bank.seed, bank.n_particles + extra_particles,
                     bank.n_steps, bank.dt, bank.m, inc)


def coarsen_bank(bank: NoiseBank, factor: int) -> NoiseBank:
    """Same Brownian paths on a grid coarsened by ``factor``.

    Adjacent groups of ``factor`` increments are summed, so the coarse
    bank's increments are exactly the fine paths read at the coarse
    nodes.  This is the refinement coupling used by dt-halving studies.
    """
    if factor <= 0 or bank.n_steps % factor != 0:
        raise ParameterError(f"factor {factor} must divide n_steps {bank.n_steps}")
    n_coarse = bank.n_steps // factor
    inc = bank.increments.reshape(bank.n_particles, n_coarse, factor, bank.m).sum(axis=2)
    return NoiseBank(bank.seed, bank.n_particles, n_coarse,
                     bank.dt * factor, bank.m, inc)


def sample_initials(law, n: int, d: int, seed: int) -> np.ndarray:
    """Initial positions X_0^i, one independent stream per particle.

    Keyed by (derive_seed(seed, TAG_INIT), i) so that ladders at growing N
    share the first N initial values, mirroring the increment prefix
    stability.  ``law`` is ``(kind, params)`` with kinds:

      constant(x0) | uniform(lo, hi) | gaussian(mean, std) | student_t(nu, scale)
    """
    kind, params = law
    base = derive_seed(seed, TAG_INIT)
    out = np.empty((n, d))
    for i in range(n):
        gen = np.random.Generator(np.random.Philox(key=[base, i]))
        if kind == "constant":
            out[i] = float(params[0])
        elif kind == "uniform":
            lo, hi = params
            out[i] = gen.uniform(lo, hi, size=d)
        elif kind == "gaussian":
            mean, std = params
            out[i] = mean + std * gen.standard_normal(d)
        elif kind == "student_t":
            nu, scale = params
            out[i] = scale * gen.standard_t(nu, size=d)
        else:
            raise ParameterError(f"unknown initial law {kind!r}")
    return out


class StepNoise:
    """Bulk per-step increment source for batched replication runs.

    One sequential Philox generator yields an (n, m) increment block per
    step.  Deterministic given the seed, but with no per-particle stream
    structure: use :class:`NoiseBank` wherever ladder prefix coupling is
    required.
    """

    def __init__(self, seed: int, n: int, dt: float, m: int = 1):
        self._gen = np.random.Generator(np.random.Philox(key=[int(seed), 0xB01C]))
        self._n = n
        self._m = m
        self._scale = np.sqrt(dt)

    def step(self) -> np.ndarray:
        return self._gen.standard_normal((self._n, self._m)) * self._scale
