"""Derivative flows of the coupled systems.

Two families of pathwise sensitivities are integrated in lockstep with
the clouds from :mod:`mfchaos.particle_sim`:

* initial-direction flows v: the derivative of the solution when every
  initial value is shifted along eta^i = phi(X_0^i).  The interacting
  version carries a (1/N) sum_j <D b(X^i, mu)(X^j), v^j> cross term; the
  limit version replaces that sum by an expectation over the joint law of
  (X, v), realised here by an auxiliary large-M ensemble integrated as an
  interacting pair system with independent noise.

* noise-shift (Malliavin-type) flows w: derivatives along the Cameron-
  Martin direction with density h' = 1_{t>=r} (sigma* a^{-1})(X) g' v,
  where g is a C^1 ramp with g_r = 0, g_T = 1.  With this choice
  sigma h' = g' v, so w solves the same linear equation as v with source
  g' v and zero state at r, and satisfies w_t = g_t v_t exactly in
  continuous time; the discrete gap is O(dt) and is one of the main
  scheme diagnostics.

The interacting w-flow decomposes over which coordinate of the driving
noise is shifted.  Only two pieces are ever needed: the own component
(source active at the tagged particle alone) and the aggregated cross
sum (sources at every other particle), integrated as one extra linear
system by superposition.  The cross sum converges to the flow along the
averaged direction hhat whose density involves the measure-derivative
expectation; that flow is integrated by :func:`step_hhat_limit`.

All flows are linear in phi and the schemes are explicit, so linearity
holds bit-exactly under fixed noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError, ParameterError
from .measures import EmpiricalMeasure
from .models import ModelSpec
from .noise import NoiseBank, TimeGrid
from .particle_sim import (
    FrozenLaw,
    LimitCloud,
    ParticleCloud,
    apply_diffusion,
    apply_matrix,
    check_finite,
    euler_step,
)


# ---------------------------------------------------------------------------
# perturbation directions and ramp weights
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DirectionSpec:
    """Initial perturbation field eta = phi(X_0); phi maps (n, d) -> (n, d)."""

    phi: Callable
    tag: str = "custom"

    def eta(self, x0: np.ndarray) -> np.ndarray:
        out = np.asarray(self.phi(x0), dtype=float)
        out = np.broadcast_to(out, x0.shape).copy()
        return out


def make_direction(direction_id: str, params: dict | None = None) -> DirectionSpec:
    params = dict(params or {})
    if direction_id == "constant":
        value = float(params.pop("value", 1.0))
        if params:
            raise ParameterError(f"unknown direction params {sorted(params)}")
        return DirectionSpec(phi=lambda x: np.full_like(x, value), tag=f"constant({value})")
    if direction_id == "identity":
        if params:
            raise ParameterError(f"unknown direction params {sorted(params)}")
        return DirectionSpec(phi=lambda x: x, tag="identity")
    if direction_id == "sine":
        freq = float(params.pop("freq", 1.0))
        if params:
            raise ParameterError(f"unknown direction params {sorted(params)}")
        return DirectionSpec(phi=lambda x: np.sin(freq * x), tag=f"sine({freq})")
    raise ParameterError(f"unknown direction {direction_id!r}")


def check_tangent_growth(direction: DirectionSpec, points: np.ndarray,
                         c: float = 10.0) -> bool:
    """Spot check of linear growth |phi(x)| <= c (1 + |x|) on a sample."""
    pts = np.atleast_2d(points)
    vals = np.linalg.norm(direction.eta(pts), axis=1)
    return bool(np.all(vals <= c * (1.0 + np.linalg.norm(pts, axis=1))))


@dataclass(frozen=True)
class WeightFunction:
    """C^1 ramp on [r, T] with g_r = 0 and g_T = 1, zero before r.

    ``values[n]`` and ``derivs[n]`` hold g and g' at grid node n; for the
    piecewise-linear shape the derivative at the kink uses the right
    limit, consistent with left-point time stepping.
    """

    r: float
    shape: str
    values: np.ndarray
    derivs: np.ndarray

    def g(self, node: int) -> float:
        return float(self.values[node])

    def gprime(self, node: int) -> float:
        return float(self.derivs[node])


def make_weight(grid: TimeGrid, r: float = 0.0, shape: str = "linear") -> WeightFunction:
    horizon = grid.horizon
    if not (0.0 <= r < horizon):
        raise ParameterError(f"start time r={r} must lie in [0, T)")
    t = grid.nodes
    ramp = np.clip((t - r) / (horizon - r), 0.0, 1.0)
    active = t >= r - 1e-12 * horizon
    if shape == "linear":
        values = ramp
        derivs = np.where(active, 1.0 / (horizon - r), 0.0)
    elif shape == "sin2":
        values = np.sin(0.5 * math.pi * ramp) ** 2
        derivs = np.where(active,
                          0.5 * math.pi / (horizon - r) * np.sin(math.pi * ramp),
                          0.0)
    else:
        raise ParameterError(f"unknown weight shape {shape!r}")
    return WeightFunction(r=r, shape=shape, values=values, derivs=derivs)


# ---------------------------------------------------------------------------
# auxiliary pair ensemble for expectation terms
# ---------------------------------------------------------------------------

# generic-model fallback stores at most this many pairs per node
AUX_PAIR_CAP = 4096


class FrozenAux:
    """Node-indexed representation of the joint limit law of (X, v).

    For models exposing averaged-kernel features, only the per-node
    feature vectors are kept; otherwise a (capped) sample of pairs is
    stored and expectation terms are averaged directly.
    """

    def __init__(self, model: ModelSpec, grid: TimeGrid, feats=None, pairs=None):
        self.model = model
        self.grid = grid
        self.feats = feats
        self.pairs = pairs

    def eterm(self, node: int, targets: np.ndarray) -> np.ndarray:
        """E <D b(y, .)(mu_t)(X), v> evaluated at y = each target row."""
        t = self.grid.node(node)
        if self.feats is not None:
            return self.model.lions_avg_apply(t, targets, self.feats[node])
        atoms, vecs = self.pairs[node]
        mu = EmpiricalMeasure(atoms)
        return self.model.lions_drift_avg(t, targets, atoms, vecs, mu)

    def eterm_diffusion(self, node: int, targets: np.ndarray,
                        dw: np.ndarray) -> np.ndarray:
        """Diffusion analogue of :meth:`eterm`, contracted with the
        increments; zero unless the model declares a measure-dependent
        noise kernel (then stored pairs are required)."""
        if self.model.lions_diffusion is None:
            return np.zeros_like(targets)
        if self.pairs is None:
            raise ConfigError("measure-dependent noise kernels need stored pairs")
        atoms, vecs = self.pairs[node]
        mu = EmpiricalMeasure(atoms)
        return _pairwise_lions_diffusion(self.model, targets, mu, atoms, vecs,
                                         self.grid.node(node), dw)

    def flow_mean(self, node: int) -> np.ndarray | None:
        """Mean of the auxiliary flow sample, when pairs are stored."""
        if self.pairs is None:
            return None
        return self.pairs[node][1].mean(axis=0)


@dataclass
class ReferenceSolution:
    """Frozen limit law plus, when a direction is supplied, the frozen
    auxiliary ensemble of (X, v) pairs from the same independent run."""

    frozen: FrozenLaw
    aux: Optional[FrozenAux] = None


def compute_reference(model: ModelSpec, grid: TimeGrid, bank: NoiseBank,
                      initials: np.ndarray, direction: DirectionSpec | None = None,
                      pair_cap: int = AUX_PAIR_CAP) -> ReferenceSolution:
    """Integrate the large-M interacting system (and, if a direction is
    given, its initial-direction flow) once, recording the per-node law
    sample and the expectation-term data every coupled run will reuse.

    The bank must be independent of every bank used for coupled runs.
    """
    m_particles = bank.n_particles
    x = np.asarray(initials, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] != m_particles:
        raise ParameterError("initials and bank sizes differ")
    n_nodes = grid.n_steps + 1
    law = np.empty((n_nodes, m_particles, model.d))
    law[0] = x
    v = direction.eta(x) if direction is not None else None
    use_feats = (direction is not None and model.lions_avg_features is not None)
    feats = [None] * n_nodes if use_feats else None
    pairs = [None] * n_nodes if (direction is not None and not use_feats) else None
    keep = min(pair_cap, m_particles)

    def record(node, x, v):
        if direction is None:
            return
        t = grid.node(node)
        if use_feats:
            feats[node] = model.lions_avg_features(t, x, v)
        else:
            pairs[node] = (x[:keep].copy(), v[:keep].copy())

    record(0, x, v)
    for n in range(grid.n_steps):
        t, dt = grid.node(n), grid.dt
        dw = bank.step(n)
        mu = EmpiricalMeasure(x)
        if direction is not None:
            v = _dir_interacting_step(model, x, mu, v, t, dt, dw, n)
        x = euler_step(model, x, mu, t, dt, dw, n, "reference particle")
        law[n + 1] = x
        record(n + 1, x, v)
    frozen = FrozenLaw(law, grid, analytic=model.analytic_moments)
    aux = None
    if direction is not None:
        aux = FrozenAux(model, grid, feats=feats, pairs=pairs)
    return ReferenceSolution(frozen=frozen, aux=aux)


# ---------------------------------------------------------------------------
# flow state and one-node advances
# ---------------------------------------------------------------------------

@dataclass
class DirectionalFlows:
    """Initial-direction flow state.

    ``v_particle[i]`` rides on particle i of the interacting system,
    ``v_limit[i]`` on limit copy i (same bank stream).  ``aux`` carries
    the frozen auxiliary ensemble whose averages feed the limit flow;
    it must be present whenever v_limit is integrated.
    """

    v_particle: Optional[np.ndarray] = None
    v_limit: Optional[np.ndarray] = None
    aux: Optional[FrozenAux] = None
    node_particle: int = 0
    node_limit: int = 0


def init_directional_flows(direction: DirectionSpec, x0: np.ndarray,
                           aux: FrozenAux | None = None,
                           particle: bool = True, limit: bool = False) -> DirectionalFlows:
    eta = direction.eta(np.atleast_2d(x0))
    return DirectionalFlows(
        v_particle=eta.copy() if particle else None,
        v_limit=eta.copy() if limit else None,
        aux=aux,
    )


def _dir_interacting_step(model, x, mu, v, t, dt, dw, node):
    """(v2)-type advance: own-gradient transport plus the empirical
    measure-derivative average, explicit in the pre-step values."""
    drift = apply_matrix(model.drift_grad(t, x, mu), v)
    drift += model.lions_drift_avg(t, x, x, v, mu)
    v_new = v + drift * dt
    if model.diffusion_grad is not None:
        v_new += apply_diffusion(model.diffusion_grad(t, x, mu, v), dw)
    if model.lions_diffusion is not None:
        v_new += _pairwise_lions_diffusion(model, x, mu, x, v, t, dw)
    check_finite(v_new, node + 1, "directional flow")
    return v_new


def _pairwise_lions_diffusion(model, targets, mu, atoms, vecs, t, dw):
    # generic O(n^2) fallback; built-ins declare no measure-dependent noise
    n = targets.shape[0]
    out = np.zeros((n, model.d))
    for i in range(n):
        acc = np.zeros((model.d, model.m))
        for j in range(atoms.shape[0]):
            acc += np.atleast_2d(model.lions_diffusion(t, targets[i], mu, atoms[j], vecs[j]))
        out[i] = (acc / atoms.shape[0]) @ dw[i]
    return out


def step_directional_particle(model: ModelSpec, particles: ParticleCloud,
                              flows: DirectionalFlows, bank: NoiseBank,
                              grid: TimeGrid) -> DirectionalFlows:
    """Advance the interacting-system flow one node (pre-step states)."""
    if flows.v_particle is None:
        raise ConfigError("flows were initialised without a particle component")
    if particles.node != flows.node_particle:
        raise ParameterError("particle cloud and flow state out of sync")
    n = particles.node
    x = particles.positions
    mu = EmpiricalMeasure(x)
    v_new = _dir_interacting_step(model, x, mu, flows.v_particle,
                                  grid.node(n), grid.dt,
                                  bank.step(n)[: x.shape[0]], n)
    return replace(flows, v_particle=v_new, node_particle=n + 1)


def step_directional_limit(model: ModelSpec, limits: LimitCloud,
                           flows: DirectionalFlows, bank: NoiseBank,
                           grid: TimeGrid) -> DirectionalFlows:
    """Advance the limit flow one node: gradient transport plus the
    frozen expectation term evaluated at each copy's position."""
    if flows.v_limit is None:
        raise ConfigError("flows were initialised without a limit component")
    if flows.aux is None:
        raise ConfigError("limit flow needs the auxiliary ensemble")
    if limits.node != flows.node_limit:
        raise ParameterError("limit cloud and flow state out of sync")
    n = limits.node
    x = limits.positions
    t, dt = grid.node(n), grid.dt
    mu = limits.frozen.measure(n)
    v = flows.v_limit
    drift = apply_matrix(model.drift_grad(t, x, mu), v)
    drift += flows.aux.eterm(n, x)
    v_new = v + drift * dt
    if model.diffusion_grad is not None or model.lions_diffusion is not None:
        dw = bank.step(n)[: x.shape[0]]
        if model.diffusion_grad is not None:
            v_new += apply_diffusion(model.diffusion_grad(t, x, mu, v), dw)
        if model.lions_diffusion is not None:
            v_new += flows.aux.eterm_diffusion(n, x, dw)
    check_finite(v_new, n + 1, "limit directional flow")
    return replace(flows, v_limit=v_new, node_limit=n + 1)


# ---------------------------------------------------------------------------
# noise-shift flows
# ---------------------------------------------------------------------------

@dataclass
class MalliavinFlows:
    """Noise-shift flow state; index 0 is the tagged particle.

    ``w_own`` integrates the decomposition component whose source acts on
    the tagged index alone; ``w_cross_sum`` the superposed sum of all
    other components; ``w_limit`` the limit flow; ``w_hat`` the limit
    flow along the averaged direction.  All pieces are zero before the
    ramp start r by construction.
    """

    weight: WeightFunction
    w_limit: Optional[np.ndarray] = None
    w_own: Optional[np.ndarray] = None
    w_cross_sum: Optional[np.ndarray] = None
    w_hat: Optional[np.ndarray] = None
    node_limit: int = 0
    node_particle: int = 0
    node_hat: int = 0
    h_paths: Optional[list] = None


def init_malliavin_flows(weight: WeightFunction, n: int, d: int,
                         limit: bool = False, own: bool = False,
                         cross: bool = False, hat: bool = False) -> MalliavinFlows:
    zeros = lambda: np.zeros((n, d))
    return MalliavinFlows(
        weight=weight,
        w_limit=zeros() if limit else None,
        w_own=zeros() if own else None,
        w_cross_sum=zeros() if cross else None,
        w_hat=zeros() if hat else None,
    )


def malliavin_integrand(model: ModelSpec, weight: WeightFunction, node: int,
                        grid: TimeGrid, positions: np.ndarray,
                        v: np.ndarray) -> np.ndarray:
    """Shift density h' at one node: 1_{t>=r} (sigma* a^{-1})(X) g' v."""
    model.require_noise_shift_support()
    gp = weight.gprime(node)
    if gp == 0.0:
        return np.zeros((positions.shape[0], model.m))
    ssai = np.asarray(model.sigma_star_a_inv(grid.node(node), positions))
    return gp * apply_matrix(ssai, v)


def build_malliavin_direction(model: ModelSpec, r: float, weight: WeightFunction,
                              grid: TimeGrid, positions_path: np.ndarray,
                              v_path: np.ndarray) -> np.ndarray:
    """Node-wise shift densities along a recorded trajectory.

    ``positions_path`` and ``v_path`` have shape (n_nodes+1, N, d); the
    result has shape (n_nodes+1, N, m) and vanishes on [0, r).
    """
    if abs(weight.r - r) > 1e-12:
        raise ParameterError("weight function does not start at the given r")
    n_nodes = positions_path.shape[0]
    out = np.zeros((n_nodes, positions_path.shape[1], model.m))
    for node in range(n_nodes):
        out[node] = malliavin_integrand(model, weight, node, grid,
                                        positions_path[node], v_path[node])
    return out


def _w_step_interacting(model, x, mu, w, source, t, dt, dw, node, label):
    drift = apply_matrix(model.drift_grad(t, x, mu), w)
    drift += model.lions_drift_avg(t, x, x, w, mu)
    w_new = w + (drift + source) * dt
    if model.diffusion_grad is not None:
        w_new += apply_diffusion(model.diffusion_grad(t, x, mu, w), dw)
    check_finite(w_new, node + 1, label)
    return w_new


def _w_step_limit(model, x, mu, w, source, t, dt, dw, node, label):
    drift = apply_matrix(model.drift_grad(t, x, mu), w)
    w_new = w + (drift + source) * dt
    if model.diffusion_grad is not None:
        w_new += apply_diffusion(model.diffusion_grad(t, x, mu, w), dw)
    check_finite(w_new, node + 1, label)
    return w_new


def step_malliavin_component(model: ModelSpec, particles: ParticleCloud,
                             dir_flows: DirectionalFlows, mflows: MalliavinFlows,
                             component, bank: NoiseBank,
                             grid: TimeGrid) -> MalliavinFlows:
    """Advance the interacting noise-shift components one node.

    ``component`` selects which sources are active: ``"own"`` (the
    tagged index only), ``"cross"`` (every index but the tagged one,
    integrated as one superposed system), or an integer l for the single
    component whose source acts at index l (single-component runs reuse
    the own-component storage).
    """
    model.require_noise_shift_support()
    if particles.node != mflows.node_particle:
        raise ParameterError("particle cloud and noise-shift state out of sync")
    if dir_flows.v_particle is None or dir_flows.node_particle != particles.node:
        raise ParameterError("directional flow must be available at the same node")
    n = particles.node
    x = particles.positions
    n_particles = x.shape[0]
    gp = mflows.weight.gprime(n)
    if gp == 0.0:
        source = 0.0
    else:
        mask = np.zeros((n_particles, 1))
        if component == "own":
            mask[0] = 1.0
        elif component == "cross":
            mask[1:] = 1.0
        else:
            mask[int(component)] = 1.0
        source = gp * mask * dir_flows.v_particle
    mu = EmpiricalMeasure(x)
    t, dt = grid.node(n), grid.dt
    dw = bank.step(n)[:n_particles]
    updates = {}
    if component == "own":
        if mflows.w_own is None:
            raise ConfigError("own component not initialised")
        updates["w_own"] = _w_step_interacting(
            model, x, mu, mflows.w_own, source, t, dt, dw, n, "noise-shift flow")
    elif component == "cross":
        if mflows.w_cross_sum is None:
            raise ConfigError("cross component not initialised")
        updates["w_cross_sum"] = _w_step_interacting(
            model, x, mu, mflows.w_cross_sum, source, t, dt, dw, n, "noise-shift flow")
    else:
        if mflows.w_own is None:
            raise ConfigError("own component not initialised")
        updates["w_own"] = _w_step_interacting(
            model, x, mu, mflows.w_own, source, t, dt, dw, n, "noise-shift flow")
    return replace(mflows, node_particle=n + 1, **updates)


def step_malliavin_limit(model: ModelSpec, limits: LimitCloud,
                         dir_flows: DirectionalFlows, mflows: MalliavinFlows,
                         bank: NoiseBank, grid: TimeGrid) -> MalliavinFlows:
    """Advance the limit noise-shift flow: gradient transport plus the
    ramp source g' v, no interaction term (the limit law is frozen)."""
    model.require_noise_shift_support()
    if limits.node != mflows.node_limit:
        raise ParameterError("limit cloud and noise-shift state out of sync")
    if dir_flows.v_limit is None or dir_flows.node_limit != limits.node:
        raise ParameterError("limit directional flow must be available at the same node")
    if mflows.w_limit is None:
        raise ConfigError("limit component not initialised")
    n = limits.node
    x = limits.positions
    gp = mflows.weight.gprime(n)
    source = gp * dir_flows.v_limit if gp != 0.0 else 0.0
    w_new = _w_step_limit(model, x, limits.frozen.measure(n), mflows.w_limit,
                          source, grid.node(n), grid.dt,
                          bank.step(n)[: x.shape[0]], n, "limit noise-shift flow")
    return replace(mflows, w_limit=w_new, node_limit=n + 1)


def step_hhat_limit(model: ModelSpec, limits: LimitCloud, mflows: MalliavinFlows,
                    aux: FrozenAux, bank: NoiseBank, grid: TimeGrid) -> MalliavinFlows:
    """Advance the limit flow along the averaged direction: the source is
    1_{t>=r} g_t E <D b(y, .)(mu_t)(X), v> | y = own position, i.e. the
    mean-field image of the aggregated cross components."""
    model.require_noise_shift_support()
    if limits.node != mflows.node_hat:
        raise ParameterError("limit cloud and averaged-direction state out of sync")
    if mflows.w_hat is None:
        raise ConfigError("averaged-direction component not initialised")
    if aux is None:
        raise ConfigError("averaged-direction flow needs the auxiliary ensemble")
    n = limits.node
    x = limits.positions
    g = mflows.weight.g(n)
    active = grid.node(n) >= mflows.weight.r - 1e-12 * grid.horizon
    source = g * aux.eterm(n, x) if (active and g != 0.0) else 0.0
    w_new = _w_step_limit(model, x, limits.frozen.measure(n), mflows.w_hat,
                          source, grid.node(n), grid.dt,
                          bank.step(n)[: x.shape[0]], n, "averaged-direction flow")
    return replace(mflows, w_hat=w_new, node_hat=n + 1)
