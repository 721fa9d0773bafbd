"""Coupled integration checks against closed-form OU behaviour."""

import math

import numpy as np
import pytest

from mfchaos import (
    DivergenceError,
    EmpiricalMeasure,
    FrozenLaw,
    LimitCloud,
    MetricsConfig,
    ParticleCloud,
    TimeGrid,
    collect_path_stats,
    make_double_well,
    make_kuramoto,
    make_mf_ou,
    make_noise_bank,
    run_reference,
    sample_initials,
    step_limit_copies,
    step_particles,
)
from mfchaos.models import Admissibility, ModelSpec
from mfchaos.noise import TAG_REFERENCE, derive_seed


def make_constant_model(b_val=0.0, sigma_val=0.0):
    def drift(t, x, mu):
        return np.full_like(x, b_val)

    def diffusion(t, x, mu):
        return np.array([[sigma_val]]) if sigma_val else np.zeros((1, 1))

    def drift_grad(t, x, mu):
        return np.zeros((1, 1))

    def lions_drift(t, x, mu, y):
        return np.zeros((1, 1))

    return ModelSpec(name="const", d=1, m=1, drift=drift, diffusion=diffusion,
                     drift_grad=drift_grad, lions_drift=lions_drift,
                     admissibility=Admissibility())


def run_coupled(model, n, grid, seed, init_law, frozen):
    bank = make_noise_bank(seed, n, grid.n_steps, grid.dt, model.m)
    x0 = sample_initials(init_law, n, model.d, seed)
    particles = ParticleCloud(positions=x0.copy(), node=0)
    limits = LimitCloud(positions=x0.copy(), frozen=frozen, node=0)
    for _ in range(grid.n_steps):
        particles = step_particles(model, particles, bank, grid)
        limits = step_limit_copies(model, limits, bank, grid)
    return particles, limits


def test_zero_coefficients_leave_positions_unchanged():
    model = make_constant_model(0.0, 0.0)
    grid = TimeGrid(1.0, 10)
    bank = make_noise_bank(1, 4, 10, 0.1, 1)
    cloud = ParticleCloud(positions=np.arange(4.0)[:, None], node=0)
    stepped = step_particles(model, cloud, bank, grid)
    assert np.array_equal(stepped.positions, cloud.positions)


def test_deterministic_euler_step():
    model = make_constant_model(1.0, 0.0)
    grid = TimeGrid(1.0, 100)
    bank = make_noise_bank(1, 1, 100, 0.01, 1)
    cloud = ParticleCloud(positions=np.zeros((1, 1)), node=0)
    stepped = step_particles(model, cloud, bank, grid)
    assert stepped.positions[0, 0] == pytest.approx(0.01)


def test_mf_ou_one_step_hand_value():
    # all particles at 1, empirical mean 1: drift = -1 + 0.5 = -0.5
    model = make_mf_ou(-1.0, 0.5, 1e-12)
    grid = TimeGrid(1.0, 100)
    bank = make_noise_bank(2, 8, 100, 0.01, 1)
    zero_inc = NoiselessBank(bank)
    cloud = ParticleCloud(positions=np.ones((8, 1)), node=0)
    stepped = step_particles(model, cloud, zero_inc, grid)
    assert np.allclose(stepped.positions, 1.0 + (-1.0 + 0.5) * 0.01)


class NoiselessBank:
    """Bank wrapper with zeroed increments, for deterministic checks."""

    def __init__(self, bank):
        self._bank = bank
        self._zero = np.zeros_like(bank.increments[:, 0, :])

    def step(self, n):
        return self._zero

    def __getattr__(self, name):
        return getattr(self._bank, name)


def test_decoupled_model_particle_and_limit_paths_coincide():
    # no measure dependence in the drift: identical recursions bit-exactly
    model = make_mf_ou(-1.0, 0.0, 0.3)
    grid = TimeGrid(1.0, 50)
    frozen = FrozenLaw(np.zeros((51, 16, 1)), grid)
    particles, limits = run_coupled(model, 16, grid, seed=9,
                                    init_law=("uniform", (-1.0, 1.0)),
                                    frozen=frozen)
    assert np.array_equal(particles.positions, limits.positions)


def test_reference_run_matches_analytic_ou_moments():
    model = make_mf_ou(-1.0, 0.5, 0.3)
    grid = TimeGrid(1.0, 250)
    m_ref = 4000
    seed = derive_seed(77, TAG_REFERENCE)
    bank = make_noise_bank(seed, m_ref, grid.n_steps, grid.dt, 1)
    frozen = run_reference(model, m_ref, bank, grid,
                           lambda n: np.zeros((n, 1)))
    mean_true, var_true = model.analytic_moments(1.0, 0.0)
    assert mean_true == 0.0
    assert var_true == pytest.approx(0.0389098, abs=1e-6)
    final = frozen.positions[-1][:, 0]
    mean_se = final.std() / math.sqrt(m_ref)
    var_se = final.var() * math.sqrt(2.0 / m_ref)
    assert abs(final.mean() - mean_true) <= 3 * mean_se + 2 * grid.dt
    assert abs(final.var() - var_true) <= 3 * var_se + 2 * grid.dt * var_true


def test_noiseless_reference_follows_scalar_ode():
    # x' = -x from 1: all frozen-law points exp(-t) up to O(dt)
    model = make_mf_ou(-1.0, 0.0, 1e-12)
    grid = TimeGrid(1.0, 1000)
    bank = make_noise_bank(3, 32, grid.n_steps, grid.dt, 1)

    class Zeroed:
        def __init__(self, b):
            self._b = b
            self._z = np.zeros((b.n_particles, b.m))

        def step(self, n):
            return self._z

        def __getattr__(self, name):
            return getattr(self._b, name)

    frozen = run_reference(model, 32, Zeroed(bank), grid,
                           lambda n: np.ones((n, 1)))
    assert np.allclose(frozen.positions[-1], math.exp(-1.0), atol=2 * grid.dt)
    assert frozen.positions[-1][0, 0] == pytest.approx(0.36788, abs=2e-4 + 2 * grid.dt)


def test_euler_strong_error_slope_against_exact_ou():
    # constant sigma: strong order ~1; gate is the order-1/2 lower bound
    a, sig = -1.0, 0.3
    model = make_mf_ou(a, 0.0, sig)
    n_particles = 256
    errors, dts = [], []
    for lvl in range(4, 10):
        n_steps = 2**lvl
        grid = TimeGrid(1.0, n_steps)
        dt = grid.dt
        bank = make_noise_bank(1000 + lvl, n_particles, n_steps, dt, 1)
        x0 = sample_initials(("uniform", (-1.0, 1.0)), n_particles, 1, 55)
        cloud = ParticleCloud(positions=x0.copy(), node=0)
        exact = x0[:, 0].copy()
        decay = math.exp(a * dt)
        node_std = sig * math.sqrt((1.0 - math.exp(2 * a * dt)) / (-2 * a))
        for n in range(n_steps):
            cloud = step_particles(model, cloud, bank, grid)
            xi = bank.step(n)[:, 0] / math.sqrt(dt)
            exact = decay * exact + node_std * xi
        err = np.sqrt(np.mean((cloud.positions[:, 0] - exact) ** 2))
        errors.append(err)
        dts.append(dt)
    slope = np.polyfit(np.log(dts), np.log(errors), 1)[0]
    assert slope >= 0.45


def test_moment_stability_under_bounded_initials():
    # sup-moment envelope: initial + Doob bound on the stochastic part,
    # with the mean-reverting drift contracting everything else
    a, b, sig, horizon = -1.0, 0.5, 0.3, 1.0
    model = make_mf_ou(a, b, sig)
    envelope = 3.0 * (1.0 + 8.0 * sig**2 * (math.exp(2 * horizon) - 1) / 2.0)
    grid = TimeGrid(horizon, 200)
    for n in (64, 256, 1024, 4096):
        bank = make_noise_bank(500, n, grid.n_steps, grid.dt, 1)
        x0 = sample_initials(("uniform", (-1.0, 1.0)), n, 1, 0)
        cloud = ParticleCloud(positions=x0.copy(), node=0)
        sup_sq = (x0[:, 0] ** 2).copy()
        for _ in range(grid.n_steps):
            cloud = step_particles(model, cloud, bank, grid)
            np.maximum(sup_sq, cloud.positions[:, 0] ** 2, out=sup_sq)
        assert sup_sq.mean() <= 1.5 * envelope


def test_kuramoto_position_gap_decreases_with_n():
    # per-particle coupled gap shrinks along the ladder (1 SE allowance)
    model = make_kuramoto(1.0, 0.3)
    grid = TimeGrid(1.0, 200)
    m_ref = 4096
    ref_bank = make_noise_bank(derive_seed(8, TAG_REFERENCE), m_ref,
                               grid.n_steps, grid.dt, 1)
    ref_init = sample_initials(("uniform", (-1.0, 1.0)), m_ref, 1,
                               derive_seed(8, TAG_REFERENCE))
    frozen = run_reference(model, m_ref, ref_bank, grid, lambda n: ref_init[:n])
    reps = 24
    ladder = [32, 64, 128, 256]
    moments = {n: [] for n in ladder}
    for rep in range(reps):
        seed = derive_seed(8, 3, rep)
        for n in ladder:
            particles, limits = run_coupled(model, n, grid, seed,
                                            ("uniform", (-1.0, 1.0)), frozen)
            gap = np.abs(particles.positions - limits.positions)[:, 0]
            moments[n].append(np.mean(gap**2))
    means = np.array([np.mean(moments[n]) for n in ladder])
    sems = np.array([np.std(moments[n], ddof=1) / math.sqrt(reps) for n in ladder])
    for j in range(len(ladder) - 1):
        assert means[j + 1] <= means[j] + math.hypot(sems[j], sems[j + 1])


def test_divergence_error_names_particle_and_node():
    model = make_double_well(theta=1.0, kappa=0.0, sigma=0.5)
    grid = TimeGrid(1.0, 4)        # dt = 0.25 explodes the cubic drift
    bank = make_noise_bank(1, 2, 4, 0.25, 1)
    cloud = ParticleCloud(positions=np.array([[40.0], [0.0]]), node=0)
    with pytest.raises(DivergenceError, match="particle 0 .* node"):
        for _ in range(4):
            cloud = step_particles(model, cloud, bank, grid)


def test_path_stats_example_and_monotonicity():
    grid = TimeGrid(1.0, 1)
    frozen_pts = np.zeros((2, 2, 1))
    frozen_pts[1] = [[1.0], [3.0]]
    frozen = FrozenLaw(frozen_pts, grid)
    particles = ParticleCloud(positions=np.array([[0.0], [2.0]]), node=1)
    limits = LimitCloud(positions=np.array([[1.0], [3.0]]), frozen=frozen, node=1)
    cfg = MetricsConfig(k=2.0)
    stats = collect_path_stats(particles, limits, cfg)
    assert stats.wass_per_node[-1] == pytest.approx(1.0)

    same = collect_path_stats(particles,
                              LimitCloud(positions=particles.positions.copy(),
                                         frozen=frozen, node=1),
                              MetricsConfig(k=2.0, wass_target="limit_cloud"))
    assert same.wass_per_node[-1] == 0.0
    assert np.all(same.sup_gap == 0.0)

    # running max never decreases
    stats2 = collect_path_stats(particles, limits, cfg, stats)
    assert np.all(stats2.sup_gap >= stats.sup_gap)
