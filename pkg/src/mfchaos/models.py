"""Coefficient bundles for mean-field dynamics.

A model is the data (b, sigma) of

    dX_t = b_t(X_t, mu) dt + sigma_t(X_t, mu) dW_t,

where mu is either the live empirical measure of an interacting cloud or
a frozen sample of the limit law, together with every derivative the
sensitivity equations consume:

  * drift_grad / diffusion_grad: gradients in the state variable;
  * lions_drift / lions_diffusion: measure derivatives D b(x, mu)(y),
    declared analytically (all built-ins have convolution-type
    interactions, so the kernel in y is closed form);
  * sigma_star_a_inv: (sigma* (sigma sigma*)^{-1})(x), defined only for
    distribution-free invertible diffusions, which is what the
    noise-shift machinery requires.

Coefficient callables are vectorised over a leading particle axis:
``drift(t, x, mu)`` accepts x of shape (n, d) and returns (n, d);
constant-coefficient models may return broadcastable constants from the
gradient maps.  Declared kernels are guarded by finite-difference checks
(:func:`check_lions_kernel`, :func:`check_drift_gradient`) rather than
trusted blindly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .errors import ParameterError, UnsupportedModelError
from .measures import EmpiricalMeasure


@dataclass(frozen=True)
class Admissibility:
    """Moment/regularity metadata: order k, initial-moment index q,
    Holder exponent alpha, growth index m, one-sided Lipschitz constant."""

    k: float = 2.0
    q: float = math.inf
    holder_alpha: float = 1.0
    growth_m: float = 0.0
    lipschitz: float = 1.0
    globally_lipschitz: bool = True

    def __post_init__(self):
        if self.k < 2:
            raise ParameterError("admissibility requires k >= 2")
        if not (0 < self.holder_alpha <= 1):
            raise ParameterError("holder_alpha must lie in (0, 1]")
        if self.growth_m < 0:
            raise ParameterError("growth_m must be >= 0")
        if math.isfinite(self.q) and self.growth_m > self.q * (self.k - self.holder_alpha):
            raise ParameterError("growth index violates m <= q (k - alpha)")


@dataclass(frozen=True)
class ModelSpec:
    """Immutable coefficient bundle; all maps must be pure."""

    name: str
    d: int
    m: int
    drift: Callable
    diffusion: Callable
    drift_grad: Callable
    lions_drift: Callable
    admissibility: Admissibility
    diffusion_grad: Optional[Callable] = None
    lions_diffusion: Optional[Callable] = None
    dist_free_diffusion: bool = False
    sigma_star_a_inv: Optional[Callable] = None
    # fast averaged-kernel hooks (O(N) for the built-ins); generic models
    # fall back to the pairwise loop below
    lions_drift_avg: Optional[Callable] = None
    lions_avg_features: Optional[Callable] = None
    lions_avg_apply: Optional[Callable] = None
    analytic_moments: Optional[Callable] = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.dist_free_diffusion and self.sigma_star_a_inv is not None:
            raise ParameterError(
                "sigma_star_a_inv requires a distribution-free diffusion")
        if self.lions_drift_avg is None:
            object.__setattr__(self, "lions_drift_avg",
                               self._pairwise_lions_avg)

    def _pairwise_lions_avg(self, t, targets, atoms, vecs, mu):
        # generic O(n_targets * n_atoms) fallback; built-ins override
        targets = np.atleast_2d(targets)
        atoms = np.atleast_2d(atoms)
        vecs = np.atleast_2d(vecs)
        out = np.zeros((targets.shape[0], self.d))
        for i in range(targets.shape[0]):
            acc = np.zeros(self.d)
            for j in range(atoms.shape[0]):
                mat = np.atleast_2d(self.lions_drift(t, targets[i], mu, atoms[j]))
                acc += mat @ vecs[j]
            out[i] = acc / atoms.shape[0]
        return out

    def require_noise_shift_support(self):
        if not self.dist_free_diffusion or self.sigma_star_a_inv is None:
            raise UnsupportedModelError(
                f"model {self.name!r} lacks a distribution-free invertible "
                "diffusion; noise-shift flows are undefined for it")


# ---------------------------------------------------------------------------
# built-in models
# ---------------------------------------------------------------------------

def make_mf_ou(a_coef: float, b_coef: float, sigma_coef: float, d: int = 1) -> ModelSpec:
    """Mean-field Ornstein-Uhlenbeck: b(x, mu) = a x + b mean(mu), constant
    diffusion sigma * I.  Linear in both arguments, hence every flow below
    has a scalar-ODE closed form; this is the main validation oracle."""
    if sigma_coef <= 0:
        raise ParameterError("sigma_coef must be > 0")
    a, b, sig = float(a_coef), float(b_coef), float(sigma_coef)
    eye = np.eye(d)
    sigma_mat = sig * np.eye(d)
    ssai = (1.0 / sig) * np.eye(d)

    def drift(t, x, mu):
        return a * x + b * mu.mean()

    def diffusion(t, x, mu):
        return sigma_mat

    def drift_grad(t, x, mu):
        return a * eye

    def lions_drift(t, x, mu, y):
        return b * eye

    def lions_drift_avg(t, targets, atoms, vecs, mu):
        targets = np.atleast_2d(targets)
        vbar = np.atleast_2d(vecs).mean(axis=0)
        return np.broadcast_to(b * vbar, (targets.shape[0], d))

    def lions_avg_features(t, atoms, vecs):
        return b * np.atleast_2d(vecs).mean(axis=0)

    def lions_avg_apply(t, targets, feats):
        targets = np.atleast_2d(targets)
        return np.broadcast_to(feats, (targets.shape[0], d))

    def sigma_star_a_inv(t, x):
        return ssai

    def analytic_moments(t, x0):
        # mean solves m' = (a+b) m; per-coordinate variance v' = 2 a v + sig^2
        mean = x0 * math.exp((a + b) * t)
        if a != 0.0:
            var = sig**2 * (1.0 - math.exp(2.0 * a * t)) / (-2.0 * a)
        else:
            var = sig**2 * t
        return mean, var

    return ModelSpec(
        name="mf_ou", d=d, m=d,
        drift=drift, diffusion=diffusion, drift_grad=drift_grad,
        lions_drift=lions_drift, lions_drift_avg=lions_drift_avg,
        lions_avg_features=lions_avg_features, lions_avg_apply=lions_avg_apply,
        dist_free_diffusion=True, sigma_star_a_inv=sigma_star_a_inv,
        analytic_moments=analytic_moments,
        admissibility=Admissibility(k=2.0, q=math.inf, holder_alpha=1.0,
                                    growth_m=0.0,
                                    lipschitz=2.0 * abs(a) + 2.0 * abs(b)),
        params={"a_coef": a, "b_coef": b, "sigma_coef": sig},
    )


def make_kuramoto(coupling: float, noise: float) -> ModelSpec:
    """Mean-field oscillator on the line: b(x, mu) = kappa E_mu[sin(Y - x)],
    constant scalar diffusion.  Smooth bounded derivatives; the measure
    kernel is kappa cos(y - x), so all averaged interactions reduce to the
    two trigonometric moments of the cloud."""
    if noise <= 0:
        raise ParameterError("noise must be > 0")
    kappa, sig = float(coupling), float(noise)
    sigma_mat = np.array([[sig]])
    ssai = np.array([[1.0 / sig]])

    def _trig(mu):
        return mu.stat("trig", lambda p: (np.sin(p[:, 0]).mean(),
                                          np.cos(p[:, 0]).mean()))

    def drift(t, x, mu):
        s_bar, c_bar = _trig(mu)
        return kappa * (s_bar * np.cos(x) - c_bar * np.sin(x))

    def diffusion(t, x, mu):
        return sigma_mat

    def drift_grad(t, x, mu):
        s_bar, c_bar = _trig(mu)
        g = -kappa * (c_bar * np.cos(x) + s_bar * np.sin(x))
        return g[..., None]          # (n, 1, 1) on (n, 1) input

    def lions_drift(t, x, mu, y):
        return np.array([[kappa * math.cos(float(np.ravel(y)[0]) -
                                           float(np.ravel(x)[0]))]])

    def lions_drift_avg(t, targets, atoms, vecs, mu):
        # mean_j kappa cos(a_j - y) v_j = cos y <cos a v> + sin y <sin a v>
        targets = np.atleast_2d(targets)[:, 0]
        a = np.atleast_2d(atoms)[:, 0]
        v = np.atleast_2d(vecs)[:, 0]
        f_cos = np.mean(np.cos(a) * v)
        f_sin = np.mean(np.sin(a) * v)
        out = kappa * (np.cos(targets) * f_cos + np.sin(targets) * f_sin)
        return out[:, None]

    def lions_avg_features(t, atoms, vecs):
        a = np.atleast_2d(atoms)[:, 0]
        v = np.atleast_2d(vecs)[:, 0]
        return np.array([np.mean(np.cos(a) * v), np.mean(np.sin(a) * v)])

    def lions_avg_apply(t, targets, feats):
        targets = np.atleast_2d(targets)[:, 0]
        out = kappa * (np.cos(targets) * feats[0] + np.sin(targets) * feats[1])
        return out[:, None]

    def sigma_star_a_inv(t, x):
        return ssai

    return ModelSpec(
        name="kuramoto", d=1, m=1,
        drift=drift, diffusion=diffusion, drift_grad=drift_grad,
        lions_drift=lions_drift, lions_drift_avg=lions_drift_avg,
        lions_avg_features=lions_avg_features, lions_avg_apply=lions_avg_apply,
        dist_free_diffusion=True, sigma_star_a_inv=sigma_star_a_inv,
        admissibility=Admissibility(k=2.0, q=math.inf, holder_alpha=1.0,
                                    growth_m=0.0, lipschitz=4.0 * abs(kappa)),
        params={"coupling": kappa, "noise": sig},
    )


def make_double_well(theta: float, kappa: float, sigma: float) -> ModelSpec:
    """Bistable drift -theta x^3 + x with linear attraction to the cloud
    mean.  One-sided Lipschitz only: shipped for exploratory runs and
    excluded from rate acceptance (``globally_lipschitz`` is False)."""
    if theta <= 0 or sigma <= 0:
        raise ParameterError("theta and sigma must be > 0")
    th, kap, sig = float(theta), float(kappa), float(sigma)
    sigma_mat = np.array([[sig]])
    ssai = np.array([[1.0 / sig]])

    def drift(t, x, mu):
        return -th * x**3 + x + kap * (mu.mean() - x)

    def diffusion(t, x, mu):
        return sigma_mat

    def drift_grad(t, x, mu):
        g = -3.0 * th * x**2 + 1.0 - kap
        return g[..., None]

    def lions_drift(t, x, mu, y):
        return np.array([[kap]])

    def lions_drift_avg(t, targets, atoms, vecs, mu):
        targets = np.atleast_2d(targets)
        vbar = np.atleast_2d(vecs).mean(axis=0)
        return np.broadcast_to(kap * vbar, (targets.shape[0], 1))

    def lions_avg_features(t, atoms, vecs):
        return kap * np.atleast_2d(vecs).mean(axis=0)

    def lions_avg_apply(t, targets, feats):
        targets = np.atleast_2d(targets)
        return np.broadcast_to(feats, (targets.shape[0], 1))

    def sigma_star_a_inv(t, x):
        return ssai

    return ModelSpec(
        name="double_well", d=1, m=1,
        drift=drift, diffusion=diffusion, drift_grad=drift_grad,
        lions_drift=lions_drift, lions_drift_avg=lions_drift_avg,
        lions_avg_features=lions_avg_features, lions_avg_apply=lions_avg_apply,
        dist_free_diffusion=True, sigma_star_a_inv=sigma_star_a_inv,
        admissibility=Admissibility(k=2.0, q=math.inf, holder_alpha=1.0,
                                    growth_m=0.0, lipschitz=1.0 + 2.0 * abs(kap),
                                    globally_lipschitz=False),
        params={"theta": th, "kappa": kap, "sigma": sig},
    )


BUILTIN_MODELS = {
    "mf_ou": make_mf_ou,
    "kuramoto": make_kuramoto,
    "double_well": make_double_well,
}


def make_model(model_id: str, params: dict) -> ModelSpec:
    try:
        factory = BUILTIN_MODELS[model_id]
    except KeyError:
        raise ParameterError(
            f"unknown model {model_id!r}; built-ins: {sorted(BUILTIN_MODELS)}")
    return factory(**params)


# ---------------------------------------------------------------------------
# finite-difference self-checks
# ---------------------------------------------------------------------------

def check_lions_kernel(model: ModelSpec, t, x, mu, y, h: float = 1e-4) -> float:
    """Max component error between the declared measure kernel and a
    central finite difference of the drift under an atom perturbation.

    Pushing a single atom of the uniform cloud by +/- h e_l perturbs the
    measure along a bump direction carrying mass 1/N, so

        N * (b(x, mu_{+h}) - b(x, mu_{-h})) / (2h)  ->  column l of D b(x, mu)(y),

    with O(h^2) error for the built-ins.  ``y`` selects the nearest atom.
    """
    if h <= 0:
        raise ParameterError("h must be > 0")
    mu = mu if isinstance(mu, EmpiricalMeasure) else EmpiricalMeasure(mu)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    j = int(np.argmin(np.linalg.norm(mu.points - y[None, :], axis=1)))
    atom = mu.points[j]
    n = mu.n
    declared = np.atleast_2d(model.lions_drift(t, x, mu, atom))
    err = 0.0
    for l in range(model.d):
        bump = np.zeros(model.d)
        bump[l] = h
        plus = mu.points.copy()
        plus[j] = atom + bump
        minus = mu.points.copy()
        minus[j] = atom - bump
        b_plus = np.ravel(model.drift(t, x[None, :], EmpiricalMeasure(plus)))
        b_minus = np.ravel(model.drift(t, x[None, :], EmpiricalMeasure(minus)))
        fd_col = n * (b_plus - b_minus) / (2.0 * h)
        err = max(err, float(np.max(np.abs(fd_col - declared[:, l]))))
    return err


def check_drift_gradient(model: ModelSpec, t, x, mu, h: float = 1e-4) -> float:
    """Max component error of drift_grad against central differences in x."""
    if h <= 0:
        raise ParameterError("h must be > 0")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    g = np.asarray(model.drift_grad(t, x[None, :], mu), dtype=float)
    if g.ndim == 3:
        g = g[0]
    declared = np.broadcast_to(np.atleast_2d(g), (model.d, model.d))
    err = 0.0
    for l in range(model.d):
        bump = np.zeros(model.d)
        bump[l] = h
        b_plus = np.ravel(model.drift(t, (x + bump)[None, :], mu))
        b_minus = np.ravel(model.drift(t, (x - bump)[None, :], mu))
        fd_col = (b_plus - b_minus) / (2.0 * h)
        err = max(err, float(np.max(np.abs(fd_col - declared[:, l]))))
    return err


def check_one_sided_bound(model: ModelSpec, seed: int = 0, n_samples: int = 200,
                          scale: float = 2.0, cloud_size: int = 32) -> float:
    """Sample the dissipativity inequality

        2 <x - y, b(x,mu) - b(y,nu)>^+ + |sigma(x,mu) - sigma(y,nu)|_HS^2
            <= K (|x - y|^2 + W_k(mu, nu)^2)

    on random quadruples and return the worst observed ratio to the
    right-hand side with the model's declared constant K.  Ratios <= 1
    mean the declared constant is honest on the sampled set.
    """
    from .measures import wasserstein_1d, wasserstein_assignment

    gen = np.random.Generator(np.random.Philox(key=[seed, 0x05BD]))
    k = model.admissibility.k
    K = model.admissibility.lipschitz
    worst = 0.0
    for _ in range(n_samples):
        x = scale * gen.standard_normal(model.d)
        y = scale * gen.standard_normal(model.d)
        mu = EmpiricalMeasure(scale * gen.standard_normal((cloud_size, model.d)))
        nu = EmpiricalMeasure(scale * gen.standard_normal((cloud_size, model.d)))
        bx = np.ravel(model.drift(0.0, x[None, :], mu))
        by = np.ravel(model.drift(0.0, y[None, :], nu))
        sx = np.asarray(model.diffusion(0.0, x[None, :], mu), dtype=float)
        sy = np.asarray(model.diffusion(0.0, y[None, :], nu), dtype=float)
        lhs = 2.0 * max(0.0, float(np.dot(x - y, bx - by)))
        lhs += float(np.sum((sx - sy) ** 2))
        if model.d == 1:
            w = wasserstein_1d(mu, nu, k)
        else:
            w = wasserstein_assignment(mu, nu, k)
        rhs = K * (float(np.sum((x - y) ** 2)) + w**2)
        if rhs > 0:
            worst = max(worst, lhs / rhs)
    return worst
