"""Multi-location synthetic studies with selective confounding.

Every location gets its own acceptance rate and its own random streams,
derived from the root seed by ``(location, purpose)``. Draws are made with
common random numbers (uniforms and standard normals transformed by the
parameters), so sweeping ``rho``, ``tau`` or ``k_z`` reuses the same
underlying randomness.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .core import GenConfig, Study, Treatment, Truth, stack_studies

_PURPOSES = {"policy": 0, "confounders": 1, "noise": 2, "treatment": 3}


@dataclass(frozen=True)
class LocationPolicy:
    location: int
    ar: float


def stream(seed: int, location: int, purpose: str) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(location, _PURPOSES[purpose]))
    return np.random.Generator(np.random.PCG64(ss))


def _scale(config: GenConfig) -> float:
    return config.k_x / (config.k_x + config.rho * config.k_z)


def gen_confounders(config: GenConfig, rng: np.random.Generator, size: int | None = None):
    """Draw ``x ~ N(0, 1)`` and ``z ~ N(rho * x, 1 - rho^2)`` coordinate-wise."""
    shape = (config.d,) if size is None else (size, config.d)
    x = rng.standard_normal(shape)
    e = rng.standard_normal(shape)
    z = config.rho * x + np.sqrt(1.0 - config.rho ** 2) * e
    return x, z


def true_mu_a1(x, z, config: GenConfig):
    """Noiseless outcome under the desired treatment."""
    x, z = np.asarray(x, float), np.asarray(z, float)
    return _scale(config) * (x[..., :config.k_x].sum(-1) + z[..., :config.k_z].sum(-1))


def true_mu_a3(x, z, config: GenConfig):
    """Noiseless outcome of a dual-treatment case; uses all ``d`` coordinates."""
    x, z = np.asarray(x, float), np.asarray(z, float)
    sx, sz = x.sum(-1), z.sum(-1)
    return _scale(config) * (sx + sz - config.tau * (sx + (z ** 2).sum(-1)))


def true_nu(x, config: GenConfig):
    """Counterfactual target ``E[Y_a1 | X = x]``."""
    x = np.asarray(x, float)
    return _scale(config) * (x[..., :config.k_x].sum(-1) + config.rho * x[..., :config.k_z].sum(-1))


def true_propensity(x, z, config: GenConfig):
    x, z = np.asarray(x, float), np.asarray(z, float)
    u = (x[..., :config.k_x].sum(-1) + z[..., :config.k_z].sum(-1)) / np.sqrt(config.k_x + config.k_z)
    return expit(u)


def true_conditional_propensity(x, z, config: GenConfig):
    """``P(T = A3 | x, z, T != A1)``: the final decision reverts with probability ``1 - pi``."""
    return 1.0 - true_propensity(x, z, config)


def noise_variance(mu_a1) -> float:
    mu = np.asarray(mu_a1, float)
    return float(mu @ mu) / (2 * len(mu))


def gen_outcome(mu_values, config: GenConfig, rng: np.random.Generator) -> np.ndarray:
    """Add per-sample Gaussian noise whose variance is ``|mu|^2 / (2n)`` over the location."""
    mu = np.asarray(mu_values, float)
    sigma = np.sqrt(noise_variance(mu))
    return mu + sigma * rng.standard_normal(mu.shape)


def assign_treatment(pi, ar: float, rng: np.random.Generator):
    """Two-stage decision: initial removal ``d1``, then final decision ``d2``.

    Accepts a scalar or an array of propensities.
    """
    pi_arr = np.asarray(pi, float)
    u1 = rng.random(pi_arr.shape)
    u2 = rng.random(pi_arr.shape)
    d1 = u1 < np.minimum(0.5 * pi_arr / ar, 0.99)
    d2 = u2 < pi_arr
    t = np.where(~d1, Treatment.A1, np.where(d2, Treatment.A2, Treatment.A3)).astype(np.int8)
    if t.ndim == 0:
        return Treatment(int(t))
    return t


def location_policies(config: GenConfig) -> list[LocationPolicy]:
    lo, hi = config.ar_range
    return [LocationPolicy(loc, float(stream(config.seed, loc, "policy").uniform(lo, hi)))
            for loc in range(config.L)]


def _generate_location(config: GenConfig, policy: LocationPolicy) -> Study:
    loc = policy.location
    x, z = gen_confounders(config, stream(config.seed, loc, "confounders"), size=config.n)
    mu_a1 = true_mu_a1(x, z, config)
    mu_a3 = true_mu_a3(x, z, config)
    pi = true_propensity(x, z, config)
    t = assign_treatment(pi, policy.ar, stream(config.seed, loc, "treatment"))
    y_a1 = gen_outcome(mu_a1, config, stream(config.seed, loc, "noise"))
    eps = y_a1 - mu_a1
    # A2 outcomes are never read by a learner; mu_a3 keeps the rows complete
    y = np.where(t == Treatment.A1, y_a1, mu_a3 + eps)
    truth = Truth(true_nu(x, config), mu_a1, mu_a3, y_a1, pi, z)
    return Study(x=x, z=z, t=t, y=y, location=np.full(config.n, loc),
                 truth=truth, config=config)


def generate_study(config: GenConfig, workers: int = 1) -> Study:
    """Generate all ``config.L`` locations; the result does not depend on ``workers``."""
    config.validate()
    policies = location_policies(config)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(lambda p: _generate_location(config, p), policies))
    else:
        parts = [_generate_location(config, p) for p in policies]
    study = stack_studies(parts)
    ar = np.array([p.ar for p in policies])
    return Study(x=study.x, z=study.z, t=study.t, y=study.y, location=study.location,
                 truth=study.truth, config=config, ar=ar)
