"""Shared builders for small synthetic model instances used across tests."""

import numpy as np

from fleetspline.basis import basis_matrix, make_uniform_knots
from fleetspline.model import FleetData, HierarchicalModel, Hyperparameters


def make_instance(S=4, E=2, K=4, N=40, T=12, seed=0, centered=True):
    """Random but valid (data, basis, hyperparameters, model) quadruple."""
    rng = np.random.default_rng(seed)
    ship_to_type = rng.integers(0, E, size=S)
    # guarantee every type owns at least one ship
    ship_to_type[:E] = np.arange(E)
    ship = np.concatenate([np.arange(S), rng.integers(0, S, size=N - S)])
    age = rng.integers(1, T + 1, size=N)
    y = rng.normal(size=N)
    data = FleetData(n_ages=T, age=age, ship=ship, ship_to_type=ship_to_type,
                     y=y)
    degree = min(3, K - 1)
    kv = make_uniform_knots(1, T, K - degree - 1, degree)
    bm = basis_matrix(kv, np.arange(1, T + 1, dtype=float))
    assert bm.n_basis == K
    hp = Hyperparameters(mu_alpha_bar=0.3, mu_w_bar=rng.normal(size=K) * 0.2)
    model = HierarchicalModel(data, bm, hp, centered=centered)
    return data, bm, hp, model


def finite_difference_gradient(f, x, h=1e-5):
    g = np.empty_like(x)
    for i in range(len(x)):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2.0 * h)
    return g


def max_relative_error(analytic, numeric):
    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / denom))


def small_fleet(seed=0):
    """Two-type seven-ship panel small enough for quick full fits."""
    from fleetspline.datagen import FleetScenario, generate

    sc = FleetScenario(ships_per_type=(3, 4), lifecycle=12, ship_sd=0.1,
                       noise_sd=0.08, p_censor=0.0, warranty_censor_age=2,
                       window_lengths=(6, 10))
    return generate(sc, seed)


def quick_config(seed=1, n_interior=0, degree=3):
    from fleetspline.sampler import SamplerConfig
    from fleetspline.workflow import FitConfig

    return FitConfig(
        n_interior=n_interior, degree=degree,
        sampler=SamplerConfig(n_chains=2, n_warmup=400, n_samples=400,
                              seed=seed, max_leapfrog_steps=32),
        prefit_warmup=300, prefit_samples=300)
