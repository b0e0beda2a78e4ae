"""Statistical recovery experiments on planted models. Run with ``pytest -m slow``."""

import numpy as np
import pytest
import scipy.integrate

from distfit.families import TRANSFORMS, get_transform
from distfit.fitting import fit_distribution
from distfit.goodness import transformed_beta_pdf
from distfit.scan import best_cell, model_scan
from features.matrix import extract_frame
from inference.bootstrap import bootstrap_lasso
from regression.cv import cv_select, default_grid
from synth.world import attribute_names, generate_world, load_synth_config

pytestmark = pytest.mark.slow

SEEDS = range(20)
GRID = default_grid(-4.0, 0.0, 0.1)


def _planted(seed, **overrides):
    world = generate_world(load_synth_config(seed=seed, **overrides), n_jobs=-1)
    tiles = world.sources()[:1]
    values, _, _ = extract_frame(world.pools, tiles, world.config.radius_m, n_jobs=-1)
    names = [f"tiles.{a}" for a in attribute_names(world.config)]
    y = np.array([world.truth["pools"][p]["log_energy"] for p in values.index])
    return values[names].to_numpy(), y, names, set(world.truth["support"])


def test_cv_on_pure_noise_stays_sparse():
    passed = 0
    for seed in SEEDS:
        rng = np.random.default_rng(seed)
        X = rng.standard_normal((300, 50))
        y = rng.standard_normal(300)
        result = cv_select(X, y, GRID, k=10, seed=seed, n_jobs=-1)
        passed += int(np.count_nonzero(result.fit_cv.coefficients) <= 2)
    assert passed >= 18


def test_cv_keeps_strong_sparse_signal():
    passed = 0
    for seed in SEEDS:
        X, y, names, support = _planted(seed)
        result = cv_select(X, y, GRID, k=10, seed=seed, feature_names=names, n_jobs=-1)
        selected = {n for n, b in zip(names, result.fit_cv.coefficients) if b != 0}
        passed += int(support <= selected)
    assert passed >= 18


def test_bootstrap_recovers_planted_support():
    exact = 0
    for seed in SEEDS:
        X, y, names, support = _planted(seed)
        report = bootstrap_lasso(X, y, B=500, k=10, grid=GRID, seed=seed, feature_names=names, n_jobs=-1, progress=False)
        exact += int(set(report.significant_features()) == support)
    assert exact >= 18


def test_null_worlds_select_almost_nothing():
    counts = []
    for seed in SEEDS:
        X, y, names, support = _planted(seed, support={})
        assert not support
        report = bootstrap_lasso(X, y, B=500, k=10, grid=GRID, seed=seed, feature_names=names, n_jobs=-1, progress=False)
        counts.append(len(report.significant_features()))
    assert np.mean(counts) <= 0.5


# ---------------------------------------------------------------------------
# Distribution fitting
# ---------------------------------------------------------------------------

PLANTED_FAMILIES = {
    "beta": {"alpha": 2.0, "beta": 2.0},
    "gamma": {"shape": 3.0, "scale": 2.0},
    "weibull": {"shape": 1.8, "scale": 5.0},
}


def _sample_transformed(rng, family, params, n):
    if family == "beta":
        return 1.0 + 4.0 * rng.beta(params["alpha"], params["beta"], n)
    if family == "gamma":
        return rng.gamma(params["shape"], params["scale"], n)
    return params["scale"] * rng.weibull(params["shape"], n)


@pytest.mark.parametrize("transform", sorted(TRANSFORMS))
@pytest.mark.parametrize("family", sorted(PLANTED_FAMILIES))
def test_every_scan_cell_recovers_planted_parameters(family, transform):
    rng = np.random.default_rng(7)
    planted = PLANTED_FAMILIES[family]
    z = _sample_transformed(rng, family, planted, 20_000)
    y = get_transform(transform).inverse(z)
    fit = fit_distribution(y, family, transform, with_ks=False)
    for name, value in planted.items():
        assert fit.params[name] == pytest.approx(value, rel=0.1), name
    if family == "beta":
        np.testing.assert_allclose(fit.bounds, [1.0, 5.0], atol=0.05)


def test_planted_beta_cbrt_wins_the_scan():
    wins = 0
    for seed in SEEDS:
        rng = np.random.default_rng(seed)
        energies = (1.0 + 4.0 * rng.beta(0.7, 0.7, 2000)) ** 3
        best = best_cell(model_scan(energies))
        wins += int((best["family"], best["transform"]) == ("beta", "cbrt"))
    assert wins >= 15


def test_transformed_beta_pdf_matches_pushed_forward_histogram():
    rng = np.random.default_rng(11)
    alpha, beta, lo, hi = 2.0, 3.0, 1.5, 4.0
    n = 200_000
    energies = (lo + (hi - lo) * rng.beta(alpha, beta, n)) ** 3
    edges = np.linspace(lo ** 3, hi ** 3, 41)
    counts, _ = np.histogram(energies, bins=edges)
    probs = np.array([
        scipy.integrate.quad(lambda v: transformed_beta_pdf(np.array([v]), alpha, beta, lo, hi)[0], a, b)[0]
        for a, b in zip(edges[:-1], edges[1:])
    ])
    assert probs.sum() == pytest.approx(1.0, abs=1e-6)
    # binomial spread of each bin count, 5 standard deviations
    spread = 5.0 * np.sqrt(n * probs * (1.0 - probs)) + 1.0
    assert np.all(np.abs(counts - n * probs) <= spread)
