"""Goodness of fit: Kolmogorov-Smirnov test, P-P/Q-Q data and the cube-root beta density."""

from __future__ import annotations

from typing import Callable, Tuple

import numpy as np
import pandas as pd
import scipy.stats

from errors import ConfigError, ContractViolationError

SERIES_TOL = 1e-12
SERIES_MAX_TERMS = 1000
EPS = 1e-12


def ks_statistic(y: np.ndarray, cdf: Callable[[np.ndarray], np.ndarray]) -> float:
    """sup |F_n - F| from the order statistics: max over i of i/n - F(x_(i)) and F(x_(i)) - (i-1)/n."""
    x = np.sort(np.asarray(y, dtype=float))
    n = len(x)
    if n == 0:
        raise ContractViolationError("KS statistic of an empty sample")
    f = np.asarray(cdf(x), dtype=float)
    i = np.arange(1, n + 1)
    return float(max((i / n - f).max(), (f - (i - 1) / n).max()))


def kolmogorov_sf(x: float) -> float:
    """P(K > x) for the Kolmogorov distribution.

    Uses the alternating series 2 * sum (-1)^(k-1) exp(-2 k² x²), truncated
    once terms drop below 1e-12; for x < 1 the series converges slowly, so
    the equivalent Jacobi theta form of the CDF is summed instead.
    """
    if x <= 0:
        return 1.0
    if x < 1.0:
        total = 0.0
        for k in range(1, SERIES_MAX_TERMS):
            term = np.exp(-((2 * k - 1) ** 2) * np.pi ** 2 / (8 * x * x))
            total += term
            if term < SERIES_TOL:
                break
        return float(min(max(1.0 - np.sqrt(2 * np.pi) / x * total, 0.0), 1.0))
    total = 0.0
    for k in range(1, SERIES_MAX_TERMS):
        term = np.exp(-2.0 * k * k * x * x)
        total += term if k % 2 else -term
        if term < SERIES_TOL:
            break
    return float(min(max(2.0 * total, 0.0), 1.0))


def ks_test(y: np.ndarray, fit) -> Tuple[float, float]:
    """(D, p) of a fitted distribution against its own sample, asymptotic p-value."""
    d = ks_statistic(y, fit.cdf)
    return d, kolmogorov_sf(np.sqrt(len(y)) * d)


def pp_qq_data(y: np.ndarray, fit) -> pd.DataFrame:
    """P-P and Q-Q pairs at plotting positions (i - 0.5)/n.

    Fitted quantiles invert the base-scale CDF exactly and map back through
    the inverse transform.
    """
    x = np.sort(np.asarray(y, dtype=float))
    n = len(x)
    level = (np.arange(1, n + 1) - 0.5) / n
    return pd.DataFrame(
        {
            "level": level,
            "fitted_cdf": fit.cdf(x),
            "sample_quantile": x,
            "fitted_quantile": fit.ppf(level),
        }
    )


def transformed_beta_pdf(
    y: np.ndarray,
    alpha: float,
    beta: float,
    y_min: float,
    y_max: float,
    bounds_space: str = "transformed",
) -> np.ndarray:
    """Density of Y when Z = (cbrt(Y) - y_min) / (y_max - y_min) is beta(alpha, beta).

    f_Y(y) = f_Z(z) / (3 (y_max - y_min) y^(2/3)). With
    ``bounds_space="energy"`` the bounds are read as kWh and cube-rooted first.
    Zero outside the support.
    """
    if alpha <= 0 or beta <= 0:
        raise ContractViolationError("beta parameters must be positive")
    if bounds_space == "energy":
        y_min, y_max = float(np.cbrt(y_min)), float(np.cbrt(y_max))
    elif bounds_space != "transformed":
        raise ConfigError(f"bounds_space must be 'transformed' or 'energy', got {bounds_space!r}")
    if not y_max > y_min:
        raise ContractViolationError("y_max must exceed y_min")
    y = np.asarray(y, dtype=float)
    c = np.cbrt(y)
    inside = (c >= y_min) & (c <= y_max) & (y > 0)
    out = np.zeros(y.shape)
    z = np.clip((c[inside] - y_min) / (y_max - y_min), EPS, 1.0 - EPS)
    out[inside] = scipy.stats.beta.pdf(z, alpha, beta) / (3.0 * (y_max - y_min) * c[inside] ** 2)
    return out
