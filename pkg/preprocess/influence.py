"""Cook's distance filtering of influential observations."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any, Dict

import numpy as np

from errors import ContractViolationError, SingularDesignError
from features.matrix import FeatureMatrix
from regression.ols import ols_fit


@dataclass
class InfluenceReport:
    removed: np.ndarray
    distances: np.ndarray
    threshold: float
    mse_before: float
    mse_after: float

    def to_dict(self, observation_ids=None) -> Dict[str, Any]:
        ids = observation_ids if observation_ids is not None else list(range(len(self.distances)))
        return {
            "threshold": self.threshold,
            "removed": [str(ids[i]) for i in self.removed],
            "removed_distances": [float(self.distances[i]) if np.isfinite(self.distances[i]) else "inf" for i in self.removed],
            "mse_before": self.mse_before,
            "mse_after": self.mse_after,
        }


def cooks_distance(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Cook's distance of every row under an OLS fit with intercept.

    Observations with unit leverage get +inf.
    """
    fit = ols_fit(X, y)
    with np.errstate(divide="ignore", invalid="ignore"):
        d = np.array(fit.influence.cooks_distance[0], dtype=float)
    d[fit.leverages >= 1.0 - 1e-12] = np.inf
    return np.where(np.isnan(d), 0.0, d)


def cooks_filter(X: FeatureMatrix, y: np.ndarray, threshold: float = 0.015) -> InfluenceReport:
    """Flag rows whose Cook's distance exceeds ``threshold`` and report the OLS MSE before and after."""
    if threshold <= 0:
        raise ContractViolationError(f"Cook's threshold must be positive, got {threshold}")
    y = np.asarray(y, dtype=float)
    if X.n <= X.p + 1:
        raise ContractViolationError(f"Cook's distance needs n > p + 1, got n={X.n}, p={X.p}")
    d = cooks_distance(X.values, y)
    removed = np.flatnonzero(d > threshold)
    mse_before = ols_fit(X.values, y).mse
    keep = np.setdiff1d(np.arange(X.n), removed)
    try:
        mse_after = ols_fit(X.values[keep], y[keep]).mse
    except SingularDesignError as exc:
        logging.warning("OLS after Cook's filter is singular: %s", exc)
        mse_after = float("nan")
    logging.info("Cook's filter removed %d rows; OLS MSE %.4f -> %.4f", len(removed), mse_before, mse_after)
    return InfluenceReport(removed, d, threshold, mse_before, mse_after)
