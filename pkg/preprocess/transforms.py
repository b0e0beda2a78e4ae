"""Response transforms and the diagnostics used to choose one."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from typing import Dict, Iterable, Sequence, Union

import numpy as np
import pandas as pd
from scipy.special import boxcox, inv_boxcox
from sklearn.linear_model import LinearRegression
from sklearn.model_selection import KFold, cross_val_score

from errors import ConfigError, ContractViolationError
from features.matrix import FeatureMatrix
from regression.ols import ols_fit

KINDS = ("identity", "sqrt", "square", "log", "box-cox")
_BOX_COX = re.compile(r"^box-cox\(\s*([-+0-9.eE]+)\s*\)$")


@dataclass(frozen=True)
class ResponseTransform:
    kind: str = "log"
    lam: float = 0.1

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ConfigError(f"Unknown response transform {self.kind!r}")

    @classmethod
    def parse(cls, spec: Union[str, "ResponseTransform"]) -> "ResponseTransform":
        """Accept ``log``, ``sqrt``, ``box-cox(0.1)`` and the like."""
        if isinstance(spec, ResponseTransform):
            return spec
        spec = spec.strip().lower()
        m = _BOX_COX.match(spec)
        if m:
            return cls("box-cox", float(m.group(1)))
        return cls(spec)

    @property
    def label(self) -> str:
        return f"box-cox({self.lam:g})" if self.kind == "box-cox" else self.kind

    def _check_domain(self, y: np.ndarray) -> None:
        if self.kind in ("log", "sqrt", "box-cox") and (y <= 0).any():
            raise ContractViolationError(f"{self.label} transform needs positive responses")
        if self.kind == "square" and (y < 0).any():
            raise ContractViolationError("square transform needs non-negative responses")

    def apply(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        self._check_domain(y)
        if self.kind == "identity":
            return y.copy()
        if self.kind == "sqrt":
            return np.sqrt(y)
        if self.kind == "square":
            return y * y
        if self.kind == "log":
            return np.log(y)
        return boxcox(y, self.lam)

    def inverse(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        if self.kind == "identity":
            return z.copy()
        if self.kind == "sqrt":
            return np.square(z)
        if self.kind == "square":
            return np.sqrt(np.clip(z, 0.0, None))
        if self.kind == "log":
            return np.exp(z)
        return inv_boxcox(z, self.lam)


def transform_response(y: np.ndarray, kind: Union[str, ResponseTransform] = "log") -> np.ndarray:
    return ResponseTransform.parse(kind).apply(y)


def residual_diagnostics(
    X: FeatureMatrix,
    y: np.ndarray,
    kinds: Iterable[Union[str, ResponseTransform]] = ("identity", "sqrt", "log", "box-cox(0.1)"),
) -> Dict[str, pd.DataFrame]:
    """Fitted/residual pairs of an OLS fit for each candidate transform.

    Each frame carries the in-sample MSE in ``attrs["mse"]``.
    """
    out = {}
    for kind in kinds:
        t = ResponseTransform.parse(kind)
        fit = ols_fit(X.values, t.apply(y), X.feature_names)
        frame = pd.DataFrame({"observation_id": X.observation_ids, "fitted": fit.fitted, "residual": fit.residuals})
        frame.attrs["mse"] = fit.mse
        frame.attrs["r2"] = fit.r2
        out[t.label] = frame
        logging.info("Transform %s: OLS MSE %.4f, R2 %.3f", t.label, fit.mse, fit.r2)
    return out


def expand_features(X: FeatureMatrix) -> FeatureMatrix:
    """Add sqrt(x), x² and log(x+1) columns for every non-binary feature."""
    frame = X.to_frame()
    extra = {}
    for name in X.feature_names:
        col = frame[name].to_numpy()
        if set(np.unique(col)) <= {0.0, 1.0}:
            continue
        extra[f"{name}^2"] = col * col
        if col.min() >= 0:
            extra[f"sqrt({name})"] = np.sqrt(col)
        if col.min() > -1:
            extra[f"log1p({name})"] = np.log1p(col)
    expanded = pd.concat([frame, pd.DataFrame(extra, index=frame.index)], axis=1)
    return FeatureMatrix.from_frame(expanded, X.provenance)


def _cv_mse(values: np.ndarray, y: np.ndarray, k: int, seed: int) -> float:
    folds = KFold(n_splits=k, shuffle=True, random_state=seed)
    scores = cross_val_score(LinearRegression(), values, y, cv=folds, scoring="neg_mean_squared_error")
    return float(-scores.mean())


def expansion_diagnostic(X: FeatureMatrix, y: np.ndarray, k: int = 10, seed: int = 0) -> Dict[str, float]:
    """k-fold OLS CV-MSE with and without the nonlinear feature expansion."""
    y = np.asarray(y, dtype=float)
    if len(y) < k:
        raise ContractViolationError(f"need at least {k} observations for {k}-fold CV")
    expanded = expand_features(X)
    result = {
        "mse_base": _cv_mse(X.values, y, k, seed),
        "mse_expanded": _cv_mse(expanded.values, y, k, seed),
        "p_base": float(X.p),
        "p_expanded": float(expanded.p),
    }
    logging.info("Feature expansion CV-MSE %.4f -> %.4f", result["mse_base"], result["mse_expanded"])
    return result
