"""Ordinary least squares with a rank check that names dependent columns."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, List, Optional, Sequence

import numpy as np
import scipy.linalg
import statsmodels.api as sm

from errors import ContractViolationError, SingularDesignError

RANK_TOL = 1e-10


@dataclass
class OLSFit:
    intercept: float
    coefficients: np.ndarray
    r2: float
    mse: float
    residuals: np.ndarray
    leverages: np.ndarray
    fitted: np.ndarray
    feature_names: List[str]
    influence: Any = field(default=None, repr=False)

    @property
    def rss(self) -> float:
        return float(self.residuals @ self.residuals)


def _design(X: np.ndarray, fit_intercept: bool) -> np.ndarray:
    return np.column_stack([np.ones(len(X)), X]) if fit_intercept else X


def check_rank(design: np.ndarray, names: Sequence[str]) -> None:
    """Raise :class:`SingularDesignError` when ``design`` lacks full column rank.

    A pivoted QR decomposition orders columns by how much new direction they
    add; the trailing pivots past the numerical rank are the dependent ones.
    """
    n, q = design.shape
    if n <= q:
        raise SingularDesignError(f"{n} observations cannot identify {q} parameters", dependent_columns=list(names))
    scale = np.abs(design).max(axis=0)
    scale[scale == 0] = 1.0
    _, r, piv = scipy.linalg.qr(design / scale, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    rank = int(np.sum(diag > RANK_TOL * max(diag[0], 1e-300) * q))
    if rank < q:
        dependent = [names[j] for j in sorted(piv[rank:])]
        raise SingularDesignError(
            f"design has rank {rank} < {q}; dependent columns: {', '.join(dependent)}",
            dependent_columns=dependent,
        )


def ols_fit(
    X: np.ndarray,
    y: np.ndarray,
    feature_names: Optional[Sequence[str]] = None,
    fit_intercept: bool = True,
) -> OLSFit:
    """Least-squares fit of ``y`` on ``X`` (with an intercept by default).

    R² is ``1 - RSS/TSS`` with the centered TSS when an intercept is fitted
    and the uncentered one otherwise. ``mse`` is the in-sample ``RSS / n``.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=float)
    if len(X) != len(y):
        raise ContractViolationError(f"X has {len(X)} rows but y has {len(y)}")
    names = list(feature_names) if feature_names is not None else [f"x{j}" for j in range(X.shape[1])]
    design = _design(X, fit_intercept)
    check_rank(design, (["intercept"] if fit_intercept else []) + names)

    res = sm.OLS(y, design).fit(method="qr")
    params = np.asarray(res.params, dtype=float)
    resid = np.asarray(res.resid, dtype=float)
    rss = float(resid @ resid)
    tss = float(((y - y.mean()) ** 2).sum()) if fit_intercept else float(y @ y)
    r2 = 1.0 - rss / tss if tss > 0 else (1.0 if rss == 0 else 0.0)
    influence = res.get_influence()
    leverages = np.asarray(influence.hat_matrix_diag, dtype=float)
    return OLSFit(
        intercept=float(params[0]) if fit_intercept else 0.0,
        coefficients=params[1:] if fit_intercept else params,
        r2=float(r2),
        mse=rss / len(y),
        residuals=resid,
        leverages=leverages,
        fitted=np.asarray(res.fittedvalues, dtype=float),
        feature_names=names,
        influence=influence,
    )
