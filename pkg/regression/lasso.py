"""Lasso and Elastic-Net by cyclic coordinate descent.

Minimises, on internally standardized features,

    (1/2n) * sum_i (y_i - b0 - sum_j x_ij b_j)^2 + lam * sum_j |s_j b_j| + lam2 * sum_j (s_j b_j)^2

where ``s_j`` is the population standard deviation of feature ``j``. The
intercept is unpenalised and coefficients are reported on the original scale.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from errors import ContractViolationError, ConvergenceError, EmptyInputError

TOL = 1e-9
MAX_SWEEPS = 100_000

logger = logging.getLogger(__name__)


@dataclass
class LassoFit:
    intercept: float
    coefficients: np.ndarray
    lambda_: float
    lambda2: float
    objective: float
    n_iterations: int
    scale: np.ndarray = field(repr=False)
    feature_names: List[str] = field(default_factory=list)

    @property
    def standardized_coefficients(self) -> np.ndarray:
        return self.coefficients * self.scale

    @property
    def nnz(self) -> int:
        return int(np.count_nonzero(self.coefficients))

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.intercept + np.asarray(X, dtype=float) @ self.coefficients


@dataclass
class _Standardized:
    mean: np.ndarray
    scale: np.ndarray
    y_mean: float
    gram: np.ndarray
    corr: np.ndarray
    yy: float
    usable: np.ndarray


def _standardize(X: np.ndarray, y: np.ndarray) -> _Standardized:
    n = len(y)
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    usable = scale > 0
    safe = np.where(usable, scale, 1.0)
    Xs = (X - mean) / safe
    Xs[:, ~usable] = 0.0
    yc = y - y.mean()
    return _Standardized(
        mean=mean,
        scale=scale,
        y_mean=float(y.mean()),
        gram=Xs.T @ Xs / n,
        corr=Xs.T @ yc / n,
        yy=float(yc @ yc) / n,
        usable=usable,
    )


def _check_inputs(X: np.ndarray, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or len(X) != len(y):
        raise ContractViolationError(f"X of shape {X.shape} does not match y of length {len(y)}")
    if len(y) == 0:
        raise EmptyInputError("cannot fit on zero observations")
    return X, y


def _smooth_objective(std: _Standardized, b: np.ndarray) -> float:
    return 0.5 * (std.yy - 2.0 * std.corr @ b + b @ std.gram @ b)


def _penalised(std: _Standardized, b: np.ndarray, lam: float, lam2: float) -> float:
    return _smooth_objective(std, b) + lam * np.abs(b).sum() + lam2 * (b @ b)


def _sweep(std: _Standardized, b: np.ndarray, grad: np.ndarray, coords: Sequence[int], lam: float, lam2: float) -> float:
    """One pass of coordinate updates; ``grad`` holds ``corr - gram @ b`` and is kept current."""
    max_delta = 0.0
    denom = 1.0 + 2.0 * lam2
    gram = std.gram
    for j in coords:
        old = b[j]
        rho = grad[j] + old
        if rho > lam:
            new = (rho - lam) / denom
        elif rho < -lam:
            new = (rho + lam) / denom
        else:
            new = 0.0
        delta = new - old
        if delta != 0.0:
            b[j] = new
            grad -= delta * gram[:, j]
            if abs(delta) > max_delta:
                max_delta = abs(delta)
    return max_delta


def _descend(
    std: _Standardized,
    lam: float,
    lam2: float,
    b: np.ndarray,
    tol: float,
    max_sweeps: int,
    check_monotone: bool,
) -> Tuple[np.ndarray, int]:
    """Active-set coordinate descent from the warm start ``b`` (modified in place)."""
    usable = np.flatnonzero(std.usable)
    grad = std.corr - std.gram @ b
    sweeps = 0
    last = _penalised(std, b, lam, lam2) if check_monotone else None

    def run(coords):
        nonlocal sweeps, last
        delta = _sweep(std, b, grad, coords, lam, lam2)
        sweeps += 1
        if check_monotone:
            current = _penalised(std, b, lam, lam2)
            if current > last + 1e-12 * max(1.0, abs(last)):
                raise ConvergenceError(
                    "objective increased during coordinate descent",
                    last_iterate=b.copy(),
                    diagnostics={"sweep": sweeps, "previous": last, "current": current},
                )
            last = current
        return delta

    while sweeps < max_sweeps:
        if run(usable) < tol:
            return b, sweeps
        active = usable[b[usable] != 0.0]
        while sweeps < max_sweeps and len(active):
            if run(active) < tol:
                break
    raise ConvergenceError(
        f"coordinate descent did not converge in {max_sweeps} sweeps (lambda={lam:g})",
        last_iterate=b.copy(),
        diagnostics={"lambda": lam, "lambda2": lam2, "sweeps": sweeps},
    )


def _finish(std: _Standardized, b: np.ndarray, X: np.ndarray, y: np.ndarray, lam: float, lam2: float, sweeps: int, names: List[str]) -> LassoFit:
    coef = np.zeros_like(b)
    coef[std.usable] = b[std.usable] / std.scale[std.usable]
    intercept = std.y_mean - float(std.mean @ coef)
    fit = LassoFit(intercept, coef, lam, lam2, 0.0, sweeps, std.scale.copy(), names)
    fit.objective = lasso_objective(X, y, fit.intercept, fit.coefficients, lam, lam2)
    return fit


def lasso_objective(X: np.ndarray, y: np.ndarray, intercept: float, coefficients: np.ndarray, lam: float, lam2: float = 0.0) -> float:
    """Penalised objective at ``(intercept, coefficients)`` given on the original scale."""
    X, y = _check_inputs(X, y)
    r = y - intercept - X @ coefficients
    bs = coefficients * X.std(axis=0)
    return float(r @ r / (2 * len(y)) + lam * np.abs(bs).sum() + lam2 * (bs @ bs))


def lambda_max(X: np.ndarray, y: np.ndarray) -> float:
    """Smallest lambda at which every Lasso coefficient is zero."""
    X, y = _check_inputs(X, y)
    std = _standardize(X, y)
    return float(np.abs(std.corr).max()) if len(std.corr) else 0.0


def lasso_fit(
    X: np.ndarray,
    y: np.ndarray,
    lam: float,
    lam2: float = 0.0,
    feature_names: Optional[Sequence[str]] = None,
    tol: float = TOL,
    max_sweeps: int = MAX_SWEEPS,
    warm_start: Optional[np.ndarray] = None,
    check_monotone: Optional[bool] = None,
) -> LassoFit:
    """Lasso (``lam2 = 0``) or Elastic-Net fit at a single penalty.

    ``warm_start`` is a standardized coefficient vector. The objective
    monotonicity check runs by default whenever DEBUG logging is enabled.
    """
    if lam < 0 or lam2 < 0:
        raise ContractViolationError(f"penalties must be non-negative, got lambda={lam}, lambda2={lam2}")
    X, y = _check_inputs(X, y)
    names = list(feature_names) if feature_names is not None else [f"x{j}" for j in range(X.shape[1])]
    std = _standardize(X, y)
    if check_monotone is None:
        check_monotone = logger.isEnabledFor(logging.DEBUG)
    b = np.zeros(X.shape[1]) if warm_start is None else np.array(warm_start, dtype=float)
    b, sweeps = _descend(std, lam, lam2, b, tol, max_sweeps, check_monotone)
    return _finish(std, b, X, y, lam, lam2, sweeps, names)


def lasso_path(
    X: np.ndarray,
    y: np.ndarray,
    lambdas: Sequence[float],
    lam2: float = 0.0,
    feature_names: Optional[Sequence[str]] = None,
    tol: float = TOL,
    max_sweeps: int = MAX_SWEEPS,
) -> List[LassoFit]:
    """Fits along ``lambdas`` (any order), warm-started from largest to smallest.

    Returned fits follow the order of ``lambdas``.
    """
    X, y = _check_inputs(X, y)
    if any(l < 0 for l in lambdas) or lam2 < 0:
        raise ContractViolationError("penalties must be non-negative")
    names = list(feature_names) if feature_names is not None else [f"x{j}" for j in range(X.shape[1])]
    std = _standardize(X, y)
    check_monotone = logger.isEnabledFor(logging.DEBUG)
    order = np.argsort(-np.asarray(lambdas, dtype=float), kind="stable")
    fits: List[Optional[LassoFit]] = [None] * len(lambdas)
    b = np.zeros(X.shape[1])
    for i in order:
        lam = float(lambdas[i])
        b, sweeps = _descend(std, lam, lam2, b, tol, max_sweeps, check_monotone)
        fits[i] = _finish(std, b.copy(), X, y, lam, lam2, sweeps, names)
    return fits


def kkt_violation(X: np.ndarray, y: np.ndarray, fit: LassoFit) -> float:
    """Largest breach of the subgradient optimality conditions of ``fit``.

    Zero coefficients need ``|g_j| <= lam``; nonzero ones need
    ``g_j = lam * sign(b_j)``, with ``g_j`` the standardized residual
    correlation net of the ridge term.
    """
    X, y = _check_inputs(X, y)
    scale = X.std(axis=0)
    usable = scale > 0
    Xs = (X[:, usable] - X[:, usable].mean(axis=0)) / scale[usable]
    r = y - fit.predict(X)
    b = fit.coefficients[usable] * scale[usable]
    g = Xs.T @ r / len(y) - 2.0 * fit.lambda2 * b
    zero = b == 0
    out = np.zeros_like(g)
    out[zero] = np.maximum(np.abs(g[zero]) - fit.lambda_, 0.0)
    out[~zero] = np.abs(g[~zero] - fit.lambda_ * np.sign(b[~zero]))
    return float(out.max()) if len(out) else 0.0


def check_kkt(X: np.ndarray, y: np.ndarray, fit: LassoFit, tol: float = 1e-6) -> bool:
    return kkt_violation(X, y, fit) <= tol
