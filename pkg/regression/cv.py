"""k-fold cross-validated choice of the Lasso penalty."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from sklearn.model_selection import KFold

from errors import ContractViolationError, DegenerateDataError
from regression.lasso import LassoFit, lasso_path

GRID_START = -4.0
GRID_STOP = 0.0
GRID_STEP = 0.02


def default_grid(start: float = GRID_START, stop: float = GRID_STOP, step: float = GRID_STEP) -> np.ndarray:
    """Penalties ``10**i`` for ``i`` from ``start`` to ``stop`` inclusive in ``step`` increments."""
    if step <= 0 or stop < start:
        raise ContractViolationError(f"invalid grid spec start={start} stop={stop} step={step}")
    n = int(round((stop - start) / step)) + 1
    return 10.0 ** np.linspace(start, start + step * (n - 1), n)


@dataclass
class CVResult:
    lambda_grid: np.ndarray
    mse_mean: np.ndarray
    mse_std: np.ndarray
    lambda_cv: float
    fit_cv: LassoFit
    nnz: np.ndarray
    n_folds_used: int
    mse_original_mean: Optional[np.ndarray] = None
    mse_original_std: Optional[np.ndarray] = None
    skipped_folds: List[int] = field(default_factory=list)

    @property
    def best_index(self) -> int:
        return int(np.flatnonzero(self.lambda_grid == self.lambda_cv)[0])

    def to_frame(self) -> pd.DataFrame:
        df = pd.DataFrame(
            {"lambda": self.lambda_grid, "mse_mean": self.mse_mean, "mse_std": self.mse_std, "nnz": self.nnz}
        )
        if self.mse_original_mean is not None:
            df["mse_original_mean"] = self.mse_original_mean
            df["mse_original_std"] = self.mse_original_std
        return df

    def to_csv(self, path: Union[str, Path]) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False)


def _fold_errors(X, y, train, test, grid, lam2, inverse):
    fits = lasso_path(X[train], y[train], grid, lam2)
    preds = np.column_stack([f.predict(X[test]) for f in fits])
    err = ((preds - y[test, None]) ** 2).mean(axis=0)
    if inverse is None:
        return err, None
    orig = ((inverse(preds) - inverse(y[test])[:, None]) ** 2).mean(axis=0)
    return err, orig


def _spread(a: np.ndarray) -> np.ndarray:
    return a.std(axis=0, ddof=1) if len(a) > 1 else np.zeros(a.shape[1])


def cv_select(
    X: np.ndarray,
    y: np.ndarray,
    grid: Optional[Sequence[float]] = None,
    k: int = 10,
    seed: int = 0,
    lam2: float = 0.0,
    feature_names: Optional[Sequence[str]] = None,
    inverse: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    n_jobs: int = 1,
) -> CVResult:
    """Pick the penalty minimising the mean k-fold test MSE, then refit on all rows.

    Folds are a seeded shuffled partition. Ties on the minimum go to the
    largest penalty. ``inverse`` maps the modelled response back to energy so
    the fold MSE is also reported on the original scale.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(y)
    if not (2 <= k <= n):
        raise ContractViolationError(f"need n >= k >= 2, got n={n}, k={k}")
    grid = np.asarray(default_grid() if grid is None else grid, dtype=float)
    if len(grid) == 0 or (grid < 0).any():
        raise ContractViolationError("lambda grid must be non-empty and non-negative")

    folds = list(KFold(n_splits=k, shuffle=True, random_state=seed).split(X))
    usable, skipped = [], []
    for i, (train, test) in enumerate(folds):
        if np.ptp(y[train]) == 0:
            logging.warning("Skipping fold %d: training response has zero variance", i)
            skipped.append(i)
        else:
            usable.append((train, test))
    if not usable:
        raise DegenerateDataError("every fold has a constant training response")

    results = Parallel(n_jobs=n_jobs)(
        delayed(_fold_errors)(X, y, train, test, grid, lam2, inverse) for train, test in usable
    )
    errs = np.vstack([r[0] for r in results])
    mse_mean = errs.mean(axis=0)
    best = float(mse_mean.min())
    ties = np.flatnonzero(mse_mean == best)
    idx = int(ties[np.argmax(grid[ties])])

    path = lasso_path(X, y, grid, lam2, feature_names)
    result = CVResult(
        lambda_grid=grid,
        mse_mean=mse_mean,
        mse_std=_spread(errs),
        lambda_cv=float(grid[idx]),
        fit_cv=path[idx],
        nnz=np.array([f.nnz for f in path]),
        n_folds_used=len(usable),
        skipped_folds=skipped,
    )
    if inverse is not None:
        orig = np.vstack([r[1] for r in results])
        result.mse_original_mean = orig.mean(axis=0)
        result.mse_original_std = _spread(orig)
    logging.debug("lambda_cv=%.4g (mse %.4g, %d nonzero)", result.lambda_cv, best, result.fit_cv.nnz)
    return result
