"""Bootstrap stability of cross-validated Lasso coefficients."""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import joblib
import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from tqdm import tqdm

from errors import AnalyticsError, ContractViolationError, DegenerateDataError
from regression.cv import cv_select, default_grid

# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------
ZERO_FRACTION_MAX = 0.05
FLIP_FRACTION_MAX = 0.01
FAILURE_FRACTION_MAX = 0.01
BATCH_SIZE = int(os.getenv("EVCA_BOOTSTRAP_BATCH", "25"))
SD_MODES = ("replicate", "full")


# ---------------------------------------------------------------------------
# Helper functions
# ---------------------------------------------------------------------------

def tukey_box(samples: np.ndarray) -> Dict[str, float]:
    """Median, quartiles and 1.5 IQR whiskers of one coefficient's samples."""
    s = np.sort(np.asarray(samples, dtype=float))
    q1, med, q3 = np.percentile(s, [25, 50, 75])
    iqr = q3 - q1
    lo = s[s >= q1 - 1.5 * iqr]
    hi = s[s <= q3 + 1.5 * iqr]
    return {
        "median": float(med),
        "q1": float(q1),
        "q3": float(q3),
        "whisker_low": float(lo.min()),
        "whisker_high": float(hi.max()),
        "n_outliers": int(len(s) - np.count_nonzero((s >= lo.min()) & (s <= hi.max()))),
    }


def reference_sign(samples: np.ndarray) -> float:
    """Sign of the median, or the majority sign of nonzero samples when the median is zero."""
    med = float(np.median(samples))
    if med != 0:
        return float(np.sign(med))
    nz = samples[samples != 0]
    if len(nz) == 0:
        return 0.0
    pos = np.count_nonzero(nz > 0)
    return 1.0 if pos >= len(nz) - pos else -1.0


def _replicate(X, y, b, seed, k, grid, lam2, sd_mode, full_sd):
    rng = np.random.default_rng([seed, b])
    rows = rng.integers(0, len(y), len(y))
    cv_seed = int(rng.integers(0, 2**31 - 1))
    Xb, yb = X[rows], y[rows]
    result = cv_select(Xb, yb, grid, k, cv_seed, lam2)
    sd = Xb.std(axis=0) if sd_mode == "replicate" else full_sd
    return result.fit_cv.coefficients * sd, result.lambda_cv


def _run_batch(X, y, batch, seed, k, grid, lam2, sd_mode, full_sd):
    out = []
    for b in batch:
        try:
            coef, lam = _replicate(X, y, b, seed, k, grid, lam2, sd_mode, full_sd)
            out.append((b, coef, lam, None))
        except (AnalyticsError, ValueError) as exc:
            out.append((b, None, float("nan"), str(exc)))
    return out


# ---------------------------------------------------------------------------
# Report
# ---------------------------------------------------------------------------

@dataclass
class BootstrapReport:
    feature_names: List[str]
    samples: np.ndarray
    lambda_cv: np.ndarray
    B: int
    seed: int
    k: int
    lambda_grid: np.ndarray
    sd_mode: str = "replicate"
    failures: List[Tuple[int, str]] = field(default_factory=list)

    @property
    def n_successful(self) -> int:
        return self.samples.shape[0]

    def zero_fraction(self) -> np.ndarray:
        return (self.samples == 0).mean(axis=0)

    def flip_fraction(self) -> np.ndarray:
        out = np.zeros(len(self.feature_names))
        for j in range(len(self.feature_names)):
            s = self.samples[:, j]
            ref = reference_sign(s)
            out[j] = 0.0 if ref == 0 else float(np.mean(np.sign(s) == -ref))
        return out

    def significant(self) -> np.ndarray:
        return (self.zero_fraction() < ZERO_FRACTION_MAX) & (self.flip_fraction() <= FLIP_FRACTION_MAX)

    def summary(self) -> pd.DataFrame:
        """One row per feature: Tukey box statistics, zero and flip fractions, significance."""
        rows = []
        zero, flip, sig = self.zero_fraction(), self.flip_fraction(), self.significant()
        for j, name in enumerate(self.feature_names):
            row: Dict[str, Any] = {"feature": name}
            row.update(tukey_box(self.samples[:, j]))
            row.update({"zero_fraction": float(zero[j]), "flip_fraction": float(flip[j]), "significant": bool(sig[j])})
            rows.append(row)
        return pd.DataFrame(rows)

    def significant_features(self) -> List[str]:
        return [n for n, s in zip(self.feature_names, self.significant()) if s]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "B": self.B,
            "n_successful": self.n_successful,
            "seed": self.seed,
            "k": self.k,
            "sd_mode": self.sd_mode,
            "lambda_grid": [float(l) for l in self.lambda_grid],
            "failures": [{"replicate": b, "error": msg} for b, msg in self.failures],
            "features": self.summary().to_dict("records"),
        }

    def save_samples(self, path: Union[str, Path]) -> None:
        """Persist the raw per-replicate standardized coefficients."""
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        joblib.dump({"feature_names": self.feature_names, "samples": self.samples, "lambda_cv": self.lambda_cv}, path)


def load_samples(path: Union[str, Path]) -> Dict[str, Any]:
    return joblib.load(path)


# ---------------------------------------------------------------------------
# Main
# ---------------------------------------------------------------------------

def bootstrap_lasso(
    X: np.ndarray,
    y: np.ndarray,
    B: int = 10_000,
    k: int = 10,
    grid: Optional[Sequence[float]] = None,
    seed: int = 0,
    lam2: float = 0.0,
    feature_names: Optional[Sequence[str]] = None,
    sd_mode: str = "replicate",
    n_jobs: int = 1,
    progress: bool = True,
) -> BootstrapReport:
    """Resample rows B times, choose the penalty by k-fold CV on each resample
    and collect the standardized coefficients.

    Replicate ``b`` draws from ``default_rng([seed, b])`` so the report is the
    same for any ``n_jobs``.
    """
    if B < 1:
        raise ContractViolationError(f"B must be >= 1, got {B}")
    if sd_mode not in SD_MODES:
        raise ContractViolationError(f"sd_mode must be one of {SD_MODES}")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    names = list(feature_names) if feature_names is not None else [f"x{j}" for j in range(X.shape[1])]
    grid = np.asarray(default_grid() if grid is None else grid, dtype=float)
    full_sd = X.std(axis=0)

    batches = [list(range(s, min(s + BATCH_SIZE, B))) for s in range(0, B, BATCH_SIZE)]
    tasks = (delayed(_run_batch)(X, y, batch, seed, k, grid, lam2, sd_mode, full_sd) for batch in batches)
    disable = not progress or not logging.getLogger().isEnabledFor(logging.INFO)
    results = Parallel(n_jobs=n_jobs)(tqdm(tasks, total=len(batches), desc="bootstrap", unit="batch", disable=disable))

    coefs, lams, failures = [], [], []
    for b, coef, lam, err in (r for batch in results for r in batch):
        if err is None:
            coefs.append(coef)
            lams.append(lam)
        else:
            logging.warning("Bootstrap replicate %d failed: %s", b, err)
            failures.append((b, err))
    if len(failures) > FAILURE_FRACTION_MAX * B:
        raise DegenerateDataError(f"{len(failures)} of {B} bootstrap replicates failed")
    report = BootstrapReport(
        feature_names=names,
        samples=np.vstack(coefs) if coefs else np.empty((0, len(names))),
        lambda_cv=np.asarray(lams),
        B=B,
        seed=seed,
        k=k,
        lambda_grid=grid,
        sd_mode=sd_mode,
        failures=failures,
    )
    logging.info("Bootstrap done: %d replicates, %d significant features", report.n_successful, len(report.significant_features()))
    return report
