"""Display tables for bootstrap results and per-stratum runs."""

from __future__ import annotations

import logging
import zlib
from typing import Dict, Optional, Sequence

import numpy as np
import pandas as pd

from errors import ContractViolationError
from inference.bootstrap import BootstrapReport, bootstrap_lasso

DISPLAY_THRESHOLD = 0.10
POPULATION_THRESHOLD = 50_000


def stability_report(report: BootstrapReport, display_threshold: float = DISPLAY_THRESHOLD) -> pd.DataFrame:
    """Features set to zero in fewer than ``display_threshold`` of replicates,
    by descending median standardized coefficient.

    ``same_sign_fraction`` completes the stacked bar next to the zero and
    flip fractions.
    """
    summary = report.summary()
    table = summary[summary["zero_fraction"] < display_threshold].copy()
    table["same_sign_fraction"] = 1.0 - table["zero_fraction"] - table["flip_fraction"]
    table = table.sort_values("median", ascending=False, kind="mergesort").reset_index(drop=True)
    return table


def stratum_seed(seed: int, label: str) -> int:
    """Seed of one stratum, derived from the master seed and the stratum label."""
    return int(np.random.SeedSequence([seed, zlib.crc32(str(label).encode("utf-8"))]).generate_state(1)[0])


def threshold_strata(values: Sequence[float], threshold: float = POPULATION_THRESHOLD, labels=("below", "above")) -> np.ndarray:
    """Two-level stratum labels from a numeric column (e.g. municipality residents)."""
    v = np.asarray(values, dtype=float)
    if np.isnan(v).any():
        raise ContractViolationError("stratum source column has missing values")
    return np.where(v >= threshold, labels[1], labels[0])


def stratified_run(
    X: np.ndarray,
    y: np.ndarray,
    strata: Sequence[str],
    B: int = 10_000,
    k: int = 10,
    grid: Optional[Sequence[float]] = None,
    seed: int = 0,
    feature_names: Optional[Sequence[str]] = None,
    n_jobs: int = 1,
    **kwargs,
) -> Dict[str, BootstrapReport]:
    """Independent bootstrap per stratum, each seeded by :func:`stratum_seed`."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    strata = np.asarray([str(s) for s in strata])
    if len(strata) != len(y):
        raise ContractViolationError("one stratum label per observation is required")
    labels = sorted(set(strata))
    counts = {s: int(np.count_nonzero(strata == s)) for s in labels}
    small = {s: c for s, c in counts.items() if c < 10 * k}
    if small:
        raise ContractViolationError(f"strata with fewer than {10 * k} rows: {small}")
    out: Dict[str, BootstrapReport] = {}
    for label in labels:
        rows = strata == label
        logging.info("Stratum %s: %d rows", label, counts[label])
        out[label] = bootstrap_lasso(
            X[rows], y[rows], B=B, k=k, grid=grid, seed=stratum_seed(seed, label),
            feature_names=feature_names, n_jobs=n_jobs, **kwargs,
        )
    return out
