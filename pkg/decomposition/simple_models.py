"""Through-origin regressions of pool energy on products of its factors."""

from __future__ import annotations

import logging
from typing import Callable, Dict, Sequence

import numpy as np
import pandas as pd

from decomposition.metrics import PoolUsage
from errors import ContractViolationError

# model name -> regressor built from (n, t, p)
MODEL_MAP: Dict[str, Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]] = {
    "y=kn": lambda n, t, p: n,
    "y=kt": lambda n, t, p: t,
    "y=kp": lambda n, t, p: p,
    "y=k(t*p)": lambda n, t, p: t * p,
    "y=k(n*p)": lambda n, t, p: n * p,
    "y=k(n*t)": lambda n, t, p: n * t,
}


def simple_models(usages: Sequence[PoolUsage], centered_r2: bool = False) -> pd.DataFrame:
    """One row per model: k, R², and mean/stdev/cv of the per-pool ratio y/x.

    k = <x, y>/<x, x>. R² uses the uncentered total sum of squares
    (1 - RSS / sum y²) unless ``centered_r2`` is set. The ratio statistics
    use pools with a nonzero regressor and the sample standard deviation.
    """
    if len(usages) < 2:
        raise ContractViolationError("simple models need at least two pools")
    n = np.array([u.n_transactions for u in usages], dtype=float)
    t = np.array([u.avg_charging_time for u in usages], dtype=float)
    p = np.array([u.avg_power for u in usages], dtype=float)
    y = np.array([u.energy for u in usages], dtype=float)
    tss = float(((y - y.mean()) ** 2).sum()) if centered_r2 else float(y @ y)

    rows = []
    for name, build in MODEL_MAP.items():
        x = build(n, t, p)
        row = {"model": name, "k": np.nan, "r2": np.nan, "mean": np.nan, "stdev": np.nan, "cv": np.nan, "reason": ""}
        if not np.any(x != 0):
            row["reason"] = "regressor is zero for every pool"
            logging.warning("Skipping %s: %s", name, row["reason"])
            rows.append(row)
            continue
        k = float(x @ y / (x @ x))
        resid = y - k * x
        ratio = y[x != 0] / x[x != 0]
        mean = float(ratio.mean())
        stdev = float(ratio.std(ddof=1)) if len(ratio) > 1 else 0.0
        row.update(
            k=k,
            r2=1.0 - float(resid @ resid) / tss if tss > 0 else np.nan,
            mean=mean,
            stdev=stdev,
            cv=stdev / mean if mean != 0 else np.nan,
        )
        rows.append(row)
    return pd.DataFrame(rows)
