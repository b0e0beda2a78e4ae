"""Family x transform grid of fits ranked by the KS p-value."""

from __future__ import annotations

import json
import logging
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from distfit.families import CORE_FAMILIES, EXPERIMENTAL_FAMILIES, TRANSFORMS
from distfit.fitting import fit_distribution
from errors import AnalyticsError, DegenerateDataError

SCAN_COLUMNS = ["family", "transform", "method", "params", "ks_statistic", "p_value", "feasible", "error"]


def model_scan(
    y: np.ndarray,
    families: Optional[Sequence[str]] = None,
    transforms: Optional[Sequence[str]] = None,
    experimental: bool = False,
) -> pd.DataFrame:
    """Fit every family on every transform; infeasible cells are kept with their error.

    The frame's ``attrs["degenerate"]`` is set when no cell could be fitted.
    """
    if families is None:
        families = [f.value for f in CORE_FAMILIES]
        if experimental:
            families += [f.value for f in EXPERIMENTAL_FAMILIES]
    transforms = list(transforms or TRANSFORMS)
    rows = []
    for family in families:
        for transform in transforms:
            row = {"family": family, "transform": transform, "method": "", "params": "",
                   "ks_statistic": np.nan, "p_value": np.nan, "feasible": False, "error": ""}
            try:
                fit = fit_distribution(y, family, transform, experimental=experimental)
                row.update(
                    method=fit.method,
                    params=json.dumps(fit.params, sort_keys=True),
                    ks_statistic=fit.ks[0],
                    p_value=fit.ks[1],
                    feasible=True,
                )
            except AnalyticsError as exc:
                logging.info("Cell %s/%s infeasible: %s", family, transform, exc)
                row["error"] = f"{exc.__class__.__name__}: {exc}"
            rows.append(row)
    table = pd.DataFrame(rows, columns=SCAN_COLUMNS)
    table.attrs["degenerate"] = not table["feasible"].any()
    if table.attrs["degenerate"]:
        logging.warning("No distribution could be fitted; the sample is degenerate")
    return table


def best_cell(table: pd.DataFrame) -> pd.Series:
    """Feasible cell with the largest KS p-value."""
    feasible = table[table["feasible"]]
    if feasible.empty:
        raise DegenerateDataError("model scan has no feasible cell")
    return feasible.loc[feasible["p_value"].idxmax()]
