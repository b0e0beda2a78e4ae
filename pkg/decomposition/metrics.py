"""Per-pool usage aggregates and the alternative energy response metrics."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from errors import ContractViolationError, DataError, SchemaError
from features.layers import ChargingPool
from features.matrix import FeatureMatrix
from regression.ols import ols_fit

EVENT_COLUMNS = [
    "pool_id", "point_id", "start_time", "end_time", "connection_h", "charging_h", "idle_h", "energy_kwh", "rfid_count",
]
REQUIRED_COLUMNS = ["pool_id", "point_id", "energy_kwh", "charging_h"]
METRICS = ("energy", "energy_per_point", "max_point_energy", "energy_per_capacity")

MIN_TRANSACTIONS = 30
MIN_CAPACITY_KW = 1.0


@dataclass(frozen=True)
class PoolUsage:
    pool_id: str
    n_transactions: int
    avg_charging_time: float
    avg_power: float
    energy: float
    n_points: int
    capacity: float
    max_point_energy: float

    def __post_init__(self) -> None:
        for name in ("n_transactions", "avg_charging_time", "avg_power", "energy", "n_points"):
            if getattr(self, name) < 0:
                raise DataError(f"pool {self.pool_id}: {name} is negative")

    @property
    def energy_per_point(self) -> float:
        return self.energy / self.n_points if self.n_points else float("nan")

    @property
    def energy_per_capacity(self) -> float:
        return self.energy / self.capacity if self.capacity > 0 else float("nan")


def _validate_events(events: pd.DataFrame) -> pd.DataFrame:
    missing = [c for c in REQUIRED_COLUMNS if c not in events.columns]
    if missing:
        raise SchemaError(f"event log lacks columns {missing}")
    df = events.copy()
    df["pool_id"] = df["pool_id"].astype(str)
    df["point_id"] = df["point_id"].astype(str)
    for col in ("energy_kwh", "charging_h"):
        df[col] = pd.to_numeric(df[col], errors="coerce")
    bad = df[["energy_kwh", "charging_h"]].isna().any(axis=1) | (df["energy_kwh"] < 0) | (df["charging_h"] < 0)
    if bad.any():
        raise DataError(f"events with missing or negative energy/charging time: {list(df.index[bad][:20])}")
    stuck = (df["charging_h"] == 0) & (df["energy_kwh"] > 0)
    if stuck.any():
        raise DataError(f"events with energy but zero charging time: {list(df.index[stuck][:20])}")
    return df


def pool_metrics(
    events: pd.DataFrame,
    pools: Optional[Sequence[ChargingPool]] = None,
) -> Tuple[List[PoolUsage], pd.DataFrame]:
    """Aggregate an event log into per-pool usage and the four response metrics.

    t_i is the mean charging time per transaction and p_i the total energy
    over the total charging time, so y_i = n_i t_i p_i holds exactly. Point
    counts and capacities come from ``pools`` when given; otherwise points are
    counted from the log and capacity is unknown.
    """
    df = _validate_events(events)
    if df.empty:
        raise DataError("event log is empty")
    info: Dict[str, ChargingPool] = {p.pool_id: p for p in pools or []}
    usages = []
    for pool_id, g in df.groupby("pool_id", sort=True):
        n = len(g)
        energy = float(g["energy_kwh"].sum())
        charging = float(g["charging_h"].sum())
        per_point = g.groupby("point_id")["energy_kwh"].sum()
        pool = info.get(pool_id)
        usages.append(
            PoolUsage(
                pool_id=pool_id,
                n_transactions=n,
                avg_charging_time=charging / n,
                avg_power=energy / charging if charging > 0 else 0.0,
                energy=energy,
                n_points=int(pool.n_points) if pool else int(per_point.size),
                capacity=float(pool.capacity_kw) if pool else float("nan"),
                max_point_energy=float(per_point.max()),
            )
        )
    logging.info("Aggregated %d events into %d pools", len(df), len(usages))
    return usages, usage_frame(usages)


def usage_frame(usages: Sequence[PoolUsage]) -> pd.DataFrame:
    rows = []
    for u in usages:
        row = asdict(u)
        row["energy_per_point"] = u.energy_per_point
        row["energy_per_capacity"] = u.energy_per_capacity
        rows.append(row)
    return pd.DataFrame(rows).set_index("pool_id")


def eligible_pools(
    usages: Sequence[PoolUsage],
    min_transactions: int = MIN_TRANSACTIONS,
    min_capacity_kw: float = MIN_CAPACITY_KW,
) -> List[PoolUsage]:
    """Drop sparsely used pools and pools below the minimum capacity (unknown capacity passes)."""
    kept = [
        u for u in usages
        if u.n_transactions >= min_transactions and not (u.capacity < min_capacity_kw)
    ]
    logging.info("Kept %d of %d pools after usage filters", len(kept), len(usages))
    return kept


def response_metric_comparison(usages: Sequence[PoolUsage], X: FeatureMatrix) -> Tuple[pd.DataFrame, pd.DataFrame]:
    """OLS R² of each log response metric on ``X`` and the pairwise metric correlations."""
    frame = usage_frame(usages)
    missing = [i for i in X.observation_ids if i not in frame.index]
    if missing:
        raise SchemaError(f"no usage record for observations {missing[:10]}")
    frame = frame.loc[X.observation_ids]
    rows = []
    usable = []
    for metric in METRICS:
        values = frame[metric].to_numpy(dtype=float)
        if not np.all(np.isfinite(values)) or (values <= 0).any():
            rows.append({"metric": metric, "r2": np.nan, "reason": "non-positive or unknown values"})
            continue
        fit = ols_fit(X.values, np.log(values), X.feature_names)
        rows.append({"metric": metric, "r2": fit.r2, "reason": ""})
        usable.append(metric)
    if not usable:
        raise ContractViolationError("no response metric could be log-transformed")
    corr = frame[usable].astype(float).corr()
    return pd.DataFrame(rows), corr
