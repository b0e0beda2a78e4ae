"""Nearest-point distances and charging-station aggregation into pools."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any, Hashable, List, Sequence, Tuple

import numpy as np
from scipy.spatial import cKDTree

from errors import ContractViolationError, EmptyInputError
from geometry.primitives import Point


def min_distance(origin: Point, targets: Sequence[Point]) -> float:
    """Euclidean distance from ``origin`` to the closest of ``targets``."""
    if len(targets) == 0:
        raise EmptyInputError("min_distance needs at least one target")
    arr = np.array([[t.x, t.y] for t in targets], dtype=float)
    d = arr - np.array([origin.x, origin.y])
    return float(np.sqrt((d * d).sum(axis=1)).min())


def nearest_distances(origins: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Batch nearest-target distance for an (n, 2) array of origins."""
    if len(targets) == 0:
        raise EmptyInputError("nearest_distances needs at least one target")
    tree = cKDTree(np.asarray(targets, dtype=float))
    dist, _ = tree.query(np.asarray(origins, dtype=float), k=1)
    return np.asarray(dist, dtype=float)


@dataclass(frozen=True)
class PoolGroup:
    """Stations merged into one charging pool around a representative."""

    representative_id: Hashable
    location: Point
    member_ids: Tuple[Hashable, ...]


def merge_pools(stations: Sequence[Tuple[Any, Point]], radius_m: float) -> List[PoolGroup]:
    """Greedy aggregation of stations into pools.

    Stations are visited in ascending id order; each unassigned station
    becomes a representative and absorbs every unassigned station within
    ``radius_m`` of it.
    """
    if not radius_m > 0:
        raise ContractViolationError(f"radius_m must be positive, got {radius_m}")
    if not stations:
        return []
    ordered = sorted(stations, key=lambda s: s[0])
    ids = [s[0] for s in ordered]
    if len(set(ids)) != len(ids):
        raise ContractViolationError("station ids must be unique")
    coords = np.array([[p.x, p.y] for _, p in ordered], dtype=float)
    tree = cKDTree(coords)
    assigned = np.zeros(len(ordered), dtype=bool)
    groups: List[PoolGroup] = []
    for i, (sid, loc) in enumerate(ordered):
        if assigned[i]:
            continue
        neighbours = sorted(j for j in tree.query_ball_point(coords[i], r=radius_m) if not assigned[j])
        assigned[neighbours] = True
        groups.append(PoolGroup(sid, loc, tuple(ids[j] for j in neighbours)))
    logging.info("Merged %d stations into %d pools (radius %.1f m)", len(ordered), len(groups), radius_m)
    return groups
