"""Buffer statistics: the per-pool contextual features.

Quantities attached to polygons are assumed uniformly spread over each
polygon, so a buffer receives the share proportional to the intersection
area. Ratio attributes (averages, percentages) use intersection-area
weighted means.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from errors import SchemaError
from features.layers import ChargingPool, SpatialLayer
from geometry.clipping import intersection_area, polyline_length_in
from geometry.pools import nearest_distances
from geometry.primitives import Buffer, Point, polygon_area

M2_PER_KM2 = 1e6
Overlaps = Tuple[np.ndarray, np.ndarray, np.ndarray]


@dataclass(frozen=True)
class Apportioned:
    """A buffer value with the share of buffer area lacking valid data."""

    value: float
    coverage_gap: float

    @property
    def missing(self) -> bool:
        return math.isnan(self.value)


def _require_polygon_layer(layer: SpatialLayer) -> None:
    if layer.geometry_type != "polygon":
        raise SchemaError(f"Layer {layer.name} is not a polygon layer")


def overlaps(buffer: Buffer, layer: SpatialLayer) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Candidate rows, their intersection areas and their full areas."""
    idx = layer.candidates(buffer.bounds)
    inter = np.zeros(len(idx))
    full = np.zeros(len(idx))
    for k, i in enumerate(idx):
        for part in layer.parts[i]:
            inter[k] += intersection_area(part, buffer)
            full[k] += polygon_area(part)
    keep = inter > 0
    return idx[keep], inter[keep], full[keep]


def apportion_count(buffer: Buffer, layer: SpatialLayer, attr: str, hits: Optional[Overlaps] = None) -> Apportioned:
    """Share of a count attribute falling inside the buffer.

    ``hits`` reuses the result of :func:`overlaps` across attributes of one layer.
    """
    _require_polygon_layer(layer)
    values = layer.require(attr)
    idx, inter, full = hits if hits is not None else overlaps(buffer, layer)
    vals = values.to_numpy(dtype=float)[idx] if len(idx) else np.empty(0)
    valid = ~np.isnan(vals)
    total = float(np.sum(vals[valid] * inter[valid] / full[valid]))
    covered = float(inter[valid].sum())
    return Apportioned(total, _gap(covered, buffer))


def areal_mean(buffer: Buffer, layer: SpatialLayer, attr: str, hits: Optional[Overlaps] = None) -> Apportioned:
    """Intersection-area weighted mean of an average or percentage attribute."""
    _require_polygon_layer(layer)
    values = layer.require(attr)
    idx, inter, _ = hits if hits is not None else overlaps(buffer, layer)
    vals = values.to_numpy(dtype=float)[idx] if len(idx) else np.empty(0)
    valid = ~np.isnan(vals)
    covered = float(inter[valid].sum())
    if covered <= 0:
        return Apportioned(float("nan"), 1.0)
    return Apportioned(float(np.dot(vals[valid], inter[valid]) / covered), _gap(covered, buffer))


def _gap(covered: float, buffer: Buffer) -> float:
    return float(min(max(1.0 - covered / buffer.area, 0.0), 1.0))


def _inside_convex(points: np.ndarray, buffer: Buffer) -> np.ndarray:
    ring = buffer.ring.outer_array
    a = ring[:-1]
    e = np.diff(ring, axis=0)
    side = e[None, :, 0] * (points[:, None, 1] - a[None, :, 1]) - e[None, :, 1] * (points[:, None, 0] - a[None, :, 0])
    return np.all(side >= 0, axis=1)


def poi_features(
    pool: Point,
    buffer: Buffer,
    pois: SpatialLayer,
    category: Optional[str] = None,
    category_attr: str = "category",
    exclude: Optional[np.ndarray] = None,
) -> Tuple[float, float]:
    """Distance to the closest point of a category and its density in the buffer.

    Returns ``(min_dist_m, density_per_km2)``. ``min_dist`` is NaN when no point
    of the category exists anywhere in the layer. ``exclude`` is a boolean mask
    over the layer's point parts to leave out (e.g. the pool itself).
    """
    pts = pois.point_array
    mask = np.ones(len(pts), dtype=bool)
    if category is not None:
        cats = pois.require(category_attr).to_numpy()[pois.point_owner]
        mask &= cats == category
    if exclude is not None:
        mask &= ~exclude
    pts = pts[mask]
    if len(pts) == 0:
        return float("nan"), 0.0
    min_dist = float(nearest_distances(np.array([[pool.x, pool.y]]), pts)[0])
    count = int(_inside_convex(pts, buffer).sum())
    return min_dist, count / (buffer.area / M2_PER_KM2)


def land_use_areas(buffer: Buffer, layer: SpatialLayer, category_attr: str = "category") -> Dict[str, float]:
    """Area of every land-use category inside the buffer, in square meters."""
    _require_polygon_layer(layer)
    cats = layer.require(category_attr)
    idx, inter, _ = overlaps(buffer, layer)
    out: Dict[str, float] = {}
    for i, a in zip(idx, inter):
        c = cats.iloc[i]
        if pd.isna(c):
            continue
        out[str(c)] = out.get(str(c), 0.0) + float(a)
    return out


def _point_segment_distance(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ab = b - a
    denom = (ab * ab).sum(axis=1)
    t = np.clip(((p - a) * ab).sum(axis=1) / denom, 0.0, 1.0)
    closest = a + t[:, None] * ab
    return np.hypot(*(closest - p).T)


@dataclass(frozen=True)
class RoadSpec:
    """How a road layer encodes flows and segment types."""

    flows: Mapping[str, Sequence[str]]
    type_attr: str = "segment_type"
    segment_types: Sequence[str] = ("residential", "primary", "secondary", "tertiary")

    @property
    def dummy_types(self) -> Sequence[str]:
        # first type is the baseline level
        return list(self.segment_types)[1:]


def mode_flows(roads: SpatialLayer, spec: RoadSpec) -> pd.DataFrame:
    """Daily flow per transport mode, each the sum of its day-part attributes."""
    out = pd.DataFrame(index=roads.attributes.index)
    for mode, attrs in spec.flows.items():
        cols = [roads.require(a).astype(float) for a in attrs]
        out[mode] = pd.concat(cols, axis=1).sum(axis=1, min_count=1)
    return out


def road_traffic_features(
    pool: Point,
    buffer: Buffer,
    roads: SpatialLayer,
    spec: RoadSpec,
    flows: Optional[pd.DataFrame] = None,
) -> Dict[str, float]:
    """Road and traffic densities in the buffer plus nearest-segment features.

    A segment inside the buffer without a flow for some mode makes that mode's
    density (and the all-mode density) missing.
    """
    modes = list(spec.flows)
    record: Dict[str, float] = {"road_density": 0.0, "traffic_density.all": 0.0}
    for m in modes:
        record[f"traffic_density.{m}"] = 0.0
    for m in modes:
        record[f"nearest_flow.{m}"] = float("nan")
    for t in spec.dummy_types:
        record[f"nearest_type.{t}"] = float("nan")
    if len(roads) == 0:
        return record
    if flows is None:
        flows = mode_flows(roads, spec)
    flow_arr = flows[modes].to_numpy(dtype=float)

    idx = roads.candidates(buffer.bounds)
    total_len = 0.0
    weighted = np.zeros(len(modes))
    for i in idx:
        seg_len = sum(polyline_length_in(part, buffer) for part in roads.parts[i])
        if seg_len <= 0:
            continue
        total_len += seg_len
        weighted += seg_len * flow_arr[i]
    area = buffer.area
    record["road_density"] = total_len / area
    for k, m in enumerate(modes):
        record[f"traffic_density.{m}"] = weighted[k] / area
    record["traffic_density.all"] = float(weighted.sum()) / area

    nearest = _nearest_feature(pool, roads)
    for k, m in enumerate(modes):
        record[f"nearest_flow.{m}"] = float(flow_arr[nearest, k])
    seg_type = roads.require(spec.type_attr).iloc[nearest]
    for t in spec.dummy_types:
        record[f"nearest_type.{t}"] = 1.0 if seg_type == t else 0.0
    return record


def _nearest_feature(pool: Point, roads: SpatialLayer) -> int:
    starts, ends, owner = roads.segment_arrays
    d = _point_segment_distance(np.array([[pool.x, pool.y]]), starts, ends)
    return int(owner[int(np.argmin(d))])


def pool_features(pool: ChargingPool, strategic_label: str = "strategic") -> Dict[str, float]:
    """Technical and location features of the pool itself."""
    return {
        "n_points": float(pool.n_points),
        "max_power": float(pool.capacity_kw),
        "x": pool.location.x,
        "y": pool.location.y,
        "rollout_strategic": 1.0 if pool.rollout == strategic_label else 0.0,
    }
