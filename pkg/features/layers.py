"""Spatial layers, charging pools and their file formats.

Layers are ingested from GeoJSON FeatureCollections (shapely parses the
geometries) or, for point layers, from CSV files with ``x``/``y`` columns.
Coordinates must already be projected to a planar CRS in meters.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from shapely.geometry import LineString, MultiLineString, MultiPoint, MultiPolygon, mapping, shape
from shapely.geometry import Point as ShapelyPoint
from shapely.geometry import Polygon as ShapelyPolygon
from shapely.geometry.polygon import orient

from errors import DataError, SchemaError
from geometry.pools import merge_pools
from geometry.primitives import Point, Polygon, Polyline

Geometry = Union[Point, Polygon, Polyline]


class Kind(str, Enum):
    COUNT = "count"
    AVERAGE = "average"
    PERCENTAGE = "percentage"
    CATEGORY_AREA = "category-area"
    POINT_SET = "point-set"
    FLOW = "flow"


@dataclass(frozen=True)
class AttributeKind:
    """A layer attribute together with the rule used to apportion it."""

    name: str
    kind: Kind

    @classmethod
    def parse(cls, name: str, kind: str) -> "AttributeKind":
        try:
            return cls(name, Kind(kind))
        except ValueError as exc:
            raise SchemaError(f"Unknown attribute kind {kind!r} for {name}") from exc


GEOMETRY_TYPES = ("point", "polyline", "polygon")


@dataclass(frozen=True)
class SpatialLayer:
    """Geometries plus an attribute table with one row per feature.

    Each feature holds a tuple of parts so multi-part geometries keep a single
    attribute row.
    """

    name: str
    geometry_type: str
    parts: Tuple[Tuple[Geometry, ...], ...]
    attributes: pd.DataFrame = field(compare=False)

    def __post_init__(self) -> None:
        if self.geometry_type not in GEOMETRY_TYPES:
            raise SchemaError(f"Unknown geometry type {self.geometry_type!r}")
        if len(self.parts) != len(self.attributes):
            raise SchemaError(
                f"Layer {self.name}: {len(self.parts)} geometries but {len(self.attributes)} attribute rows"
            )

    def __len__(self) -> int:
        return len(self.parts)

    def require(self, attr: str) -> pd.Series:
        if attr not in self.attributes.columns:
            raise SchemaError(f"Attribute {attr!r} absent from layer {self.name}")
        return self.attributes[attr]

    @cached_property
    def bounds_array(self) -> np.ndarray:
        """(n, 4) array of per-feature bounding boxes (minx, miny, maxx, maxy)."""
        out = np.empty((len(self.parts), 4))
        for i, parts in enumerate(self.parts):
            b = np.array([_bounds(g) for g in parts])
            out[i] = (b[:, 0].min(), b[:, 1].min(), b[:, 2].max(), b[:, 3].max())
        return out

    @cached_property
    def point_array(self) -> np.ndarray:
        """(m, 2) coordinates of every point part, for point layers."""
        if self.geometry_type != "point":
            raise SchemaError(f"Layer {self.name} is not a point layer")
        return np.array([[p.x, p.y] for parts in self.parts for p in parts], dtype=float).reshape(-1, 2)

    @cached_property
    def point_owner(self) -> np.ndarray:
        """Feature row index of every entry of :attr:`point_array`."""
        return np.array([i for i, parts in enumerate(self.parts) for _ in parts], dtype=int)

    @cached_property
    def segment_arrays(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Start points, end points and owning row of every polyline segment."""
        if self.geometry_type != "polyline":
            raise SchemaError(f"Layer {self.name} is not a polyline layer")
        starts, ends, owner = [], [], []
        for i, parts in enumerate(self.parts):
            for line in parts:
                v = line.array
                starts.append(v[:-1])
                ends.append(v[1:])
                owner.append(np.full(len(v) - 1, i))
        if not starts:
            return np.empty((0, 2)), np.empty((0, 2)), np.empty(0, dtype=int)
        return np.vstack(starts), np.vstack(ends), np.concatenate(owner)

    def candidates(self, bounds: Tuple[float, float, float, float]) -> np.ndarray:
        """Indices of features whose bounding box overlaps ``bounds``."""
        if not self.parts:
            return np.empty(0, dtype=int)
        b = self.bounds_array
        hit = (b[:, 0] <= bounds[2]) & (b[:, 2] >= bounds[0]) & (b[:, 1] <= bounds[3]) & (b[:, 3] >= bounds[1])
        return np.flatnonzero(hit)

    def with_attributes(self, attributes: pd.DataFrame) -> "SpatialLayer":
        return SpatialLayer(self.name, self.geometry_type, self.parts, attributes.reset_index(drop=True))

    def translated(self, dx: float, dy: float) -> "SpatialLayer":
        parts = tuple(tuple(g.translated(dx, dy) for g in p) for p in self.parts)
        return SpatialLayer(self.name, self.geometry_type, parts, self.attributes.copy())


def _bounds(g: Geometry) -> Tuple[float, float, float, float]:
    if isinstance(g, Point):
        return (g.x, g.y, g.x, g.y)
    return g.bounds


@dataclass(frozen=True)
class ChargingPool:
    """Aggregated charging station with its location and technical data."""

    pool_id: str
    location: Point
    n_points: int = 1
    capacity_kw: float = float("nan")
    rollout: str = ""
    stratum: str = ""

    def translated(self, dx: float, dy: float) -> "ChargingPool":
        return ChargingPool(
            self.pool_id, self.location.translated(dx, dy), self.n_points, self.capacity_kw, self.rollout, self.stratum
        )


# ---------------------------------------------------------------------------
# Ingestion
# ---------------------------------------------------------------------------

def _convert(geom: Any) -> Tuple[str, Tuple[Geometry, ...]]:
    if isinstance(geom, ShapelyPoint):
        return "point", (Point(geom.x, geom.y),)
    if isinstance(geom, MultiPoint):
        return "point", tuple(Point(p.x, p.y) for p in geom.geoms)
    if isinstance(geom, LineString):
        return "polyline", (Polyline.from_coords(geom.coords),)
    if isinstance(geom, MultiLineString):
        return "polyline", tuple(Polyline.from_coords(g.coords) for g in geom.geoms)
    if isinstance(geom, (ShapelyPolygon, MultiPolygon)):
        polys = [geom] if isinstance(geom, ShapelyPolygon) else list(geom.geoms)
        parts = []
        for p in polys:
            p = orient(p, sign=1.0)
            parts.append(
                Polygon.from_coords(p.exterior.coords, [h.coords for h in p.interiors], orient=False)
            )
        return "polygon", tuple(parts)
    raise DataError(f"Unsupported geometry type {geom.geom_type}")


def _coerce_numeric(df: pd.DataFrame) -> pd.DataFrame:
    """Convert columns whose non-null values are all numeric; leave the rest."""
    for col in df.columns:
        converted = pd.to_numeric(df[col], errors="coerce")
        if converted.notna().sum() == df[col].notna().sum():
            df[col] = converted
    return df


def load_geojson(path: Union[str, Path], name: Optional[str] = None) -> SpatialLayer:
    """Read a GeoJSON FeatureCollection into a :class:`SpatialLayer`."""
    path = Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    if data.get("type") != "FeatureCollection":
        raise SchemaError(f"{path} is not a GeoJSON FeatureCollection")
    kinds = set()
    parts: List[Tuple[Geometry, ...]] = []
    rows: List[Dict[str, Any]] = []
    skipped = 0
    for feat in data.get("features", []):
        if not feat.get("geometry"):
            skipped += 1
            continue
        kind, geoms = _convert(shape(feat["geometry"]))
        kinds.add(kind)
        parts.append(geoms)
        rows.append(feat.get("properties") or {})
    if len(kinds) > 1:
        raise SchemaError(f"{path} mixes geometry types {sorted(kinds)}")
    if skipped:
        logging.warning("Skipped %d features without geometry in %s", skipped, path)
    attrs = _coerce_numeric(pd.DataFrame(rows))
    layer = SpatialLayer(name or path.stem, kinds.pop() if kinds else "polygon", tuple(parts), attrs)
    logging.info("Loaded layer %s: %d %s features", layer.name, len(layer), layer.geometry_type)
    return layer


def load_point_csv(path: Union[str, Path], name: Optional[str] = None, x_col: str = "x", y_col: str = "y") -> SpatialLayer:
    """Read a CSV point layer; remaining columns become attributes."""
    path = Path(path)
    df = pd.read_csv(path)
    for col in (x_col, y_col):
        if col not in df.columns:
            raise SchemaError(f"{path} lacks coordinate column {col!r}")
    parts = tuple((Point(float(x), float(y)),) for x, y in zip(df[x_col], df[y_col]))
    attrs = df.drop(columns=[x_col, y_col]).reset_index(drop=True)
    return SpatialLayer(name or path.stem, "point", parts, attrs)


def load_layer(path: Union[str, Path], name: Optional[str] = None) -> SpatialLayer:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return load_point_csv(path, name)
    return load_geojson(path, name)


def _to_shapely(g: Geometry) -> Any:
    if isinstance(g, Point):
        return ShapelyPoint(g.x, g.y)
    if isinstance(g, Polyline):
        return LineString(g.array)
    return ShapelyPolygon(g.outer_array, [h for h in g.hole_arrays])


def save_geojson(layer: SpatialLayer, path: Union[str, Path]) -> None:
    """Write a layer as a GeoJSON FeatureCollection."""
    features = []
    records = layer.attributes.astype(object).where(layer.attributes.notna(), None).to_dict("records")
    for parts, props in zip(layer.parts, records):
        geoms = [_to_shapely(g) for g in parts]
        if len(geoms) == 1:
            geom = geoms[0]
        elif layer.geometry_type == "point":
            geom = MultiPoint(geoms)
        elif layer.geometry_type == "polyline":
            geom = MultiLineString(geoms)
        else:
            geom = MultiPolygon(geoms)
        features.append({"type": "Feature", "geometry": mapping(geom), "properties": props})
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"type": "FeatureCollection", "name": layer.name, "features": features}, fh)


POOL_COLUMNS = ["pool_id", "x", "y", "n_points", "capacity_kw", "rollout", "stratum"]


def _pools_from_frame(df: pd.DataFrame) -> List[ChargingPool]:
    df = df.reindex(columns=POOL_COLUMNS)
    df["n_points"] = df["n_points"].fillna(1).astype(int)
    df[["rollout", "stratum"]] = df[["rollout", "stratum"]].fillna("")
    return [
        ChargingPool(str(r.pool_id), Point(float(r.x), float(r.y)), int(r.n_points), float(r.capacity_kw), r.rollout, r.stratum)
        for r in df.itertuples(index=False)
    ]


def load_pools_csv(path: Union[str, Path]) -> List[ChargingPool]:
    df = pd.read_csv(path, dtype={"pool_id": str, "rollout": str, "stratum": str})
    missing = {"pool_id", "x", "y"} - set(df.columns)
    if missing:
        raise SchemaError(f"{path} lacks pool columns {sorted(missing)}")
    return _pools_from_frame(df)


def load_stations_csv(path: Union[str, Path]) -> List[ChargingPool]:
    """Individual stations, one row per ``station_id``, as single-station pools."""
    df = pd.read_csv(path, dtype={"station_id": str, "rollout": str, "stratum": str})
    missing = {"station_id", "x", "y"} - set(df.columns)
    if missing:
        raise SchemaError(f"{path} lacks station columns {sorted(missing)}")
    return _pools_from_frame(df.rename(columns={"station_id": "pool_id"}))


def merge_stations(stations: Sequence[ChargingPool], radius_m: float) -> Tuple[List[ChargingPool], Dict[str, str]]:
    """Aggregate nearby stations into pools named after their representative.

    Point counts add up; capacity is the sum of the known capacities (NaN
    when none is known). Returns the pools and the station -> pool mapping.
    """
    by_id = {s.pool_id: s for s in stations}
    groups = merge_pools([(s.pool_id, s.location) for s in stations], radius_m)
    pools: List[ChargingPool] = []
    station_pool: Dict[str, str] = {}
    for g in groups:
        members = [by_id[m] for m in g.member_ids]
        caps = np.array([m.capacity_kw for m in members], dtype=float)
        rep = by_id[g.representative_id]
        pools.append(
            ChargingPool(
                rep.pool_id,
                g.location,
                int(sum(m.n_points for m in members)),
                float(np.nansum(caps)) if np.isfinite(caps).any() else float("nan"),
                rep.rollout,
                rep.stratum,
            )
        )
        station_pool.update({m: rep.pool_id for m in g.member_ids})
    return pools, station_pool


def pools_frame(pools: Sequence[ChargingPool]) -> pd.DataFrame:
    return pd.DataFrame(
        [
            {
                "pool_id": p.pool_id,
                "x": p.location.x,
                "y": p.location.y,
                "n_points": p.n_points,
                "capacity_kw": p.capacity_kw,
                "rollout": p.rollout,
                "stratum": p.stratum,
            }
            for p in pools
        ],
        columns=POOL_COLUMNS,
    )
