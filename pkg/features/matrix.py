"""Feature-matrix assembly from configured spatial sources."""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import yaml
from joblib import Parallel, delayed
from tqdm import tqdm

from errors import ConfigError, ContractViolationError, EmptyInputError, NumericalError, SchemaError
from features.buffers import (
    RoadSpec,
    apportion_count,
    areal_mean,
    land_use_areas,
    mode_flows,
    overlaps,
    poi_features,
    pool_features,
    road_traffic_features,
)
from features.layers import AttributeKind, ChargingPool, Kind, SpatialLayer, load_layer
from geometry.primitives import Buffer

N_JOBS = int(os.getenv("EVCA_N_JOBS", "1"))

ROLES = ("attributes", "land-use", "poi", "roads")


@dataclass
class FeatureMatrix:
    """n observations by p named features with per-feature provenance."""

    observation_ids: List[str]
    feature_names: List[str]
    values: np.ndarray
    missing_mask: np.ndarray
    provenance: Dict[str, Dict[str, Any]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)
        self.missing_mask = np.asarray(self.missing_mask, dtype=bool)
        n, p = self.values.shape if self.values.ndim == 2 else (0, 0)
        if n < 1 or p < 1:
            raise EmptyInputError(f"feature matrix must be at least 1x1, got {self.values.shape}")
        if len(self.observation_ids) != n or len(self.feature_names) != p:
            raise SchemaError("ids/names do not match the value table shape")
        if len(set(self.feature_names)) != p:
            raise SchemaError("feature names must be unique")
        if self.missing_mask.shape != self.values.shape:
            raise SchemaError("missing mask shape differs from values")
        if np.isnan(self.values[~self.missing_mask]).any():
            raise SchemaError("NaN values outside the missing mask")

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.values, index=pd.Index(self.observation_ids, name="observation_id"), columns=self.feature_names)

    @classmethod
    def from_frame(cls, df: pd.DataFrame, provenance: Optional[Dict[str, Dict[str, Any]]] = None) -> "FeatureMatrix":
        values = df.to_numpy(dtype=float)
        return cls(
            [str(i) for i in df.index],
            [str(c) for c in df.columns],
            values,
            np.isnan(values),
            {str(c): dict((provenance or {}).get(str(c), {})) for c in df.columns},
        )

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.feature_names.index(name)]

    def select(self, names: Sequence[str]) -> "FeatureMatrix":
        idx = [self.feature_names.index(n) for n in names]
        return FeatureMatrix(
            list(self.observation_ids),
            [self.feature_names[i] for i in idx],
            self.values[:, idx],
            self.missing_mask[:, idx],
            {n: self.provenance.get(n, {}) for n in names},
        )

    def drop_rows(self, rows: Sequence[int]) -> "FeatureMatrix":
        keep = np.setdiff1d(np.arange(self.n), np.asarray(rows, dtype=int))
        return FeatureMatrix(
            [self.observation_ids[i] for i in keep],
            list(self.feature_names),
            self.values[keep],
            self.missing_mask[keep],
            dict(self.provenance),
        )


@dataclass(frozen=True)
class LayerSource:
    """A loaded layer and the rule used to turn it into features."""

    name: str
    role: str
    layer: SpatialLayer
    attributes: Tuple[AttributeKind, ...] = ()
    category_attr: Optional[str] = None
    category_mapping: Optional[Mapping[str, str]] = None
    id_attr: Optional[str] = None
    road_spec: Optional[RoadSpec] = None

    def __post_init__(self) -> None:
        if self.role not in ROLES:
            raise ConfigError(f"Unknown layer role {self.role!r} for {self.name}")
        if self.role == "roads" and self.road_spec is None:
            raise ConfigError(f"Road layer {self.name} needs flow configuration")

    def translated(self, dx: float, dy: float) -> "LayerSource":
        return LayerSource(
            self.name, self.role, self.layer.translated(dx, dy), self.attributes,
            self.category_attr, self.category_mapping, self.id_attr, self.road_spec,
        )


@dataclass
class AssemblyReport:
    radius_m: float
    dropped: Dict[str, str] = field(default_factory=dict)
    imputed: Dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {"radius_m": self.radius_m, "dropped": self.dropped, "imputed": self.imputed}


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

def load_feature_config(path: Union[str, Path]) -> Dict[str, Any]:
    """Load the declarative feature configuration (YAML)."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return yaml.safe_load(fh) or {}
    except FileNotFoundError as exc:
        raise ConfigError(f"Feature config file {path} not found") from exc


def build_sources(
    config: Mapping[str, Any],
    base_dir: Union[str, Path] = ".",
    layers: Optional[Mapping[str, SpatialLayer]] = None,
) -> List[LayerSource]:
    """Resolve the ``layers`` section of a feature config into sources.

    Already-loaded layers can be passed by name; otherwise each entry's
    ``path`` is read relative to ``base_dir``.
    """
    base_dir = Path(base_dir)
    sources = []
    for entry in config.get("layers", []):
        name = entry.get("name")
        if not name:
            raise ConfigError("Every layer entry needs a name")
        if layers is not None and name in layers:
            layer = layers[name]
        elif entry.get("path"):
            layer = load_layer(base_dir / entry["path"], name)
        else:
            raise ConfigError(f"Layer {name} has no path and was not supplied")
        mapping = entry.get("category_mapping")
        if isinstance(mapping, str):
            with open(base_dir / mapping, "r", encoding="utf-8") as fh:
                mapping = yaml.safe_load(fh) or {}
        if entry.get("role") == "land-use" and mapping:
            attr = entry.get("category_attr") or "category"
            attrs = layer.attributes.copy()
            attrs[attr] = layer.require(attr).map(lambda v: mapping.get(str(v)) if pd.notna(v) else None)
            layer = layer.with_attributes(attrs)
        road_spec = None
        if entry.get("role") == "roads":
            road_spec = RoadSpec(
                flows=entry.get("flows") or {},
                type_attr=entry.get("type_attr", "segment_type"),
                segment_types=tuple(entry.get("segment_types", RoadSpec.segment_types)),
            )
        sources.append(
            LayerSource(
                name=name,
                role=entry.get("role", "attributes"),
                layer=layer,
                attributes=tuple(AttributeKind.parse(a["name"], a["kind"]) for a in entry.get("attributes", [])),
                category_attr=entry.get("category_attr"),
                category_mapping=mapping,
                id_attr=entry.get("id_attr"),
                road_spec=road_spec,
            )
        )
    return sources


# ---------------------------------------------------------------------------
# Extraction
# ---------------------------------------------------------------------------

def _poi_categories(src: LayerSource) -> Tuple[Optional[np.ndarray], List[Optional[str]]]:
    """Mapped category per point part and the sorted category list."""
    if src.category_attr is None:
        return None, [None]
    raw = src.layer.require(src.category_attr)
    if src.category_mapping:
        raw = raw.map(lambda v: src.category_mapping.get(str(v)) if pd.notna(v) else None)
    per_point = raw.to_numpy(dtype=object)[src.layer.point_owner]
    cats = sorted({str(c) for c in per_point if c is not None and not (isinstance(c, float) and np.isnan(c))})
    return per_point, cats


def _extract_pool(
    pool: ChargingPool,
    sources: Sequence[LayerSource],
    radius_m: float,
    include_pool_features: bool,
    cache: Dict[str, Any],
) -> Dict[str, Tuple[float, float, Dict[str, Any]]]:
    buffer = Buffer.around(pool.location, radius_m)
    row: Dict[str, Tuple[float, float, Dict[str, Any]]] = {}
    for src in sources:
        if src.role == "attributes":
            hits = overlaps(buffer, src.layer)
            for attr in src.attributes:
                if attr.kind == Kind.COUNT:
                    res = apportion_count(buffer, src.layer, attr.name, hits)
                elif attr.kind in (Kind.AVERAGE, Kind.PERCENTAGE):
                    res = areal_mean(buffer, src.layer, attr.name, hits)
                else:
                    raise ConfigError(f"Kind {attr.kind.value} is not valid for attribute layer {src.name}")
                row[f"{src.name}.{attr.name}"] = (res.value, res.coverage_gap, {"kind": attr.kind.value, "attribute": attr.name})
        elif src.role == "land-use":
            areas = land_use_areas(buffer, src.layer, src.category_attr or "category")
            for cat in cache[src.name]:
                row[f"{src.name}.{cat}"] = (areas.get(cat, 0.0), 0.0, {"kind": Kind.CATEGORY_AREA.value, "category": cat})
        elif src.role == "poi":
            per_point, cats = cache[src.name]
            exclude = None
            if src.id_attr is not None:
                ids = src.layer.require(src.id_attr).astype(str).to_numpy()[src.layer.point_owner]
                exclude = ids == pool.pool_id
            for cat in cats:
                mask_exclude = exclude
                if cat is not None:
                    other = per_point != cat
                    mask_exclude = other if exclude is None else (other | exclude)
                dist, dens = poi_features(pool.location, buffer, src.layer, None, exclude=mask_exclude)
                stem = src.name if cat is None else f"{src.name}.{cat}"
                meta = {"kind": Kind.POINT_SET.value, "category": cat}
                row[f"{stem}.min_dist"] = (dist, 0.0, meta)
                row[f"{stem}.density"] = (dens, 0.0, meta)
        elif src.role == "roads":
            rec = road_traffic_features(pool.location, buffer, src.layer, src.road_spec, cache[src.name])
            for key, val in rec.items():
                row[f"{src.name}.{key}"] = (val, 0.0, {"kind": Kind.FLOW.value})
    if include_pool_features:
        for key, val in pool_features(pool).items():
            row[f"pool.{key}"] = (val, 0.0, {"kind": "pool"})
    return row


def _extract_chunk(pools, sources, radius_m, include_pool_features, cache):
    return [_extract_pool(p, sources, radius_m, include_pool_features, cache) for p in pools]


def _source_cache(sources: Sequence[LayerSource]) -> Dict[str, Any]:
    cache: Dict[str, Any] = {}
    for src in sources:
        if src.role == "land-use":
            cats = src.layer.require(src.category_attr or "category").dropna().astype(str)
            cache[src.name] = sorted(set(cats))
        elif src.role == "poi":
            cache[src.name] = _poi_categories(src)
        elif src.role == "roads":
            cache[src.name] = mode_flows(src.layer, src.road_spec) if len(src.layer) else None
    return cache


def extract_frame(
    pools: Sequence[ChargingPool],
    sources: Sequence[LayerSource],
    radius_m: float,
    include_pool_features: bool = False,
    n_jobs: Optional[int] = None,
) -> Tuple[pd.DataFrame, pd.DataFrame, Dict[str, Dict[str, Any]]]:
    """Raw buffer features before any drop or imputation.

    Returns ``(values, coverage_gaps, provenance)``; both frames are indexed by
    pool id with identical columns.
    """
    if not pools:
        raise EmptyInputError("no pools to extract features for")
    if not radius_m > 0:
        raise ContractViolationError(f"radius_m must be positive, got {radius_m}")
    n_jobs = n_jobs or N_JOBS
    cache = _source_cache(sources)
    n_chunks = max(1, min(len(pools), n_jobs))
    bounds = np.linspace(0, len(pools), n_chunks + 1).astype(int)
    chunks = [list(pools[a:b]) for a, b in zip(bounds[:-1], bounds[1:])]
    results = Parallel(n_jobs=n_jobs)(
        delayed(_extract_chunk)(c, sources, radius_m, include_pool_features, cache)
        for c in tqdm(chunks, desc="buffers", unit="chunk", disable=not logging.getLogger().isEnabledFor(logging.INFO))
    )
    rows = [r for chunk in results for r in chunk]
    names = list(rows[0])
    index = pd.Index([p.pool_id for p in pools], name="observation_id")
    values = pd.DataFrame([[r[k][0] for k in names] for r in rows], index=index, columns=names, dtype=float)
    gaps = pd.DataFrame([[r[k][1] for k in names] for r in rows], index=index, columns=names, dtype=float)
    provenance = {}
    for src_name in names:
        meta = dict(rows[0][src_name][2])
        meta.update({"layer": src_name.split(".")[0], "radius_m": radius_m})
        provenance[src_name] = meta
    return values, gaps, provenance


def assemble_matrix(
    pools: Sequence[ChargingPool],
    sources: Sequence[LayerSource],
    radius_m: float = 350.0,
    coverage_threshold: float = 0.15,
    imputation_threshold: float = 0.015,
    coverage_mode: str = "any",
    include_pool_features: bool = False,
    n_jobs: Optional[int] = None,
) -> Tuple[FeatureMatrix, AssemblyReport]:
    """Build the feature matrix: one row per pool, gaps and missing values resolved.

    ``coverage_mode="any"`` drops a feature when any row's missing-coverage
    share exceeds ``coverage_threshold``; ``"aggregate"`` instead marks those
    cells missing and leaves the decision to the imputation rule.
    """
    if coverage_mode not in ("any", "aggregate"):
        raise ConfigError(f"Unknown coverage mode {coverage_mode!r}")
    values, gaps, provenance = extract_frame(pools, sources, radius_m, include_pool_features, n_jobs)
    report = AssemblyReport(radius_m)

    over = gaps > coverage_threshold
    if coverage_mode == "any":
        for name in values.columns[over.any(axis=0).to_numpy()]:
            report.dropped[name] = f"coverage gap above {coverage_threshold:.0%} in {int(over[name].sum())} rows"
        values = values.drop(columns=list(report.dropped))
    else:
        values = values.mask(over[values.columns])

    keep = []
    for name in values.columns:
        col = values[name]
        n_missing = int(col.isna().sum())
        if n_missing == 0:
            keep.append(name)
            continue
        if n_missing == len(col):
            report.dropped[name] = "no data for any pool"
            continue
        frac = n_missing / len(col)
        if frac < imputation_threshold:
            values[name] = col.fillna(col.median())
            report.imputed[name] = n_missing
            provenance[name]["imputed_rows"] = n_missing
            keep.append(name)
        else:
            report.dropped[name] = f"{frac:.1%} missing values"
    if not keep:
        raise EmptyInputError("every feature was dropped during assembly")
    for name, reason in report.dropped.items():
        logging.info("Dropped feature %s: %s", name, reason)
    values = values[keep]
    fm = FeatureMatrix(
        [str(i) for i in values.index],
        keep,
        values.to_numpy(dtype=float),
        np.zeros((len(values), len(keep)), dtype=bool),
        {k: provenance[k] for k in keep},
    )
    logging.info("Assembled %d x %d feature matrix (r=%.0f m, %d dropped, %d imputed)", fm.n, fm.p, radius_m, len(report.dropped), len(report.imputed))
    return fm, report


def radius_sweep(
    pools: Sequence[ChargingPool],
    sources: Sequence[LayerSource],
    y: Union[Sequence[float], pd.Series],
    radii: Sequence[float] = tuple(range(100, 801, 50)),
    coverage_threshold: float = 0.15,
    n_jobs: Optional[int] = None,
) -> pd.DataFrame:
    """In-sample OLS MSE of ``y`` on the buffer features for every radius.

    Observations are reduced to those complete at the smallest radius. A row
    of that set which is incomplete at a larger radius is left out of that
    radius only and counted in ``n_incomplete``. A singular design is
    reported, not raised.
    """
    from regression.ols import ols_fit

    if len(radii) == 0:
        raise EmptyInputError("radius sweep needs at least one radius")
    y = pd.Series(np.asarray(y, dtype=float), index=[p.pool_id for p in pools])
    frames = {}
    complete = {}
    disable = not logging.getLogger().isEnabledFor(logging.INFO)
    for r in tqdm(sorted(radii), desc="radius sweep", unit="radius", disable=disable):
        values, gaps, _ = extract_frame(pools, sources, float(r), False, n_jobs)
        frames[r] = values
        complete[r] = values.notna().all(axis=1) & (gaps <= coverage_threshold).all(axis=1)
    smallest = min(radii)
    common = complete[smallest][complete[smallest]].index
    logging.info("Radius sweep over %d radii on %d observations complete at %s m", len(radii), len(common), smallest)
    rows = []
    for r in sorted(radii):
        rows_r = common[complete[r].loc[common].to_numpy()]
        if len(rows_r) < len(common):
            logging.warning("Radius %s m: %d observations incomplete, left out", r, len(common) - len(rows_r))
        X = frames[r].loc[rows_r]
        X = X.loc[:, X.std(ddof=0) > 0]
        entry: Dict[str, Any] = {
            "radius_m": float(r), "n_obs": len(rows_r), "n_incomplete": len(common) - len(rows_r),
            "n_features": X.shape[1], "mse": float("nan"), "error": "",
        }
        try:
            fit = ols_fit(X.to_numpy(), y.loc[rows_r].to_numpy(), feature_names=list(X.columns))
            entry["mse"] = fit.mse
        except (NumericalError, ContractViolationError) as exc:
            logging.warning("OLS failed for radius %s: %s", r, exc)
            entry["error"] = str(exc)
        rows.append(entry)
    return pd.DataFrame(rows)
