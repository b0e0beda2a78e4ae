"""Synthetic worlds with a planted sparse log-energy model.

A world holds polygon tiles with numeric attributes, a coarser land-use
tiling, categorised POIs, a road grid with traffic flows, charging pools and
an event log. Log-energy of every pool is an exact linear function of its
buffer features plus Gaussian noise, and the event log aggregates back to
the planted energies.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import yaml

from errors import ConfigError
from features.layers import ChargingPool, SpatialLayer, pools_frame, save_geojson
from features.matrix import LayerSource, build_sources, extract_frame
from geometry.primitives import Point, Polygon, Polyline

CONFIG_PATH = Path(__file__).with_name("synth_config.yaml")
SEGMENT_TYPES = ("residential", "primary", "secondary", "tertiary")
ROAD_FLOWS = {"cars": ["TF1", "TF2", "TF3"], "buses": ["TF4", "TF5", "TF6"], "trucks": ["TF7", "TF8", "TF9"]}
TILE_LAYER = "tiles"
YEAR_START = pd.Timestamp("2015-01-01")
YEAR_SECONDS = 365 * 24 * 3600


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    n_pools: int = 300
    n_features: int = 10
    true_support: Tuple[float, ...] = (0.8, -0.6, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    intercept: float = 7.0
    noise_sd: float = 0.3
    extent_m: float = 12_000.0
    tile_m: float = 500.0
    land_use_tile_m: float = 1_000.0
    radius_m: float = 350.0
    attribute_corr: float = 0.0
    population_mean: float = 800.0
    land_use_categories: Tuple[str, ...] = ("built", "green", "water", "agriculture")
    poi_per_km2: float = 4.0
    poi_categories: Tuple[str, ...] = ("shop", "school", "health")
    road_spacing_m: float = 1_000.0
    mean_charging_h: float = 2.5
    mean_power_kw: float = 3.5
    mean_idle_h: float = 1.5
    strata: Tuple[str, ...] = ("strategic", "demand")
    stratum_supports: Dict[str, Tuple[float, ...]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.n_pools < 2:
            raise ConfigError("n_pools must be at least 2")
        if self.n_features < 1:
            raise ConfigError("n_features must be at least 1")
        for label, support in [("true_support", self.true_support), *self.stratum_supports.items()]:
            if len(support) != self.n_features:
                raise ConfigError(f"{label} has {len(support)} entries, expected n_features={self.n_features}")
        unknown = set(self.stratum_supports) - set(self.strata)
        if unknown:
            raise ConfigError(f"supports given for unknown strata {sorted(unknown)}")
        if self.noise_sd < 0:
            raise ConfigError("noise_sd must be non-negative")
        if not 0 <= self.attribute_corr < 1:
            raise ConfigError("attribute_corr must be in [0, 1)")
        for name in ("tile_m", "land_use_tile_m", "radius_m", "road_spacing_m", "mean_charging_h", "mean_power_kw"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.extent_m <= 2.0 * self.radius_m * 1.01:
            raise ConfigError("extent too small to keep pool buffers inside the tiling")
        if self.mean_idle_h < 0 or self.poi_per_km2 < 0 or self.population_mean < 0:
            raise ConfigError("rates and means must be non-negative")
        if not self.strata:
            raise ConfigError("at least one stratum label is required")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "SynthConfig":
        data = dict(data)
        n = int(data.get("n_features", cls.n_features))
        if "support" in data:
            vec = [0.0] * n
            for idx, coef in (data.pop("support") or {}).items():
                if not 0 <= int(idx) < n:
                    raise ConfigError(f"support index {idx} outside 0..{n - 1}")
                vec[int(idx)] = float(coef)
            data["true_support"] = vec
        for key in ("true_support", "land_use_categories", "poi_categories", "strata"):
            if key in data:
                data[key] = tuple(data[key])
        if "stratum_supports" in data:
            data["stratum_supports"] = {k: tuple(v) for k, v in (data["stratum_supports"] or {}).items()}
        known = set(cls.__dataclass_fields__)
        extra = set(data) - known
        if extra:
            raise ConfigError(f"unknown synth config keys {sorted(extra)}")
        return cls(**data)

    def to_dict(self) -> Dict[str, Any]:
        out = asdict(self)
        for key, value in out.items():
            if isinstance(value, tuple):
                out[key] = list(value)
        out["stratum_supports"] = {k: list(v) for k, v in self.stratum_supports.items()}
        return out


def load_synth_config(path: Union[str, Path] = CONFIG_PATH, **overrides: Any) -> SynthConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = yaml.safe_load(fh) or {}
    except FileNotFoundError as exc:
        raise ConfigError(f"Synth config {path} not found") from exc
    data.update({k: v for k, v in overrides.items() if v is not None})
    return SynthConfig.from_dict(data)


@dataclass
class SynthWorld:
    config: SynthConfig
    layers: Dict[str, SpatialLayer]
    pools: List[ChargingPool]
    events: pd.DataFrame
    truth: Dict[str, Any]

    @property
    def feature_config(self) -> Dict[str, Any]:
        """Feature configuration describing this world's layers, with file paths as written by :func:`write_world`."""
        return feature_config(self.config)

    def sources(self) -> List[LayerSource]:
        return build_sources(self.feature_config, layers=self.layers)


# ---------------------------------------------------------------------------
# Layer generators
# ---------------------------------------------------------------------------

def _square(x0: float, y0: float, side: float) -> Polygon:
    return Polygon.from_coords([(x0, y0), (x0 + side, y0), (x0 + side, y0 + side), (x0, y0 + side)])


def _tiling(extent: float, side: float) -> List[Polygon]:
    n = int(np.ceil(extent / side))
    return [_square(i * side, j * side, side) for j in range(n) for i in range(n)]


def attribute_names(cfg: SynthConfig) -> List[str]:
    return [f"A{j}" for j in range(cfg.n_features)]


def _tiles(cfg: SynthConfig, rng: np.random.Generator) -> SpatialLayer:
    polys = _tiling(cfg.extent_m, cfg.tile_m)
    m = len(polys)
    common = rng.standard_normal(m)
    own = rng.standard_normal((m, cfg.n_features))
    rho = cfg.attribute_corr
    values = np.sqrt(rho) * common[:, None] + np.sqrt(1.0 - rho) * own
    attrs = pd.DataFrame(values, columns=attribute_names(cfg))
    attrs["population"] = rng.poisson(cfg.population_mean, m).astype(float)
    return SpatialLayer(TILE_LAYER, "polygon", tuple((p,) for p in polys), attrs)


def _land_use(cfg: SynthConfig, rng: np.random.Generator) -> SpatialLayer:
    polys = _tiling(cfg.extent_m, cfg.land_use_tile_m)
    cats = rng.choice(list(cfg.land_use_categories), size=len(polys))
    return SpatialLayer("land_use", "polygon", tuple((p,) for p in polys), pd.DataFrame({"category": cats}))


def _pois(cfg: SynthConfig, rng: np.random.Generator) -> SpatialLayer:
    n = rng.poisson(cfg.poi_per_km2 * (cfg.extent_m / 1000.0) ** 2)
    xy = rng.uniform(0, cfg.extent_m, size=(n, 2))
    cats = rng.choice(list(cfg.poi_categories), size=n) if n else np.array([], dtype=object)
    parts = tuple((Point(float(x), float(y)),) for x, y in xy)
    return SpatialLayer("pois", "point", parts, pd.DataFrame({"category": cats}))


def _roads(cfg: SynthConfig, rng: np.random.Generator) -> SpatialLayer:
    s = cfg.road_spacing_m
    ticks = np.arange(0.0, cfg.extent_m + 1e-9, s)
    segments = []
    for c in ticks:
        for a, b in zip(ticks[:-1], ticks[1:]):
            segments.append(Polyline.from_coords([(c, a), (c, b)]))
            segments.append(Polyline.from_coords([(a, c), (b, c)]))
    n = len(segments)
    attrs = pd.DataFrame({"segment_type": rng.choice(SEGMENT_TYPES, size=n)})
    for cols in ROAD_FLOWS.values():
        for col in cols:
            attrs[col] = np.round(rng.lognormal(5.0, 1.0, n), 1)
    return SpatialLayer("roads", "polyline", tuple((seg,) for seg in segments), attrs)


def _pools(cfg: SynthConfig, rng: np.random.Generator) -> List[ChargingPool]:
    margin = cfg.radius_m * 1.01
    xy = rng.uniform(margin, cfg.extent_m - margin, size=(cfg.n_pools, 2))
    n_points = rng.integers(1, 4, cfg.n_pools)
    capacity = rng.choice([3.7, 11.0, 22.0], size=cfg.n_pools)
    strata = rng.choice(list(cfg.strata), size=cfg.n_pools)
    return [
        ChargingPool(f"P{i:04d}", Point(float(x), float(y)), int(k), float(c), str(s), str(s))
        for i, ((x, y), k, c, s) in enumerate(zip(xy, n_points, capacity, strata))
    ]


def feature_config(cfg: SynthConfig) -> Dict[str, Any]:
    return {
        "radius_m": cfg.radius_m,
        "layers": [
            {
                "name": TILE_LAYER,
                "path": f"{TILE_LAYER}.geojson",
                "role": "attributes",
                "attributes": [{"name": a, "kind": "average"} for a in attribute_names(cfg)]
                + [{"name": "population", "kind": "count"}],
            },
            {"name": "land_use", "path": "land_use.geojson", "role": "land-use", "category_attr": "category"},
            {"name": "pois", "path": "pois.csv", "role": "poi", "category_attr": "category"},
            {"name": "pools", "path": "pools.csv", "role": "poi", "id_attr": "pool_id"},
            {
                "name": "roads",
                "path": "roads.geojson",
                "role": "roads",
                "type_attr": "segment_type",
                "segment_types": list(SEGMENT_TYPES),
                "flows": ROAD_FLOWS,
            },
        ],
    }


def _events(cfg: SynthConfig, pools: Sequence[ChargingPool], energy: np.ndarray, rng: np.random.Generator) -> pd.DataFrame:
    mean_tx = cfg.mean_charging_h * cfg.mean_power_kw
    frames = []
    for pool, e in zip(pools, energy):
        n = max(1, int(rng.poisson(e / mean_tx)))
        shares = rng.dirichlet(np.ones(n))
        kwh = e * shares
        charging = rng.gamma(2.0, cfg.mean_charging_h / 2.0, n)
        idle = rng.exponential(cfg.mean_idle_h, n) if cfg.mean_idle_h > 0 else np.zeros(n)
        start = YEAR_START + pd.to_timedelta(np.sort(rng.uniform(0, YEAR_SECONDS, n)), unit="s")
        connection = charging + idle
        frames.append(
            pd.DataFrame(
                {
                    "pool_id": pool.pool_id,
                    "point_id": [f"{pool.pool_id}-{k}" for k in rng.integers(0, pool.n_points, n)],
                    "start_time": start,
                    "end_time": start + pd.to_timedelta(connection, unit="h"),
                    "connection_h": connection,
                    "charging_h": charging,
                    "idle_h": idle,
                    "energy_kwh": kwh,
                    "rfid_count": 1,
                }
            )
        )
    return pd.concat(frames, ignore_index=True)


# ---------------------------------------------------------------------------
# Main
# ---------------------------------------------------------------------------

def generate_world(cfg: SynthConfig, n_jobs: int = 1) -> SynthWorld:
    """Build a world deterministically from ``cfg.seed``."""
    streams = np.random.SeedSequence(cfg.seed).spawn(7)
    rng = [np.random.default_rng(s) for s in streams]
    layers = {
        TILE_LAYER: _tiles(cfg, rng[0]),
        "land_use": _land_use(cfg, rng[1]),
        "pois": _pois(cfg, rng[2]),
        "roads": _roads(cfg, rng[3]),
    }
    pools = _pools(cfg, rng[4])
    layers["pools"] = SpatialLayer(
        "pools", "point", tuple((p.location,) for p in pools), pools_frame(pools).drop(columns=["x", "y"])
    )

    tile_source = build_sources({"layers": feature_config(cfg)["layers"][:1]}, layers=layers)
    values, _, _ = extract_frame(pools, tile_source, cfg.radius_m, n_jobs=n_jobs)
    names = [f"{TILE_LAYER}.{a}" for a in attribute_names(cfg)]
    X = values[names].to_numpy()

    betas = np.array([cfg.stratum_supports.get(p.stratum, cfg.true_support) for p in pools], dtype=float)
    noise = rng[5].normal(0.0, cfg.noise_sd, len(pools)) if cfg.noise_sd > 0 else np.zeros(len(pools))
    log_energy = cfg.intercept + (X * betas).sum(axis=1) + noise
    energy = np.exp(log_energy)
    if not np.all(np.isfinite(energy)) or (energy <= 0).any():
        raise ConfigError("planted energies overflow or are non-positive; reduce intercept or coefficients")

    events = _events(cfg, pools, energy, rng[6])
    truth = {
        "seed": cfg.seed,
        "intercept": cfg.intercept,
        "noise_sd": cfg.noise_sd,
        "radius_m": cfg.radius_m,
        "coefficients": dict(zip(names, map(float, cfg.true_support))),
        "support": [n for n, b in zip(names, cfg.true_support) if b != 0],
        "stratum_support": {
            s: [n for n, b in zip(names, sup) if b != 0] for s, sup in cfg.stratum_supports.items()
        },
        "pools": {p.pool_id: {"log_energy": float(l), "energy": float(e)} for p, l, e in zip(pools, log_energy, energy)},
    }
    logging.info("Generated world: %d pools, %d events, support %s", len(pools), len(events), truth["support"])
    return SynthWorld(cfg, layers, pools, events, truth)


def write_world(world: SynthWorld, out_dir: Union[str, Path]) -> Path:
    """Write layers, pools, events, truth and a feature config in the ingestion formats."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name in (TILE_LAYER, "land_use", "roads"):
        save_geojson(world.layers[name], out / f"{name}.geojson")
    pois = world.layers["pois"]
    pd.concat([pd.DataFrame(pois.point_array, columns=["x", "y"]), pois.attributes], axis=1).to_csv(out / "pois.csv", index=False)
    pools_frame(world.pools).to_csv(out / "pools.csv", index=False)
    world.events.to_csv(out / "events.csv", index=False)
    with open(out / "truth.json", "w", encoding="utf-8") as fh:
        json.dump(world.truth, fh, indent=2, sort_keys=True)
    with open(out / "features_config.yaml", "w", encoding="utf-8") as fh:
        yaml.safe_dump(world.feature_config, fh, sort_keys=False)
    with open(out / "synth_config.yaml", "w", encoding="utf-8") as fh:
        yaml.safe_dump(world.config.to_dict(), fh, sort_keys=False)
    logging.info("World written to %s", out)
    return out
