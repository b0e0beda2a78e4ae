"""Pipeline configuration: built-in defaults, environment, YAML file, CLI flags."""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Union

import yaml
from dotenv import load_dotenv

from decomposition.metrics import METRICS
from errors import ConfigError
from inference.bootstrap import SD_MODES
from preprocess.transforms import ResponseTransform

load_dotenv()

# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------
CONFIG_PATH = Path(__file__).with_name("pipeline_config.yaml")
N_JOBS = int(os.getenv("EVCA_N_JOBS", "1"))
OUTPUT_DIR = os.getenv("EVCA_OUTPUT_DIR", "artifacts")
SEED = int(os.getenv("EVCA_SEED", "0"))

PATH_KEYS = ("features_config", "pools", "stations", "events", "feature_matrix", "rules", "output_dir")


@dataclass
class PipelineConfig:
    # inputs
    features_config: Optional[str] = None
    pools: Optional[str] = None
    stations: Optional[str] = None
    merge_radius_m: float = 50.0
    events: Optional[str] = None
    feature_matrix: Optional[str] = None
    rules: Optional[str] = None
    apply_rules: bool = True
    response_metric: str = "energy"
    min_transactions: int = 30
    min_capacity_kw: float = 1.0
    # extraction
    radius_m: float = 350.0
    coverage_threshold: float = 0.15
    coverage_mode: str = "any"
    imputation_threshold: float = 0.015
    include_pool_features: bool = False
    sweep_radii: List[float] = field(default_factory=list)
    # preprocessing
    zero_fraction: float = 0.95
    correlation_threshold: float = 0.95
    correlation_priority: List[str] = field(default_factory=list)
    vif_threshold: float = 10.0
    response_transform: str = "log"
    cooks_threshold: float = 0.015
    # regression and inference
    grid_start: float = -4.0
    grid_stop: float = 0.0
    grid_step: float = 0.02
    k: int = 10
    lambda2: float = 0.0
    B: int = 10_000
    seed: int = SEED
    sd_mode: str = "replicate"
    display_threshold: float = 0.10
    save_samples: bool = False
    strata_column: Optional[str] = None
    strata_threshold_column: Optional[str] = None
    strata_threshold: float = 50_000.0
    # distribution fitting
    distfit_experimental: bool = False
    # execution
    output_dir: str = OUTPUT_DIR
    n_jobs: int = N_JOBS

    def __post_init__(self) -> None:
        for name in ("zero_fraction", "correlation_threshold", "coverage_threshold", "imputation_threshold", "display_threshold"):
            value = getattr(self, name)
            if not 0 < value < 1:
                raise ConfigError(f"{name} must be in (0, 1), got {value}")
        if self.vif_threshold <= 1:
            raise ConfigError(f"vif_threshold must exceed 1, got {self.vif_threshold}")
        if self.cooks_threshold <= 0:
            raise ConfigError("cooks_threshold must be positive")
        if self.pools and self.stations:
            raise ConfigError("give either pools or stations, not both")
        if self.merge_radius_m <= 0:
            raise ConfigError(f"merge_radius_m must be positive, got {self.merge_radius_m}")
        if self.radius_m <= 0 or any(r <= 0 for r in self.sweep_radii):
            raise ConfigError("radii must be positive")
        if self.k < 2:
            raise ConfigError("k must be at least 2")
        if self.B < 1:
            raise ConfigError("B must be at least 1")
        if self.grid_step <= 0 or self.grid_stop < self.grid_start:
            raise ConfigError("invalid lambda grid specification")
        if self.lambda2 < 0:
            raise ConfigError("lambda2 must be non-negative")
        if self.coverage_mode not in ("any", "aggregate"):
            raise ConfigError(f"coverage_mode must be 'any' or 'aggregate', got {self.coverage_mode!r}")
        if self.sd_mode not in SD_MODES:
            raise ConfigError(f"sd_mode must be one of {SD_MODES}")
        if self.response_metric not in METRICS:
            raise ConfigError(f"response_metric must be one of {METRICS}")
        if self.n_jobs == 0:
            raise ConfigError("n_jobs must be non-zero")
        ResponseTransform.parse(self.response_transform)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def _read(path: Union[str, Path]) -> Dict[str, Any]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = yaml.safe_load(fh) or {}
    except FileNotFoundError as exc:
        raise ConfigError(f"Config file {path} not found") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"Config file {path} is not valid YAML: {exc}") from exc
    # a run manifest nests the effective configuration
    if isinstance(data, dict) and isinstance(data.get("config"), dict):
        data = data["config"]
    if not isinstance(data, dict):
        raise ConfigError(f"Config file {path} must hold a mapping")
    return data


def _layer(path: Union[str, Path], known: set) -> Dict[str, Any]:
    data = _read(path)
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"Unknown config keys in {path}: {sorted(unknown)}")
    base = Path(path).resolve().parent
    for key in PATH_KEYS:
        if data.get(key) and not Path(str(data[key])).is_absolute():
            data[key] = str(base / str(data[key]))
    return data


def load_pipeline_config(
    path: Optional[Union[str, Path]] = None,
    overrides: Optional[Mapping[str, Any]] = None,
) -> PipelineConfig:
    """Defaults (environment aware) < bundled YAML < config file < explicit overrides.

    Relative input paths in a config file are resolved against the file's
    directory. ``None`` overrides are ignored.
    """
    known = {f.name for f in fields(PipelineConfig)}
    # bundled nulls mean "use the built-in default"
    values: Dict[str, Any] = {k: v for k, v in _layer(CONFIG_PATH, known).items() if v is not None}
    if path is not None:
        values.update(_layer(path, known))
    for key, value in (overrides or {}).items():
        if key not in known:
            raise ConfigError(f"Unknown config key {key!r}")
        if value is not None:
            values[key] = value
    try:
        return PipelineConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
