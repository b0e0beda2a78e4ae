"""On-disk artifacts: CSV tables with a JSON schema sidecar, JSON reports, the run manifest."""

from __future__ import annotations

import json
import logging
from importlib import metadata
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
import pandas as pd

from errors import AnalyticsError, SchemaError
from features.matrix import FeatureMatrix

MANIFEST = "manifest.json"
ERROR_FILE = "error.json"
SIDECAR_SUFFIX = ".schema.json"
FLOAT_FORMAT = "%.17g"
PACKAGES = ("numpy", "pandas", "scipy", "scikit-learn", "statsmodels", "shapely", "joblib", "PyYAML")

_PANDAS_DTYPES = {"INTEGER": "int64", "FLOAT": "float64", "BOOLEAN": "bool", "STRING": "object"}


def _jsonable(value: Any) -> Any:
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, (set, tuple)):
        return list(value)
    raise TypeError(f"{type(value).__name__} is not JSON serializable")


def package_versions() -> Dict[str, str]:
    versions = {}
    for name in PACKAGES:
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = "not installed"
    return versions


class ArtifactStore:
    """Reads and writes the files of one run directory."""

    def __init__(self, root: Union[str, Path]) -> None:
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.logger = logging.getLogger(self.__class__.__name__)

    def path(self, name: str) -> Path:
        return self.root / name

    def exists(self, name: str) -> bool:
        return self.path(name).is_file()

    # ------------------------------------------------------------------
    # Tables
    # ------------------------------------------------------------------
    def _generate_schema(self, df: pd.DataFrame) -> List[Dict[str, str]]:
        """Column schema from DataFrame dtypes."""
        schema: List[Dict[str, str]] = []
        for column, dtype in df.dtypes.items():
            field_type = "STRING"
            if pd.api.types.is_bool_dtype(dtype):
                field_type = "BOOLEAN"
            elif pd.api.types.is_integer_dtype(dtype):
                field_type = "INTEGER"
            elif pd.api.types.is_float_dtype(dtype):
                field_type = "FLOAT"
            elif pd.api.types.is_datetime64_any_dtype(dtype):
                field_type = "TIMESTAMP"
            schema.append({"name": str(column), "type": field_type})
        return schema

    def write_table(
        self,
        name: str,
        df: pd.DataFrame,
        index: Optional[str] = None,
        provenance: Optional[Dict[str, Any]] = None,
    ) -> Path:
        """Write ``df`` as CSV plus ``<name>.schema.json``.

        ``index`` names the index column to keep; the default drops the index.
        """
        frame = df.reset_index() if index else df
        if index and frame.columns[0] != index:
            frame = frame.rename(columns={frame.columns[0]: index})
        target = self.path(f"{name}.csv")
        frame.to_csv(target, index=False, float_format=FLOAT_FORMAT)
        sidecar = {"index": index, "columns": self._generate_schema(frame), "provenance": provenance or {}}
        self.write_json(f"{name}{SIDECAR_SUFFIX}", sidecar, log=False)
        self.logger.info("Wrote %s (%d rows)", target, len(frame))
        return target

    def read_table(self, name: str) -> pd.DataFrame:
        target = self.path(f"{name}.csv")
        if not target.is_file():
            raise SchemaError(f"artifact {target} not found; run the producing stage first")
        sidecar = self.read_json(f"{name}{SIDECAR_SUFFIX}") if self.exists(f"{name}{SIDECAR_SUFFIX}") else None
        if sidecar is None:
            return pd.read_csv(target)
        dtypes = {c["name"]: _PANDAS_DTYPES[c["type"]] for c in sidecar["columns"] if c["type"] in _PANDAS_DTYPES}
        dates = [c["name"] for c in sidecar["columns"] if c["type"] == "TIMESTAMP"]
        strings = {k: str for k, v in dtypes.items() if v == "object"}
        df = pd.read_csv(target, dtype=strings, parse_dates=dates, keep_default_na=True)
        for col, dtype in dtypes.items():
            if dtype != "object" and col in df.columns:
                df[col] = df[col].astype(dtype)
        if sidecar.get("index"):
            df = df.set_index(sidecar["index"])
        return df

    def write_matrix(self, name: str, fm: FeatureMatrix) -> Path:
        """Feature matrix as CSV keyed by observation id, provenance in the sidecar."""
        return self.write_table(name, fm.to_frame(), index="observation_id", provenance=fm.provenance)

    def read_matrix(self, name: str) -> FeatureMatrix:
        df = self.read_table(name)
        df.index = df.index.astype(str)
        sidecar = self.read_json(f"{name}{SIDECAR_SUFFIX}")
        return FeatureMatrix.from_frame(df, sidecar.get("provenance") or {})

    # ------------------------------------------------------------------
    # JSON
    # ------------------------------------------------------------------
    def write_json(self, name: str, data: Any, log: bool = True) -> Path:
        target = self.path(name)
        with open(target, "w", encoding="utf-8") as fh:
            json.dump(data, fh, indent=2, sort_keys=True, default=_jsonable, allow_nan=True)
            fh.write("\n")
        if log:
            self.logger.info("Wrote %s", target)
        return target

    def read_json(self, name: str) -> Any:
        target = self.path(name)
        if not target.is_file():
            raise SchemaError(f"artifact {target} not found; run the producing stage first")
        with open(target, "r", encoding="utf-8") as fh:
            return json.load(fh)

    def write_manifest(self, config: Dict[str, Any], stages: List[str]) -> Path:
        """Record everything needed to repeat the run: versions, seed and thresholds."""
        manifest = {
            "config": config,
            "stages": stages,
            "package_versions": package_versions(),
            "seed_streams": {
                "cv_folds": "seed",
                "bootstrap_replicate": "default_rng([seed, b])",
                "stratum": "SeedSequence([seed, crc32(label)])",
            },
        }
        return self.write_json(MANIFEST, manifest)

    def write_error(self, stage: str, error: Exception) -> Path:
        if isinstance(error, AnalyticsError):
            payload = error.to_dict()
        else:
            payload = {"type": error.__class__.__name__, "message": str(error)}
        payload["stage"] = stage
        self.logger.error("Stage %s failed: %s", stage, error)
        return self.write_json(ERROR_FILE, payload)

    def clear_error(self) -> None:
        self.path(ERROR_FILE).unlink(missing_ok=True)
