"""Pipeline stages and their orchestration.

Each stage reads the artifacts of the stages before it from the run
directory and writes its own, so stages can be rerun one at a time from the
CLI. ``run_pipeline`` executes them in order after writing the manifest.
"""

from __future__ import annotations

import logging
from dataclasses import fields
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import yaml

from decomposition.metrics import PoolUsage, eligible_pools, pool_metrics, response_metric_comparison
from decomposition.simple_models import simple_models
from distfit.fitting import fit_distribution
from distfit.goodness import pp_qq_data
from distfit.scan import best_cell, model_scan
from errors import ConfigError, DataError, EmptyInputError
from features.layers import ChargingPool, SpatialLayer, load_layer, load_pools_csv, load_stations_csv, merge_stations, pools_frame
from features.matrix import FeatureMatrix, assemble_matrix, build_sources, load_feature_config, radius_sweep
from inference.bootstrap import BootstrapReport, bootstrap_lasso
from inference.stability import stability_report, stratified_run, threshold_strata
from pipeline.artifacts import ArtifactStore
from pipeline.config import PATH_KEYS, PipelineConfig
from preprocess.influence import cooks_filter
from preprocess.missing_rules import RULES_PATH, apply_missing_rules, load_rules
from preprocess.pruning import PruneReport, drop_uninformative, prune_correlated, vif_eliminate
from preprocess.transforms import ResponseTransform, expansion_diagnostic, residual_diagnostics
from regression.cv import cv_select, default_grid
from synth.world import CONFIG_PATH as SYNTH_CONFIG_PATH
from synth.world import generate_world, load_synth_config, write_world

USAGE_FIELDS = [f.name for f in fields(PoolUsage)]
DENSITY_POINTS = 200


# ---------------------------------------------------------------------------
# Helper functions
# ---------------------------------------------------------------------------

def _require(cfg: PipelineConfig, *keys: str) -> None:
    missing = [k for k in keys if not getattr(cfg, k)]
    if missing:
        raise ConfigError(f"missing required inputs: {missing}")


def _load_sources(cfg: PipelineConfig):
    """Layers from the feature config with the missing-value rules applied."""
    config_path = Path(cfg.features_config)
    base = config_path.parent
    fconf = load_feature_config(config_path)
    layers: Dict[str, SpatialLayer] = {}
    for entry in fconf.get("layers", []):
        if entry.get("path"):
            layers[entry["name"]] = load_layer(base / entry["path"], entry["name"])
    rule_counts: Dict[str, int] = {}
    if cfg.apply_rules:
        layers, log = apply_missing_rules(layers, load_rules(cfg.rules or RULES_PATH))
        rule_counts = dict(log.filled)
    return build_sources(fconf, base, layers=layers), rule_counts


def _usages(store: ArtifactStore, eligible_only: bool = True) -> List[PoolUsage]:
    frame = store.read_table("usage")
    if eligible_only:
        frame = frame[frame["eligible"]]
    frame = frame.reset_index()
    return [
        PoolUsage(**{k: (str(row[k]) if k == "pool_id" else row[k]) for k in USAGE_FIELDS})
        for row in frame.to_dict("records")
    ]


def _response(store: ArtifactStore, ids: Sequence[str]) -> np.ndarray:
    response = store.read_table("response")["response"]
    missing = [i for i in ids if i not in response.index]
    if missing:
        raise DataError(f"no response for observations {missing[:10]}")
    return response.loc[list(ids)].to_numpy(dtype=float)


def _final(store: ArtifactStore) -> Tuple[FeatureMatrix, np.ndarray]:
    fm = store.read_matrix("features_final")
    z = store.read_table("response_final")["transformed"].loc[fm.observation_ids].to_numpy(dtype=float)
    return fm, z


def _grid(cfg: PipelineConfig) -> np.ndarray:
    return default_grid(cfg.grid_start, cfg.grid_stop, cfg.grid_step)


def _strata(cfg: PipelineConfig, store: ArtifactStore, ids: Sequence[str]) -> Optional[np.ndarray]:
    if cfg.strata_column and cfg.strata_threshold_column:
        raise ConfigError("set either strata_column or strata_threshold_column, not both")
    if cfg.strata_column:
        if cfg.pools:
            table = pd.read_csv(cfg.pools, dtype={"pool_id": str}).set_index("pool_id")
        elif cfg.stations:
            # a merged pool carries its representative station's id
            table = pd.read_csv(cfg.stations, dtype={"station_id": str}).set_index("station_id")
        else:
            raise ConfigError("strata_column needs pools or stations")
        if cfg.strata_column not in table.columns:
            raise ConfigError(f"pools table has no column {cfg.strata_column!r}")
        return table[cfg.strata_column].reindex(list(ids)).fillna("").astype(str).to_numpy()
    if cfg.strata_threshold_column:
        raw = store.read_matrix("features_raw").to_frame()
        if cfg.strata_threshold_column not in raw.columns:
            raise ConfigError(f"raw feature matrix has no column {cfg.strata_threshold_column!r}")
        return threshold_strata(raw.loc[list(ids), cfg.strata_threshold_column], cfg.strata_threshold)
    return None


def _load_pools(cfg: PipelineConfig, store: ArtifactStore, events: pd.DataFrame) -> Tuple[Optional[List[ChargingPool]], pd.DataFrame]:
    """Pools from the pools file, or merged from the stations file.

    With stations, the event log's ``pool_id`` column holds station ids and is
    rewritten to the id of the merged pool.
    """
    if cfg.pools:
        pools = load_pools_csv(cfg.pools)
    elif cfg.stations:
        pools, station_pool = merge_stations(load_stations_csv(cfg.stations), cfg.merge_radius_m)
        groups = pd.DataFrame(sorted(station_pool.items()), columns=["station_id", "pool_id"])
        store.write_table("pool_groups", groups)
        if "pool_id" in events.columns:
            station_ids = events["pool_id"].astype(str)
            unknown = ~station_ids.isin(station_pool.keys())
            if unknown.any():
                logging.warning("%d events refer to stations missing from %s", int(unknown.sum()), cfg.stations)
            events = events.assign(pool_id=station_ids.map(station_pool).where(~unknown, station_ids))
    else:
        return None, events
    store.write_table("pools", pools_frame(pools))
    return pools, events


def _significant(store: ArtifactStore, prefix: str) -> List[str]:
    table = store.read_table(f"{prefix}_summary")
    return table.loc[table["significant"], "feature"].tolist()


def _write_bootstrap(store: ArtifactStore, prefix: str, report: BootstrapReport, cfg: PipelineConfig) -> None:
    store.write_table(f"{prefix}_summary", report.summary())
    store.write_table(f"{prefix}_stability", stability_report(report, cfg.display_threshold))
    store.write_json(f"{prefix}.json", report.to_dict())
    if cfg.save_samples:
        report.save_samples(store.path(f"{prefix}_samples.joblib"))


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------

def stage_extract(cfg: PipelineConfig, store: ArtifactStore) -> None:
    """Usage aggregates, the response vector and the raw feature matrix."""
    _require(cfg, "events")
    pools, events = _load_pools(cfg, store, pd.read_csv(cfg.events))
    usages, frame = pool_metrics(events, pools)
    kept = eligible_pools(usages, cfg.min_transactions, cfg.min_capacity_kw)
    kept_ids = [u.pool_id for u in kept]
    if not kept_ids:
        raise EmptyInputError("no pool passes the usage filters")
    frame["eligible"] = frame.index.isin(kept_ids)
    store.write_table("usage", frame, index="pool_id")
    response = frame.loc[kept_ids, [cfg.response_metric]].rename(columns={cfg.response_metric: "response"})
    store.write_table("response", response, index="observation_id")

    if cfg.feature_matrix:
        supplied = pd.read_csv(cfg.feature_matrix, index_col=0)
        supplied.index = supplied.index.astype(str)
        fm = FeatureMatrix.from_frame(supplied)
        if fm.missing_mask.any():
            raise DataError(f"{cfg.feature_matrix} has missing values; supply a complete matrix")
        store.write_matrix("features_raw", fm)
        store.write_json("assembly_report.json", {"source": cfg.feature_matrix, "radius_m": None})
        return

    _require(cfg, "features_config")
    if pools is None:
        raise ConfigError("feature extraction needs pools or stations")
    sources, rule_counts = _load_sources(cfg)
    selected = [p for p in pools if p.pool_id in set(kept_ids)]
    no_location = sorted(set(kept_ids) - {p.pool_id for p in selected})
    if no_location:
        logging.warning("%d eligible pools have no location and are skipped", len(no_location))
    fm, report = assemble_matrix(
        selected, sources, cfg.radius_m, cfg.coverage_threshold, cfg.imputation_threshold,
        cfg.coverage_mode, cfg.include_pool_features, cfg.n_jobs,
    )
    store.write_matrix("features_raw", fm)
    store.write_json("assembly_report.json", {**report.to_dict(), "missing_value_rules": rule_counts, "pools_without_location": no_location})

    if cfg.sweep_radii:
        transform = ResponseTransform.parse(cfg.response_transform)
        y = transform.apply(response.loc[[p.pool_id for p in selected], "response"].to_numpy(dtype=float))
        sweep = radius_sweep(selected, sources, y, cfg.sweep_radii, cfg.coverage_threshold, cfg.n_jobs)
        store.write_table("radius_sweep", sweep)


def stage_preprocess(cfg: PipelineConfig, store: ArtifactStore) -> None:
    """Pruning, response transform and the influence filter."""
    fm = store.read_matrix("features_raw")
    response = store.read_table("response")["response"]
    absent = [i for i, obs in enumerate(fm.observation_ids) if obs not in response.index]
    if absent:
        logging.warning("%d observations without a response are dropped", len(absent))
        fm = fm.drop_rows(absent)
    y = _response(store, fm.observation_ids)

    fm, uninformative = drop_uninformative(fm, cfg.zero_fraction)
    fm, corr_report = prune_correlated(fm, cfg.correlation_threshold, cfg.correlation_priority)
    fm, vif_report = vif_eliminate(fm, cfg.vif_threshold)
    prune = PruneReport(dropped_uninformative=uninformative).merge(corr_report).merge(vif_report)

    transform = ResponseTransform.parse(cfg.response_transform)
    z = transform.apply(y)
    diagnostics = residual_diagnostics(fm, y)
    store.write_table(
        "residual_diagnostics",
        pd.concat([frame.assign(transform=label) for label, frame in diagnostics.items()], ignore_index=True),
    )
    expansion = expansion_diagnostic(fm, z, cfg.k, cfg.seed)

    influence = cooks_filter(fm, z, cfg.cooks_threshold)
    final = fm.drop_rows(influence.removed)
    keep = np.setdiff1d(np.arange(fm.n), influence.removed)
    store.write_matrix("features_final", final)
    store.write_table(
        "response_final",
        pd.DataFrame({"response": y[keep], "transformed": z[keep]}, index=pd.Index(final.observation_ids, name="observation_id")),
        index="observation_id",
    )
    store.write_json(
        "preprocess_report.json",
        {
            "pruning": prune.to_dict(),
            "transform": transform.label,
            "transform_mse": {label: frame.attrs["mse"] for label, frame in diagnostics.items()},
            "expansion": expansion,
            "influence": influence.to_dict(fm.observation_ids),
            "n_observations": final.n,
            "n_features": final.p,
        },
    )


def stage_fit(cfg: PipelineConfig, store: ArtifactStore) -> None:
    """Cross-validated lasso on the final matrix."""
    fm, z = _final(store)
    transform = ResponseTransform.parse(cfg.response_transform)
    cv = cv_select(fm.values, z, _grid(cfg), cfg.k, cfg.seed, cfg.lambda2, fm.feature_names, transform.inverse, cfg.n_jobs)
    store.write_table("cv_curve", cv.to_frame())
    fit = cv.fit_cv
    store.write_json(
        "lasso_fit.json",
        {
            "lambda_cv": cv.lambda_cv,
            "lambda2": cfg.lambda2,
            "intercept": fit.intercept,
            "coefficients": dict(zip(fm.feature_names, fit.coefficients)),
            "standardized_coefficients": dict(zip(fm.feature_names, fit.standardized_coefficients)),
            "nnz": fit.nnz,
            "n_folds_used": cv.n_folds_used,
            "skipped_folds": cv.skipped_folds,
        },
    )


def stage_bootstrap(cfg: PipelineConfig, store: ArtifactStore) -> None:
    """Bootstrap stability of the lasso, optionally per stratum."""
    fm, z = _final(store)
    strata = _strata(cfg, store, fm.observation_ids)
    common = dict(B=cfg.B, k=cfg.k, grid=_grid(cfg), seed=cfg.seed, feature_names=fm.feature_names, n_jobs=cfg.n_jobs)
    if strata is None:
        report = bootstrap_lasso(fm.values, z, lam2=cfg.lambda2, sd_mode=cfg.sd_mode, **common)
        _write_bootstrap(store, "bootstrap", report, cfg)
        return
    reports = stratified_run(fm.values, z, strata, lam2=cfg.lambda2, sd_mode=cfg.sd_mode, **common)
    for label, report in reports.items():
        _write_bootstrap(store, f"bootstrap_{label}", report, cfg)
    store.write_json("bootstrap_strata.json", {"strata": sorted(reports), "counts": {s: int((strata == s).sum()) for s in reports}})


def stage_distfit(cfg: PipelineConfig, store: ArtifactStore) -> None:
    """Scan distribution families and transforms over the pool energies."""
    y = store.read_table("response")["response"].to_numpy(dtype=float)
    table = model_scan(y, experimental=cfg.distfit_experimental)
    store.write_table("distfit_scan", table)
    if table.attrs["degenerate"]:
        store.write_json("distfit_best.json", {"degenerate": True})
        return
    best = best_cell(table)
    fit = fit_distribution(y, best["family"], best["transform"], experimental=cfg.distfit_experimental)
    store.write_json("distfit_best.json", {"degenerate": False, **fit.to_dict()})
    store.write_table("distfit_pp_qq", pp_qq_data(y, fit))
    grid = np.linspace(y.min(), y.max(), DENSITY_POINTS)
    store.write_table("distfit_density", pd.DataFrame({"energy": grid, "pdf": fit.pdf(grid)}))


def stage_decompose(cfg: PipelineConfig, store: ArtifactStore) -> None:
    """Energy decomposition models and the response-metric comparison."""
    usages = _usages(store)
    store.write_table("simple_models", simple_models(usages))
    if store.exists("features_final.csv"):
        r2, corr = response_metric_comparison(usages, store.read_matrix("features_final"))
        store.write_table("metric_r2", r2)
        store.write_table("metric_corr", corr.rename_axis("metric"), index="metric")


def stage_report(cfg: PipelineConfig, store: ArtifactStore) -> None:
    """Collect the headline results of every stage that ran."""
    summary: Dict[str, object] = {}
    if store.exists("preprocess_report.json"):
        pre = store.read_json("preprocess_report.json")
        summary["n_observations"] = pre["n_observations"]
        summary["n_features"] = pre["n_features"]
        summary["removed_influential"] = pre["influence"]["removed"]
    if store.exists("lasso_fit.json"):
        fit = store.read_json("lasso_fit.json")
        summary["lambda_cv"] = fit["lambda_cv"]
        summary["selected_features"] = [name for name, c in fit["coefficients"].items() if c != 0]
    if store.exists("bootstrap.json"):
        summary["significant_features"] = _significant(store, "bootstrap")
    if store.exists("bootstrap_strata.json"):
        summary["significant_features_by_stratum"] = {
            s: _significant(store, f"bootstrap_{s}")
            for s in store.read_json("bootstrap_strata.json")["strata"]
        }
    if store.exists("distfit_best.json"):
        best = store.read_json("distfit_best.json")
        summary["best_distribution"] = None if best.get("degenerate") else {k: best[k] for k in ("family", "transform", "params", "ks_p_value")}
    if store.exists("simple_models.csv"):
        models = store.read_table("simple_models")
        summary["simple_models_r2"] = dict(zip(models["model"], models["r2"]))
    store.write_json("report.json", summary)


STAGES: Dict[str, Callable[[PipelineConfig, ArtifactStore], None]] = {
    "extract": stage_extract,
    "preprocess": stage_preprocess,
    "fit": stage_fit,
    "bootstrap": stage_bootstrap,
    "distfit": stage_distfit,
    "decompose": stage_decompose,
    "report": stage_report,
}
PIPELINE = tuple(STAGES)


# ---------------------------------------------------------------------------
# Main
# ---------------------------------------------------------------------------

def run_stage(name: str, cfg: PipelineConfig, store: Optional[ArtifactStore] = None) -> ArtifactStore:
    if name not in STAGES:
        raise ConfigError(f"unknown stage {name!r}; choose from {list(STAGES)}")
    store = store or ArtifactStore(cfg.output_dir)
    logging.info("Running stage %s", name)
    try:
        STAGES[name](cfg, store)
    except Exception as exc:
        store.write_error(name, exc)
        raise
    return store


def run_pipeline(cfg: PipelineConfig, stages: Sequence[str] = PIPELINE) -> ArtifactStore:
    store = ArtifactStore(cfg.output_dir)
    store.clear_error()
    recorded = cfg.to_dict()
    for key in PATH_KEYS:
        if recorded[key]:
            recorded[key] = str(Path(recorded[key]).resolve())
    store.write_manifest(recorded, list(stages))
    for name in stages:
        run_stage(name, cfg, store)
    logging.info("Pipeline finished; artifacts in %s", store.root)
    return store


def synthesize(
    out_dir: Union[str, Path],
    config_path: Union[str, Path] = SYNTH_CONFIG_PATH,
    n_jobs: int = 1,
    **overrides,
) -> Path:
    """Generate a synthetic world and a pipeline config that analyses it."""
    world = generate_world(load_synth_config(config_path, **overrides), n_jobs=n_jobs)
    out = write_world(world, out_dir)
    pipeline_config = {
        "features_config": "features_config.yaml",
        "pools": "pools.csv",
        "events": "events.csv",
        "radius_m": world.config.radius_m,
        "seed": world.config.seed,
        "output_dir": "artifacts",
    }
    with open(out / "pipeline_config.yaml", "w", encoding="utf-8") as fh:
        yaml.safe_dump(pipeline_config, fh, sort_keys=False)
    return out
