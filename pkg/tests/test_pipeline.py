import json

import numpy as np
import pandas as pd
import pytest
import yaml

import main
from conftest import make_matrix
from errors import ConfigError, DegenerateDataError, SchemaError
from pipeline.artifacts import ERROR_FILE, MANIFEST, ArtifactStore
from pipeline.config import PipelineConfig, load_pipeline_config
from pipeline.runner import PIPELINE, run_pipeline, run_stage, synthesize


def _write_yaml(path, data):
    path.write_text(yaml.safe_dump(data))
    return path


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

def test_defaults():
    cfg = load_pipeline_config()
    assert (cfg.radius_m, cfg.coverage_threshold, cfg.imputation_threshold) == (350.0, 0.15, 0.015)
    assert (cfg.zero_fraction, cfg.correlation_threshold, cfg.vif_threshold, cfg.cooks_threshold) == (0.95, 0.95, 10.0, 0.015)
    assert (cfg.k, cfg.B, cfg.grid_start, cfg.grid_stop, cfg.grid_step) == (10, 10_000, -4.0, 0.0, 0.02)
    assert cfg.response_transform == "log"


def test_file_then_overrides(tmp_path):
    path = _write_yaml(tmp_path / "run.yaml", {"k": 5, "B": 200, "events": "data/events.csv"})
    cfg = load_pipeline_config(path, {"k": 7, "B": None})
    assert cfg.k == 7
    assert cfg.B == 200
    assert cfg.events == str(tmp_path / "data" / "events.csv")


def test_bundled_yaml_is_the_base_layer(mocker, tmp_path):
    bundled = _write_yaml(tmp_path / "bundled.yaml", {"k": 6, "B": 400, "pools": None})
    mocker.patch("pipeline.config.CONFIG_PATH", bundled)
    cfg = load_pipeline_config()
    assert (cfg.k, cfg.B, cfg.pools) == (6, 400, None)
    assert cfg.vif_threshold == 10.0
    assert load_pipeline_config(overrides={"k": 8}).k == 8
    user = _write_yaml(tmp_path / "run.yaml", {"B": 50})
    assert load_pipeline_config(user).B == 50


def test_bundled_value_loses_to_cli_flag(mocker, tmp_path):
    mocker.patch("pipeline.config.CONFIG_PATH", _write_yaml(tmp_path / "bundled.yaml", {"k": 6}))
    stage = mocker.patch("main.run_stage")
    assert main.main(["fit", "--k", "9"]) == 0
    assert stage.call_args.args[1].k == 9
    assert main.main(["fit"]) == 0
    assert stage.call_args.args[1].k == 6


def test_bundled_yaml_rejects_unknown_keys(mocker, tmp_path):
    mocker.patch("pipeline.config.CONFIG_PATH", _write_yaml(tmp_path / "bundled.yaml", {"kk": 6}))
    with pytest.raises(ConfigError):
        load_pipeline_config()


def test_pools_and_stations_are_exclusive():
    with pytest.raises(ConfigError):
        PipelineConfig(pools="pools.csv", stations="stations.csv")
    with pytest.raises(ConfigError):
        PipelineConfig(merge_radius_m=0)


def test_manifest_feeds_back_as_config(tmp_path):
    cfg = PipelineConfig(k=4, B=50, output_dir=str(tmp_path / "out"))
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps({"config": cfg.to_dict(), "stages": list(PIPELINE)}))
    assert load_pipeline_config(path) == cfg


@pytest.mark.parametrize(
    "bad",
    [
        {"colour": "red"},
        {"zero_fraction": 1.5},
        {"vif_threshold": 1.0},
        {"coverage_mode": "some"},
        {"response_transform": "fourth_root"},
        {"response_metric": "revenue"},
        {"grid_start": 1.0, "grid_stop": 0.0},
        {"k": 1},
    ],
)
def test_invalid_config(tmp_path, bad):
    with pytest.raises(ConfigError):
        load_pipeline_config(_write_yaml(tmp_path / "bad.yaml", bad))


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        load_pipeline_config(tmp_path / "nope.yaml")


# ---------------------------------------------------------------------------
# Artifacts
# ---------------------------------------------------------------------------

def test_table_round_trip(tmp_path):
    store = ArtifactStore(tmp_path)
    df = pd.DataFrame(
        {
            "count": [1, 2, 3],
            "value": [0.1, 1 / 3, np.nan],
            "flag": [True, False, True],
            "code": ["001", "010", "100"],
            "when": pd.to_datetime(["2015-01-01", "2015-06-01", "2016-01-01"]),
        },
        index=pd.Index(["A", "B", "C"], name="pool_id"),
    )
    store.write_table("usage", df, index="pool_id", provenance={"source": "test"})
    back = store.read_table("usage")
    pd.testing.assert_frame_equal(back, df, check_index_type=False)
    sidecar = store.read_json("usage.schema.json")
    assert [c["type"] for c in sidecar["columns"]] == ["STRING", "INTEGER", "FLOAT", "BOOLEAN", "STRING", "TIMESTAMP"]
    with pytest.raises(SchemaError):
        store.read_table("missing")


def test_matrix_round_trip_is_exact(tmp_path, rng):
    store = ArtifactStore(tmp_path)
    fm = make_matrix(rng.standard_normal((5, 3)) * 1e3)
    store.write_matrix("features_raw", fm)
    back = store.read_matrix("features_raw")
    np.testing.assert_array_equal(back.values, fm.values)
    assert back.observation_ids == fm.observation_ids
    assert back.feature_names == fm.feature_names
    assert back.provenance["f0"] == {"kind": "test"}


def test_error_file(tmp_path):
    store = run_stage_failure(tmp_path)
    payload = store.read_json(ERROR_FILE)
    assert payload["stage"] == "preprocess"
    assert payload["type"] == "SchemaError"
    store.clear_error()
    assert not store.exists(ERROR_FILE)


def run_stage_failure(tmp_path):
    cfg = PipelineConfig(output_dir=str(tmp_path))
    store = ArtifactStore(tmp_path)
    with pytest.raises(SchemaError):
        run_stage("preprocess", cfg, store)
    return store


def test_extract_merges_stations_into_pools(tmp_path):
    pd.DataFrame(
        {"station_id": ["S1", "S2", "S3"], "x": [0.0, 10.0, 1000.0], "y": [0.0, 0.0, 0.0],
         "n_points": [2, 1, 1], "capacity_kw": [11.0, 22.0, np.nan]}
    ).to_csv(tmp_path / "stations.csv", index=False)
    pd.DataFrame(
        {"pool_id": ["S1", "S1", "S2", "S3", "S3", "S3"], "point_id": ["a", "b", "c", "d", "d", "e"],
         "energy_kwh": [10.0, 5.0, 7.0, 1.0, 2.0, 3.0], "charging_h": [2.0, 1.0, 1.0, 1.0, 1.0, 1.0]}
    ).to_csv(tmp_path / "events.csv", index=False)
    pd.DataFrame({"f0": [1.0, 2.0]}, index=pd.Index(["S1", "S3"], name="observation_id")).to_csv(tmp_path / "fm.csv")
    cfg = PipelineConfig(
        stations=str(tmp_path / "stations.csv"), merge_radius_m=50.0, events=str(tmp_path / "events.csv"),
        feature_matrix=str(tmp_path / "fm.csv"), min_transactions=1, output_dir=str(tmp_path / "out"),
    )
    store = ArtifactStore(tmp_path / "out")
    run_stage("extract", cfg, store)
    groups = store.read_table("pool_groups")
    assert dict(zip(groups["station_id"], groups["pool_id"])) == {"S1": "S1", "S2": "S1", "S3": "S3"}
    usage = store.read_table("usage")
    assert sorted(usage.index) == ["S1", "S3"]
    assert usage.loc["S1", "n_transactions"] == 3
    assert usage.loc["S1", "energy"] == pytest.approx(22.0)
    assert usage.loc["S1", "n_points"] == 3
    assert usage.loc["S1", "capacity"] == pytest.approx(33.0)
    assert np.isnan(usage.loc["S3", "capacity"])
    assert len(store.read_table("pools")) == 2


def test_unknown_stage(tmp_path):
    with pytest.raises(ConfigError):
        run_stage("plot", PipelineConfig(output_dir=str(tmp_path)))


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------

def test_cli_stage_with_overrides(mocker, tmp_path):
    path = _write_yaml(tmp_path / "run.yaml", {"k": 5})
    stage = mocker.patch("main.run_stage")
    assert main.main(["fit", "--config", str(path), "--B", "30", "--no-apply-rules", "--sweep-radii", "200", "400"]) == 0
    name, cfg = stage.call_args.args
    assert name == "fit"
    assert (cfg.k, cfg.B, cfg.apply_rules, cfg.sweep_radii) == (5, 30, False, [200.0, 400.0])


def test_cli_run_calls_pipeline(mocker):
    pipeline = mocker.patch("main.run_pipeline")
    assert main.main(["run", "--seed", "3"]) == 0
    assert pipeline.call_args.args[0].seed == 3


@pytest.mark.parametrize(
    "error,code",
    [(ConfigError("bad"), 2), (SchemaError("missing"), 3), (DegenerateDataError("flat"), 4)],
)
def test_cli_exit_codes(mocker, error, code):
    mocker.patch("main.run_stage", side_effect=error)
    assert main.main(["bootstrap"]) == code


def test_cli_synth(mocker, tmp_path):
    synth = mocker.patch("main.synthesize", return_value=tmp_path)
    pipeline = mocker.patch("main.run_pipeline")
    assert main.main(["synth", "--out", str(tmp_path), "--seed", "4", "--n-pools", "50"]) == 0
    assert synth.call_args.kwargs["seed"] == 4
    assert synth.call_args.kwargs["n_pools"] == 50
    pipeline.assert_not_called()


# ---------------------------------------------------------------------------
# End to end
# ---------------------------------------------------------------------------

def test_synthetic_world_end_to_end(tmp_path):
    world = synthesize(tmp_path / "world", seed=2, n_pools=150, n_features=8)
    cfg = load_pipeline_config(
        world / "pipeline_config.yaml",
        {"B": 20, "k": 5, "grid_step": 0.2, "cooks_threshold": 0.05, "sweep_radii": [250.0, 350.0]},
    )
    store = run_pipeline(cfg)
    assert store.root == world / "artifacts"

    for name in ("usage.csv", "features_raw.csv", "features_final.csv", "cv_curve.csv", "bootstrap_summary.csv",
                 "distfit_scan.csv", "simple_models.csv", "radius_sweep.csv", "report.json", MANIFEST):
        assert store.exists(name), name
    assert not store.exists(ERROR_FILE)

    report = store.read_json("report.json")
    assert "tiles.A0" in report["significant_features"]
    assert report["best_distribution"]["family"] in ("weibull", "beta", "gamma")
    assert set(report["simple_models_r2"]) == {"y=kn", "y=kt", "y=kp", "y=k(t*p)", "y=k(n*p)", "y=k(n*t)"}

    manifest = store.read_json(MANIFEST)
    assert manifest["stages"] == list(PIPELINE)
    assert load_pipeline_config(store.path(MANIFEST)) == cfg
