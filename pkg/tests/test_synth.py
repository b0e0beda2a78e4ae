import json

import numpy as np
import pandas as pd
import pytest
import yaml

from decomposition.metrics import pool_metrics
from errors import ConfigError
from features.layers import load_pools_csv
from features.matrix import extract_frame
from regression.ols import ols_fit
from synth.world import SynthConfig, attribute_names, generate_world, load_synth_config, write_world

SMALL = dict(
    n_pools=40,
    n_features=3,
    true_support=(0.9, 0.0, -0.5),
    extent_m=4000.0,
    tile_m=500.0,
    land_use_tile_m=1000.0,
    poi_per_km2=2.0,
    road_spacing_m=1000.0,
)


@pytest.fixture
def small_world():
    return generate_world(SynthConfig(seed=3, noise_sd=0.0, **SMALL))


def test_config_validation():
    with pytest.raises(ConfigError):
        SynthConfig(n_features=2, true_support=(1.0,))
    with pytest.raises(ConfigError):
        SynthConfig(**{**SMALL, "stratum_supports": {"rural": (1.0, 0.0, 0.0)}})
    with pytest.raises(ConfigError):
        SynthConfig(**{**SMALL, "extent_m": 600.0})
    with pytest.raises(ConfigError):
        SynthConfig.from_dict({"n_features": 3, "support": {5: 1.0}})
    with pytest.raises(ConfigError):
        SynthConfig.from_dict({"n_features": 3, "true_support": [0, 0, 0], "colour": "red"})


def test_support_mapping_and_overrides(tmp_path):
    cfg = SynthConfig.from_dict({"n_features": 4, "support": {1: 0.5, 3: -0.2}})
    assert cfg.true_support == (0.0, 0.5, 0.0, -0.2)
    default = load_synth_config(seed=9, n_pools=None)
    assert default.seed == 9 and default.n_pools == 300 and default.n_features == 50
    assert sum(b != 0 for b in default.true_support) == 5
    with pytest.raises(ConfigError):
        load_synth_config(tmp_path / "missing.yaml")


def test_world_is_deterministic():
    a = generate_world(SynthConfig(seed=5, **SMALL))
    b = generate_world(SynthConfig(seed=5, **SMALL))
    c = generate_world(SynthConfig(seed=6, **SMALL))
    pd.testing.assert_frame_equal(a.events, b.events)
    assert a.truth == b.truth
    assert a.truth["pools"] != c.truth["pools"]


def test_events_aggregate_to_planted_energy(small_world):
    usages, _ = pool_metrics(small_world.events, small_world.pools)
    for u in usages:
        np.testing.assert_allclose(u.energy, small_world.truth["pools"][u.pool_id]["energy"], rtol=1e-10)
        assert u.n_points == next(p.n_points for p in small_world.pools if p.pool_id == u.pool_id)


def test_planted_model_is_exact_without_noise(small_world):
    values, gaps, _ = extract_frame(small_world.pools, small_world.sources(), small_world.config.radius_m, n_jobs=1)
    names = [f"tiles.{a}" for a in attribute_names(small_world.config)]
    assert (gaps[names].to_numpy() == 0).all()
    y = np.array([small_world.truth["pools"][p]["log_energy"] for p in values.index])
    fit = ols_fit(values[names].to_numpy(), y, names)
    np.testing.assert_allclose(fit.coefficients, [0.9, 0.0, -0.5], atol=1e-8)
    np.testing.assert_allclose(fit.intercept, small_world.config.intercept, atol=1e-8)
    assert small_world.truth["support"] == ["tiles.A0", "tiles.A2"]


def test_write_world(tmp_path, small_world):
    out = write_world(small_world, tmp_path / "world")
    for name in ("tiles.geojson", "land_use.geojson", "roads.geojson", "pois.csv", "pools.csv", "events.csv"):
        assert (out / name).is_file()
    with open(out / "features_config.yaml") as fh:
        assert [layer["name"] for layer in yaml.safe_load(fh)["layers"]] == ["tiles", "land_use", "pois", "pools", "roads"]
    with open(out / "truth.json") as fh:
        assert json.load(fh)["support"] == small_world.truth["support"]
    pools = load_pools_csv(out / "pools.csv")
    assert [p.pool_id for p in pools] == [p.pool_id for p in small_world.pools]
    reloaded = SynthConfig.from_dict(yaml.safe_load((out / "synth_config.yaml").read_text()))
    assert reloaded == small_world.config
