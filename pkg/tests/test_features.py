import logging
from pathlib import Path

import numpy as np
import pandas as pd
import pytest
import yaml

from conftest import make_matrix
from errors import EmptyInputError, SchemaError
from features.buffers import (
    RoadSpec,
    apportion_count,
    areal_mean,
    land_use_areas,
    overlaps,
    poi_features,
    pool_features,
    road_traffic_features,
)
from features.layers import (
    AttributeKind,
    ChargingPool,
    Kind,
    SpatialLayer,
    load_geojson,
    load_layer,
    load_pools_csv,
    load_stations_csv,
    merge_stations,
    pools_frame,
    save_geojson,
)
from features.matrix import (
    ROLES,
    FeatureMatrix,
    LayerSource,
    assemble_matrix,
    build_sources,
    extract_frame,
    load_feature_config,
    radius_sweep,
)
from features import matrix as matrix_module
from geometry.primitives import Buffer, Point, Polygon, Polyline


def _square(x0, y0, side):
    return Polygon.from_coords([(x0, y0), (x0 + side, y0), (x0 + side, y0 + side), (x0, y0 + side)])


def _quadrants(values, side=1000.0):
    """Four squares meeting at the origin, one attribute row each."""
    polys = [_square(-side, -side, side), _square(0, -side, side), _square(-side, 0, side), _square(0, 0, side)]
    return SpatialLayer("tiles", "polygon", tuple((p,) for p in polys), pd.DataFrame(values))


def test_count_is_area_proportional():
    layer = _quadrants({"residents": [1000.0, 1000.0, 1000.0, 1000.0]})
    buf = Buffer.around(Point(0, 0), 350)
    res = apportion_count(buf, layer, "residents")
    assert res.value == pytest.approx(1000.0 * buf.area / 1e6)
    assert res.coverage_gap == pytest.approx(0.0, abs=1e-12)


def test_count_reuses_overlaps():
    layer = _quadrants({"residents": [10.0, 20.0, 30.0, 40.0]})
    buf = Buffer.around(Point(100, 50), 350)
    hits = overlaps(buf, layer)
    assert apportion_count(buf, layer, "residents", hits) == apportion_count(buf, layer, "residents")


def test_areal_mean_and_gap():
    layer = _quadrants({"share": [10.0, 20.0, np.nan, np.nan]})
    buf = Buffer.around(Point(0, 0), 350)
    res = areal_mean(buf, layer, "share")
    assert res.value == pytest.approx(15.0)
    assert res.coverage_gap == pytest.approx(0.5, abs=1e-9)


def test_areal_mean_without_data_is_missing():
    layer = _quadrants({"share": [np.nan] * 4})
    res = areal_mean(Buffer.around(Point(0, 0), 350), layer, "share")
    assert res.missing
    assert res.coverage_gap == 1.0


def test_count_rejects_point_layer():
    pts = SpatialLayer("p", "point", ((Point(0, 0),),), pd.DataFrame({"a": [1.0]}))
    with pytest.raises(SchemaError):
        apportion_count(Buffer.around(Point(0, 0), 10), pts, "a")


def test_poi_distance_and_density():
    pts = [Point(100, 0), Point(0, 200), Point(5000, 0)]
    layer = SpatialLayer("pois", "point", tuple((p,) for p in pts), pd.DataFrame({"category": ["shop", "school", "shop"]}))
    buf = Buffer.around(Point(0, 0), 350)
    dist, dens = poi_features(Point(0, 0), buf, layer)
    assert dist == pytest.approx(100.0)
    assert dens == pytest.approx(2 / (buf.area / 1e6))
    dist, dens = poi_features(Point(0, 0), buf, layer, category="school")
    assert dist == pytest.approx(200.0)
    dist, dens = poi_features(Point(0, 0), buf, layer, category="health")
    assert np.isnan(dist) and dens == 0.0


def test_land_use_areas_partition_buffer():
    layer = _quadrants({"category": ["built", "green", "built", "water"]})
    buf = Buffer.around(Point(0, 0), 350)
    areas = land_use_areas(buf, layer)
    assert set(areas) == {"built", "green", "water"}
    assert sum(areas.values()) == pytest.approx(buf.area)
    assert areas["built"] == pytest.approx(buf.area / 2)


def _roads():
    lines = [
        Polyline.from_coords([(-2000, 10), (2000, 10)]),
        Polyline.from_coords([(300, -2000), (300, 2000)]),
    ]
    attrs = pd.DataFrame(
        {
            "segment_type": ["primary", "residential"],
            "TF1": [100.0, 10.0], "TF2": [50.0, 5.0],
            "TF4": [4.0, 0.0], "TF5": [2.0, 0.0],
        }
    )
    return SpatialLayer("roads", "polyline", tuple((l,) for l in lines), attrs)


def test_road_traffic_features():
    spec = RoadSpec(flows={"cars": ["TF1", "TF2"], "buses": ["TF4", "TF5"]})
    buf = Buffer.around(Point(0, 0), 350)
    rec = road_traffic_features(Point(0, 0), buf, _roads(), spec)
    assert rec["road_density"] > 0
    assert rec["traffic_density.all"] == pytest.approx(rec["traffic_density.cars"] + rec["traffic_density.buses"])
    assert rec["nearest_flow.cars"] == 150.0
    assert rec["nearest_type.primary"] == 1.0
    assert rec["nearest_type.secondary"] == 0.0
    assert "nearest_type.residential" not in rec


def test_missing_flow_inside_buffer_is_not_zeroed():
    roads = _roads()
    roads.attributes.loc[0, ["TF1", "TF2"]] = np.nan
    spec = RoadSpec(flows={"cars": ["TF1", "TF2"], "buses": ["TF4", "TF5"]})
    rec = road_traffic_features(Point(0, 0), Buffer.around(Point(0, 0), 350), roads, spec)
    assert np.isnan(rec["traffic_density.cars"])
    assert np.isnan(rec["traffic_density.all"])
    assert rec["traffic_density.buses"] > 0
    assert rec["road_density"] > 0
    assert np.isnan(rec["nearest_flow.cars"])


def test_pool_features():
    pool = ChargingPool("P1", Point(3, 4), n_points=2, capacity_kw=22.0, rollout="strategic")
    assert pool_features(pool) == {"n_points": 2.0, "max_power": 22.0, "x": 3.0, "y": 4.0, "rollout_strategic": 1.0}


def test_feature_matrix_validation():
    with pytest.raises(EmptyInputError):
        FeatureMatrix([], [], np.empty((0, 0)), np.empty((0, 0), dtype=bool))
    with pytest.raises(SchemaError):
        make_matrix(np.ones((2, 2)), names=["a", "a"])
    with pytest.raises(SchemaError):
        FeatureMatrix(["a"], ["x"], np.array([[np.nan]]), np.array([[False]]))


def test_feature_matrix_select_and_drop():
    fm = make_matrix(np.arange(12.0).reshape(4, 3), names=["a", "b", "c"])
    sub = fm.select(["c", "a"]).drop_rows([1])
    assert sub.feature_names == ["c", "a"]
    assert sub.observation_ids == ["P0000", "P0002", "P0003"]
    assert sub.column("a").tolist() == [0.0, 6.0, 9.0]


def _pools():
    return [
        ChargingPool("A", Point(-400, -400)),
        ChargingPool("B", Point(400, 400)),
        ChargingPool("C", Point(400, -400)),
    ]


def test_assemble_drops_low_coverage_feature():
    layer = _quadrants({"share": [10.0, np.nan, 20.0, 30.0], "residents": [1.0, 2.0, 3.0, 4.0]})
    src = LayerSource(
        "tiles", "attributes", layer,
        attributes=(AttributeKind.parse("share", "average"), AttributeKind.parse("residents", "count")),
    )
    fm, report = assemble_matrix(_pools(), [src], radius_m=200, n_jobs=1)
    assert fm.feature_names == ["tiles.residents"]
    assert "tiles.share" in report.dropped
    assert fm.observation_ids == ["A", "B", "C"]
    assert fm.provenance["tiles.residents"]["kind"] == "count"


def test_assemble_aggregate_mode_drops_when_too_many_missing():
    layer = _quadrants({"share": [10.0, np.nan, 20.0, 30.0]})
    src = LayerSource("tiles", "attributes", layer, attributes=(AttributeKind.parse("share", "average"),))
    with pytest.raises(EmptyInputError):
        assemble_matrix(_pools(), [src], radius_m=200, coverage_mode="aggregate", n_jobs=1)


def test_assemble_imputes_rare_missing_values():
    polys = [_square(i * 100.0, 0, 100) for i in range(100)]
    share = np.arange(100, dtype=float)
    share[7] = np.nan
    layer = SpatialLayer("strip", "polygon", tuple((p,) for p in polys), pd.DataFrame({"share": share}))
    pools = [ChargingPool(f"P{i:03d}", Point(i * 100.0 + 50, 50)) for i in range(100)]
    src = LayerSource("strip", "attributes", layer, attributes=(AttributeKind.parse("share", "average"),))
    fm, report = assemble_matrix(pools, [src], radius_m=40, coverage_mode="aggregate", n_jobs=1)
    assert report.imputed == {"strip.share": 1}
    assert fm.column("strip.share")[7] == pytest.approx(np.nanmedian(share))
    assert not fm.missing_mask.any()


def test_assemble_is_independent_of_n_jobs():
    layer = _quadrants({"residents": [1.0, 2.0, 3.0, 4.0]})
    src = LayerSource("tiles", "attributes", layer, attributes=(AttributeKind.parse("residents", "count"),))
    serial, _ = assemble_matrix(_pools(), [src], radius_m=300, n_jobs=1)
    parallel, _ = assemble_matrix(_pools(), [src], radius_m=300, n_jobs=2)
    np.testing.assert_array_equal(serial.values, parallel.values)


def test_extraction_progress_bar_shows_at_info(mocker, caplog):
    bar = mocker.patch("features.matrix.tqdm", side_effect=lambda it, **kwargs: it)
    layer = _quadrants({"residents": [1.0, 2.0, 3.0, 4.0]})
    src = LayerSource("tiles", "attributes", layer, attributes=(AttributeKind.parse("residents", "count"),))
    caplog.set_level(logging.INFO)
    extract_frame(_pools(), [src], radius_m=300, n_jobs=1)
    assert bar.call_args.kwargs["disable"] is False
    caplog.set_level(logging.WARNING)
    extract_frame(_pools(), [src], radius_m=300, n_jobs=1)
    assert bar.call_args.kwargs["disable"] is True


def test_extraction_is_translation_invariant():
    layer = _quadrants({"residents": [1.0, 2.0, 3.0, 4.0]})
    src = LayerSource("tiles", "attributes", layer, attributes=(AttributeKind.parse("residents", "count"),))
    base, _ = assemble_matrix(_pools(), [src], radius_m=300, n_jobs=1)
    moved, _ = assemble_matrix(
        [p.translated(5000, -3000) for p in _pools()], [src.translated(5000, -3000)], radius_m=300, n_jobs=1
    )
    np.testing.assert_allclose(moved.values, base.values, rtol=1e-9)


def test_radius_sweep_reports_every_radius(rng):
    polys = [_square(i * 100.0, j * 100.0, 100) for i in range(20) for j in range(20)]
    layer = SpatialLayer("grid", "polygon", tuple((p,) for p in polys), pd.DataFrame({"a": rng.uniform(0, 10, 400)}))
    pools = [ChargingPool(f"P{i}", Point(x, y)) for i, (x, y) in enumerate(rng.uniform(600, 1400, (30, 2)))]
    src = LayerSource("grid", "attributes", layer, attributes=(AttributeKind.parse("a", "count"),))
    y = rng.standard_normal(30)
    table = radius_sweep(pools, [src], y, radii=[100, 200, 300], n_jobs=1)
    assert table["radius_m"].tolist() == [100.0, 200.0, 300.0]
    assert (table["n_obs"] == 30).all()
    assert table["mse"].notna().all()
    assert (table["n_incomplete"] == 0).all()


def test_radius_sweep_keeps_rows_complete_at_smallest_radius(rng):
    polys = [_square(i * 100.0, j * 100.0, 100) for i in range(20) for j in range(20)]
    layer = SpatialLayer("grid", "polygon", tuple((p,) for p in polys), pd.DataFrame({"a": rng.uniform(0, 10, 400)}))
    coords = np.vstack([rng.uniform(600, 1400, (30, 2)), [[1850.0, 1000.0], [2600.0, 1000.0]]])
    pools = [ChargingPool(f"P{i}", Point(x, y)) for i, (x, y) in enumerate(coords)]
    src = LayerSource("grid", "attributes", layer, attributes=(AttributeKind.parse("a", "count"),))
    # P30 loses ~20% of its 300 m buffer past the grid edge; P31 lies off the grid
    table = radius_sweep(pools, [src], rng.standard_normal(32), radii=[300, 100, 200], n_jobs=1)
    assert table["radius_m"].tolist() == [100.0, 200.0, 300.0]
    assert table["n_obs"].tolist() == [31, 31, 30]
    assert table["n_incomplete"].tolist() == [0, 0, 1]
    assert table["mse"].notna().all()


def test_geojson_round_trip(tmp_path):
    layer = _quadrants({"residents": [1.0, 2.0, np.nan, 4.0], "name": ["a", "b", "c", "d"]})
    save_geojson(layer, tmp_path / "tiles.geojson")
    loaded = load_geojson(tmp_path / "tiles.geojson")
    assert loaded.name == "tiles"
    assert loaded.geometry_type == "polygon"
    assert np.isnan(loaded.attributes["residents"][2])
    assert loaded.parts[3][0].outer_array.tolist() == layer.parts[3][0].outer_array.tolist()


def test_pools_csv_round_trip(tmp_path):
    pools = [ChargingPool("P1", Point(1, 2), 2, 11.0, "demand", "s1"), ChargingPool("P2", Point(3, 4))]
    pools_frame(pools).to_csv(tmp_path / "pools.csv", index=False)
    loaded = load_pools_csv(tmp_path / "pools.csv")
    assert loaded[0] == pools[0]
    assert loaded[1].pool_id == "P2" and np.isnan(loaded[1].capacity_kw)
    assert load_layer(tmp_path / "pools.csv").geometry_type == "point"


def test_stations_merge_into_pools(tmp_path):
    pd.DataFrame(
        {"station_id": ["B", "A", "C"], "x": [10.0, 0.0, 500.0], "y": [0.0, 0.0, 0.0],
         "n_points": [1, 2, 3], "capacity_kw": [22.0, np.nan, np.nan], "rollout": ["demand", "strategic", ""]}
    ).to_csv(tmp_path / "stations.csv", index=False)
    stations = load_stations_csv(tmp_path / "stations.csv")
    pools, station_pool = merge_stations(stations, radius_m=50)
    assert station_pool == {"A": "A", "B": "A", "C": "C"}
    first, second = pools
    assert (first.pool_id, first.location, first.n_points, first.capacity_kw, first.rollout) == ("A", Point(0, 0), 3, 22.0, "strategic")
    assert second.n_points == 3 and np.isnan(second.capacity_kw)
    pd.DataFrame({"x": [0.0], "y": [0.0]}).to_csv(tmp_path / "bad.csv", index=False)
    with pytest.raises(SchemaError):
        load_stations_csv(tmp_path / "bad.csv")


def test_build_sources_applies_land_use_mapping(tmp_path):
    save_geojson(_quadrants({"code": ["20", "21", "60", "70"]}), tmp_path / "lu.geojson")
    (tmp_path / "mapping.yaml").write_text(yaml.safe_dump({"20": "built", "21": "built", "60": "forest"}))
    config = {
        "layers": [
            {"name": "lu", "path": "lu.geojson", "role": "land-use", "category_attr": "code", "category_mapping": "mapping.yaml"}
        ]
    }
    (src,) = build_sources(config, tmp_path)
    assert src.layer.attributes["code"].tolist()[:3] == ["built", "built", "forest"]
    assert src.layer.attributes["code"].isna().iloc[3]
    fm, _ = assemble_matrix([ChargingPool("A", Point(0, 0))], [src], radius_m=350, n_jobs=1)
    assert fm.feature_names == ["lu.built", "lu.forest"]


def test_bundled_feature_config_is_valid():
    path = Path(matrix_module.__file__).with_name("features_config.yaml")
    config = load_feature_config(path)
    assert config["radius_m"] == 350
    for entry in config["layers"]:
        assert entry["role"] in ROLES
        for attr in entry.get("attributes", []):
            Kind(attr["kind"])
        if isinstance(entry.get("category_mapping"), str):
            with open(path.parent / entry["category_mapping"]) as fh:
                assert yaml.safe_load(fh)
