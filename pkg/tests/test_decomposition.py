import numpy as np
import pandas as pd
import pytest

from conftest import make_matrix
from decomposition.metrics import PoolUsage, eligible_pools, pool_metrics, response_metric_comparison, usage_frame
from decomposition.simple_models import MODEL_MAP, simple_models
from errors import ContractViolationError, DataError, SchemaError
from features.layers import ChargingPool
from geometry.primitives import Point


def _events():
    return pd.DataFrame(
        {
            "pool_id": ["A", "A", "A", "B", "B"],
            "point_id": ["a1", "a2", "a1", "b1", "b1"],
            "energy_kwh": [10.0, 20.0, 6.0, 4.0, 8.0],
            "charging_h": [2.0, 4.0, 1.0, 1.0, 3.0],
        }
    )


def _usage(pool_id, n, t, p, capacity=22.0):
    return PoolUsage(pool_id, n, t, p, n * t * p, 2, capacity, n * t * p / 2)


def test_pool_metrics_factorization():
    usages, frame = pool_metrics(_events())
    a, b = usages
    assert (a.pool_id, a.n_transactions, a.n_points) == ("A", 3, 2)
    np.testing.assert_allclose(a.avg_charging_time, 7.0 / 3)
    np.testing.assert_allclose(a.avg_power, 36.0 / 7.0)
    np.testing.assert_allclose(a.energy, 36.0)
    for u in usages:
        np.testing.assert_allclose(u.n_transactions * u.avg_charging_time * u.avg_power, u.energy)
    assert a.max_point_energy == 20.0 and b.max_point_energy == 12.0
    assert np.isnan(a.capacity)
    assert frame.loc["A", "energy_per_point"] == 18.0


def test_pool_metrics_uses_pool_records():
    pools = [ChargingPool("A", Point(0.0, 0.0), n_points=4, capacity_kw=44.0)]
    usages, frame = pool_metrics(_events(), pools)
    assert usages[0].n_points == 4
    assert frame.loc["A", "energy_per_capacity"] == pytest.approx(36.0 / 44.0)
    assert usages[1].n_points == 1


@pytest.mark.parametrize(
    "mutate,error",
    [
        (lambda df: df.drop(columns=["charging_h"]), SchemaError),
        (lambda df: df.assign(energy_kwh=[10.0, -1.0, 6.0, 4.0, 8.0]), DataError),
        (lambda df: df.assign(charging_h=[2.0, 0.0, 1.0, 1.0, 3.0]), DataError),
        (lambda df: df.iloc[0:0], DataError),
    ],
)
def test_pool_metrics_rejects_bad_logs(mutate, error):
    with pytest.raises(error):
        pool_metrics(mutate(_events()))


def test_negative_usage_is_rejected():
    with pytest.raises(DataError):
        PoolUsage("X", -1, 1.0, 1.0, 1.0, 1, 11.0, 1.0)


def test_eligible_pools():
    usages = [
        _usage("busy", 40, 2.0, 7.0),
        _usage("quiet", 29, 2.0, 7.0),
        _usage("tiny", 40, 2.0, 7.0, capacity=0.5),
        _usage("unknown", 40, 2.0, 7.0, capacity=float("nan")),
    ]
    assert [u.pool_id for u in eligible_pools(usages)] == ["busy", "unknown"]
    assert len(eligible_pools(usages, min_transactions=1, min_capacity_kw=0.0)) == 4


def test_simple_models_constant_power():
    usages = [_usage(f"P{i}", n, t, 7.0) for i, (n, t) in enumerate([(30, 2.0), (50, 1.5), (80, 3.0), (45, 2.5)])]
    table = simple_models(usages).set_index("model")
    assert list(table.index) == list(MODEL_MAP)
    np.testing.assert_allclose(table.loc["y=k(n*t)", ["k", "r2", "cv"]].to_numpy(dtype=float), [7.0, 1.0, 0.0], atol=1e-12)

    n = np.array([30, 50, 80, 45], dtype=float)
    y = np.array([u.energy for u in usages])
    k = n @ y / (n @ n)
    np.testing.assert_allclose(table.loc["y=kn", "k"], k)
    np.testing.assert_allclose(table.loc["y=kn", "r2"], 1 - ((y - k * n) @ (y - k * n)) / (y @ y))
    ratio = y / n
    np.testing.assert_allclose(table.loc["y=kn", "stdev"], ratio.std(ddof=1))


def test_simple_models_centered_r2_is_lower():
    usages = [_usage(f"P{i}", n, t, p) for i, (n, t, p) in enumerate([(30, 2.0, 5.0), (50, 1.5, 9.0), (80, 3.0, 4.0)])]
    plain = simple_models(usages).set_index("model")["r2"]
    centered = simple_models(usages, centered_r2=True).set_index("model")["r2"]
    assert (centered <= plain + 1e-12).all()


def test_simple_models_zero_regressor_and_contract():
    usages = [PoolUsage(f"P{i}", 10 + i, 1.0, 0.0, 5.0 + i, 1, 11.0, 5.0) for i in range(3)]
    table = simple_models(usages).set_index("model")
    assert table.loc["y=kp", "reason"] == "regressor is zero for every pool"
    assert np.isnan(table.loc["y=kp", "k"])
    with pytest.raises(ContractViolationError):
        simple_models(usages[:1])


def test_response_metric_comparison(rng):
    n_pools = 40
    X = rng.standard_normal((n_pools, 2))
    usages = []
    for i in range(n_pools):
        y = float(np.exp(1.0 + 0.8 * X[i, 0] + 0.1 * rng.standard_normal()))
        usages.append(PoolUsage(f"P{i:04d}", 40, 2.0, y / 80.0, y, 2, float("nan"), y * 0.6))
    fm = make_matrix(X)
    table, corr = response_metric_comparison(usages, fm)
    table = table.set_index("metric")
    assert table.loc["energy", "r2"] > 0.9
    np.testing.assert_allclose(table.loc["energy_per_point", "r2"], table.loc["energy", "r2"])
    assert table.loc["energy_per_capacity", "reason"] == "non-positive or unknown values"
    assert list(corr.columns) == ["energy", "energy_per_point", "max_point_energy"]
    np.testing.assert_allclose(corr.loc["energy", "energy_per_point"], 1.0)

    with pytest.raises(SchemaError):
        response_metric_comparison(usages[:10], fm)


def test_usage_frame_columns():
    frame = usage_frame([_usage("A", 40, 2.0, 7.0)])
    assert {"energy_per_point", "energy_per_capacity", "n_transactions"} <= set(frame.columns)
    assert frame.index.name == "pool_id"
