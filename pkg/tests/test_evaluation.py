import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import make_market
from forumcast.errors import ValidationError
from forumcast.evaluation import (
    ABLATION_ROWS,
    AblationTable,
    RegressionReport,
    aose,
    build_dataset,
    fit_model,
    predict_series,
    regression_metrics,
    rpe_series,
    run_ablation,
    run_experiment,
)
from forumcast.net import TrainConfig

TINY = TrainConfig(hidden=4, max_epochs=5, patience=2, seed=0)


def reference_metrics(y, p):
    # a separate code path: explicit loops summing from the end
    n = len(y)
    se = ape = 0.0
    for i in reversed(range(n)):
        se += (y[i] - p[i]) ** 2
        ape += abs((y[i] - p[i]) / y[i])
    mean = 0.0
    for i in reversed(range(n)):
        mean += y[i]
    mean /= n
    sst = 0.0
    for i in reversed(range(n)):
        sst += (y[i] - mean) ** 2
    return math.sqrt(se / n), 100.0 * ape / n, 1.0 - se / sst


def test_hand_triple():
    rmse, mape, r2 = regression_metrics([1, 2, 3], [2, 2, 2])
    assert rmse == pytest.approx(0.8165, rel=1e-3)
    assert mape == pytest.approx(44.44, rel=1e-3)
    assert r2 == pytest.approx(0.0, abs=1e-12)


def test_identity_metrics():
    assert regression_metrics([1.0, 2.0, 4.0], [1.0, 2.0, 4.0]) == (0.0, 0.0, 1.0)


def test_metric_errors():
    with pytest.raises(ValidationError, match="MAPE"):
        regression_metrics([0.0, 1.0], [1.0, 1.0])
    with pytest.raises(ValidationError):
        regression_metrics([1.0, 2.0], [1.0])


positive = arrays(float, st.integers(2, 30), elements=st.floats(0.5, 100))


@given(positive, st.floats(0.1, 10), st.integers(0, 2**31))
def test_metric_properties(y, scale, seed):
    p = y * np.random.default_rng(seed).uniform(0.8, 1.2, y.size)
    rmse, mape, r2 = regression_metrics(y, p)
    assert rmse >= 0 and r2 <= 1
    assert regression_metrics(scale * y, scale * p)[1] == pytest.approx(mape, rel=1e-9)
    if np.ptp(y) > 1e-3:
        ref = reference_metrics(y, p)
        assert all(abs(a - b) <= 1e-10 * max(1.0, abs(b)) for a, b in zip((rmse, mape, r2), ref))


def test_mean_predictor_r2_zero():
    y = np.random.default_rng(0).normal(10, 2, 50)
    assert abs(regression_metrics(y, np.full_like(y, y.mean()))[2]) < 1e-12


def test_rpe():
    y = np.array([10.0, 20.0, 40.0])
    np.testing.assert_allclose(rpe_series(y, 1.1 * y), 10.0)
    assert np.all(rpe_series(y, y) == 0)
    assert rpe_series([100.0], [95.0])[0] == pytest.approx(-5.0)
    with pytest.raises(ValidationError):
        rpe_series([0.0], [1.0])


def test_aose():
    assert aose([1.0, 2.0], [1.0, 2.0]) == (0.0, 0.0)
    assert aose([1.0, 2.0], [3.0, 0.0]) == (2.0, 2.0)
    assert aose([1.0, 2.0, 3.0], [2.0, 3.0, 4.0]) == (1.0, 0.0)


def test_report_fields():
    rep = RegressionReport.build(["a", "b", "c"], [1, 2, 3], [2, 2, 2])
    assert rep.rpe.tolist() == pytest.approx([100.0, 0.0, -100 / 3])
    assert (rep.aose_over, rep.aose_under) == (1.0, 1.0)


def _dataset(n=60, seed=0):
    rng = np.random.default_rng(seed)
    close = 50 + np.cumsum(rng.normal(0, 0.5, n))
    m = make_market(n, close=close)
    return build_dataset(m, {"pop_title": (m.dates, rng.normal(size=n))})


def test_dataset_columns():
    ds = _dataset()
    assert ds.columns[0] == "close" and ds.columns[-1] == "sent:pop_title"
    assert ds.sentiment_columns == ["pop_title"] and len(ds.base_columns) == 10
    with pytest.raises(ValidationError):
        ds.select(["sent:nope"])


def test_missing_sentiment_date_rejected():
    m = make_market(10)
    with pytest.raises(ValidationError, match="missing dates"):
        build_dataset(m, {"x": (m.dates[1:], np.zeros(9))})


def test_experiment_smoke_and_determinism():
    ds = _dataset()
    a = run_experiment(ds, TINY, window=7, sentiment=["pop_title"])
    b = run_experiment(ds, TINY, window=7, sentiment=["pop_title"])
    n_test = len(ds.dates) - math.floor(0.8 * len(ds.dates))
    assert len(a.report.predicted) == n_test and math.isfinite(a.report.rmse)
    assert np.array_equal(a.report.predicted, b.report.predicted)


def test_window_30_on_35_rows():
    with pytest.raises(ValidationError, match="window 30"):
        run_experiment(_dataset(35), TINY, window=30, sentiment=["pop_title"])


def test_no_look_ahead_in_predictions():
    ds = _dataset()
    names = ds.feature_names(["pop_title"])
    model, _, n_train = fit_model(ds, TINY, 7, ["pop_title"])
    F = ds.select(names)
    t = n_train + 3
    base = predict_series(model, F, ds.dates, [t], 7)
    shuffled = F.copy()
    rng = np.random.default_rng(0)
    shuffled[t:] = shuffled[t:][rng.permutation(len(F) - t)]
    assert np.array_equal(base, predict_series(model, shuffled, ds.dates, [t], 7))


def test_short_history_rejected():
    ds = _dataset()
    model, _, _ = fit_model(ds, TINY, 7, [])
    with pytest.raises(ValidationError, match="history"):
        predict_series(model, ds.select(ds.feature_names([])), ds.dates, [6], 7)


def test_constant_price_predicted_within_one_percent():
    n = 60
    m = make_market(n, close=np.full(n, 50.0))
    ds = build_dataset(m)
    cfg = TrainConfig(hidden=4, max_epochs=200, patience=20, seed=0, dropout=0.0)
    res = run_experiment(ds, cfg, window=5, sentiment=())
    assert np.all(np.abs(res.report.predicted - 50.0) <= 0.5)


def test_baseline_row_is_identity():
    table = AblationTable((7,), (0, 1), {
        "BiLSTM": {7: {"rmse": [2.0, 3.0], "mape": [1.0, 4.0], "r2": [0.5, 0.2]}},
        "full": {7: {"rmse": [1.0, 3.0], "mape": [2.0, 2.0], "r2": [0.6, 0.1]}},
    })
    for m in ("rmse", "mape", "r2"):
        assert table.ratio("BiLSTM", 7, m) == 1.0
    assert table.ratio("full", 7, "rmse") == pytest.approx((2.0 + 1.0) / 2)
    assert table.ratio("full", 7, "r2") == pytest.approx((1.2 + 0.5) / 2)
    assert [r["model"] for r in table.rows()] == ["BiLSTM", "full"]


def test_ablation_shape_and_parallel_equivalence():
    ds = _dataset()
    cfg = TrainConfig(hidden=3, max_epochs=3, patience=1)
    serial = run_ablation(ds, cfg, windows=(5, 7), seeds=(0, 1), sentiment=["pop_title"])
    assert list(serial.metrics) == list(ABLATION_ROWS)
    assert all(len(serial.metrics[r][w]["rmse"]) == 2 for r in ABLATION_ROWS for w in (5, 7))
    parallel = run_ablation(ds, cfg, windows=(5, 7), seeds=(0, 1), sentiment=["pop_title"], jobs=2)
    assert parallel.metrics == serial.metrics


def test_ablation_requires_baseline():
    with pytest.raises(ValidationError):
        run_ablation(_dataset(), TINY, rows=("full",))
