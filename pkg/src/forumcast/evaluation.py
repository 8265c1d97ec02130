"""Regression metrics, error diagnostics and the experiment/ablation harness."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from datetime import date
from typing import Sequence

import numpy as np

from .corpus import MarketSeries, make_windows, split_chronological, stack_windows
from .errors import ValidationError
from .net import ForecastModel, Normalizer, TrainConfig, TrainHistory, train

logger = logging.getLogger(__name__)

DEFAULT_SENTIMENT = ("pop_title", "pop_body")
ABLATION_ROWS = ("BiLSTM", "BiLSTM-SI", "BiLSTM-highway", "full")
# row -> (uses sentiment features, highway on)
ABLATION_CONFIGS = {
    "BiLSTM": (False, False),
    "BiLSTM-SI": (True, False),
    "BiLSTM-highway": (False, True),
    "full": (True, True),
}


def _pair(actual, predicted):
    y = np.asarray(actual, dtype=float)
    p = np.asarray(predicted, dtype=float)
    if y.shape != p.shape or y.ndim != 1:
        raise ValidationError(f"length mismatch: {y.shape} vs {p.shape}")
    return y, p


def regression_metrics(actual, predicted) -> tuple[float, float, float]:
    """(RMSE, MAPE in percent, R2) with R2 against the mean of ``actual``."""
    y, p = _pair(actual, predicted)
    if y.size < 2:
        raise ValidationError("need at least two points")
    if np.any(y == 0):
        raise ValidationError("MAPE undefined: actual contains zero")
    err = y - p
    rmse = math.sqrt(float(np.mean(err**2)))
    mape = 100.0 * float(np.mean(np.abs(err / y)))
    sst = float(np.sum((y - y.mean()) ** 2))
    sse = float(np.sum(err**2))
    if sst == 0:
        r2 = 1.0 if sse == 0 else -math.inf
    else:
        r2 = 1.0 - sse / sst
    return rmse, mape, r2


def rpe_series(actual, predicted) -> np.ndarray:
    """Signed relative percentage error per date."""
    y, p = _pair(actual, predicted)
    if np.any(y <= 0):
        raise ValidationError("RPE needs positive actual values")
    return 100.0 * (p - y) / y


def aose(actual, predicted) -> tuple[float, float]:
    """Mean over-prediction and mean under-prediction magnitudes."""
    y, p = _pair(actual, predicted)
    over = p[p > y] - y[p > y]
    under = y[p < y] - p[p < y]
    return (float(over.mean()) if over.size else 0.0, float(under.mean()) if under.size else 0.0)


@dataclass
class RegressionReport:
    dates: list
    actual: np.ndarray
    predicted: np.ndarray
    rmse: float
    mape: float
    r2: float
    rpe: np.ndarray
    aose_over: float
    aose_under: float

    @classmethod
    def build(cls, dates, actual, predicted) -> "RegressionReport":
        rmse, mape, r2 = regression_metrics(actual, predicted)
        over, under = aose(actual, predicted)
        return cls(
            list(dates),
            np.asarray(actual, float),
            np.asarray(predicted, float),
            rmse, mape, r2,
            rpe_series(actual, predicted),
            over, under,
        )


@dataclass
class Dataset:
    """Date-indexed model inputs: close, nine indicators and sentiment columns."""

    stock_id: str
    dates: list[date]
    close: np.ndarray
    columns: list[str]
    matrix: np.ndarray

    def select(self, names: Sequence[str]) -> np.ndarray:
        missing = [n for n in names if n not in self.columns]
        if missing:
            raise ValidationError(f"unknown feature columns: {missing}")
        return self.matrix[:, [self.columns.index(n) for n in names]]

    @property
    def base_columns(self) -> list[str]:
        return [c for c in self.columns if not c.startswith("sent:")]

    @property
    def sentiment_columns(self) -> list[str]:
        return [c[len("sent:"):] for c in self.columns if c.startswith("sent:")]

    def feature_names(self, sentiment: Sequence[str]) -> list[str]:
        return self.base_columns + [f"sent:{s}" for s in sentiment]


def build_dataset(market: MarketSeries, sentiment: dict | None = None) -> Dataset:
    """Join market data and sentiment series on trading dates.

    ``sentiment`` maps a series name to ``(dates, values)``. Trading dates
    without a sentiment value are an error.
    """
    cols = ["close", *market.indicator_names]
    mats = [market.close[:, None], market.indicator_matrix()]
    for name, (dates, values) in (sentiment or {}).items():
        lookup = dict(zip(dates, np.asarray(values, dtype=float)))
        missing = [d for d in market.dates if d not in lookup]
        if missing:
            raise ValidationError(f"sentiment {name} missing dates: {[d.isoformat() for d in missing[:10]]}")
        cols.append(f"sent:{name}")
        mats.append(np.array([lookup[d] for d in market.dates])[:, None])
    return Dataset(market.stock_id, list(market.dates), market.close.copy(), cols, np.hstack(mats))


def predict_series(model: ForecastModel, features, dates, targets: Sequence[int], window: int) -> np.ndarray:
    """De-normalized predictions for the rows ``targets`` of a raw feature matrix."""
    features = np.asarray(features, dtype=float)
    if model.feature_norm is None or model.target_norm is None:
        raise ValidationError("model has no normalization statistics")
    short = [dates[t].isoformat() for t in targets if t < window]
    if short:
        raise ValidationError(f"not enough history ({window} rows) before: {', '.join(short)}")
    if not len(targets):
        return np.zeros(0)
    Z = model.feature_norm.transform(features)
    X = np.stack([Z[t - window : t] for t in targets])
    return model.target_norm.inverse(model.predict_normalized(X))


@dataclass
class ExperimentResult:
    report: RegressionReport
    model: ForecastModel
    history: TrainHistory
    window: int
    features: list[str]
    seed: int
    n_train_rows: int


def fit_model(dataset: Dataset, config: TrainConfig, window: int, sentiment: Sequence[str], split: float = 0.8):
    """Train on the first ``split`` share of rows; returns (model, history, n_train_rows)."""
    names = dataset.feature_names(sentiment)
    F = dataset.select(names)
    rows = np.arange(len(dataset.dates))
    train_rows, _ = split_chronological(rows, split)
    n_train = train_rows.size
    fnorm = Normalizer.fit(F[:n_train])
    tnorm = Normalizer.fit(dataset.close[:n_train])
    Z = fnorm.transform(F)
    yz = tnorm.transform(dataset.close)
    samples = make_windows(Z[:n_train], dataset.dates[:n_train], yz[:n_train], window)
    X, y = stack_windows(samples)
    model = ForecastModel.init(X.shape[2], config, names)
    model, hist = train(model, X, y, config)
    model.feature_norm, model.target_norm = fnorm, tnorm
    model.meta = {"window": int(window), "split": float(split)}
    return model, hist, n_train


def run_experiment(
    dataset: Dataset,
    config: TrainConfig,
    window: int = 7,
    sentiment: Sequence[str] = DEFAULT_SENTIMENT,
    seed: int | None = None,
    split: float = 0.8,
) -> ExperimentResult:
    """Train on the first 80% of trading days, forecast every later day."""
    if seed is not None:
        config = replace(config, seed=seed)
    model, hist, n_train = fit_model(dataset, config, window, sentiment, split)
    names = dataset.feature_names(sentiment)
    targets = list(range(n_train, len(dataset.dates)))
    pred = predict_series(model, dataset.select(names), dataset.dates, targets, window)
    actual = dataset.close[n_train:]
    report = RegressionReport.build(dataset.dates[n_train:], actual, pred)
    return ExperimentResult(report, model, hist, window, names, config.seed, n_train)


@dataclass
class AblationTable:
    windows: tuple
    seeds: tuple
    # metrics[row][window] -> dict(rmse=[per seed], mape=[...], r2=[...])
    metrics: dict = field(default_factory=dict)
    # abs_errors[row][window] -> absolute test errors pooled over seeds
    abs_errors: dict = field(default_factory=dict)

    def per_seed_ratios(self, row: str, window: int, metric: str) -> np.ndarray:
        base = np.asarray(self.metrics["BiLSTM"][window][metric])
        var = np.asarray(self.metrics[row][window][metric])
        if metric == "r2":
            return var / base
        return base / var

    def ratio(self, row: str, window: int, metric: str) -> float:
        return float(np.mean(self.per_seed_ratios(row, window, metric)))

    def mean(self, row: str, window: int, metric: str) -> float:
        return float(np.mean(self.metrics[row][window][metric]))

    def rows(self) -> list[dict]:
        out = []
        for row in self.metrics:
            rec = {"model": row}
            for w in self.windows:
                for metric in ("rmse", "mape", "r2"):
                    rec[f"{metric}_ratio_w{w}"] = self.ratio(row, w, metric)
                    rec[f"{metric}_w{w}"] = self.mean(row, w, metric)
            out.append(rec)
        return out


def _ablation_run(args):
    dataset, config, row, window, seed, sentiment = args
    use_si, highway = ABLATION_CONFIGS[row]
    cfg = replace(config, highway=highway, seed=seed)
    res = run_experiment(dataset, cfg, window, sentiment if use_si else (), seed)
    logger.info("%s w=%d seed=%d rmse=%.4f", row, window, seed, res.report.rmse)
    return res.report


def run_ablation(
    dataset: Dataset,
    config: TrainConfig,
    windows: Sequence[int] = (7, 15, 30),
    seeds: Sequence[int] = (0,),
    sentiment: Sequence[str] = DEFAULT_SENTIMENT,
    rows: Sequence[str] = ABLATION_ROWS,
    jobs: int = 1,
) -> AblationTable:
    """Train every ablation configuration per window and seed.

    Runs are independent; with ``jobs > 1`` they execute in worker processes.
    The table is assembled in (configuration, window, seed) order either way,
    so scheduling never changes the result.
    """
    if "BiLSTM" not in rows:
        raise ValidationError("the BiLSTM baseline row is required")
    unknown = [r for r in rows if r not in ABLATION_CONFIGS]
    if unknown:
        raise ValidationError(f"unknown ablation rows: {unknown}")
    tasks = [(dataset, config, row, w, seed, tuple(sentiment)) for row in rows for w in windows for seed in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            reports = list(pool.map(_ablation_run, tasks))
    else:
        reports = [_ablation_run(t) for t in tasks]
    table = AblationTable(tuple(windows), tuple(seeds))
    it = iter(reports)
    for row in rows:
        table.metrics[row] = {}
        table.abs_errors[row] = {}
        for w in windows:
            reps = [next(it) for _ in seeds]
            table.metrics[row][w] = {
                "rmse": [r.rmse for r in reps],
                "mape": [r.mape for r in reps],
                "r2": [r.r2 for r in reps],
            }
            table.abs_errors[row][w] = np.concatenate([np.abs(r.actual - r.predicted) for r in reps])
    return table
