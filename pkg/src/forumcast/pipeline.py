"""Glue between modules: posts -> scores -> daily indices -> model dataset."""

from __future__ import annotations

from datetime import time
from typing import Sequence

from .corpus import DEFAULT_CUTOFF, DEFAULT_TZ, MarketSeries, Post, align_to_trading_days
from .evaluation import Dataset, build_dataset
from .index import FIELDS, VARIANTS, DailySentimentSeries, PopularityStats, build_index_series
from .scorer import ClassifierModel, ScoredPost, ScorerHyper, score_posts, train_classifier


def index_series(
    posts: Sequence[Post],
    scored: Sequence[ScoredPost],
    market: MarketSeries,
    variants: Sequence[str] = VARIANTS,
    fields: Sequence[str] = FIELDS,
    cutoff: time = DEFAULT_CUTOFF,
    tz: str = DEFAULT_TZ,
) -> dict[str, DailySentimentSeries]:
    aligned = align_to_trading_days(posts, market, cutoff, tz)
    stats = PopularityStats.fit([sp.post for sp in scored], market.stock_id) if scored else None
    out = {}
    for v in variants:
        for f in fields:
            series = build_index_series(aligned, scored, v, f, stats, stock_id=market.stock_id)
            out[series.name] = series
    return out


def synthetic_dataset(data, scorer_hyper: ScorerHyper | None = None) -> tuple[Dataset, dict, ClassifierModel]:
    """Score a :class:`~forumcast.synth.SynthData` forum and build the model dataset."""
    hyper = scorer_hyper or ScorerHyper(seed=data.params.seed)
    model, _ = train_classifier(data.labeled, hyper)
    scored = score_posts(model, data.posts)
    series = index_series(data.posts, scored, data.market)
    ds = build_dataset(data.market, {k: (s.dates, s.values) for k, s in series.items()})
    return ds, series, model
