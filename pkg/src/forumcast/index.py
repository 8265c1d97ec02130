"""Daily group sentiment indices built from scored posts.

Three variants are supported, each over post titles or bodies:

``bi``
    ``ln((1 + M_bull) / (1 + M_bear))`` on post counts.
``score``
    ``ln((1 + sum(bull scores)) / (1 - sum(bear scores)))``.
``pop``
    like ``score`` but each score is multiplied by the post's popularity
    weight ``z(reads) + z(comments) + z(likes)``. The weights are z-scores and
    can be negative, so each log argument is floored at ``eps``; the number of
    floored days is reported as ``floor_hits``.

A post counts as bullish only when its class is bull *and* its score is
positive (bearish symmetrically); everything else is neutral and ignored.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from datetime import date
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .corpus import AlignedDay, Post
from .errors import SchemaError, ValidationError
from .scorer import BEAR, BULL, NEUTRAL, ScoredPost

VARIANTS = ("bi", "score", "pop")
FIELDS = ("title", "body")
METRICS = ("reads", "comments", "likes")
DEFAULT_FLOOR = 1e-6


def zscore(x, mean: float | None = None, std: float | None = None):
    """Standardize with the population standard deviation.

    Returns ``(values, degenerate)``; ``degenerate`` is True when the standard
    deviation is zero, in which case the values are all zero.
    """
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        raise ValidationError("cannot standardize an empty series")
    if mean is None:
        mean = float(x.mean())
    if std is None:
        std = float(np.sqrt(np.mean((x - mean) ** 2)))
    if std == 0:
        return np.zeros_like(x), True
    return (x - mean) / std, False


@dataclass(frozen=True)
class PopularityStats:
    mean: dict
    std: dict
    stock_id: str
    first: date | None
    last: date | None
    count: int

    @classmethod
    def fit(cls, posts: Sequence[Post], stock_id: str | None = None) -> "PopularityStats":
        if not posts:
            raise ValidationError("cannot fit popularity statistics on zero posts")
        mean, std = {}, {}
        for m in METRICS:
            values = np.array([getattr(p, m) for p in posts], dtype=float)
            mean[m] = float(values.mean())
            std[m] = float(values.std())
        stamps = [p.timestamp for p in posts]
        return cls(
            mean=mean,
            std=std,
            stock_id=stock_id or posts[0].stock_id,
            first=min(stamps).date(),
            last=max(stamps).date(),
            count=len(posts),
        )

    @property
    def scope(self) -> str:
        return f"{self.stock_id}:{self.first}..{self.last}:n={self.count}"

    def weight(self, post: Post) -> float:
        w = 0.0
        for m in METRICS:
            if self.std[m] > 0:
                w += (getattr(post, m) - self.mean[m]) / self.std[m]
        return w


def membership(score: float, klass: int) -> int:
    if klass == BULL and score > 0:
        return BULL
    if klass == BEAR and score < 0:
        return BEAR
    return NEUTRAL


def bi_count(classes: Iterable[int]) -> float:
    classes = list(classes)
    bull = sum(1 for c in classes if c == BULL)
    bear = sum(1 for c in classes if c == BEAR)
    return math.log((1 + bull) / (1 + bear))


def bi_score(scores: Sequence[float], classes: Sequence[int]) -> float:
    bull = bear = 0.0
    for s, c in zip(scores, classes):
        side = membership(s, c)
        if side == BULL:
            bull += s
        elif side == BEAR:
            bear += s
    return math.log((1 + bull) / (1 - bear))


def bi_popularity(
    scores: Sequence[float],
    classes: Sequence[int],
    weights: Sequence[float],
    floor: float = DEFAULT_FLOOR,
) -> tuple[float, bool]:
    """Popularity-weighted index for one day; returns ``(value, floor_hit)``."""
    bull = bear = 0.0
    for s, c, w in zip(scores, classes, weights):
        side = membership(s, c)
        if side == BULL:
            bull += s * w
        elif side == BEAR:
            bear += s * w
    num, den = 1 + bull, 1 - bear
    hit = num < floor or den < floor
    return math.log(max(floor, num) / max(floor, den)), hit


@dataclass
class DailySentimentSeries:
    stock_id: str
    variant: str
    field: str
    dates: list[date]
    values: np.ndarray
    floor_flags: np.ndarray
    stats_scope: str = ""

    @property
    def name(self) -> str:
        return f"{self.variant}_{self.field}"

    @property
    def floor_hits(self) -> int:
        return int(self.floor_flags.sum())

    def write_csv(self, path) -> None:
        with Path(path).open("w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["date", "value", "floor_hit"])
            for d, v, f in zip(self.dates, self.values, self.floor_flags):
                writer.writerow([d.isoformat(), f"{v:.6f}", int(f)])


def build_index_series(
    aligned: Sequence[AlignedDay],
    scored: Sequence[ScoredPost],
    variant: str,
    field: str,
    stats: PopularityStats | None = None,
    floor: float = DEFAULT_FLOOR,
    stock_id: str | None = None,
) -> DailySentimentSeries:
    """One index value per aligned trading day.

    ``stats`` defaults to popularity statistics fitted over every scored post,
    i.e. the whole collection for the stock.
    """
    if variant not in VARIANTS:
        raise ValidationError(f"unknown index variant {variant!r}")
    if field not in FIELDS:
        raise ValidationError(f"unknown field {field!r}")
    by_id = {sp.post.post_id: sp for sp in scored}
    unscored = [p.post_id for day in aligned for p in day.posts if p.post_id not in by_id]
    if unscored:
        raise ValidationError(f"unscored posts: {', '.join(unscored[:20])}")
    if variant == "pop" and stats is None:
        stats = PopularityStats.fit([sp.post for sp in scored], stock_id)
    values = np.zeros(len(aligned))
    flags = np.zeros(len(aligned), dtype=bool)
    for k, day in enumerate(aligned):
        sps = [by_id[p.post_id] for p in day.posts]
        scores = [sp.score(field) for sp in sps]
        classes = [sp.klass(field) for sp in sps]
        if variant == "bi":
            values[k] = bi_count(classes)
        elif variant == "score":
            values[k] = bi_score(scores, classes)
        else:
            weights = [stats.weight(sp.post) for sp in sps]
            values[k], flags[k] = bi_popularity(scores, classes, weights, floor)
    sid = stock_id or (scored[0].post.stock_id if scored else "")
    return DailySentimentSeries(
        stock_id=sid,
        variant=variant,
        field=field,
        dates=[d.date for d in aligned],
        values=values,
        floor_flags=flags,
        stats_scope=stats.scope if stats is not None else "",
    )


def write_sentiment_table(series: Sequence[DailySentimentSeries], path) -> None:
    """All series side by side: ``date,<name>,...`` at six decimals."""
    if not series:
        raise ValidationError("no sentiment series to write")
    dates = series[0].dates
    if any(s.dates != dates for s in series):
        raise ValidationError("sentiment series cover different dates")
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["date", *(s.name for s in series)])
        for k, d in enumerate(dates):
            writer.writerow([d.isoformat(), *(f"{s.values[k]:.6f}" for s in series)])


def load_sentiment_table(path) -> dict[str, tuple[list[date], np.ndarray]]:
    """Inverse of :func:`write_sentiment_table`: name -> (dates, values)."""
    with Path(path).open(encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "date" or len(header) < 2:
            raise SchemaError(f"{path}: expected header date,<series>,...")
        dates, rows = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise SchemaError(f"{path}: line {lineno} has {len(row)} fields")
            try:
                dates.append(date.fromisoformat(row[0]))
                rows.append([float(v) for v in row[1:]])
            except ValueError as exc:
                raise SchemaError(f"{path}: line {lineno}: {exc}") from exc
    mat = np.array(rows, dtype=float).reshape(len(rows), len(header) - 1)
    return {name: (list(dates), mat[:, j]) for j, name in enumerate(header[1:])}
