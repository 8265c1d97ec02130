"""Loading posts, labeled texts and market data; trading-day alignment; windows.

File layouts
------------
posts (JSONL or CSV)
    keys ``stock, ts, title, body, reads, comments, likes`` and an optional
    ``id``. ``ts`` is ISO-8601 and must carry a UTC offset.
market (CSV)
    header ``date,close,<9 indicator names>``; ISO dates, ``.`` decimal point.
labeled corpus (CSV)
    header ``text,label`` with label in {-1, 0, 1}.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import re
from bisect import bisect_left
from dataclasses import dataclass, field
from datetime import date, datetime, time, timedelta, timezone
from pathlib import Path
from typing import Sequence
from zoneinfo import ZoneInfo

import numpy as np

from .errors import SchemaError, ValidationError

logger = logging.getLogger(__name__)

POST_KEYS = ("stock", "ts", "title", "body", "reads", "comments", "likes")
N_INDICATORS = 9
DEFAULT_CUTOFF = time(15, 0)
DEFAULT_TZ = "Asia/Shanghai"
TRUTH_PREFIX = "_truth"

_EMOJI = re.compile(
    "["
    "\U0001F000-\U0001FAFF"
    "\U00002600-\U000027BF"
    "\U0001F1E6-\U0001F1FF"
    "\uFE0E\uFE0F\u200D"
    "]+"
)
_HASHTAG = re.compile(r"#[^#\n]*#")
_SPACES = re.compile(r"\s+")


def clean_text(text: str) -> str:
    """Strip emoji, ``#topic#`` spans and repeated whitespace."""
    text = _EMOJI.sub("", text)
    text = _HASHTAG.sub(" ", text)
    return _SPACES.sub(" ", text).strip()


def _guard_truth(path: Path) -> None:
    # synthetic ground truth must never feed a training/evaluation path
    if path.name.startswith(TRUTH_PREFIX):
        raise ValidationError(f"refusing to read ground-truth file {path}")


@dataclass(frozen=True)
class Post:
    post_id: str
    stock_id: str
    timestamp: datetime
    title: str
    body: str
    reads: int
    comments: int
    likes: int

    def __post_init__(self):
        for name in ("reads", "comments", "likes"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be non-negative")
        if not self.title.strip():
            raise ValidationError("title is empty")
        if self.timestamp.tzinfo is None:
            raise ValidationError("timestamp has no UTC offset")

    def to_record(self) -> dict:
        ts = self.timestamp.astimezone(timezone.utc).isoformat()
        return {
            "id": self.post_id,
            "stock": self.stock_id,
            "ts": ts,
            "title": self.title,
            "body": self.body,
            "reads": self.reads,
            "comments": self.comments,
            "likes": self.likes,
        }


@dataclass(frozen=True)
class LabeledText:
    text: str
    label: int

    def __post_init__(self):
        if self.label not in (-1, 0, 1):
            raise ValidationError(f"label {self.label!r} not in {{-1, 0, 1}}")
        if not self.text.strip():
            raise ValidationError("text is empty")


class PostList(list):
    """A list of posts that remembers how many source rows were rejected."""

    skipped: int = 0


def _parse_count(value) -> int:
    if isinstance(value, bool):
        raise ValueError("boolean count")
    if isinstance(value, float):
        if not value.is_integer():
            raise ValueError(f"non-integer count {value}")
        return int(value)
    return int(str(value).strip())


def _parse_post(row: dict, default_id: str) -> Post:
    missing = [k for k in POST_KEYS if k not in row]
    if missing:
        raise ValueError(f"missing keys {missing}")
    ts = datetime.fromisoformat(str(row["ts"]).strip().replace("Z", "+00:00"))
    if ts.tzinfo is None:
        raise ValueError("timestamp without UTC offset")
    post_id = row.get("id")
    post_id = default_id if post_id in (None, "") else str(post_id)
    return Post(
        post_id=post_id,
        stock_id=str(row["stock"]),
        timestamp=ts.astimezone(timezone.utc),
        title=clean_text(str(row["title"])),
        body=clean_text(str(row["body"] or "")),
        reads=_parse_count(row["reads"]),
        comments=_parse_count(row["comments"]),
        likes=_parse_count(row["likes"]),
    )


def _iter_rows(path: Path, fmt: str):
    if fmt == "jsonl":
        with path.open(encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    yield lineno, json.loads(line)
                except json.JSONDecodeError as exc:
                    yield lineno, exc
    elif fmt == "csv":
        with path.open(encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh)
            for lineno, row in enumerate(reader, start=2):
                yield lineno, row
    else:
        raise ValidationError(f"unknown posts format {fmt!r}")


def load_posts(path, fmt: str | None = None) -> PostList:
    """Read posts from JSONL or CSV, sorted by timestamp.

    Rows that violate a Post invariant are skipped and counted in
    ``result.skipped``. If more than half of the rows are bad the whole file
    is rejected with a :class:`SchemaError` naming the first bad row.
    """
    path = Path(path)
    _guard_truth(path)
    if fmt is None:
        fmt = "csv" if path.suffix.lower() == ".csv" else "jsonl"
    posts = PostList()
    first_bad = None
    total = 0
    for lineno, row in _iter_rows(path, fmt):
        total += 1
        try:
            if isinstance(row, Exception):
                raise row
            if not isinstance(row, dict):
                raise ValueError("row is not an object")
            posts.append(_parse_post(row, default_id=str(lineno)))
        except (ValueError, TypeError, KeyError) as exc:
            posts.skipped += 1
            if first_bad is None:
                first_bad = (lineno, exc)
    if total == 0:
        logger.warning("posts file %s is empty", path)
        return posts
    if posts.skipped * 2 > total:
        lineno, exc = first_bad
        raise SchemaError(
            f"{path}: {posts.skipped}/{total} rows invalid; first at line {lineno}: {exc}"
        )
    if posts.skipped:
        logger.warning("%s: skipped %d invalid rows", path, posts.skipped)
    posts.sort(key=lambda p: (p.timestamp, p.post_id))
    return posts


def write_posts(posts: Sequence[Post], path, fmt: str | None = None) -> None:
    path = Path(path)
    if fmt is None:
        fmt = "csv" if path.suffix.lower() == ".csv" else "jsonl"
    records = [p.to_record() for p in posts]
    if fmt == "jsonl":
        with path.open("w", encoding="utf-8", newline="\n") as fh:
            for rec in records:
                fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
    else:
        with path.open("w", encoding="utf-8", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["id", *POST_KEYS], lineterminator="\n")
            writer.writeheader()
            writer.writerows(records)


def load_labeled(path) -> list[LabeledText]:
    path = Path(path)
    _guard_truth(path)
    out = []
    with path.open(encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"text", "label"} <= set(reader.fieldnames):
            raise SchemaError(f"{path}: expected header text,label")
        for lineno, row in enumerate(reader, start=2):
            try:
                label = int(str(row["label"]).strip())
                out.append(LabeledText(clean_text(row["text"]), label))
            except ValueError as exc:
                raise SchemaError(f"{path}: line {lineno}: {exc}") from exc
    return out


def write_labeled(items: Sequence[LabeledText], path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["text", "label"])
        for item in items:
            writer.writerow([item.text, item.label])


@dataclass
class MarketSeries:
    stock_id: str
    dates: list[date]
    close: np.ndarray
    indicators: dict[str, np.ndarray]

    def __post_init__(self):
        self.close = np.asarray(self.close, dtype=float)
        self.indicators = {k: np.asarray(v, dtype=float) for k, v in self.indicators.items()}
        n = len(self.dates)
        if any(b <= a for a, b in zip(self.dates, self.dates[1:])):
            raise ValidationError("market dates are not strictly increasing")
        if self.close.shape != (n,) or not np.all(np.isfinite(self.close)):
            raise ValidationError("close must be a finite value for every date")
        if len(self.indicators) != N_INDICATORS:
            raise SchemaError(f"expected {N_INDICATORS} indicators, got {len(self.indicators)}")
        for name, col in self.indicators.items():
            if col.shape != (n,):
                raise ValidationError(f"indicator {name} has wrong length")

    def __len__(self):
        return len(self.dates)

    def __eq__(self, other):
        if not isinstance(other, MarketSeries):
            return NotImplemented
        return (
            self.stock_id == other.stock_id
            and self.dates == other.dates
            and np.array_equal(self.close, other.close)
            and list(self.indicators) == list(other.indicators)
            and all(np.array_equal(self.indicators[k], other.indicators[k]) for k in self.indicators)
        )

    @property
    def indicator_names(self) -> list[str]:
        return list(self.indicators)

    def indicator_matrix(self) -> np.ndarray:
        return np.column_stack([self.indicators[k] for k in self.indicators])


def load_market(path, stock_id: str | None = None) -> MarketSeries:
    path = Path(path)
    _guard_truth(path)
    with path.open(encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty market file") from None
        rows = [r for r in reader if r]
    if header[:2] != ["date", "close"]:
        raise SchemaError(f"{path}: header must start with date,close")
    names = header[2:]
    if len(names) != N_INDICATORS:
        raise SchemaError(
            f"{path}: expected {N_INDICATORS} indicator columns, found {len(names)}: {names}"
        )
    if len(set(names)) != len(names):
        raise SchemaError(f"{path}: duplicate indicator column names")
    parsed = []
    seen = set()
    for lineno, row in enumerate(rows, start=2):
        if len(row) != len(header):
            raise SchemaError(f"{path}: line {lineno} has {len(row)} fields")
        try:
            d = date.fromisoformat(row[0].strip())
            values = [float(v) for v in row[1:]]
        except ValueError as exc:
            raise ValidationError(f"{path}: line {lineno}: {exc}") from exc
        if d in seen:
            raise ValidationError(f"{path}: duplicate date {d.isoformat()}")
        seen.add(d)
        parsed.append((d, values))
    if any(b[0] < a[0] for a, b in zip(parsed, parsed[1:])):
        logger.info("%s: rows out of date order, re-sorted ascending", path)
        parsed.sort(key=lambda item: item[0])
    arr = np.array([v for _, v in parsed], dtype=float).reshape(len(parsed), len(header) - 1)
    return MarketSeries(
        stock_id=stock_id or path.stem,
        dates=[d for d, _ in parsed],
        close=arr[:, 0],
        indicators={name: arr[:, j + 1] for j, name in enumerate(names)},
    )


def write_market(market: MarketSeries, path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["date", "close", *market.indicator_names])
        mat = market.indicator_matrix()
        for i, d in enumerate(market.dates):
            writer.writerow([d.isoformat(), repr(float(market.close[i])), *(repr(float(v)) for v in mat[i])])


@dataclass
class AlignedDay:
    date: date
    posts: list[Post] = field(default_factory=list)


class Alignment(list):
    """AlignedDay list plus the number of posts that fell outside the market range."""

    dropped: int = 0


def effective_date(ts: datetime, cutoff: time = DEFAULT_CUTOFF, tz: str = DEFAULT_TZ) -> date:
    """Exchange-local calendar date, rolled one day forward at or after ``cutoff``."""
    local = ts.astimezone(ZoneInfo(tz))
    d = local.date()
    if local.time() >= cutoff:
        d += timedelta(days=1)
    return d


def align_to_trading_days(
    posts: Sequence[Post],
    market: MarketSeries,
    cutoff: time = DEFAULT_CUTOFF,
    tz: str = DEFAULT_TZ,
) -> Alignment:
    """Map each post to the first trading date on or after its effective date.

    Posts whose effective date is before the first or after the last trading
    date are dropped and counted in ``result.dropped``.
    """
    if len(market) == 0:
        raise ValidationError("market series is empty")
    days = Alignment(AlignedDay(d) for d in market.dates)
    first, last = market.dates[0], market.dates[-1]
    for post in posts:
        d = effective_date(post.timestamp, cutoff, tz)
        if d < first or d > last:
            days.dropped += 1
            continue
        days[bisect_left(market.dates, d)].posts.append(post)
    return days


def split_chronological(seq, ratio: float = 0.8):
    """First ``floor(ratio * n)`` items for training, the rest for testing."""
    n = len(seq)
    if not 0 < ratio < 1:
        raise ValidationError(f"split ratio must be in (0, 1), got {ratio}")
    if n < 2:
        raise ValidationError(f"need at least 2 items to split, got {n}")
    cut = math.floor(ratio * n + 1e-9)
    if cut == 0 or cut == n:
        raise ValidationError(f"ratio {ratio} leaves an empty part for n={n}")
    return seq[:cut], seq[cut:]


@dataclass(frozen=True)
class WindowSample:
    features: np.ndarray
    target: float
    target_date: date
    window_dates: tuple


def make_windows(features, dates, target, window: int, horizon: int = 1) -> list[WindowSample]:
    """Slide a ``window``-row lookback over date-indexed features.

    Sample ``i`` uses rows ``i .. i+window-1`` and targets row
    ``i+window+horizon-1``, so there are ``n - window - horizon + 1`` samples.
    """
    features = np.asarray(features, dtype=float)
    target = np.asarray(target, dtype=float)
    n = features.shape[0]
    if window < 1 or horizon < 1:
        raise ValidationError("window and horizon must be positive")
    if len(dates) != n or target.shape[0] != n:
        raise ValidationError("features, dates and target must have equal length")
    if n < window + horizon:
        raise ValidationError(f"need at least {window + horizon} rows for window {window}, got {n}")
    out = []
    for i in range(n - window - horizon + 1):
        t = i + window + horizon - 1
        out.append(
            WindowSample(
                features=features[i : i + window],
                target=float(target[t]),
                target_date=dates[t],
                window_dates=tuple(dates[i : i + window]),
            )
        )
    return out


def stack_windows(samples: Sequence[WindowSample]) -> tuple[np.ndarray, np.ndarray]:
    X = np.stack([s.features for s in samples])
    y = np.array([s.target for s in samples])
    return X, y
