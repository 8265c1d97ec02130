"""Synthetic forum + market generator with a known sentiment-to-price coupling.

A latent daily sentiment follows an AR(1) process ``s_t = phi s_{t-1} + eta_t``
and drives next-day log returns ``r_t = beta s_{t-1} + nu_t``. Each trading
day receives a Poisson number of posts published between the previous close
and this close; their class mix tilts with ``s_t``, their text is drawn from
class-specific token pools, and posts that agree with the latent mood collect
more reads, comments and likes.

The latent path is written to a file whose name starts with ``_truth`` so
that no loader will accept it as model input.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass
from datetime import date, datetime, time, timedelta
from pathlib import Path
from zoneinfo import ZoneInfo

import numpy as np

from .corpus import (
    DEFAULT_CUTOFF,
    DEFAULT_TZ,
    LabeledText,
    MarketSeries,
    Post,
    write_labeled,
    write_market,
    write_posts,
)
from .errors import ValidationError
from .seeding import substream

BULL_POOL = "涨牛升买多强红突破飙攀拉稳好赚"
BEAR_POOL = "跌熊降卖空弱绿崩割套亏砸逃惨"
NEUTRAL_POOL = "看等观望今天明市股盘周月年说问消息公司业绩报告资金"

INDICATORS = ("open", "high", "low", "close_lag1", "volume", "turnover_rate", "ma5", "ma10", "rsi14")

POSTS_FILE = "posts.jsonl"
MARKET_FILE = "market.csv"
LABELED_FILE = "labeled.csv"
TRUTH_FILE = "_truth_latent.csv"


@dataclass
class SynthParams:
    days: int = 247
    phi: float = 0.6
    beta: float = 0.8
    posts_per_day: float = 20.0
    bull_vocab: int = 10
    bear_vocab: int = 10
    neutral_vocab: int = 20
    tilt: float = 1.0
    popularity_alignment: float = 0.5
    sentiment_noise: float = 0.01
    return_noise: float = 0.01
    text_purity: float = 0.7
    labeled_size: int = 600
    base_price: float = 100.0
    stock: str = "SYN001"
    start: str = "2022-06-01"
    seed: int = 0

    def __post_init__(self):
        if not -1 < self.phi < 1:
            raise ValidationError("phi must lie in (-1, 1)")
        if self.days < 2:
            raise ValidationError("need at least two days")
        for name in ("posts_per_day", "sentiment_noise", "return_noise", "base_price", "tilt"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"{name} must be positive")
        if self.popularity_alignment < 0:
            raise ValidationError("popularity_alignment must be non-negative")
        if not 0 < self.text_purity <= 1:
            raise ValidationError("text_purity must be in (0, 1]")
        pools = ((self.bull_vocab, BULL_POOL), (self.bear_vocab, BEAR_POOL), (self.neutral_vocab, NEUTRAL_POOL))
        for size, pool in pools:
            if not 1 <= size <= len(pool):
                raise ValidationError(f"vocabulary size {size} outside [1, {len(pool)}]")


@dataclass
class SynthData:
    posts: list
    market: MarketSeries
    labeled: list
    latent: np.ndarray
    log_returns: np.ndarray
    params: SynthParams


def trading_days(start: date, n: int) -> list[date]:
    out = []
    d = start
    while len(out) < n:
        if d.weekday() < 5:
            out.append(d)
        d += timedelta(days=1)
    return out


def _pools(p: SynthParams):
    return {1: BULL_POOL[: p.bull_vocab], -1: BEAR_POOL[: p.bear_vocab], 0: NEUTRAL_POOL[: p.neutral_vocab]}


def _text(rng, pools, klass: int, length: int, purity: float) -> str:
    # each token comes from the class pool with probability `purity`, else neutral
    from_class = rng.random(length) < purity if klass else np.zeros(length, dtype=bool)
    u = rng.random(length)
    own, neutral = pools[klass], pools[0]
    return "".join(
        own[int(v * len(own))] if c else neutral[int(v * len(neutral))] for c, v in zip(from_class, u)
    )


def _class_probs(z: float, tilt: float) -> np.ndarray:
    logits = np.array([-tilt * z, 0.0, tilt * z])
    e = np.exp(logits - logits.max())
    return e / e.sum()


def _rsi(close: np.ndarray, t: int, n: int = 14) -> float:
    lo = max(0, t - n)
    diffs = np.diff(close[lo : t + 1])
    if diffs.size == 0:
        return 50.0
    gain = diffs[diffs > 0].sum()
    loss = -diffs[diffs < 0].sum()
    if gain + loss == 0:
        return 50.0
    return 100.0 * gain / (gain + loss)


def generate(params: SynthParams) -> SynthData:
    rng = substream(params.seed, "synth")
    p = params
    n = p.days
    stat_sd = p.sentiment_noise / math.sqrt(1 - p.phi**2)
    s = np.empty(n + 1)
    s[0] = rng.normal(0.0, stat_sd)
    for t in range(1, n + 1):
        s[t] = p.phi * s[t - 1] + rng.normal(0.0, p.sentiment_noise)
    latent = s[1:]
    # r_t responds to the previous day's sentiment; s[0] plays s_{-1}
    r = p.beta * s[:-1] + rng.normal(0.0, p.return_noise, n)
    close = p.base_price * np.exp(np.cumsum(r))
    prev_close = np.concatenate([[p.base_price], close[:-1]])

    open_ = prev_close * np.exp(rng.normal(0.0, 0.002, n))
    high = np.maximum(open_, close) * (1 + np.abs(rng.normal(0.0, 0.004, n)))
    low = np.minimum(open_, close) * (1 - np.abs(rng.normal(0.0, 0.004, n)))
    volume = 1e6 * np.exp(rng.normal(0.0, 0.2, n)) * (1 + 20 * np.abs(r))
    turnover = 100.0 * volume / 5e7
    ma5 = np.array([close[max(0, t - 4) : t + 1].mean() for t in range(n)])
    ma10 = np.array([close[max(0, t - 9) : t + 1].mean() for t in range(n)])
    rsi = np.array([_rsi(close, t) for t in range(n)])
    dates = trading_days(date.fromisoformat(p.start), n)
    market = MarketSeries(
        stock_id=p.stock,
        dates=dates,
        close=close,
        indicators=dict(zip(INDICATORS, (open_, high, low, prev_close, volume, turnover, ma5, ma10, rsi))),
    )

    tz = ZoneInfo(DEFAULT_TZ)
    pools = _pools(p)
    posts = []
    pid = 0
    for t, d in enumerate(dates):
        close_at = datetime.combine(d, DEFAULT_CUTOFF, tz)
        opened = datetime.combine(dates[t - 1], DEFAULT_CUTOFF, tz) if t else close_at - timedelta(days=1)
        span = int((close_at - opened).total_seconds())
        z = latent[t] / stat_sd
        probs = _class_probs(z, p.tilt)
        k = int(rng.poisson(p.posts_per_day))
        classes = rng.choice([-1, 0, 1], size=k, p=probs)
        amps = np.exp(p.popularity_alignment * classes * z)
        offsets = rng.integers(span, size=k)
        title_len = rng.integers(3, 9, size=k)
        body_len = rng.integers(10, 31, size=k)
        reads = rng.poisson(680.0 * amps)
        comments = rng.poisson(3.0 * amps)
        likes = rng.poisson(4.3 * amps)
        for j in range(k):
            klass = int(classes[j])
            ts = opened + timedelta(seconds=int(offsets[j]))
            posts.append(
                Post(
                    post_id=f"{p.stock}-{pid:06d}",
                    stock_id=p.stock,
                    timestamp=ts.astimezone(ZoneInfo("UTC")),
                    title=_text(rng, pools, klass, int(title_len[j]), p.text_purity),
                    body=_text(rng, pools, klass, int(body_len[j]), p.text_purity),
                    reads=int(reads[j]),
                    comments=int(comments[j]),
                    likes=int(likes[j]),
                )
            )
            pid += 1

    labeled = []
    for k in range(p.labeled_size):
        klass = (-1, 0, 1)[k % 3]
        labeled.append(LabeledText(_text(rng, pools, klass, int(rng.integers(4, 16)), p.text_purity), klass))
    order = rng.permutation(len(labeled))
    labeled = [labeled[i] for i in order]
    return SynthData(posts, market, labeled, latent, r, params)


def write(data: SynthData, out_dir) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_posts(data.posts, out / POSTS_FILE)
    write_market(data.market, out / MARKET_FILE)
    write_labeled(data.labeled, out / LABELED_FILE)
    with (out / TRUTH_FILE).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["date", "latent", "log_return"])
        for d, s, r in zip(data.market.dates, data.latent, data.log_returns):
            writer.writerow([d.isoformat(), repr(float(s)), repr(float(r))])
    return {
        "posts": str(out / POSTS_FILE),
        "market": str(out / MARKET_FILE),
        "labeled": str(out / LABELED_FILE),
        "truth": str(out / TRUTH_FILE),
        "params": asdict(data.params),
    }
