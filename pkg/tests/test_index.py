import math
from datetime import datetime, timedelta, timezone

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_market, make_post
from forumcast.corpus import align_to_trading_days
from forumcast.errors import ValidationError
from forumcast.index import (
    PopularityStats,
    bi_count,
    bi_popularity,
    bi_score,
    build_index_series,
    load_sentiment_table,
    write_sentiment_table,
    zscore,
)
from forumcast.scorer import ScoredPost


def test_zscore_hand_case():
    z, degenerate = zscore([1, 2, 3])
    np.testing.assert_allclose(z, [-1.224744871391589, 0, 1.224744871391589], atol=1e-12)
    assert not degenerate


def test_zscore_constant_flagged():
    z, degenerate = zscore([5, 5, 5])
    assert degenerate and np.all(z == 0)


@given(st.lists(st.floats(min_value=-1e3, max_value=1e3), min_size=2, max_size=50))
def test_zscore_moments_and_idempotence(xs):
    x = np.array(xs)
    if np.ptp(x) < 1e-6:
        return
    z, _ = zscore(x)
    assert abs(z.mean()) < 1e-10 and abs(z.std() - 1) < 1e-10
    np.testing.assert_allclose(zscore(z)[0], z, atol=1e-12)


def test_bi_count_examples():
    assert bi_count([]) == 0
    assert bi_count([1, 1, 1, -1]) == pytest.approx(math.log(2), abs=1e-12)
    for k in range(5):
        assert bi_count([1] * k + [-1] * k + [0] * 3) == 0


def test_bi_score_examples():
    assert bi_score([0.5, 0.7, -0.4], [1, 1, -1]) == pytest.approx(math.log(2.2 / 1.4), abs=1e-12)
    assert bi_score([], []) == 0.0
    assert bi_score([0.5, 0.7, -0.4], [1, 1, -1]) == pytest.approx(0.4520, abs=1e-4)


def test_bi_score_membership_requires_matching_sign():
    # a bull-class post with a non-positive score is neutral
    assert bi_score([-0.2, 0.0], [1, 1]) == 0.0


def test_bi_popularity_examples():
    value, hit = bi_popularity([0.8, -0.5], [1, -1], [1.5, 0.5])
    assert value == pytest.approx(math.log(2.2 / 1.25), abs=1e-12) and not hit
    assert value == pytest.approx(0.5653, abs=1e-4)
    assert bi_popularity([0.8, -0.5], [1, -1], [0.0, 0.0]) == (0.0, False)
    value, hit = bi_popularity([1.0], [1], [-3.0])
    assert hit and value == pytest.approx(math.log(1e-6), abs=1e-12)


def test_count_equals_score_for_unit_scores():
    rng = np.random.default_rng(1)
    for _ in range(200):
        classes = rng.choice([-1, 0, 1], size=rng.integers(0, 12)).tolist()
        scores = [float(c) if c else 0.0 for c in classes]
        assert bi_count(classes) == pytest.approx(bi_score(scores, classes), abs=1e-12)


# -- direct-evaluation oracle, shared with the acceptance suite ---------------


def random_day(rng, max_posts=12):
    n = int(rng.integers(0, max_posts + 1))
    classes = rng.choice([-1, 0, 1], size=n)
    mags = rng.uniform(0.0, 1.0, n)
    scores = np.where(classes == 0, rng.uniform(-1, 1, n), classes * mags)
    weights = rng.uniform(-2.0, 3.0, n)
    return scores, classes, weights


def oracle_index(scores, classes, weights=None, floor=1e-6):
    scores = np.asarray(scores, float)
    classes = np.asarray(classes)
    w = np.ones_like(scores) if weights is None else np.asarray(weights, float)
    bull_mask = (classes == 1) & (scores > 0)
    bear_mask = (classes == -1) & (scores < 0)
    num = 1.0 + np.sum(scores[bull_mask] * w[bull_mask])
    den = 1.0 - np.sum(scores[bear_mask] * w[bear_mask])
    hit = bool(num < floor or den < floor)
    return np.log(max(num, floor)) - np.log(max(den, floor)), hit


def oracle_count(classes):
    classes = np.asarray(classes)
    return np.log1p(np.count_nonzero(classes == 1)) - np.log1p(np.count_nonzero(classes == -1))


def index_oracle_check(n_days=1000, seed=0, tol=1e-12):
    """Largest deviation from the oracle plus property violation counts."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    violations = 0
    checked = 0
    for _ in range(n_days):
        s, c, w = random_day(rng)
        worst = max(worst, abs(bi_count(c.tolist()) - oracle_count(c)))
        worst = max(worst, abs(bi_score(s.tolist(), c.tolist()) - oracle_index(s, c)[0]))
        value, hit = bi_popularity(s.tolist(), c.tolist(), w.tolist())
        want, want_hit = oracle_index(s, c, w)
        worst = max(worst, abs(value - want))
        violations += hit != want_hit
        if hit:
            continue
        checked += 1
        # antisymmetry: bull s <-> bear -s with the same weights
        mirrored, mhit = bi_popularity((-s).tolist(), (-c).tolist(), w.tolist())
        if not mhit and abs(mirrored + value) > tol:
            violations += 1
        if abs(bi_score((-s).tolist(), (-c).tolist()) + bi_score(s.tolist(), c.tolist())) > tol:
            violations += 1
        # monotonicity: one more bull post with a positive weighted contribution
        extra = rng.uniform(0.05, 1.0)
        grown, ghit = bi_popularity([*s, extra], [*c, 1], [*w, rng.uniform(0.1, 2.0)])
        if not ghit and not grown > value:
            violations += 1
    return worst, violations, checked


def test_index_matches_oracle():
    worst, violations, checked = index_oracle_check(300, seed=5)
    assert worst <= 1e-12 and violations == 0 and checked > 100


@settings(max_examples=100, deadline=None)
@given(
    st.lists(
        st.tuples(st.floats(min_value=0.01, max_value=1.0), st.floats(min_value=0.0, max_value=2.0)),
        max_size=10,
    )
)
def test_popularity_antisymmetry(posts):
    s = [p[0] for p in posts]
    w = [p[1] for p in posts]
    up, hit_up = bi_popularity(s, [1] * len(s), w)
    down, hit_down = bi_popularity([-x for x in s], [-1] * len(s), w)
    assert not hit_up and not hit_down
    assert abs(up + down) < 1e-12


# -- series -------------------------------------------------------------------


def _scored(post, ts, bs, tc=None, bc=None):
    tc = tc if tc is not None else (1 if ts > 0 else -1 if ts < 0 else 0)
    bc = bc if bc is not None else (1 if bs > 0 else -1 if bs < 0 else 0)
    return ScoredPost(post, ts, bs, tc, bc)


def _forum(n_days=3, per_day=4, seed=0, same_text=False):
    rng = np.random.default_rng(seed)
    market = make_market(n_days)
    posts, scored = [], []
    for k, d in enumerate(market.dates):
        for j in range(per_day):
            ts = datetime(d.year, d.month, d.day, 1, j, tzinfo=timezone.utc)
            p = make_post(f"{k}-{j}", ts=ts, reads=int(rng.integers(0, 100)),
                          comments=int(rng.integers(0, 5)), likes=int(rng.integers(0, 9)))
            t = float(rng.uniform(-1, 1))
            b = t if same_text else float(rng.uniform(-1, 1))
            posts.append(p)
            scored.append(_scored(p, t, b))
    return market, posts, scored


def test_all_neutral_forum_gives_zero_series():
    market, posts, _ = _forum()
    scored = [ScoredPost(p, 0.0, 0.0, 0, 0) for p in posts]
    aligned = align_to_trading_days(posts, market)
    for variant in ("bi", "score", "pop"):
        series = build_index_series(aligned, scored, variant, "title")
        assert np.all(series.values == 0)


def test_identical_title_and_body_give_identical_series():
    market, posts, scored = _forum(same_text=True)
    aligned = align_to_trading_days(posts, market)
    t = build_index_series(aligned, scored, "pop", "title")
    b = build_index_series(aligned, scored, "pop", "body")
    assert np.array_equal(t.values, b.values) and np.array_equal(t.floor_flags, b.floor_flags)


def test_series_matches_single_pass_oracle():
    market, posts, scored = _forum(n_days=3, per_day=6, seed=2)
    aligned = align_to_trading_days(posts, market)
    series = build_index_series(aligned, scored, "pop", "body")
    # popularity weights by hand over the whole collection
    cols = {m: np.array([getattr(p, m) for p in posts], float) for m in ("reads", "comments", "likes")}
    weight = {}
    for i, p in enumerate(posts):
        weight[p.post_id] = sum((v[i] - v.mean()) / v.std() for v in cols.values() if v.std() > 0)
    for k, day in enumerate(aligned):
        sps = [sp for sp in scored if sp.post in day.posts]
        want, _ = oracle_index([sp.body_score for sp in sps], [sp.body_class for sp in sps],
                               [weight[sp.post.post_id] for sp in sps])
        assert abs(series.values[k] - want) <= 1e-12


def test_unscored_posts_rejected():
    market, posts, scored = _forum()
    aligned = align_to_trading_days(posts, market)
    with pytest.raises(ValidationError, match="unscored"):
        build_index_series(aligned, scored[1:], "score", "title")


def test_popularity_stats_scope():
    _, posts, _ = _forum()
    stats = PopularityStats.fit(posts)
    assert stats.scope.startswith("T:") and stats.count == len(posts)


def test_sentiment_table_round_trip(tmp_path):
    market, posts, scored = _forum(n_days=5)
    aligned = align_to_trading_days(posts, market)
    series = [build_index_series(aligned, scored, v, "title") for v in ("bi", "score")]
    write_sentiment_table(series, tmp_path / "s.csv")
    table = load_sentiment_table(tmp_path / "s.csv")
    assert list(table) == ["bi_title", "score_title"]
    np.testing.assert_allclose(table["score_title"][1], series[1].values, atol=5e-7)
    assert table["bi_title"][0] == market.dates
    text = (tmp_path / "s.csv").read_text()
    assert "\r" not in text
