"""Post sentiment scoring.

A bag-of-words multinomial logistic regression stands in for a fine-tuned
transformer. Any external model can be plugged in instead by writing a
``post_id,title_score,body_score`` CSV and loading it with
:func:`load_external_scores`.

Scores live in [-1, 1]: ``score = p_bull - p_bear``.
"""

from __future__ import annotations

import csv
import json
import logging
import re
from collections import Counter
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .corpus import LabeledText, Post
from .errors import DivergenceError, SchemaError, ValidationError
from .seeding import substream

logger = logging.getLogger(__name__)

BEAR, NEUTRAL, BULL = -1, 0, 1
CLASS_ORDER = (BEAR, NEUTRAL, BULL)
_CLASS_INDEX = {c: i for i, c in enumerate(CLASS_ORDER)}

_TOKEN = re.compile(
    r"[\u3400-\u4dbf\u4e00-\u9fff\uf900-\ufaff\U00020000-\U0002A6DF]"
    r"|[0-9A-Za-z\u00c0-\u024f]+"
)


def tokenize(text: str) -> list[str]:
    """CJK characters become single tokens; Latin/digit runs are lowercased."""
    return [m.group(0).lower() for m in _TOKEN.finditer(text)]


@dataclass(frozen=True)
class TokenVocabulary:
    tokens: tuple[str, ...]

    @classmethod
    def build(cls, texts: Iterable[str], min_count: int = 1) -> "TokenVocabulary":
        counts = Counter(tok for text in texts for tok in tokenize(text))
        kept = sorted((t for t, c in counts.items() if c >= min_count), key=lambda t: (-counts[t], t))
        return cls(tuple(kept))

    @property
    def size(self) -> int:
        return len(self.tokens)

    @cached_property
    def index(self) -> dict[str, int]:
        return {t: i for i, t in enumerate(self.tokens)}

    def vectorize(self, texts: Sequence[str]) -> np.ndarray:
        """Bag-of-words count matrix; unknown tokens are ignored."""
        index = self.index
        X = np.zeros((len(texts), self.size))
        for row, text in enumerate(texts):
            for tok in tokenize(text):
                j = index.get(tok)
                if j is not None:
                    X[row, j] += 1.0
        return X


@dataclass(frozen=True)
class ClassifierModel:
    vocab: TokenVocabulary
    weights: np.ndarray  # [3, vocab]
    bias: np.ndarray  # [3]
    seed: int
    class_order: tuple = CLASS_ORDER

    def logits(self, X: np.ndarray) -> np.ndarray:
        return X @ self.weights.T + self.bias

    def save(self, path) -> None:
        """JSON container: vocabulary, row-major float64 weights, bias, classes, seed."""
        doc = {
            "format": "forumcast-bow-logreg",
            "version": 1,
            "class_order": list(self.class_order),
            "seed": self.seed,
            "vocabulary": list(self.vocab.tokens),
            "weights_shape": list(self.weights.shape),
            "weights": [float(v) for v in self.weights.ravel(order="C")],
            "bias": [float(v) for v in self.bias],
        }
        Path(path).write_text(json.dumps(doc, ensure_ascii=False, indent=1) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "ClassifierModel":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        if doc.get("format") != "forumcast-bow-logreg":
            raise SchemaError(f"{path}: not a classifier model file")
        if tuple(doc["class_order"]) != CLASS_ORDER:
            raise SchemaError(f"{path}: unexpected class order {doc['class_order']}")
        shape = tuple(doc["weights_shape"])
        return cls(
            vocab=TokenVocabulary(tuple(doc["vocabulary"])),
            weights=np.array(doc["weights"], dtype=float).reshape(shape),
            bias=np.array(doc["bias"], dtype=float),
            seed=int(doc["seed"]),
        )


def softmax(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(W: np.ndarray, b: np.ndarray, X: np.ndarray, Y: np.ndarray) -> float:
    """Mean cross-entropy of one-hot targets ``Y`` under softmax(XW' + b)."""
    z = X @ W.T + b
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return float(-(Y * logp).sum() / X.shape[0])


def cross_entropy_grad(W, b, X, Y):
    P = softmax(X @ W.T + b)
    D = (P - Y) / X.shape[0]
    return D.T @ X, D.sum(axis=0)


@dataclass
class ScorerHyper:
    lr: float = 0.5
    epochs: int = 200
    batch: int | None = None  # None means full batch
    seed: int = 0
    min_count: int = 1


def train_classifier(corpus: Sequence[LabeledText], hyper: ScorerHyper | None = None):
    """Fit the bag-of-words classifier by mini-batch gradient descent.

    Returns ``(model, losses)`` where ``losses[k]`` is the full-data mean
    cross-entropy after epoch ``k`` (``losses[0]`` is the initial loss).
    """
    hyper = hyper or ScorerHyper()
    labels = {item.label for item in corpus}
    missing = set(CLASS_ORDER) - labels
    if missing:
        raise ValidationError(f"training corpus lacks classes {sorted(missing)}")
    vocab = TokenVocabulary.build((item.text for item in corpus), hyper.min_count)
    X = vocab.vectorize([item.text for item in corpus])
    Y = np.zeros((len(corpus), 3))
    Y[np.arange(len(corpus)), [_CLASS_INDEX[item.label] for item in corpus]] = 1.0

    rng = substream(hyper.seed, "scorer")
    W = np.zeros((3, vocab.size))
    b = np.zeros(3)
    n = X.shape[0]
    batch = n if not hyper.batch else min(hyper.batch, n)
    losses = [cross_entropy(W, b, X, Y)]
    for epoch in range(1, hyper.epochs + 1):
        order = rng.permutation(n) if batch < n else np.arange(n)
        for start in range(0, n, batch):
            idx = order[start : start + batch]
            gW, gb = cross_entropy_grad(W, b, X[idx], Y[idx])
            W -= hyper.lr * gW
            b -= hyper.lr * gb
        loss = cross_entropy(W, b, X, Y)
        if not np.isfinite(loss):
            raise DivergenceError(f"classifier loss became non-finite at epoch {epoch}", epoch=epoch)
        losses.append(loss)
    return ClassifierModel(vocab, W, b, hyper.seed), losses


def classify_probs(p: np.ndarray) -> int:
    """argmax over (bear, neutral, bull); any tie at the top goes to neutral."""
    top = p.max()
    winners = [i for i in range(3) if p[i] == top]
    if len(winners) > 1:
        return NEUTRAL
    return CLASS_ORDER[winners[0]]


def score_from_logits(logits) -> tuple[float, int]:
    p = softmax(np.asarray(logits, dtype=float))
    score = float(np.clip(p[2] - p[0], -1.0, 1.0))
    return score, classify_probs(p)


def score_text(model: ClassifierModel, text: str) -> tuple[float, int]:
    x = model.vocab.vectorize([text])[0]
    return score_from_logits(model.weights @ x + model.bias)


def predict_labels(model: ClassifierModel, texts: Sequence[str]) -> list[int]:
    P = softmax(model.logits(model.vocab.vectorize(list(texts))))
    return [classify_probs(p) for p in P]


@dataclass(frozen=True)
class ScoredPost:
    post: Post
    title_score: float
    body_score: float
    title_class: int
    body_class: int

    def __post_init__(self):
        for s in (self.title_score, self.body_score):
            if not -1.0 <= s <= 1.0:
                raise ValidationError(f"score {s} outside [-1, 1]")
        for c in (self.title_class, self.body_class):
            if c not in CLASS_ORDER:
                raise ValidationError(f"class {c} not in {CLASS_ORDER}")

    def score(self, field: str) -> float:
        return self.title_score if field == "title" else self.body_score

    def klass(self, field: str) -> int:
        return self.title_class if field == "title" else self.body_class


def score_posts(model: ClassifierModel, posts: Sequence[Post]) -> list[ScoredPost]:
    if not posts:
        return []
    titles = softmax(model.logits(model.vocab.vectorize([p.title for p in posts])))
    bodies = softmax(model.logits(model.vocab.vectorize([p.body for p in posts])))
    out = []
    for post, pt, pb in zip(posts, titles, bodies):
        ts = float(np.clip(pt[2] - pt[0], -1.0, 1.0))
        bs = float(np.clip(pb[2] - pb[0], -1.0, 1.0)) if post.body else 0.0
        bc = classify_probs(pb) if post.body else NEUTRAL
        out.append(ScoredPost(post, ts, bs, classify_probs(pt), bc))
    return out


def class_of_score(score: float, threshold: float = 1.0 / 3.0) -> int:
    """Class for an externally supplied score: nearest of -1, 0, 1."""
    if score > threshold:
        return BULL
    if score < -threshold:
        return BEAR
    return NEUTRAL


class ScoreMap(dict):
    """post_id -> (title_score, body_score); ``rejected`` counts out-of-range rows.

    ``classes`` holds post_id -> (title_class, body_class) when the file
    carries explicit class columns, as files written by :func:`write_scores` do.
    """

    rejected: int = 0

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.classes = {}


def write_scores(scored: Sequence[ScoredPost], path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["post_id", "title_score", "body_score", "title_class", "body_class"])
        for sp in scored:
            writer.writerow(
                [sp.post.post_id, f"{sp.title_score:.6f}", f"{sp.body_score:.6f}", sp.title_class, sp.body_class]
            )


def load_external_scores(path) -> ScoreMap:
    out = ScoreMap()
    with Path(path).open(encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"post_id", "title_score", "body_score"}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise SchemaError(f"{path}: expected header post_id,title_score,body_score")
        has_classes = {"title_class", "body_class"} <= set(reader.fieldnames)
        for lineno, row in enumerate(reader, start=2):
            pid = row["post_id"].strip()
            if pid in out:
                raise ValidationError(f"{path}: duplicate post_id {pid} at line {lineno}")
            try:
                ts, bs = float(row["title_score"]), float(row["body_score"])
            except ValueError as exc:
                raise SchemaError(f"{path}: line {lineno}: {exc}") from exc
            if not (-1.0 <= ts <= 1.0 and -1.0 <= bs <= 1.0):
                out.rejected += 1
                continue
            out[pid] = (ts, bs)
            if has_classes:
                try:
                    tc, bc = int(row["title_class"]), int(row["body_class"])
                except ValueError as exc:
                    raise SchemaError(f"{path}: line {lineno}: {exc}") from exc
                out.classes[pid] = (tc, bc)
    if out.rejected:
        logger.warning("%s: rejected %d out-of-range rows", path, out.rejected)
    return out


def join_external_scores(posts: Sequence[Post], scores: ScoreMap) -> list[ScoredPost]:
    unknown = sorted(set(scores) - {p.post_id for p in posts})
    if unknown:
        raise ValidationError(f"scores reference unknown post ids: {', '.join(unknown[:20])}")
    missing = [p.post_id for p in posts if p.post_id not in scores]
    if missing:
        raise ValidationError(f"posts without scores: {', '.join(missing[:20])}")
    out = []
    for p in posts:
        ts, bs = scores[p.post_id]
        tc, bc = scores.classes.get(p.post_id, (class_of_score(ts), class_of_score(bs)))
        out.append(ScoredPost(p, ts, bs, tc, bc))
    return out


@dataclass(frozen=True)
class ClassificationReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    confusion: np.ndarray  # rows actual, columns predicted, order CLASS_ORDER


def confusion_matrix(predicted, actual) -> np.ndarray:
    cm = np.zeros((3, 3), dtype=int)
    for p, a in zip(predicted, actual):
        cm[_CLASS_INDEX[a], _CLASS_INDEX[p]] += 1
    return cm


def binary_metrics(tp: int, fp: int, fn: int, tn: int) -> tuple[float, float, float, float]:
    """(accuracy, precision, recall, f1) from a two-class confusion table."""
    accuracy = (tp + tn) / (tp + fn + fp + tn)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return accuracy, precision, recall, f1


def classification_report(predicted, actual) -> ClassificationReport:
    """Accuracy plus macro-averaged precision and recall; F1 from the two macros.

    Averages run over every class that occurs in either sequence; a ratio with
    an empty denominator counts as 0.
    """
    predicted, actual = list(predicted), list(actual)
    if len(predicted) != len(actual):
        raise ValidationError(f"length mismatch: {len(predicted)} vs {len(actual)}")
    if not predicted:
        raise ValidationError("need at least one label")
    cm = confusion_matrix(predicted, actual)
    tp = np.diag(cm).astype(float)
    pred_tot = cm.sum(axis=0)
    act_tot = cm.sum(axis=1)
    present = (pred_tot > 0) | (act_tot > 0)
    precision = np.where(pred_tot > 0, tp / np.maximum(pred_tot, 1), 0.0)
    recall = np.where(act_tot > 0, tp / np.maximum(act_tot, 1), 0.0)
    macro_p = float(precision[present].mean())
    macro_r = float(recall[present].mean())
    f1 = 0.0 if macro_p + macro_r == 0 else 2 * macro_p * macro_r / (macro_p + macro_r)
    return ClassificationReport(float(tp.sum() / len(actual)), macro_p, macro_r, f1, cm)
