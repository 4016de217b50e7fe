"""Attack targets: a trainable softmax-linear classifier over mean-pooled
document vectors (white-box capable, with an analytic word gradient), query
counting, and model persistence.

The linear architecture is deliberate: the Jacobian of the class
probabilities with respect to each word's embedding vector is exact, so
gradient-based word ranking needs no deep-learning stack.
"""

from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .embeddings import EmbeddingTable
from .errors import BudgetExceededError, CompatibilityError, ConfigError, ParseError
from .textcore import Document, build_document

__all__ = [
    "ClassDistribution",
    "QueryCounter",
    "LinearModel",
    "train_linear",
    "save_model",
    "load_model",
    "LinearTextClassifier",
    "ModelScorer",
]

MODEL_FORMAT_VERSION = 1


@dataclass(frozen=True)
class ClassDistribution:
    """Per-class confidence values. Probabilities are non-negative, labels
    unique, and the total is 1 within 1e-6."""

    scores: tuple[tuple[str, float], ...]

    def __post_init__(self):
        labels = [l for l, _ in self.scores]
        if len(set(labels)) != len(labels):
            raise ValueError("duplicate labels in distribution")
        probs = [p for _, p in self.scores]
        if any(p < 0 for p in probs):
            raise ValueError("negative probability")
        if abs(sum(probs) - 1.0) > 1e-6:
            raise ValueError(f"probabilities sum to {sum(probs)!r}, not 1")

    def prob(self, label: str) -> float:
        for l, p in self.scores:
            if l == label:
                return p
        raise KeyError(label)

    def top_label(self) -> str:
        return max(self.scores, key=lambda lp: lp[1])[0]

    def as_dict(self) -> dict[str, float]:
        return dict(self.scores)


class QueryCounter:
    """Thread-safe prediction counter with an optional hard limit."""

    def __init__(self, limit: int | None = None):
        if limit is not None and limit <= 0:
            raise ConfigError("query limit must be positive")
        self.limit = limit
        self._count = 0
        self._lock = threading.Lock()

    @property
    def count(self) -> int:
        return self._count

    def increment(self) -> None:
        with self._lock:
            if self.limit is not None and self._count >= self.limit:
                raise BudgetExceededError(
                    f"query budget of {self.limit} exhausted"
                )
            self._count += 1


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


@dataclass(frozen=True)
class LinearModel:
    """Softmax-linear classifier over mean-pooled document vectors.

    ``embedding_checksum``/``embedding_dim`` pin the table the model was
    trained with; persistence and scorers verify them.
    """

    labels: tuple[str, ...]
    weights: np.ndarray  # (K, dim)
    bias: np.ndarray  # (K,)
    embedding_checksum: str
    embedding_dim: int
    train_meta: dict = field(default_factory=dict)

    def __post_init__(self):
        k = len(self.labels)
        if self.weights.shape != (k, self.embedding_dim):
            raise ValueError("weights shape does not match labels/dim")
        if self.bias.shape != (k,):
            raise ValueError("bias shape does not match labels")

    def probabilities(self, doc: Document, table: EmbeddingTable) -> np.ndarray:
        m = table.doc_vector(doc)
        return _softmax(self.weights @ m + self.bias)

    def predict_dist(self, doc: Document, table: EmbeddingTable) -> ClassDistribution:
        p = self.probabilities(doc, table)
        p = p / p.sum()
        return ClassDistribution(tuple(zip(self.labels, (float(x) for x in p))))

    def gradient_wrt_word(
        self,
        doc: Document,
        class_index: int,
        word_index: int,
        table: EmbeddingTable,
    ) -> np.ndarray:
        """Exact derivative of the class probability with respect to word
        ``word_index``'s embedding vector.

        For mean pooling the value is p_c * (w_c - sum_k p_k w_k) / N and is
        identical for every word position; the index is validated so callers
        stay honest about which word they mean.
        """
        if not 0 <= class_index < len(self.labels):
            raise ValueError(f"class index {class_index} out of range")
        if not 0 <= word_index < doc.word_count():
            raise ValueError(f"word index {word_index} out of range")
        p = self.probabilities(doc, table)
        n = doc.word_count()
        return p[class_index] * (self.weights[class_index] - p @ self.weights) / n


def _featurize(corpus: list[tuple[str, str]], table: EmbeddingTable) -> np.ndarray:
    feats = np.empty((len(corpus), table.dim))
    for i, (_, text) in enumerate(corpus):
        doc = build_document(text)
        if not doc.words:
            raise ConfigError(f"corpus record {i + 1} contains no words")
        feats[i] = table.doc_vector(doc)
    return feats


def train_linear(
    corpus: list[tuple[str, str]],
    table: EmbeddingTable,
    epochs: int = 20,
    lr: float = 0.1,
    seed: int = 0,
    batch_size: int = 32,
    l2: float = 0.0,
    holdout: float = 0.2,
) -> LinearModel:
    """Train by mini-batch gradient descent on the cross-entropy loss.

    A seeded fraction (``holdout``) of the corpus is held out and scored
    after training; the accuracy lands in ``train_meta['holdout_accuracy']``.
    Fully deterministic given the seed.
    """
    if epochs < 1 or lr <= 0 or batch_size < 1:
        raise ConfigError("epochs, lr and batch_size must be positive")
    if not 0 <= holdout < 1:
        raise ConfigError("holdout must be in [0, 1)")
    labels = sorted({label for label, _ in corpus})
    if len(labels) < 2:
        raise ConfigError("need at least 2 classes")
    counts = {l: 0 for l in labels}
    for label, _ in corpus:
        counts[label] += 1
    if min(counts.values()) < 2:
        raise ConfigError("need at least 2 examples per class")
    label_index = {l: i for i, l in enumerate(labels)}

    x = _featurize(corpus, table)
    y = np.array([label_index[label] for label, _ in corpus])
    k, dim, n = len(labels), table.dim, len(corpus)

    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    n_hold = int(round(holdout * n))
    hold_idx, train_idx = perm[:n_hold], perm[n_hold:]
    if len(train_idx) == 0:
        raise ConfigError("holdout fraction leaves no training data")
    x_train, y_train = x[train_idx], y[train_idx]
    n_train = len(train_idx)

    onehot = np.eye(k)
    weights = rng.normal(0.0, 0.01, size=(k, dim))
    bias = np.zeros(k)
    for _ in range(epochs):
        order = rng.permutation(n_train)
        for start in range(0, n_train, batch_size):
            batch = order[start : start + batch_size]
            xb, yb = x_train[batch], y_train[batch]
            p = _softmax(xb @ weights.T + bias)
            delta = p - onehot[yb]
            weights -= lr * (delta.T @ xb / len(batch) + l2 * weights)
            bias -= lr * delta.mean(axis=0)

    holdout_accuracy = None
    if n_hold:
        pred = np.argmax(x[hold_idx] @ weights.T + bias, axis=1)
        holdout_accuracy = float(np.mean(pred == y[hold_idx]))

    meta = {
        "epochs": epochs,
        "lr": lr,
        "seed": seed,
        "batch_size": batch_size,
        "l2": l2,
        "holdout": holdout,
        "holdout_accuracy": holdout_accuracy,
        "train_size": int(n_train),
        "holdout_size": int(n_hold),
    }
    return LinearModel(
        labels=tuple(labels),
        weights=weights,
        bias=bias,
        embedding_checksum=table.checksum,
        embedding_dim=dim,
        train_meta=meta,
    )


def _fmt_float(x: float) -> str:
    if not math.isfinite(x):
        raise ValueError("cannot serialize non-finite float")
    return format(x, ".17g")


def _dump_model_json(model: LinearModel) -> str:
    # Hand-rolled so floats carry 17 significant digits and key order is
    # fixed; equal models serialize to identical bytes.
    out = ["{"]
    out.append(f'"version":{MODEL_FORMAT_VERSION},')
    out.append('"labels":' + json.dumps(list(model.labels)) + ",")
    out.append(f'"dim":{model.embedding_dim},')
    rows = [
        "[" + ",".join(_fmt_float(v) for v in row) + "]" for row in model.weights
    ]
    out.append('"weights":[' + ",".join(rows) + "],")
    out.append('"bias":[' + ",".join(_fmt_float(v) for v in model.bias) + "],")
    out.append('"embedding_checksum":' + json.dumps(model.embedding_checksum) + ",")
    out.append('"train_meta":' + json.dumps(model.train_meta, sort_keys=True))
    out.append("}")
    return "".join(out)


def save_model(model: LinearModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(_dump_model_json(model))
        fh.write("\n")


def load_model(path, table: EmbeddingTable | None = None) -> LinearModel:
    """Load a persisted model; with ``table`` given, reject a checksum or
    dimension mismatch."""
    try:
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"not a valid model file: {exc}") from None
    if not isinstance(obj, dict) or obj.get("version") != MODEL_FORMAT_VERSION:
        raise ParseError("unsupported or missing model format version")
    try:
        model = LinearModel(
            labels=tuple(obj["labels"]),
            weights=np.asarray(obj["weights"], dtype=np.float64),
            bias=np.asarray(obj["bias"], dtype=np.float64),
            embedding_checksum=obj["embedding_checksum"],
            embedding_dim=int(obj["dim"]),
            train_meta=obj.get("train_meta", {}),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed model file: {exc}") from None
    if table is not None:
        _check_compatible(model, table)
    return model


def _check_compatible(model: LinearModel, table: EmbeddingTable) -> None:
    if model.embedding_dim != table.dim:
        raise CompatibilityError(
            f"model dim {model.embedding_dim} != table dim {table.dim}"
        )
    if model.embedding_checksum != table.checksum:
        raise CompatibilityError("model was trained with a different embedding table")


class ModelScorer:
    """In-process scoring handle around a LinearModel.

    Exposes the same ``predict(text) -> ClassDistribution`` surface as the
    remote client, so attack engines do not care where the model lives.
    Every call increments the attached counter.
    """

    def __init__(
        self,
        model: LinearModel,
        table: EmbeddingTable,
        counter: QueryCounter | None = None,
    ):
        _check_compatible(model, table)
        self.model = model
        self.table = table
        self.counter = counter if counter is not None else QueryCounter()

    @property
    def labels(self) -> tuple[str, ...]:
        return self.model.labels

    def predict(self, text: str) -> ClassDistribution:
        doc = build_document(text)
        if not doc.words:
            raise ValueError("cannot classify a document with no words")
        self.counter.increment()
        return self.model.predict_dist(doc, self.table)


class LinearTextClassifier(BaseEstimator, ClassifierMixin):
    """Scikit-learn estimator facade over :func:`train_linear`.

    ``X`` is a sequence of raw text strings; ``y`` the matching labels.
    After fitting, ``model_`` holds the persistable LinearModel and
    ``holdout_accuracy_`` the seeded hold-out score.
    """

    def __init__(
        self,
        table: EmbeddingTable | None = None,
        epochs: int = 20,
        lr: float = 0.1,
        batch_size: int = 32,
        l2: float = 0.0,
        holdout: float = 0.2,
        seed: int = 0,
    ):
        self.table = table
        self.epochs = epochs
        self.lr = lr
        self.batch_size = batch_size
        self.l2 = l2
        self.holdout = holdout
        self.seed = seed

    def fit(self, X, y) -> "LinearTextClassifier":
        if self.table is None:
            raise ConfigError("an EmbeddingTable is required to fit")
        texts = list(X)
        labels = list(y)
        if len(texts) != len(labels):
            raise ValueError("X and y have different lengths")
        if not all(isinstance(t, str) for t in texts):
            raise ValueError("X must be a sequence of strings")
        corpus = list(zip(labels, texts))
        self.model_ = train_linear(
            corpus,
            self.table,
            epochs=self.epochs,
            lr=self.lr,
            seed=self.seed,
            batch_size=self.batch_size,
            l2=self.l2,
            holdout=self.holdout,
        )
        self.classes_ = np.asarray(self.model_.labels)
        self.holdout_accuracy_ = self.model_.train_meta["holdout_accuracy"]
        return self

    def predict_proba(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        out = np.empty((len(X), len(self.classes_)))
        for i, text in enumerate(X):
            doc = build_document(text)
            out[i] = self.model_.probabilities(doc, self.table)
        return out

    def predict(self, X) -> np.ndarray:
        proba = self.predict_proba(X)
        return self.classes_[np.argmax(proba, axis=1)]
