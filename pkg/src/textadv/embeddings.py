"""Pretrained word vectors: loading, nearest-neighbor queries and the
vector-space similarity metrics computed on documents.

Document vectors are the arithmetic mean of the word vectors, looked up by
surface form first and case-folded form second; words absent from the
vocabulary get a deterministic per-word vector drawn uniformly from
[-0.1, 0.1] per dimension.
"""

from __future__ import annotations

import hashlib
import warnings

import numpy as np

from .errors import FormatError, ParseError
from .textcore import Document

__all__ = [
    "EmbeddingTable",
    "load_embeddings",
    "euclidean",
    "cosine_similarity",
    "jaccard",
    "ZeroNormWarning",
]

OOV_LOW, OOV_HIGH = -0.1, 0.1


class ZeroNormWarning(UserWarning):
    """Cosine similarity was requested for a zero-norm vector."""


def _stable_word_entropy(word: str) -> int:
    digest = hashlib.sha256(word.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


class EmbeddingTable:
    """Immutable vocabulary -> vector table.

    Queries are read-only and safe to share across threads. The checksum
    identifies the loaded content (dimension, word order and matrix bytes)
    and is embedded into trained models for compatibility checks.
    """

    def __init__(self, words: list[str], matrix: np.ndarray, oov_seed: int = 0):
        matrix = np.ascontiguousarray(matrix, dtype=np.float64)
        if matrix.ndim != 2 or matrix.shape[0] != len(words):
            raise ValueError("matrix shape does not match vocabulary size")
        if len(set(words)) != len(words):
            raise ValueError("vocabulary contains duplicate words")
        if not np.isfinite(matrix).all():
            raise ValueError("matrix contains non-finite entries")
        self.words = list(words)
        self.matrix = matrix
        self.dim = int(matrix.shape[1])
        self.vocab = {w: i for i, w in enumerate(self.words)}
        self.oov_seed = oov_seed
        self._norms = np.linalg.norm(matrix, axis=1)
        self._oov_cache: dict[str, np.ndarray] = {}
        self.checksum = self._compute_checksum()

    def _compute_checksum(self) -> str:
        h = hashlib.sha256()
        h.update(f"dim={self.dim}\n".encode())
        for w in self.words:
            h.update(w.encode("utf-8"))
            h.update(b"\x00")
        h.update(self.matrix.tobytes())
        return h.hexdigest()

    def __contains__(self, word: str) -> bool:
        return word in self.vocab

    def __len__(self) -> int:
        return len(self.words)

    def vector(self, word: str) -> np.ndarray:
        """Stored row for in-vocabulary words, else a deterministic
        seeded-uniform vector in [-0.1, 0.1]^dim (stable per word)."""
        idx = self.vocab.get(word)
        if idx is not None:
            return self.matrix[idx]
        cached = self._oov_cache.get(word)
        if cached is None:
            seq = np.random.SeedSequence([self.oov_seed, _stable_word_entropy(word)])
            rng = np.random.default_rng(seq)
            cached = rng.uniform(OOV_LOW, OOV_HIGH, self.dim)
            cached.flags.writeable = False
            self._oov_cache[word] = cached
        return cached

    def lookup_vector(self, surface: str, lower: str | None = None) -> np.ndarray:
        """Vocabulary hit on the surface form first, then the case-folded
        form; out-of-vocabulary words fall back to the seeded vector for the
        surface form."""
        idx = self.vocab.get(surface)
        if idx is not None:
            return self.matrix[idx]
        idx = self.vocab.get(lower if lower is not None else surface.lower())
        if idx is not None:
            return self.matrix[idx]
        return self.vector(surface)

    def nearest_neighbors(self, word: str, k: int) -> list[tuple[str, float]]:
        """Up to ``k`` in-vocabulary words closest to ``word`` by cosine
        similarity, excluding the word itself and its case-variants.

        Exact linear scan; ties broken by ascending vocabulary index.
        Unknown query words yield an empty list.
        """
        if k < 1:
            raise ValueError("k must be >= 1")
        idx = self.vocab.get(word)
        if idx is None:
            return []
        q = self.matrix[idx]
        qnorm = np.linalg.norm(q)
        denom = self._norms * (qnorm if qnorm > 0 else 1.0)
        denom[denom == 0] = 1.0
        sims = (self.matrix @ q) / denom
        order = np.lexsort((np.arange(len(self.words)), -sims))
        lowered = word.lower()
        out: list[tuple[str, float]] = []
        for i in order:
            w = self.words[i]
            if w.lower() == lowered:
                continue
            out.append((w, float(sims[i])))
            if len(out) == k:
                break
        return out

    def doc_vector(self, doc: Document) -> np.ndarray:
        """Mean of the word vectors of ``doc``."""
        if not doc.words:
            raise ValueError("cannot embed a document with no words")
        acc = np.zeros(self.dim)
        for w in doc.words:
            acc += self.lookup_vector(w.surface, w.lower)
        return acc / len(doc.words)

    def semantic_similarity(self, a: Document, b: Document) -> float:
        """Cosine similarity of the two documents' mean vectors."""
        return cosine_similarity(self.doc_vector(a), self.doc_vector(b))


def load_embeddings(path, limit: int | None = None) -> EmbeddingTable:
    """Load a text-format embedding file: one entry per line, the word then
    ``dim`` decimal floats, single-space separated.

    The dimension is inferred from the first line; later lines with a
    different count raise FormatError. Duplicate words keep the first
    occurrence. ``limit`` caps the number of accepted entries.
    """
    words: list[str] = []
    rows: list[np.ndarray] = []
    seen: set[str] = set()
    dim: int | None = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                raise ParseError("empty embedding line", lineno)
            parts = line.split(" ")
            word, values = parts[0], parts[1:]
            if dim is None:
                if not values:
                    raise ParseError("no vector components on first line", lineno)
                dim = len(values)
            elif len(values) != dim:
                raise FormatError(
                    f"line {lineno}: expected {dim} components, found {len(values)}"
                )
            if word in seen:
                continue
            try:
                row = np.asarray(values, dtype=np.float64)
            except ValueError:
                raise ParseError("malformed float in embedding line", lineno) from None
            if not np.isfinite(row).all():
                raise FormatError(f"line {lineno}: non-finite vector component")
            seen.add(word)
            words.append(word)
            rows.append(row)
            if limit is not None and len(words) >= limit:
                break
    if not words:
        raise FormatError("embedding file contains no entries")
    return EmbeddingTable(words, np.vstack(rows))


def euclidean(p: np.ndarray, q: np.ndarray) -> float:
    """Straight-line distance between two vectors of equal dimension."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"dimension mismatch: {p.shape} vs {q.shape}")
    return float(np.sqrt(np.sum((p - q) ** 2)))


def cosine_similarity(p: np.ndarray, q: np.ndarray) -> float:
    """Cosine of the angle between two vectors, in [-1, 1].

    Zero-norm inputs yield 0.0 (maximally dissimilar) with a ZeroNormWarning
    rather than an error, which keeps attack loops total.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"dimension mismatch: {p.shape} vs {q.shape}")
    np_, nq = np.linalg.norm(p), np.linalg.norm(q)
    if np_ == 0.0 or nq == 0.0:
        warnings.warn("cosine similarity of zero-norm vector", ZeroNormWarning)
        return 0.0
    if np.array_equal(p, q):
        return 1.0
    return float(np.clip(np.dot(p, q) / (np_ * nq), -1.0, 1.0))


def jaccard(a: Document, b: Document) -> float:
    """Intersection over union of the two documents' case-folded word sets.
    Two empty sets count as identical (1.0)."""
    sa = {w.lower for w in a.words}
    sb = {w.lower for w in b.words}
    if not sa and not sb:
        return 1.0
    return len(sa & sb) / len(sa | sb)
