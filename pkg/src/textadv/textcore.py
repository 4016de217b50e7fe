"""Deterministic text segmentation, token bookkeeping and exact string algorithms.

Offsets are Unicode code-point offsets into the raw string; Python slicing
with these offsets reconstructs the exact original text.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

__all__ = [
    "SentenceSpan",
    "WordSpan",
    "Document",
    "segment_sentences",
    "tokenize_words",
    "build_document",
    "has_words",
    "levenshtein",
    "replace_word",
    "DEFAULT_ABBREVIATIONS",
]

# Lowercase, trailing period included. Guards the sentence splitter against
# the most common English abbreviations; configurable per call.
DEFAULT_ABBREVIATIONS = frozenset(
    {
        "mr.", "mrs.", "ms.", "dr.", "prof.", "st.", "jr.", "sr.", "vs.",
        "etc.", "e.g.", "i.e.", "cf.", "fig.", "no.", "vol.", "inc.",
        "ltd.", "co.", "dept.", "approx.", "u.s.", "u.k.",
    }
)

_TERMINATORS = ".!?"

# A word is a maximal run of alphanumerics, allowing internal apostrophes
# and hyphens ("don't", "well-known"). Underscore is excluded on purpose.
_WORD_RE = re.compile(r"[^\W_]+(?:['\-][^\W_]+)*", re.UNICODE)


@dataclass(frozen=True)
class SentenceSpan:
    start: int
    end: int
    text: str

    def __post_init__(self):
        if self.end <= self.start:
            raise ValueError("empty sentence span")


@dataclass(frozen=True)
class WordSpan:
    start: int
    end: int
    surface: str
    lower: str

    def __post_init__(self):
        if self.end <= self.start:
            raise ValueError("empty word span")


@dataclass(frozen=True)
class Document:
    """Raw text plus sentence and word spans.

    Immutable; spans are ordered, non-overlapping and index directly into
    ``raw``. ``word_sentences[i]`` is the index of the sentence that word
    ``i`` belongs to.
    """

    raw: str
    sentences: tuple[SentenceSpan, ...]
    words: tuple[WordSpan, ...]
    word_sentences: tuple[int, ...]

    def word_count(self) -> int:
        return len(self.words)

    def words_in_sentence(self, sentence_index: int) -> list[int]:
        return [i for i, s in enumerate(self.word_sentences) if s == sentence_index]


def _is_abbreviation(text: str, period_index: int, abbreviations: frozenset[str]) -> bool:
    # Token = maximal non-whitespace run ending at (and including) the period.
    j = period_index
    while j > 0 and not text[j - 1].isspace():
        j -= 1
    token = text[j : period_index + 1].lower()
    if token in abbreviations:
        return True
    # Single-letter initials ("J. Smith").
    return len(token) == 2 and token[0].isalpha()


def segment_sentences(
    text: str, abbreviations: frozenset[str] = DEFAULT_ABBREVIATIONS
) -> list[SentenceSpan]:
    """Split text into sentence spans.

    A split happens after '.', '!' or '?' followed by whitespace. Periods are
    additionally guarded: no split after a known abbreviation or a
    single-letter initial, and none when the following text starts with a
    lowercase letter. Spans are trimmed to exclude surrounding whitespace, so
    their concatenation covers exactly the non-whitespace content.
    """
    spans: list[SentenceSpan] = []
    n = len(text)

    def emit(lo: int, hi: int) -> None:
        while lo < hi and text[lo].isspace():
            lo += 1
        while hi > lo and text[hi - 1].isspace():
            hi -= 1
        if hi > lo:
            spans.append(SentenceSpan(lo, hi, text[lo:hi]))

    start = 0
    for i, ch in enumerate(text):
        if ch not in _TERMINATORS:
            continue
        if i + 1 >= n or not text[i + 1].isspace():
            continue
        if ch == ".":
            if _is_abbreviation(text, i, abbreviations):
                continue
            k = i + 1
            while k < n and text[k].isspace():
                k += 1
            if k < n and text[k].islower():
                continue
        emit(start, i + 1)
        start = i + 1
    emit(start, n)
    return spans


def tokenize_words(sentence: SentenceSpan, raw: str | None = None) -> list[WordSpan]:
    """Extract word spans from one sentence.

    When ``raw`` is given, offsets are absolute into it (the sentence span
    must index into ``raw``); otherwise offsets are relative to the sentence
    text. Punctuation is excluded; stop-words are kept.
    """
    if raw is None:
        haystack, lo, hi = sentence.text, 0, len(sentence.text)
    else:
        haystack, lo, hi = raw, sentence.start, sentence.end
    out = []
    for m in _WORD_RE.finditer(haystack, lo, hi):
        surface = m.group()
        out.append(WordSpan(m.start(), m.end(), surface, surface.lower()))
    return out


def has_words(text: str) -> bool:
    """True when tokenization of ``text`` would yield at least one word."""
    return _WORD_RE.search(text) is not None


def build_document(
    text: str, abbreviations: frozenset[str] = DEFAULT_ABBREVIATIONS
) -> Document:
    """Segment and tokenize ``text`` into an immutable Document."""
    sentences = tuple(segment_sentences(text, abbreviations))
    words: list[WordSpan] = []
    word_sentences: list[int] = []
    for si, sent in enumerate(sentences):
        sent_words = tokenize_words(sent, raw=text)
        words.extend(sent_words)
        word_sentences.extend([si] * len(sent_words))
    return Document(text, sentences, tuple(words), tuple(word_sentences))


def levenshtein(a: str, b: str) -> int:
    """Minimum number of single-character insertions, deletions and
    substitutions turning ``a`` into ``b``. No transposition operation."""
    if a == b:
        return 0
    if not a:
        return len(b)
    if not b:
        return len(a)
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        append = cur.append
        for j, cb in enumerate(b, start=1):
            append(
                min(
                    prev[j] + 1,
                    cur[j - 1] + 1,
                    prev[j - 1] + (ca != cb),
                )
            )
        prev = cur
    return prev[-1]


def replace_word(
    doc: Document,
    target: WordSpan,
    replacement: str,
    abbreviations: frozenset[str] = DEFAULT_ABBREVIATIONS,
) -> Document:
    """Return a new Document with ``target`` spliced out and ``replacement``
    spliced in. All other characters are preserved exactly; the result is
    re-segmented and re-tokenized."""
    if not (0 <= target.start < target.end <= len(doc.raw)):
        raise ValueError(f"span {target.start}..{target.end} out of bounds")
    if doc.raw[target.start : target.end] != target.surface:
        raise ValueError("span does not belong to this document")
    new_raw = doc.raw[: target.start] + replacement + doc.raw[target.end :]
    return build_document(new_raw, abbreviations)
