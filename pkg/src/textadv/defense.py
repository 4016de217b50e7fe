"""Countermeasures: a dictionary/edit-distance spelling corrector (with a
merge pass for space-insertion bugs) and adversarial retraining, plus the
loop that measures how much of an attack survives correction.

The corrector is context-free on purpose: a token absent from the
dictionary is replaced by the in-dictionary word with the smallest edit
distance (ties go to the higher corpus frequency, then lexicographic
order). Word-substitution bugs are real words and pass straight through.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .attack import AttackOutcome, PerturbedWord
from .classifiers import LinearModel, train_linear
from .embeddings import EmbeddingTable
from .errors import ParseError
from .textcore import Document, build_document

__all__ = [
    "Correction",
    "CorrectionReport",
    "ScDefenseReport",
    "load_dictionary",
    "save_dictionary",
    "build_dictionary",
    "spell_correct",
    "evaluate_defense_sc",
    "adversarial_training",
]

_ALPHABET = "abcdefghijklmnopqrstuvwxyz'-"
DICTIONARY_VOCAB_CAP = 50000


@dataclass(frozen=True)
class Correction:
    start: int  # span in the input document's raw text
    end: int
    original: str
    corrected: str
    distance: int
    merged: bool = False


@dataclass
class CorrectionReport:
    corrected_doc: Document
    corrections: list[Correction]
    # kind -> fraction of that kind's bugs restored to the pre-attack word;
    # only populated when the caller supplies the attack's bug list, and
    # kinds that never occurred stay absent rather than reading 0.
    per_kind_correction_rate: dict[str, float] = field(default_factory=dict)
    # Parallel to the supplied bug list: True where the region spells the
    # original word again after correction.
    bug_corrected: list[bool] = field(default_factory=list)


def load_dictionary(path) -> dict[str, int]:
    """Read a `word TAB count` file into a frequency map."""
    out: dict[str, int] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ParseError("expected `word TAB count`", lineno)
            word, count = parts
            try:
                out[word] = int(count)
            except ValueError:
                raise ParseError(f"bad count {count!r}", lineno) from None
    return out


def save_dictionary(dictionary: dict[str, int], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for word in sorted(dictionary):
            fh.write(f"{word}\t{dictionary[word]}\n")


def build_dictionary(
    table: EmbeddingTable,
    corpus: list[tuple[str, str]],
    vocab_cap: int = DICTIONARY_VOCAB_CAP,
) -> dict[str, int]:
    """Embedding vocabulary (first ``vocab_cap`` entries, case-folded) plus
    the corpus vocabulary, with frequencies counted from the corpus."""
    out: dict[str, int] = {}
    for word in table.words[:vocab_cap]:
        out.setdefault(word.lower(), 0)
    for _, text in corpus:
        for w in build_document(text).words:
            out[w.lower] = out.get(w.lower, 0) + 1
    return out


def _edits1(word: str) -> set[str]:
    splits = [(word[:i], word[i:]) for i in range(len(word) + 1)]
    deletes = {a + b[1:] for a, b in splits if b}
    replaces = {a + c + b[1:] for a, b in splits if b for c in _ALPHABET}
    inserts = {a + c + b for a, b in splits for c in _ALPHABET}
    return deletes | replaces | inserts


def _candidates(token: str, dictionary: dict[str, int], max_edit: int):
    """In-dictionary words nearest to ``token``; returns (words, distance).

    Uses staged edit generation for distances 1 and 2 (no transposition, so
    distances agree with the Levenshtein metric used elsewhere); beyond 2 it
    falls back to a filtered scan.
    """
    edits = _edits1(token)
    found = {w for w in edits if w in dictionary}
    if found or max_edit == 1:
        return (found, 1) if found else (set(), 0)
    two = set()
    for e in edits:
        two.update(w for w in _edits1(e) if w in dictionary)
    two.discard(token)
    if two or max_edit == 2:
        return (two, 2) if two else (set(), 0)
    from .textcore import levenshtein  # slow path only

    best: set[str] = set()
    best_d = max_edit + 1
    for w in dictionary:
        if abs(len(w) - len(token)) >= best_d:
            continue
        d = levenshtein(token, w)
        if 2 < d < best_d:
            best, best_d = {w}, d
        elif d == best_d:
            best.add(w)
    return (best, best_d) if best else (set(), 0)


def _pick(words: set[str], dictionary: dict[str, int]) -> str:
    return min(words, key=lambda w: (-dictionary.get(w, 0), w))


def _is_gap_whitespace(raw: str, a: int, b: int) -> bool:
    return a <= b and raw[a:b].strip() == ""


def spell_correct(
    doc: Document,
    dictionary: dict[str, int],
    max_edit: int = 2,
    bugs: list[PerturbedWord] | None = None,
) -> CorrectionReport:
    """Correct out-of-dictionary tokens in ``doc``.

    A merge pass runs first: two adjacent tokens separated only by
    whitespace are joined when their concatenation is in the dictionary and
    at least one piece is not (undoing space-insertion bugs). Then each
    remaining out-of-dictionary token of length >= 3 is replaced by its
    nearest dictionary word within ``max_edit``. Pure digit tokens are left
    alone. Idempotent: a corrected document corrects to itself.

    When ``bugs`` (the attack's perturbed-word records, with spans into this
    document) is given, the per-kind correction rate is computed: a bug
    counts as corrected when the tokens occupying its region afterwards
    spell the original word again.
    """
    if not dictionary:
        raise ValueError("dictionary must be non-empty")
    edits: list[Correction] = []
    words = doc.words
    consumed: set[int] = set()
    i = 0
    while i < len(words) - 1:
        a, b = words[i], words[i + 1]
        joined = a.surface + b.surface
        if (
            _is_gap_whitespace(doc.raw, a.end, b.start)
            and joined.lower() in dictionary
            and (a.lower not in dictionary or b.lower not in dictionary)
        ):
            original = doc.raw[a.start : b.end]
            edits.append(
                Correction(a.start, b.end, original, joined, 1, merged=True)
            )
            consumed.update((i, i + 1))
            i += 2
        else:
            i += 1

    for idx, w in enumerate(words):
        if idx in consumed or w.lower in dictionary:
            continue
        if len(w.surface) < 3 or w.surface.isdigit():
            continue
        found, dist = _candidates(w.lower, dictionary, max_edit)
        if not found or dist > max_edit:
            continue
        edits.append(Correction(w.start, w.end, w.surface, _pick(found, dictionary), dist))

    edits.sort(key=lambda c: c.start)
    pieces: list[str] = []
    cursor = 0
    for c in edits:
        pieces.append(doc.raw[cursor : c.start])
        pieces.append(c.corrected)
        cursor = c.end
    pieces.append(doc.raw[cursor:])
    corrected_doc = build_document("".join(pieces))

    report = CorrectionReport(corrected_doc=corrected_doc, corrections=edits)
    if bugs:
        report.bug_corrected = _bug_corrected_flags(doc, edits, bugs)
        totals: dict[str, int] = {}
        fixed: dict[str, int] = {}
        for bug, ok in zip(bugs, report.bug_corrected):
            kind = bug.bug.kind.value
            totals[kind] = totals.get(kind, 0) + 1
            fixed[kind] = fixed.get(kind, 0) + ok
        report.per_kind_correction_rate = {
            k: fixed[k] / totals[k] for k in totals
        }
    return report


def _map_position(pos: int, edits: list[Correction], side: str) -> int:
    offset = 0
    for c in edits:
        delta = len(c.corrected) - (c.end - c.start)
        if c.end <= pos:
            offset += delta
        elif c.start < pos:
            # Position falls inside an edited region: snap to its boundary.
            base = c.start + offset
            return base if side == "lo" else base + len(c.corrected)
    return pos + offset


def _bug_corrected_flags(
    doc: Document, edits: list[Correction], bugs: list[PerturbedWord]
) -> list[bool]:
    from .textcore import SentenceSpan, tokenize_words

    pieces: list[str] = []
    cursor = 0
    for c in edits:
        pieces.append(doc.raw[cursor : c.start])
        pieces.append(c.corrected)
        cursor = c.end
    pieces.append(doc.raw[cursor:])
    corrected_text = "".join(pieces)

    flags: list[bool] = []
    for bug in bugs:
        lo = _map_position(bug.adv_start, edits, "lo")
        hi = _map_position(bug.adv_end, edits, "hi")
        region = corrected_text[lo:hi]
        if not region:
            flags.append(False)
            continue
        tokens = tokenize_words(SentenceSpan(0, len(region), region))
        joined = "".join(t.lower for t in tokens)
        flags.append(joined == bug.bug.original.lower())
    return flags


@dataclass
class ScDefenseReport:
    total: int
    still_successful: int
    residual_success_rate: float
    per_kind_correction_rate: dict[str, float]
    per_document: list[dict]

    def to_dict(self) -> dict:
        return {
            "total": self.total,
            "still_successful": self.still_successful,
            "residual_success_rate": self.residual_success_rate,
            "per_kind_correction_rate": dict(self.per_kind_correction_rate),
            "per_document": list(self.per_document),
        }


def evaluate_defense_sc(
    outcomes: list[AttackOutcome],
    classifier,
    dictionary: dict[str, int],
    max_edit: int = 2,
) -> ScDefenseReport:
    """Run the corrector over successful adversarial texts and re-classify.

    Residual success rate is the fraction still misclassified after
    correction; per-kind rates aggregate bug counts across all outcomes.
    """
    totals: dict[str, int] = {}
    fixed_counts: dict[str, int] = {}
    per_document: list[dict] = []
    still = 0
    total = 0
    for outcome in outcomes:
        if not outcome.success or outcome.label_mismatch or outcome.adversarial is None:
            continue
        total += 1
        report = spell_correct(
            outcome.adversarial, dictionary, max_edit, bugs=outcome.perturbed_words
        )
        for bug, ok in zip(outcome.perturbed_words, report.bug_corrected):
            kind = bug.bug.kind.value
            totals[kind] = totals.get(kind, 0) + 1
            fixed_counts[kind] = fixed_counts.get(kind, 0) + ok
        dist = classifier.predict(report.corrected_doc.raw)
        misclassified = dist.top_label() != outcome.original_label
        still += misclassified
        per_document.append(
            {
                "original_label": outcome.original_label,
                "corrected_text": report.corrected_doc.raw,
                "corrections": len(report.corrections),
                "still_misclassified": misclassified,
            }
        )
    rate = still / total if total else 0.0
    per_kind = {k: fixed_counts.get(k, 0) / totals[k] for k in totals}
    return ScDefenseReport(
        total=total,
        still_successful=still,
        residual_success_rate=rate,
        per_kind_correction_rate=per_kind,
        per_document=per_document,
    )


def adversarial_training(
    clean_corpus: list[tuple[str, str]],
    adversarial_corpus: list[tuple[str, str]],
    table: EmbeddingTable,
    epochs: int = 10,
    lr: float = 0.0005,
    seed: int = 0,
    batch_size: int = 32,
    l2: float = 0.0,
    holdout: float = 0.2,
) -> LinearModel:
    """Retrain on clean plus adversarial examples (labeled with their true
    labels). With an empty adversarial corpus this is exactly a retrain."""
    combined = list(clean_corpus) + list(adversarial_corpus)
    return train_linear(
        combined,
        table,
        epochs=epochs,
        lr=lr,
        seed=seed,
        batch_size=batch_size,
        l2=l2,
        holdout=holdout,
    )
