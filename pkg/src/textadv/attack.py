"""Bug generation, greedy bug selection, and the attack engines.

A "bug" is a single word rewrite drawn from five operators: inserting an
interior space, deleting an interior character, swapping an adjacent
interior pair, substituting a visually similar character, or substituting
the whole word with an embedding-space neighbor. The engines rank words
(by gradient under white-box access, by deletion deltas under black-box
access), then greedily apply the bug that lowers the attacked class'
confidence the most, aborting once the document's similarity to the
original drops to the configured threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .classifiers import ClassDistribution, LinearModel, ModelScorer
from .embeddings import EmbeddingTable, _stable_word_entropy, euclidean, jaccard
from .errors import BudgetExceededError, ConfigError
from .textcore import Document, WordSpan, build_document, has_words, levenshtein

__all__ = [
    "BugKind",
    "BugCandidate",
    "AttackConfig",
    "AttackOutcome",
    "PerturbedWord",
    "TraceStep",
    "DEFAULT_SUBC_MAP",
    "generate_bugs",
    "select_bug",
    "SelectedBug",
    "whitebox_attack",
    "blackbox_attack",
    "random_baseline",
    "word_importances",
]

# o/0, l/1, a/@ and m/n come straight from the operator's definition of
# visually-similar and keyboard-adjacent characters; the rest are extensions
# in the same spirit and can be overridden per run.
DEFAULT_SUBC_MAP = {
    "o": "0",
    "l": "1",
    "a": "@",
    "m": "n",
    "n": "m",
    "e": "3",
    "i": "1",
    "s": "$",
}


class BugKind(Enum):
    # Declaration order is the tie-breaking order for bug selection.
    INSERT = "insert"
    DELETE = "delete"
    SWAP = "swap"
    SUBC = "subc"
    SUBW = "subw"


@dataclass(frozen=True)
class BugCandidate:
    """One proposed rewrite of a single word."""

    kind: BugKind
    original: str
    replacement: str
    neighbor_rank: int | None = None

    def __post_init__(self):
        o, r = self.original, self.replacement
        if r == o:
            raise ValueError("replacement equals original")
        if self.kind is not BugKind.SUBW and self.neighbor_rank is not None:
            raise ValueError("neighbor_rank is SubW-only")
        if self.kind is BugKind.INSERT:
            ok = any(
                r == o[:p] + " " + o[p:] for p in range(1, len(o))
            )
            if not ok:
                raise ValueError("insert must add one interior space")
        elif self.kind is BugKind.DELETE:
            ok = any(
                r == o[:i] + o[i + 1 :] for i in range(1, len(o) - 1)
            )
            if not ok:
                raise ValueError("delete must drop one interior character")
        elif self.kind is BugKind.SWAP:
            ok = any(
                r == o[:i] + o[i + 1] + o[i] + o[i + 2 :]
                for i in range(1, len(o) - 2)
            )
            if not ok:
                raise ValueError("swap must exchange one interior adjacent pair")
        elif self.kind is BugKind.SUBC:
            if len(r) != len(o) or sum(a != b for a, b in zip(o, r)) != 1:
                raise ValueError("sub-c must change exactly one character")
        elif self.kind is BugKind.SUBW:
            if self.neighbor_rank is None or self.neighbor_rank < 1:
                raise ValueError("sub-w needs a positive neighbor_rank")


@dataclass(frozen=True)
class AttackConfig:
    """Knobs shared by all engines.

    ``seed`` drives every random choice. Character-edit positions are drawn
    from a per-word stream derived from (seed, word surface), so the same
    word receives the same candidate set anywhere in a run.
    """

    epsilon: float = 0.8
    top_k: int = 5
    max_queries: int | None = None
    seed: int = 0
    insert_max_len: int = 6
    swap_min_len: int = 5
    subc_map: dict[str, str] = field(default_factory=lambda: dict(DEFAULT_SUBC_MAP))
    enabled_kinds: frozenset[BugKind] = frozenset(BugKind)
    targeted_label: str | None = None
    importance_mode: str = "dot"  # "dot" or "grad_norm"

    def __post_init__(self):
        if not 0 < self.epsilon <= 1:
            raise ConfigError("epsilon must be in (0, 1]")
        if self.top_k < 1:
            raise ConfigError("top_k must be >= 1")
        if self.max_queries is not None and self.max_queries < 1:
            raise ConfigError("max_queries must be positive")
        if self.insert_max_len < 2 or self.swap_min_len < 4:
            raise ConfigError("degenerate length constraints")
        if self.importance_mode not in ("dot", "grad_norm"):
            raise ConfigError(f"unknown importance_mode {self.importance_mode!r}")
        if not self.enabled_kinds:
            raise ConfigError("at least one bug kind must be enabled")


@dataclass(frozen=True)
class TraceStep:
    word_index: int
    surface: str
    kind: str
    replacement: str
    neighbor_rank: int | None
    drop: float | None
    label_after: str | None
    score_after: float | None
    similarity_after: float
    queries_after: int

    def to_dict(self) -> dict:
        return {
            "word_index": self.word_index,
            "surface": self.surface,
            "kind": self.kind,
            "replacement": self.replacement,
            "neighbor_rank": self.neighbor_rank,
            "drop": self.drop,
            "label_after": self.label_after,
            "score_after": self.score_after,
            "similarity_after": self.similarity_after,
            "queries_after": self.queries_after,
        }


@dataclass(frozen=True)
class PerturbedWord:
    word: WordSpan  # span in the original document
    bug: BugCandidate
    adv_start: int  # span of the replacement in the final document
    adv_end: int

    def to_dict(self) -> dict:
        return {
            "start": self.word.start,
            "end": self.word.end,
            "surface": self.word.surface,
            "kind": self.bug.kind.value,
            "replacement": self.bug.replacement,
            "neighbor_rank": self.bug.neighbor_rank,
            "adv_start": self.adv_start,
            "adv_end": self.adv_end,
        }


@dataclass
class AttackOutcome:
    """Everything one attack run produced.

    ``success`` implies the final label differs from the attacked one and
    the similarity gate held; ``adversarial`` is set only on success.
    ``label_mismatch`` marks runs where the model already disagreed with the
    supplied label, which harnesses count separately.
    """

    success: bool
    original: Document
    adversarial: Document | None
    original_label: str
    final_label: str
    original_score: float | None
    final_score: float | None
    perturbed_words: list[PerturbedWord]
    perturbed_ratio: float
    queries: int
    metrics: dict[str, float]
    trace: list[TraceStep]
    stop_reason: str
    label_mismatch: bool
    word_count: int

    def to_dict(self) -> dict:
        return {
            "success": self.success,
            "original_text": self.original.raw,
            "adversarial_text": None if self.adversarial is None else self.adversarial.raw,
            "original_label": self.original_label,
            "final_label": self.final_label,
            "original_score": self.original_score,
            "final_score": self.final_score,
            "perturbed_words": [p.to_dict() for p in self.perturbed_words],
            "perturbed_ratio": self.perturbed_ratio,
            "queries": self.queries,
            "metrics": dict(self.metrics),
            "trace": [t.to_dict() for t in self.trace],
            "stop_reason": self.stop_reason,
            "label_mismatch": self.label_mismatch,
            "word_count": self.word_count,
        }


def _word_rng(cfg: AttackConfig, surface: str) -> np.random.Generator:
    seq = np.random.SeedSequence([cfg.seed, _stable_word_entropy(surface)])
    return np.random.default_rng(seq)


def generate_bugs(
    word: WordSpan,
    table: EmbeddingTable,
    cfg: AttackConfig,
    rng: np.random.Generator,
) -> list[BugCandidate]:
    """All candidate rewrites for one word, in tie-breaking order.

    One candidate per character operator (positions drawn from ``rng``),
    plus up to ``top_k`` neighbor substitutions for in-vocabulary words.
    Duplicates and rewrites equal to the original are dropped.
    """
    s = word.surface
    n = len(s)
    kinds = cfg.enabled_kinds
    out: list[BugCandidate] = []

    def add(kind: BugKind, replacement: str, rank: int | None = None) -> None:
        if replacement != s and all(c.replacement != replacement for c in out):
            out.append(BugCandidate(kind, s, replacement, rank))

    if BugKind.INSERT in kinds and 2 <= n < cfg.insert_max_len:
        p = int(rng.integers(1, n))
        add(BugKind.INSERT, s[:p] + " " + s[p:])
    if BugKind.DELETE in kinds and n >= 3:
        i = int(rng.integers(1, n - 1))
        add(BugKind.DELETE, s[:i] + s[i + 1 :])
    if BugKind.SWAP in kinds and n >= max(4, cfg.swap_min_len):
        i = int(rng.integers(1, n - 2))
        add(BugKind.SWAP, s[:i] + s[i + 1] + s[i] + s[i + 2 :])
    if BugKind.SUBC in kinds:
        for i, ch in enumerate(s):
            sub = cfg.subc_map.get(ch)
            if sub is not None:
                add(BugKind.SUBC, s[:i] + sub + s[i + 1 :])
                break
    if BugKind.SUBW in kinds:
        query = None
        if word.surface in table:
            query = word.surface
        elif word.lower in table:
            query = word.lower
        if query is not None:
            for rank, (neighbor, _) in enumerate(
                table.nearest_neighbors(query, cfg.top_k), start=1
            ):
                add(BugKind.SUBW, neighbor, rank)
    return out


@dataclass(frozen=True)
class SelectedBug:
    bug: BugCandidate
    drop: float  # confidence change in the attack's favor
    dist: ClassDistribution  # full prediction for the winning splice


def select_bug(
    word: WordSpan,
    doc: Document,
    label: str,
    classifier,
    table: EmbeddingTable,
    cfg: AttackConfig,
    rng: np.random.Generator,
    base_score: float | None = None,
) -> SelectedBug | None:
    """Try every candidate in place and keep the one that helps most.

    Untargeted runs maximize the drop of ``label``'s confidence; when
    ``cfg.targeted_label`` is set the gain of the target's confidence is
    maximized instead. Ties keep the earliest candidate in kind order
    (Insert < Delete < Swap < SubC < SubW, then lowest neighbor rank).
    Returns None when the word admits no scoreable candidate.
    """
    bugs = generate_bugs(word, table, cfg, rng)
    if not bugs:
        return None
    tracked = cfg.targeted_label if cfg.targeted_label is not None else label
    if base_score is None:
        base_score = classifier.predict(doc.raw).prob(tracked)
    best: SelectedBug | None = None
    for bug in bugs:
        candidate = doc.raw[: word.start] + bug.replacement + doc.raw[word.end :]
        if not has_words(candidate):
            continue  # splice left no words to classify
        dist = classifier.predict(candidate)
        if cfg.targeted_label is not None:
            value = dist.prob(tracked) - base_score
        else:
            value = base_score - dist.prob(tracked)
        if best is None or value > best.drop:
            best = SelectedBug(bug, value, dist)
    return best


def word_importances(
    doc: Document,
    label: str,
    model: LinearModel,
    table: EmbeddingTable,
    cfg: AttackConfig,
) -> np.ndarray:
    """White-box ranking scores, one per word.

    Default mode projects the class gradient onto each word's own vector,
    a first-order estimate of what removing the word's contribution does to
    the attacked confidence. In targeted mode the sign flips so that words
    suppressing the target class rank first. ``grad_norm`` mode ranks by
    gradient magnitude instead (degenerate under mean pooling, where the
    gradient is position-independent; kept as an explicit switch).
    """
    if label not in model.labels:
        raise ConfigError(f"label {label!r} unknown to the model")
    if cfg.targeted_label is not None:
        if cfg.targeted_label not in model.labels:
            raise ConfigError(f"target {cfg.targeted_label!r} unknown to the model")
        if cfg.targeted_label == label:
            raise ConfigError("targeted_label must differ from the attacked label")
        class_index = model.labels.index(cfg.targeted_label)
        sign = -1.0
    else:
        class_index = model.labels.index(label)
        sign = 1.0
    grad = model.gradient_wrt_word(doc, class_index, 0, table)
    if cfg.importance_mode == "grad_norm":
        return np.full(doc.word_count(), float(np.linalg.norm(grad)))
    scores = np.empty(doc.word_count())
    for i, w in enumerate(doc.words):
        scores[i] = sign * float(grad @ table.lookup_vector(w.surface, w.lower))
    return scores


class _CountingScorer:
    """Per-run wrapper: memoizes identical texts, enforces the query budget,
    and reports exactly how many predictions were issued downstream."""

    def __init__(self, inner, limit: int | None):
        self._inner = inner
        self._limit = limit
        self._cache: dict[str, ClassDistribution] = {}
        self.queries = 0

    def predict(self, text: str) -> ClassDistribution:
        hit = self._cache.get(text)
        if hit is not None:
            return hit
        if self._limit is not None and self.queries >= self._limit:
            raise BudgetExceededError(f"attack budget of {self._limit} exhausted")
        dist = self._inner.predict(text)
        self.queries += 1
        self._cache[text] = dist
        return dist


class _GreedyRun:
    """Shared engine state: the evolving document, per-original-word span
    tracking across splices, the trace, and outcome assembly."""

    def __init__(self, doc: Document, label: str, scorer: _CountingScorer,
                 table: EmbeddingTable, cfg: AttackConfig):
        self.original = doc
        self.label = label
        self.scorer = scorer
        self.table = table
        self.cfg = cfg
        self.doc = doc
        self.positions: list[tuple[int, int]] = [(w.start, w.end) for w in doc.words]
        self.perturbed_at: list[tuple[int, BugCandidate]] = []
        self.trace: list[TraceStep] = []
        self.initial: ClassDistribution | None = None
        self.current: ClassDistribution | None = None
        self.similarity = 1.0

    def start(self) -> ClassDistribution:
        self.initial = self.scorer.predict(self.original.raw)
        self.current = self.initial
        return self.initial

    def current_span(self, word_index: int) -> WordSpan:
        start, end = self.positions[word_index]
        surface = self.original.words[word_index].surface
        assert self.doc.raw[start:end] == surface
        return WordSpan(start, end, surface, surface.lower())

    def apply(
        self,
        word_index: int,
        bug: BugCandidate,
        dist: ClassDistribution | None,
        drop: float | None,
    ) -> None:
        """Splice the bug in, shift tracked spans, record the trace step.
        ``dist`` is the already-known prediction for the spliced text, or
        None when the step was applied without querying."""
        span = self.current_span(word_index)
        new_raw = (
            self.doc.raw[: span.start] + bug.replacement + self.doc.raw[span.end :]
        )
        delta = len(bug.replacement) - (span.end - span.start)
        for i, (s, e) in enumerate(self.positions):
            if s >= span.end and i != word_index:
                self.positions[i] = (s + delta, e + delta)
        self.positions[word_index] = (span.start, span.start + len(bug.replacement))
        self.doc = build_document(new_raw)
        self.perturbed_at.append((word_index, bug))
        if dist is not None:
            self.current = dist
        self.similarity = self.table.semantic_similarity(self.original, self.doc)
        self.trace.append(
            TraceStep(
                word_index=word_index,
                surface=span.surface,
                kind=bug.kind.value,
                replacement=bug.replacement,
                neighbor_rank=bug.neighbor_rank,
                drop=drop,
                label_after=None if dist is None else dist.top_label(),
                score_after=None if dist is None else dist.prob(self.label),
                similarity_after=self.similarity,
                queries_after=self.scorer.queries,
            )
        )

    def flipped(self) -> bool:
        assert self.current is not None
        if self.cfg.targeted_label is not None:
            return self.current.top_label() == self.cfg.targeted_label
        return self.current.top_label() != self.label

    def outcome(self, success: bool, stop_reason: str,
                label_mismatch: bool = False) -> AttackOutcome:
        dist = self.current if self.current is not None else self.initial
        final_label = dist.top_label() if dist is not None else self.label
        final_score = dist.prob(self.label) if dist is not None else None
        original_score = (
            self.initial.prob(self.label) if self.initial is not None else None
        )
        if self.doc.raw == self.original.raw:
            metrics = {"edit": 0.0, "jaccard": 1.0, "euclidean": 0.0, "semantic": 1.0}
        else:
            va = self.table.doc_vector(self.original)
            vb = self.table.doc_vector(self.doc)
            metrics = {
                "edit": float(levenshtein(self.original.raw, self.doc.raw)),
                "jaccard": jaccard(self.original, self.doc),
                "euclidean": euclidean(va, vb),
                "semantic": self.similarity,
            }
        perturbed = [
            PerturbedWord(
                word=self.original.words[i],
                bug=bug,
                adv_start=self.positions[i][0],
                adv_end=self.positions[i][1],
            )
            for i, bug in self.perturbed_at
        ]
        n = self.original.word_count()
        return AttackOutcome(
            success=success,
            original=self.original,
            adversarial=self.doc if success else None,
            original_label=self.label,
            final_label=final_label,
            original_score=original_score,
            final_score=final_score,
            perturbed_words=perturbed,
            perturbed_ratio=len(perturbed) / n if n else 0.0,
            queries=self.scorer.queries,
            metrics=metrics,
            trace=self.trace,
            stop_reason=stop_reason,
            label_mismatch=label_mismatch,
            word_count=n,
        )


def _begin(run: _GreedyRun) -> AttackOutcome | None:
    """Issue the initial prediction; short-circuit when the model already
    disagrees with the supplied label (the attack goal is met as-is)."""
    initial = run.start()
    if initial.top_label() != run.label:
        return run.outcome(True, "label_mismatch", label_mismatch=True)
    return None


def _tracked_score(run: _GreedyRun) -> float:
    tracked = run.cfg.targeted_label or run.label
    return run.current.prob(tracked)


def _greedy_over(run: _GreedyRun, word_order: list[int]) -> AttackOutcome | None:
    """Apply select-and-splice over the given word order. Returns an outcome
    when the run terminates (flip or gate), None when words ran out."""
    cfg = run.cfg
    for word_index in word_order:
        span = run.current_span(word_index)
        selected = select_bug(
            span,
            run.doc,
            run.label,
            run.scorer,
            run.table,
            cfg,
            _word_rng(cfg, span.surface),
            base_score=_tracked_score(run),
        )
        if selected is None:
            continue
        run.apply(word_index, selected.bug, selected.dist, selected.drop)
        if run.similarity <= cfg.epsilon:
            return run.outcome(False, "gate")
        if run.flipped():
            reason = "target_hit" if cfg.targeted_label else "label_flip"
            return run.outcome(True, reason)
    return None


def whitebox_attack(
    doc: Document,
    label: str,
    model: LinearModel,
    table: EmbeddingTable,
    cfg: AttackConfig,
) -> AttackOutcome:
    """Gradient-guided greedy attack against an in-process linear model.

    Words are ranked once by descending importance, then rewritten one by
    one until the prediction moves (success), the similarity gate trips
    (failure), or every word has been tried (failure).
    """
    scorer = _CountingScorer(ModelScorer(model, table), cfg.max_queries)
    run = _GreedyRun(doc, label, scorer, table, cfg)
    try:
        early = _begin(run)
        if early is not None:
            return early
        scores = word_importances(doc, label, model, table, cfg)
        order = sorted(range(doc.word_count()), key=lambda i: (-scores[i], i))
        done = _greedy_over(run, order)
        if done is not None:
            return done
        return run.outcome(False, "words_exhausted")
    except BudgetExceededError:
        return run.outcome(False, "budget")


def blackbox_attack(
    doc: Document,
    label: str,
    classifier,
    table: EmbeddingTable,
    cfg: AttackConfig,
) -> AttackOutcome:
    """Query-only greedy attack against anything answering predict().

    Sentences are scored standalone and visited by descending confidence in
    the attacked label (sentences the model labels differently are skipped
    entirely); within each sentence, words are ranked by the confidence drop
    caused by deleting them from the full current document.
    """
    if cfg.targeted_label is not None:
        raise ConfigError("targeted mode is only available to the white-box engine")
    scorer = _CountingScorer(classifier, cfg.max_queries)
    run = _GreedyRun(doc, label, scorer, table, cfg)
    try:
        early = _begin(run)
        if early is not None:
            return early

        sentence_scores: list[tuple[int, float]] = []
        for si, sentence in enumerate(doc.sentences):
            if not doc.words_in_sentence(si):
                continue
            dist = scorer.predict(sentence.text)
            if dist.top_label() != label:
                continue  # standalone prediction disagrees: drop the sentence
            sentence_scores.append((si, dist.prob(label)))
        if not sentence_scores:
            return run.outcome(False, "no_sentences")
        sentence_scores.sort(key=lambda t: (-t[1], t[0]))

        for si, _ in sentence_scores:
            word_indices = run.original.words_in_sentence(si)
            base = run.current.prob(label)
            deltas: list[tuple[int, float]] = []
            for wi in word_indices:
                if run.doc.word_count() <= 1:
                    deltas.append((wi, 0.0))
                    continue
                s, e = run.positions[wi]
                probe = run.doc.raw[:s] + run.doc.raw[e:]
                if not has_words(probe):
                    deltas.append((wi, 0.0))
                    continue
                deltas.append((wi, base - scorer.predict(probe).prob(label)))
            deltas.sort(key=lambda t: (-t[1], t[0]))
            done = _greedy_over(run, [wi for wi, _ in deltas])
            if done is not None:
                return done
        return run.outcome(False, "words_exhausted")
    except BudgetExceededError:
        return run.outcome(False, "budget")


def random_baseline(
    doc: Document,
    label: str,
    classifier,
    table: EmbeddingTable,
    cfg: AttackConfig,
) -> AttackOutcome:
    """Perturb a random tenth of each sentence's words (rounded up) with one
    random valid bug each; a single final prediction decides the result."""
    scorer = _CountingScorer(classifier, cfg.max_queries)
    run = _GreedyRun(doc, label, scorer, table, cfg)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x52414E44]))
    try:
        early = _begin(run)
        if early is not None:
            return early

        chosen: list[int] = []
        for si in range(len(doc.sentences)):
            word_indices = doc.words_in_sentence(si)
            if not word_indices:
                continue
            take = math.ceil(0.10 * len(word_indices))
            picks = rng.choice(len(word_indices), size=take, replace=False)
            chosen.extend(word_indices[int(p)] for p in picks)
        chosen.sort()

        for word_index in chosen:
            span = run.current_span(word_index)
            bugs = generate_bugs(span, table, cfg, _word_rng(cfg, span.surface))
            bugs = [
                b
                for b in bugs
                if has_words(
                    run.doc.raw[: span.start] + b.replacement + run.doc.raw[span.end :]
                )
            ]
            if not bugs:
                continue
            bug = bugs[int(rng.integers(len(bugs)))]
            run.apply(word_index, bug, dist=None, drop=None)

        final = scorer.predict(run.doc.raw)
        run.current = final
        success = final.top_label() != label and run.similarity > cfg.epsilon
        if success:
            return run.outcome(True, "label_flip")
        reason = "gate" if final.top_label() != label else "words_exhausted"
        return run.outcome(False, reason)
    except BudgetExceededError:
        return run.outcome(False, "budget")
