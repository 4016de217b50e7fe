"""Corpus-level experiment harness: run an attack engine over a test set,
aggregate the results, and serialize them as a versioned JSON report that
can be recomputed from its own per-document records.

Reports are canonicalized with sorted keys. Wall-clock measurements are the
one non-reproducible part; ``canonical_json`` zeroes them so reruns with
identical seeds compare byte-for-byte.
"""

from __future__ import annotations

import copy
import json
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .attack import (
    AttackConfig,
    AttackOutcome,
    blackbox_attack,
    random_baseline,
    whitebox_attack,
)
from .classifiers import LinearModel, ModelScorer
from .embeddings import EmbeddingTable
from .errors import ConfigError, TransportError
from .textcore import build_document

__all__ = [
    "ExperimentReport",
    "run_experiment",
    "transfer_matrix",
    "length_breakdown",
    "verify_report",
]

REPORT_FORMAT_VERSION = 1
ENGINES = ("white", "black", "random")

_HISTOGRAM_BINS = 20


def _config_snapshot(cfg: AttackConfig) -> dict:
    return {
        "epsilon": cfg.epsilon,
        "top_k": cfg.top_k,
        "max_queries": cfg.max_queries,
        "seed": cfg.seed,
        "insert_max_len": cfg.insert_max_len,
        "swap_min_len": cfg.swap_min_len,
        "subc_map": dict(sorted(cfg.subc_map.items())),
        "enabled_kinds": sorted(k.value for k in cfg.enabled_kinds),
        "targeted_label": cfg.targeted_label,
        "importance_mode": cfg.importance_mode,
    }


class ExperimentReport:
    """Thin wrapper over the report's JSON-shaped dict."""

    def __init__(self, data: dict):
        self.data = data

    @property
    def aggregates(self) -> dict:
        return self.data["aggregates"]

    @property
    def outcomes(self) -> list[dict]:
        return self.data["outcomes"]

    @property
    def success_rate(self) -> float:
        return self.aggregates["success_rate"]

    def to_json(self) -> str:
        return json.dumps(self.data, sort_keys=True, indent=1)

    def canonical_json(self) -> str:
        """Deterministic serialization: timing measurements zeroed."""
        data = copy.deepcopy(self.data)
        data["timing"] = {k: 0.0 for k in data.get("timing", {})}
        for entry in data.get("outcomes", []):
            if "time_s" in entry:
                entry["time_s"] = 0.0
        return json.dumps(data, sort_keys=True, indent=1)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "ExperimentReport":
        with open(path, encoding="utf-8") as fh:
            return cls(json.load(fh))

    def successful_adversarial(self) -> list[tuple[str, str]]:
        """(original label, adversarial text) pairs for real successes."""
        return [
            (entry["original_label"], entry["adversarial_text"])
            for entry in self.outcomes
            if entry.get("success")
            and not entry.get("label_mismatch")
            and entry.get("adversarial_text") is not None
        ]


def _histogram(values: list[float], lo: float, hi: float) -> dict:
    if not values:
        return {"bin_edges": [], "counts": []}
    hi = max(hi, float(max(values)), lo + 1e-9)
    counts, edges = np.histogram(values, bins=_HISTOGRAM_BINS, range=(lo, hi))
    return {"bin_edges": [float(e) for e in edges], "counts": [int(c) for c in counts]}


def _attack_one(engine, doc, label, model, classifier, table, cfg) -> AttackOutcome:
    if engine == "white":
        return whitebox_attack(doc, label, model, table, cfg)
    if engine == "black":
        return blackbox_attack(doc, label, classifier, table, cfg)
    return random_baseline(doc, label, classifier, table, cfg)


def _aggregate(entries: list[dict]) -> tuple[dict, dict, list, dict]:
    attempted = [
        e for e in entries if e.get("error") is None and not e.get("label_mismatch")
    ]
    successes = [e for e in attempted if e["success"]]
    ratios = [e["perturbed_ratio"] for e in successes]
    agg = {
        "total_documents": len(entries),
        "attempted": len(attempted),
        "skipped_misclassified": sum(
            1 for e in entries if e.get("label_mismatch") and e.get("error") is None
        ),
        "transport_errors": sum(1 for e in entries if e.get("error") == "transport"),
        "other_errors": sum(
            1
            for e in entries
            if e.get("error") is not None and e.get("error") != "transport"
        ),
        "successes": len(successes),
        "success_rate": len(successes) / len(attempted) if attempted else 0.0,
        "mean_perturbed_ratio": statistics.fmean(ratios) if ratios else None,
        "median_perturbed_ratio": statistics.median(ratios) if ratios else None,
        "mean_queries": (
            statistics.fmean(e["queries"] for e in attempted) if attempted else None
        ),
        "total_queries": sum(
            e["queries"] for e in entries if e.get("error") is None
        ),
    }
    histograms = {
        "edit": _histogram([e["metrics"]["edit"] for e in attempted], 0.0, 1.0),
        "jaccard": _histogram([e["metrics"]["jaccard"] for e in attempted], 0.0, 1.0),
        "euclidean": _histogram(
            [e["metrics"]["euclidean"] for e in attempted], 0.0, 1.0
        ),
        "semantic": _histogram(
            [e["metrics"]["semantic"] for e in attempted], -1.0, 1.0
        ),
    }
    score_shift = [
        [e["original_score"], e["final_score"]] for e in attempted
    ]
    kind_counts: dict[str, int] = {}
    for e in attempted:
        for p in e["perturbed_words"]:
            kind_counts[p["kind"]] = kind_counts.get(p["kind"], 0) + 1
    total_bugs = sum(kind_counts.values())
    bug_kinds = {
        "counts": dict(sorted(kind_counts.items())),
        "fractions": {
            k: v / total_bugs for k, v in sorted(kind_counts.items())
        }
        if total_bugs
        else {},
    }
    return agg, histograms, score_shift, bug_kinds


def run_experiment(
    corpus: list[tuple[str, str]],
    engine: str,
    cfg: AttackConfig,
    table: EmbeddingTable,
    model: LinearModel | None = None,
    classifier=None,
    workers: int = 1,
    repeats: int = 1,
    context: dict | None = None,
) -> ExperimentReport:
    """Attack every document in ``corpus`` and aggregate the outcomes.

    Documents the target already misclassifies are counted as skipped, not
    attempted; per-document transport failures are recorded and do not abort
    the run. ``repeats`` > 1 reruns the whole sweep with derived seeds and
    pools the outcomes (each entry carries its repeat index). Deterministic
    given the seed; worker count does not change the result.
    """
    if engine not in ENGINES:
        raise ConfigError(f"unknown engine {engine!r}; expected one of {ENGINES}")
    if not corpus:
        raise ConfigError("corpus is empty")
    if engine == "white" and model is None:
        raise ConfigError("white-box engine needs a local model")
    if engine in ("black", "random") and classifier is None:
        if model is None:
            raise ConfigError(f"{engine} engine needs a classifier or a model")
        classifier = ModelScorer(model, table)
    if workers < 1 or repeats < 1:
        raise ConfigError("workers and repeats must be >= 1")

    jobs = []
    for rep in range(repeats):
        rep_cfg = cfg if repeats == 1 else replace(cfg, seed=cfg.seed + rep)
        for idx, (label, text) in enumerate(corpus):
            jobs.append((rep, idx, label, text, rep_cfg))

    def run_job(job) -> dict:
        rep, idx, label, text, rep_cfg = job
        entry: dict = {"doc_id": idx, "repeat": rep, "error": None}
        started = time.perf_counter()
        try:
            doc = build_document(text)
            outcome = _attack_one(engine, doc, label, model, classifier, table, rep_cfg)
            entry.update(outcome.to_dict())
        except TransportError as exc:
            entry.update(
                {"error": "transport", "error_detail": str(exc), "original_label": label}
            )
        except ValueError as exc:
            entry.update(
                {"error": "invalid_document", "error_detail": str(exc), "original_label": label}
            )
        entry["time_s"] = time.perf_counter() - started
        return entry

    wall_start = time.perf_counter()
    if workers == 1:
        entries = [run_job(j) for j in jobs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            entries = list(pool.map(run_job, jobs))
    entries.sort(key=lambda e: (e["repeat"], e["doc_id"]))
    total_time = time.perf_counter() - wall_start

    agg, histograms, score_shift, bug_kinds = _aggregate(entries)
    valid_times = [e["time_s"] for e in entries if e.get("error") is None]
    data = {
        "version": REPORT_FORMAT_VERSION,
        "engine": engine,
        "config": _config_snapshot(cfg),
        "repeats": repeats,
        "workers": workers,
        "context": dict(context or {}),
        "notes": {
            "perturbed_ratio_denominator": "original word count",
            "perturbed_ratio_population": "successes only",
            "score_shift_population": "all attempted documents, failures included",
        },
        "aggregates": agg,
        "histograms": histograms,
        "score_shift": score_shift,
        "bug_kind_distribution": bug_kinds,
        "outcomes": entries,
        "timing": {
            "total_time_s": total_time,
            "mean_time_per_doc_s": (
                statistics.fmean(valid_times) if valid_times else 0.0
            ),
        },
    }
    return ExperimentReport(data)


def transfer_matrix(
    sources: dict[str, list[tuple[str, str]]],
    targets: list[tuple[str, object]],
) -> dict[str, dict[str, float | None]]:
    """Cross-model success rates.

    ``sources`` maps a source name to (true label, adversarial text) pairs;
    ``targets`` pairs a name with any predict()-capable classifier. A cell
    is the fraction of the source's texts the target misclassifies, or None
    for an empty source.
    """
    matrix: dict[str, dict[str, float | None]] = {}
    for source_name, pairs in sources.items():
        row: dict[str, float | None] = {}
        for target_name, scorer in targets:
            if not pairs:
                row[target_name] = None
                continue
            fooled = sum(
                scorer.predict(text).top_label() != label for label, text in pairs
            )
            row[target_name] = fooled / len(pairs)
        matrix[source_name] = row
    return matrix


def length_breakdown(
    report: ExperimentReport, buckets: list[tuple[int, int]]
) -> dict[str, dict]:
    """Group attempted outcomes by original word count into [lo, hi) buckets.
    Buckets that catch no documents are absent from the result."""
    out: dict[str, dict] = {}
    attempted = [
        e
        for e in report.outcomes
        if e.get("error") is None and not e.get("label_mismatch")
    ]
    for lo, hi in buckets:
        rows = [e for e in attempted if lo <= e["word_count"] < hi]
        if not rows:
            continue
        successes = [e for e in rows if e["success"]]
        out[f"{lo}-{hi}"] = {
            "count": len(rows),
            "success_rate": len(successes) / len(rows),
            "mean_time_s": statistics.fmean(e["time_s"] for e in rows),
            "mean_perturbed_words": statistics.fmean(
                len(e["perturbed_words"]) for e in rows
            ),
            "mean_semantic": statistics.fmean(
                e["metrics"]["semantic"] for e in rows
            ),
        }
    return out


def _close(a, b) -> bool:
    if a is None or b is None:
        return a is b
    return abs(a - b) <= 1e-9


def verify_report(report: ExperimentReport) -> list[str]:
    """Recompute every aggregate from the embedded outcomes; returns the
    list of discrepancies (empty means self-consistent)."""
    problems: list[str] = []
    agg, histograms, score_shift, bug_kinds = _aggregate(report.outcomes)
    stored = report.aggregates
    for key, value in agg.items():
        if key not in stored:
            problems.append(f"aggregate {key} missing")
        elif isinstance(value, float) or isinstance(stored.get(key), float):
            if not _close(stored[key], value):
                problems.append(f"aggregate {key}: stored {stored[key]} != {value}")
        elif stored[key] != value:
            problems.append(f"aggregate {key}: stored {stored[key]} != {value}")
    if report.data.get("score_shift") != score_shift:
        problems.append("score_shift does not match outcomes")
    stored_hist = report.data.get("histograms", {})
    for name, hist in histograms.items():
        if stored_hist.get(name) != hist:
            problems.append(f"histogram {name} does not match outcomes")
    stored_kinds = report.data.get("bug_kind_distribution", {})
    if stored_kinds.get("counts") != bug_kinds["counts"]:
        problems.append("bug kind counts do not match outcomes")
    fractions = bug_kinds["fractions"]
    if fractions and abs(sum(fractions.values()) - 1.0) > 1e-9:
        problems.append("bug kind fractions do not sum to 1")
    return problems
