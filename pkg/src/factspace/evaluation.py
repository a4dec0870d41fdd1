"""Retrieval evaluation: top-K accuracy, MRR, mAP variants, and buckets.

Language-view accuracy uses the L+K-1 rule: an image (or image/order
group under metric 2) with L ground-truth facts is a top-K success only
when every one of them ranks within the top L+K-1. An infinite rank
(ground truth outside the retrieved list) always fails and contributes
zero reciprocal rank.
"""

from __future__ import annotations

import csv
import io
import json
import math
import warnings
from dataclasses import dataclass
from typing import Hashable, Mapping, Sequence

from .errors import UndefinedMetric, ValidationError
from .facts import FrequencyTable, StructuredFact


def average_precision(
    ranked_ids: Sequence[Hashable],
    relevant_ids: set,
    cutoff: int | None = None,
) -> float:
    """Mean precision-at-hit over the relevant items within the cutoff.

    With a cutoff the denominator is min(|relevant|, cutoff), so a query
    whose relevant items all sit beyond the cutoff scores zero.
    """
    if not relevant_ids:
        raise UndefinedMetric("average precision is undefined with no relevant items")
    considered = ranked_ids if cutoff is None else ranked_ids[:cutoff]
    hits = 0
    precision_sum = 0.0
    for position, item in enumerate(considered, start=1):
        if item in relevant_ids:
            hits += 1
            precision_sum += hits / position
    denom = len(relevant_ids) if cutoff is None else min(len(relevant_ids), cutoff)
    return precision_sum / denom


def topk_language_accuracy(rank_groups: Sequence[Sequence[float]], k: int) -> float:
    """Percent of groups whose every rank satisfies the L+K-1 rule.

    Each group holds the effective ranks of one image's ground-truth
    facts (one image/order pair under metric 2); L is the group size.
    """
    if k < 1:
        raise ValidationError("k must be >= 1")
    if not rank_groups:
        return 0.0
    successes = 0
    for ranks in rank_groups:
        if not ranks:
            raise ValidationError("rank groups must be non-empty")
        bound = len(ranks) + k - 1
        if all(r <= bound for r in ranks):
            successes += 1
    return 100.0 * successes / len(rank_groups)


def mean_reciprocal_rank(ranks: Sequence[float]) -> float:
    """Mean of 1/rank as a percent; infinite ranks contribute zero."""
    if not ranks:
        return 0.0
    total = sum(0.0 if math.isinf(r) else 1.0 / r for r in ranks)
    return 100.0 * total / len(ranks)


def visual_view_map(
    ranked: Mapping[Hashable, Sequence[Hashable]],
    positives: Mapping[Hashable, set],
    cutoffs: Sequence[int | None] = (None, 10, 100),
) -> tuple[dict, int]:
    """Mean average precision over query facts, one value per cutoff.

    Queries with no positive images are skipped; the skip count is
    returned so reports stay auditable.
    """
    sums = {c: 0.0 for c in cutoffs}
    used = 0
    skipped = 0
    for query_id, ranked_ids in ranked.items():
        relevant = positives.get(query_id, set())
        if not relevant:
            skipped += 1
            continue
        used += 1
        for c in cutoffs:
            sums[c] += average_precision(ranked_ids, relevant, cutoff=c)
    if skipped:
        warnings.warn(f"{skipped} queries had no positive images and were skipped")
    means = {c: (sums[c] / used if used else 0.0) for c in cutoffs}
    return means, skipped


# Generalization cases: pairs of component-marginal thresholds for SPO
# facts with at most 5 training examples, plus the all-component variants.
SPO_BUCKET_CASES: tuple[tuple[str, dict], ...] = (
    ("sp>=15,o>=15", {"sp": 15, "o": 15}),
    ("po>=15,s>=15", {"po": 15, "s": 15}),
    ("so>=15,p>=15", {"so": 15, "p": 15}),
    ("sp>=15,po>=15", {"sp": 15, "po": 15}),
    ("so>=15,po>=15", {"so": 15, "po": 15}),
    ("so>=15,sp>=15", {"so": 15, "sp": 15}),
    ("s,p,o>=15", {"s": 15, "p": 15, "o": 15}),
    ("s,p,o>=100", {"s": 100, "p": 100, "o": 100}),
)
SP_BUCKET_CASE: tuple[str, dict] = ("sp-facts:s>=15,p>=15", {"s": 15, "p": 15})
FEW_SHOT_MAX_TRAIN = 5


@dataclass(frozen=True)
class BucketResult:
    name: str
    size: int
    k10: float | None  # None renders as "n/a" (empty bucket)


def _marginal(freq: FrequencyTable, fact: StructuredFact, component: str) -> int:
    return getattr(freq, component)(fact)


def generalization_buckets(
    freq: FrequencyTable,
    outcomes: Mapping[StructuredFact, float],
) -> list[BucketResult]:
    """Bucketed K10 rates for few-shot test facts with well-seen components.

    ``outcomes`` maps each evaluated test fact to its K10 success rate in
    [0, 1] (fraction of its test occurrences satisfying the L+K-1 rule at
    K=10). Buckets select facts with <= 5 training examples whose named
    marginals meet the thresholds; empty buckets report a null rate.
    """
    results = []
    few_shot_spo = [
        fact for fact in outcomes
        if fact.order() == 3 and freq.count(fact) <= FEW_SHOT_MAX_TRAIN
    ]
    for name, thresholds in SPO_BUCKET_CASES:
        members = [
            fact for fact in few_shot_spo
            if all(_marginal(freq, fact, comp) >= bound for comp, bound in thresholds.items())
        ]
        rate = 100.0 * sum(outcomes[f] for f in members) / len(members) if members else None
        results.append(BucketResult(name, len(members), rate))

    name, thresholds = SP_BUCKET_CASE
    members = [
        fact for fact in outcomes
        if fact.order() == 2
        and freq.count(fact) <= FEW_SHOT_MAX_TRAIN
        and all(_marginal(freq, fact, comp) >= bound for comp, bound in thresholds.items())
    ]
    rate = 100.0 * sum(outcomes[f] for f in members) / len(members) if members else None
    results.append(BucketResult(name, len(members), rate))
    return results


@dataclass(frozen=True)
class EvalReport:
    """All metrics of one evaluation run plus the metadata that produced it."""

    metadata: dict
    language: dict
    visual: dict
    buckets: tuple[BucketResult, ...] = ()

    def to_dict(self) -> dict:
        return {
            "metadata": self.metadata,
            "language": self.language,
            "visual": self.visual,
            "buckets": [
                {"name": b.name, "size": b.size, "k10": b.k10} for b in self.buckets
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, data: dict) -> "EvalReport":
        buckets = tuple(
            BucketResult(b["name"], b["size"], b["k10"]) for b in data.get("buckets", [])
        )
        return cls(data["metadata"], data["language"], data["visual"], buckets)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        return cls.from_dict(json.loads(text))

    def buckets_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["bucket", "size", "k10"])
        for b in self.buckets:
            writer.writerow([b.name, b.size, "n/a" if b.k10 is None else repr(b.k10)])
        return buf.getvalue()


def assemble_report(
    metadata: dict,
    language: dict,
    visual: dict,
    buckets: Sequence[BucketResult] = (),
) -> EvalReport:
    """Bundle metric outputs after checking rates and totals are coherent."""
    for section in (language, visual):
        for key, value in section.items():
            if key.startswith(("top", "mrr", "map")) and isinstance(value, (int, float)):
                if not 0.0 <= value <= 100.0 + 1e-9:
                    raise ValidationError(f"metric {key}={value} outside [0, 100]")
    per_order = language.get("per_order", {})
    if per_order and "n_gt_facts" in language:
        total = sum(stats.get("n_gt_facts", 0) for stats in per_order.values())
        if total != language["n_gt_facts"]:
            raise ValidationError(
                f"per-order gt counts sum to {total}, expected {language['n_gt_facts']}"
            )
    return EvalReport(metadata, language, visual, tuple(buckets))
