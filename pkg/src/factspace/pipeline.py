"""Glue between encoders, retrieval, and evaluation.

The artifact flow is: train a checkpoint, dump test-split embeddings as
JSON lines, run bidirectional retrieval over the dumps, then score the
ranked lists against the dataset annotations. Each stage reads only the
previous stage's files, so every step can be rerun and audited without
the model.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .cca import CcaModel, cca_embed
from .checkpoint import Checkpoint
from .embedding import FactEmbedding, average_spo
from .encoder import EncoderParams, forward_slots
from .errors import DatasetError, EmptyIndex, ValidationError
from .evaluation import (
    EvalReport,
    assemble_report,
    generalization_buckets,
    mean_reciprocal_rank,
    topk_language_accuracy,
    visual_view_map,
)
from .facts import (
    Dataset,
    StructuredFact,
    WildcardMask,
    fact_frequency_table,
    parse_fact,
    serialize_fact,
)
from .retrieval import EXACT, build_index, metric1_rank, query
from .words import LangNormalizer, WordTable, encode_language

STRUCTURED = "structured"
AVERAGED = "averaged"
FLAT = "flat"  # single-slot embeddings (CCA outputs, averaged ablation)

_EMBED_VERSION = 1
_RANKED_VERSION = 1


def language_targets(
    facts: Iterable[StructuredFact],
    table: WordTable,
    normalizer: LangNormalizer,
) -> dict[StructuredFact, FactEmbedding]:
    """Precompute language embeddings for a set of facts (fixed targets)."""
    return {fact: encode_language(fact, table, normalizer) for fact in facts}


def _flat_embedding(vector: np.ndarray) -> FactEmbedding:
    full = WildcardMask(True, True, True)
    return FactEmbedding(vector, np.zeros(0), np.zeros(0), full)


@dataclass
class EmbeddingSet:
    """Embeddings of both views for one split, plus how they were produced."""

    meta: dict
    language: list[tuple[StructuredFact, FactEmbedding]]
    visual: list[tuple[str, FactEmbedding]]


def embed_dataset(
    checkpoint: Checkpoint,
    dataset: Dataset,
    table: WordTable,
    representation: str = STRUCTURED,
    split: str = "test",
) -> EmbeddingSet:
    """Embed the unique facts and images of one split with a checkpoint.

    Images are embedded with the full mask (their fact order is unknown
    at query time). ``representation="averaged"`` replaces structured
    embeddings with the mean of their active slots; CCA checkpoints
    always produce flat canonical-space embeddings.
    """
    if representation not in (STRUCTURED, AVERAGED):
        raise ValidationError(f"unknown representation {representation!r}")
    facts = dataset.unique_facts(split)
    if not facts:
        raise ValidationError(f"no instances in split {split!r}")
    normalizer = checkpoint.normalizer

    image_feats: dict[str, np.ndarray] = {}
    for inst in dataset.split_instances(split):
        prev = image_feats.get(inst.image_id)
        if prev is not None and not np.array_equal(prev, inst.features):
            raise DatasetError(
                f"image {inst.image_id!r} appears with inconsistent features"
            )
        image_feats[inst.image_id] = inst.features

    lang_structured = {f: encode_language(f, table, normalizer) for f in facts}

    if checkpoint.kind == "cca":
        model = checkpoint.model
        assert isinstance(model, CcaModel)
        language = [
            (f, _flat_embedding(cca_embed(model, emb.concat(), "language")))
            for f, emb in lang_structured.items()
        ]
        feats = np.stack(list(image_feats.values()))
        projected = cca_embed(model, feats, "visual")
        visual = [
            (image_id, _flat_embedding(projected[i]))
            for i, image_id in enumerate(image_feats)
        ]
        rep = FLAT
    else:
        params = checkpoint.model
        assert isinstance(params, EncoderParams)
        feats = np.stack(list(image_feats.values()))
        vs, vp, vo, _ = forward_slots(params, feats)
        full = WildcardMask(True, True, True)
        visual = [
            (image_id, FactEmbedding(vs[i], vp[i], vo[i], full))
            for i, image_id in enumerate(image_feats)
        ]
        language = list(lang_structured.items())
        rep = STRUCTURED
        if representation == AVERAGED:
            language = [(f, _flat_embedding(average_spo(e))) for f, e in language]
            visual = [(i, _flat_embedding(average_spo(e))) for i, e in visual]
            rep = AVERAGED

    meta = {
        "version": _EMBED_VERSION,
        "model": checkpoint.kind,
        "representation": rep,
        "split": split,
        "seed": checkpoint.seed,
    }
    return EmbeddingSet(meta, language, visual)


def write_embeddings(embset: EmbeddingSet, path) -> None:
    """Dump an embedding set as JSON lines (header, then one entry per line)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(embset.meta, sort_keys=True) + "\n")
        for fact, emb in embset.language:
            rec = {
                "view": "language",
                "id": serialize_fact(fact),
                "order": fact.order(),
                "s": emb.s.tolist(),
                "p": emb.p.tolist(),
                "o": emb.o.tolist(),
                "mask": [int(f) for f in emb.mask.flags()],
            }
            fh.write(json.dumps(rec) + "\n")
        for image_id, emb in embset.visual:
            rec = {
                "view": "visual",
                "id": image_id,
                "s": emb.s.tolist(),
                "p": emb.p.tolist(),
                "o": emb.o.tolist(),
                "mask": [int(f) for f in emb.mask.flags()],
            }
            fh.write(json.dumps(rec) + "\n")


def read_embeddings(path) -> EmbeddingSet:
    language = []
    visual = []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline()
        try:
            meta = json.loads(header)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"{path}: bad embeddings header: {exc}") from exc
        if meta.get("version") != _EMBED_VERSION:
            raise ValidationError(f"unsupported embeddings version {meta.get('version')!r}")
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            mask = WildcardMask(*[bool(v) for v in rec["mask"]])
            emb = FactEmbedding(
                np.array(rec["s"]), np.array(rec["p"]), np.array(rec["o"]), mask
            )
            if rec["view"] == "language":
                language.append((parse_fact(rec["id"]), emb))
            else:
                visual.append((rec["id"], emb))
    return EmbeddingSet(meta, language, visual)


def _language_db_entries(embset: EmbeddingSet, order: int | None):
    if embset.meta["representation"] == STRUCTURED:
        return [(serialize_fact(f), e) for f, e in embset.language], order
    # Flat embeddings carry no per-slot structure; filter by fact order
    # here and build an unscoped index.
    kept = [
        (serialize_fact(f), e)
        for f, e in embset.language
        if order is None or f.order() == order
    ]
    return kept, None


def retrieve_language(
    embset: EmbeddingSet,
    metric: int,
    k: int = 100,
    mode: str = EXACT,
    seed: int = 0,
) -> list[dict]:
    """Rank facts for every test image.

    Metric 1 uses one all-orders database; metric 2 builds one database
    per fact order and queries each. Results are JSON-ready records.
    """
    if metric not in (1, 2):
        raise ValidationError(f"metric must be 1 or 2, got {metric!r}")
    full = WildcardMask(True, True, True)
    records = []
    orders: Sequence[int | None] = (None,) if metric == 1 else (1, 2, 3)
    for order in orders:
        entries, scope = _language_db_entries(embset, order)
        if not entries:
            continue
        try:
            index = build_index(
                entries,
                mode=mode,
                scope="all" if scope is None else scope,
                seed=seed,
            )
        except EmptyIndex:
            continue

        for image_id, emb in embset.visual:
            results = query(index, emb, k, query_mask=full)
            rec = {"query_id": image_id, "results": [[fid, d] for fid, d in results]}
            if metric == 2:
                rec["order"] = order
            records.append(rec)
    if not records:
        raise EmptyIndex("no language entries to rank")
    return records


def retrieve_visual(
    embset: EmbeddingSet,
    k: int = 100,
    mode: str = EXACT,
    seed: int = 0,
) -> list[dict]:
    """Rank test images for every test fact, ignoring the fact's wildcards."""
    index = build_index(
        [(image_id, e) for image_id, e in embset.visual], mode=mode, seed=seed
    )
    records = []
    for fact, emb in embset.language:
        mask = fact.mask() if embset.meta["representation"] == STRUCTURED else emb.mask
        results = query(index, emb, k, query_mask=mask)
        records.append(
            {"query_id": serialize_fact(fact), "results": [[iid, d] for iid, d in results]}
        )
    return records


def write_ranked(records: Sequence[dict], path, meta: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"version": _RANKED_VERSION, **meta}, sort_keys=True) + "\n")
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_ranked(path) -> tuple[dict, list[dict]]:
    with open(path, "r", encoding="utf-8") as fh:
        meta = json.loads(fh.readline())
        if meta.get("version") != _RANKED_VERSION:
            raise ValidationError(f"unsupported ranked-list version {meta.get('version')!r}")
        records = [json.loads(line) for line in fh if line.strip()]
    return meta, records


def _gt_by_image(dataset: Dataset) -> dict[str, list[StructuredFact]]:
    gt: dict[str, list[StructuredFact]] = {}
    for inst in dataset.test_instances():
        facts = gt.setdefault(inst.image_id, [])
        if inst.fact not in facts:
            facts.append(inst.fact)
    return gt


def _metric1_ranks(gt_facts, ranked_facts):
    return {fact: metric1_rank(fact, ranked_facts) for fact in gt_facts}


def _metric2_ranks(gt_facts, ranked_by_order):
    ranks = {}
    for fact in gt_facts:
        ranked = ranked_by_order.get(fact.order())
        position = math.inf
        if ranked is not None:
            for i, cand in enumerate(ranked, start=1):
                if cand == fact:
                    position = float(i)
                    break
        ranks[fact] = position
    return ranks


def evaluate(
    dataset: Dataset,
    language_records: Sequence[dict],
    visual_records: Sequence[dict],
    metric: int,
    metadata: dict | None = None,
) -> EvalReport:
    """Score ranked lists against the dataset annotations.

    Language-view top-K follows the L+K-1 rule over per-image groups
    (per image and order for metric 2); the visual view reports mAP with
    cutoffs 10 and 100. Bucketed K10 rates cover few-shot test facts.
    """
    if metric not in (1, 2):
        raise ValidationError(f"metric must be 1 or 2, got {metric!r}")
    gt = _gt_by_image(dataset)

    parse_cache: dict[str, StructuredFact] = {}

    def _facts_of(record) -> list[StructuredFact]:
        out = []
        for fact_str, _ in record["results"]:
            if fact_str not in parse_cache:
                parse_cache[fact_str] = parse_fact(fact_str)
            out.append(parse_cache[fact_str])
        return out

    # group key -> list of (fact, effective rank); groups follow the
    # L+K-1 unit: one per image (metric 1) or per image and order.
    groups: dict[tuple, dict[StructuredFact, float]] = {}
    if metric == 1:
        by_image = {rec["query_id"]: rec for rec in language_records}
        for image_id, facts in gt.items():
            rec = by_image.get(image_id)
            ranked = _facts_of(rec) if rec is not None else []
            ranks = _metric1_ranks(facts, ranked)
            for fact, rank in ranks.items():
                groups.setdefault((image_id, fact.order()), {})[fact] = rank
        units = {}
        for (image_id, order), ranks in groups.items():
            units.setdefault(image_id, {}).update(ranks)
        unit_groups = {(iid,): ranks for iid, ranks in units.items()}
    else:
        ranked_by_image: dict[str, dict[int, list[StructuredFact]]] = {}
        for rec in language_records:
            ranked_by_image.setdefault(rec["query_id"], {})[rec["order"]] = _facts_of(rec)
        for image_id, facts in gt.items():
            by_order = ranked_by_image.get(image_id, {})
            ranks = _metric2_ranks(facts, by_order)
            for fact, rank in ranks.items():
                groups.setdefault((image_id, fact.order()), {})[fact] = rank
        unit_groups = groups

    all_ranks = [r for ranks in groups.values() for r in ranks.values()]
    unit_rank_lists = [list(ranks.values()) for ranks in unit_groups.values()]
    language_section: dict = {
        "top1": topk_language_accuracy(unit_rank_lists, 1),
        "top5": topk_language_accuracy(unit_rank_lists, 5),
        "top10": topk_language_accuracy(unit_rank_lists, 10),
        "mrr": mean_reciprocal_rank(all_ranks),
        "n_images": len(gt),
        "n_groups": len(unit_groups),
        "n_gt_facts": len(all_ranks),
    }
    per_order = {}
    for order in (1, 2, 3):
        order_groups = [
            list(ranks.values()) for key, ranks in groups.items() if key[1] == order
        ]
        if not order_groups:
            continue
        order_ranks = [r for g in order_groups for r in g]
        per_order[str(order)] = {
            "top1": topk_language_accuracy(order_groups, 1),
            "top5": topk_language_accuracy(order_groups, 5),
            "top10": topk_language_accuracy(order_groups, 10),
            "mrr": mean_reciprocal_rank(order_ranks),
            "n_gt_facts": len(order_ranks),
        }
    language_section["per_order"] = per_order

    # K10 success per ground-truth occurrence, aggregated per fact for
    # the generalization buckets. L is the metric's own group size.
    outcome_hits: dict[StructuredFact, list[float]] = {}
    for ranks in unit_groups.values():
        bound = len(ranks) + 10 - 1
        for fact, rank in ranks.items():
            outcome_hits.setdefault(fact, []).append(1.0 if rank <= bound else 0.0)
    outcomes = {fact: sum(h) / len(h) for fact, h in outcome_hits.items()}

    positives: dict[str, set] = {}
    for inst in dataset.test_instances():
        positives.setdefault(serialize_fact(inst.fact), set()).add(inst.image_id)
    ranked_images = {
        rec["query_id"]: [r[0] for r in rec["results"]] for rec in visual_records
    }
    maps, skipped = visual_view_map(ranked_images, positives, cutoffs=(None, 10, 100))
    visual_section = {
        "map": 100.0 * maps[None],
        "map10": 100.0 * maps[10],
        "map100": 100.0 * maps[100],
        "n_queries": len(ranked_images),
        "n_skipped": skipped,
    }

    freq = fact_frequency_table(dataset)
    buckets = generalization_buckets(freq, outcomes)

    meta = dict(metadata or {})
    meta.setdefault("metric_family", metric)
    return assemble_report(meta, language_section, visual_section, buckets)
