"""Embedding databases and bidirectional nearest-neighbor queries.

Distances are masked: only the slots active in the query's wildcard mask
enter the sum, so a <S,P> query ignores whatever lives in the O slot on
either side. Exact mode scans all entries and is the normative reference;
approximate mode uses a small random-projection-tree forest whose recall
is measured against exact mode in the tests.

Two ranking protocols are provided: metric 1 ranks in a single
all-orders database and does not penalize retrieved facts that are
strict specializations of the ground truth; metric 2 ranks within a
separate database per fact order.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Hashable, Mapping, Sequence

import numpy as np

from .embedding import FactEmbedding
from .errors import EmptyIndex, ShapeError, ValidationError
from .facts import StructuredFact, WildcardMask

EXACT = "exact"
APPROXIMATE = "approximate"
ALL_ORDERS = "all"

_INDEX_VERSION = 1


def masked_distance(a: FactEmbedding, b: FactEmbedding, query_mask: WildcardMask) -> float:
    """Sum of squared slot distances over the slots active in query_mask.

    With the full mask this equals the squared euclidean distance between
    the two concatenations, so rankings agree with plain euclidean on the
    zero-masked concatenated vectors.
    """
    total = 0.0
    for a_slot, b_slot, active in zip((a.s, a.p, a.o), (b.s, b.p, b.o), query_mask.flags()):
        if not active:
            continue
        if a_slot.shape != b_slot.shape:
            raise ShapeError(f"slot widths differ: {a_slot.shape} vs {b_slot.shape}")
        diff = a_slot - b_slot
        total += float(np.dot(diff, diff))
    return total


def _active_columns(slot_dims: tuple[int, int, int], query_mask: WildcardMask) -> np.ndarray:
    starts = np.concatenate([[0], np.cumsum(slot_dims)])
    cols = [
        np.arange(starts[i], starts[i + 1])
        for i, active in enumerate(query_mask.flags())
        if active
    ]
    return np.concatenate(cols) if cols else np.empty(0, dtype=int)


def _build_tree(rng, matrix, indices, leaf_size, depth=0):
    if len(indices) <= leaf_size or depth >= 32:
        return ("leaf", indices)
    direction = rng.standard_normal(matrix.shape[1])
    direction /= np.linalg.norm(direction)
    proj = matrix[indices] @ direction
    threshold = float(np.median(proj))
    left = indices[proj <= threshold]
    right = indices[proj > threshold]
    if len(left) == 0 or len(right) == 0:
        return ("leaf", indices)
    return (
        "split",
        direction,
        threshold,
        _build_tree(rng, matrix, left, leaf_size, depth + 1),
        _build_tree(rng, matrix, right, leaf_size, depth + 1),
    )


def _tree_leaf(node, vector):
    while node[0] == "split":
        _, direction, threshold, left, right = node
        node = left if float(vector @ direction) <= threshold else right
    return node[1]


@dataclass
class EmbeddingIndex:
    """Immutable, queryable store of (id, FactEmbedding) entries."""

    ids: tuple[Hashable, ...]
    embeddings: tuple[FactEmbedding, ...]
    slot_dims: tuple[int, int, int]
    mode: str
    scope: object  # ALL_ORDERS or an order in {1, 2, 3}
    seed: int | None = None
    target_recall: float | None = None
    n_trees: int = 48
    leaf_size: int = 64
    matrix: np.ndarray | None = None
    trees: list | None = None

    def __len__(self) -> int:
        return len(self.ids)


def build_index(
    entries: Sequence[tuple[Hashable, FactEmbedding]],
    mode: str = EXACT,
    scope=ALL_ORDERS,
    seed: int = 0,
    target_recall: float = 0.95,
    n_trees: int = 48,
    leaf_size: int = 64,
) -> EmbeddingIndex:
    """Build an exact or approximate index over embedding entries.

    A single-order scope keeps only entries whose mask matches that
    order. Exact mode guarantees true nearest neighbors; approximate
    mode records its construction seed so rebuilds are identical.
    """
    if mode not in (EXACT, APPROXIMATE):
        raise ValidationError(f"unknown index mode {mode!r}")
    if scope != ALL_ORDERS and scope not in (1, 2, 3):
        raise ValidationError(f"scope must be 'all' or an order in 1..3, got {scope!r}")
    kept = [
        (eid, emb) for eid, emb in entries
        if scope == ALL_ORDERS or emb.mask.order() == scope
    ]
    if not kept:
        raise EmptyIndex(f"no embeddings match scope {scope!r}")
    slot_dims = kept[0][1].slot_dims()
    for eid, emb in kept:
        if emb.slot_dims() != slot_dims:
            raise ShapeError(
                f"entry {eid!r} has slot dims {emb.slot_dims()}, expected {slot_dims}"
            )
    matrix = np.stack([emb.concat() for _, emb in kept])
    index = EmbeddingIndex(
        ids=tuple(eid for eid, _ in kept),
        embeddings=tuple(emb for _, emb in kept),
        slot_dims=slot_dims,
        mode=mode,
        scope=scope,
        seed=seed if mode == APPROXIMATE else None,
        target_recall=target_recall if mode == APPROXIMATE else None,
        n_trees=n_trees,
        leaf_size=leaf_size,
        matrix=matrix,
    )
    if mode == APPROXIMATE:
        rng = np.random.default_rng(seed)
        all_idx = np.arange(len(kept))
        index.trees = [
            _build_tree(rng, matrix, all_idx, leaf_size) for _ in range(n_trees)
        ]
    return index


def query(
    index: EmbeddingIndex,
    probe: FactEmbedding,
    k: int,
    query_mask: WildcardMask | None = None,
) -> list[tuple[Hashable, float]]:
    """Top-k entries by masked distance, ascending; ties keep insertion order.

    ``query_mask`` defaults to the probe's own mask. If k exceeds the
    index size the full ranking is returned.
    """
    if k < 1:
        raise ValidationError("k must be >= 1")
    if len(index) == 0:
        raise EmptyIndex("index holds no entries")
    mask = query_mask if query_mask is not None else probe.mask
    vector = probe.concat()
    if vector.shape[0] != index.matrix.shape[1]:
        raise ShapeError(
            f"probe width {vector.shape[0]} != index width {index.matrix.shape[1]}"
        )
    cols = _active_columns(index.slot_dims, mask)
    if index.mode == EXACT:
        cand = np.arange(len(index))
    else:
        hit = set()
        for tree in index.trees:
            hit.update(_tree_leaf(tree, vector).tolist())
        cand = np.array(sorted(hit), dtype=int)
    diffs = index.matrix[np.ix_(cand, cols)] - vector[cols]
    dists = np.einsum("ij,ij->i", diffs, diffs)
    order = np.argsort(dists, kind="stable")[: min(k, len(cand))]
    return [(index.ids[cand[i]], float(dists[i])) for i in order]


def is_strict_specialization(candidate: StructuredFact, gt: StructuredFact) -> bool:
    """True when candidate refines gt by adding modifiers it left wild."""
    if gt.order() == 1:
        return candidate.order() > 1 and candidate.subject == gt.subject
    if gt.order() == 2:
        return (
            candidate.order() == 3
            and candidate.subject == gt.subject
            and candidate.predicate == gt.predicate
        )
    return False


def metric1_rank(gt_fact: StructuredFact, ranked_facts: Sequence[StructuredFact]) -> float:
    """Effective rank in an all-orders ranked fact list.

    Retrieved facts that are strict specializations of the ground truth
    are deleted rather than counted, so <car, red> ahead of <car> costs
    nothing. Returns math.inf when the ground truth is absent.
    """
    rank = 0
    for fact in ranked_facts:
        if is_strict_specialization(fact, gt_fact):
            continue
        rank += 1
        if fact == gt_fact:
            return float(rank)
    return math.inf


def metric2_rank(
    gt_fact: StructuredFact,
    per_order_lists: Mapping[int, Sequence[StructuredFact]],
) -> float:
    """Plain rank of the ground truth within the list of its own order."""
    ranked = per_order_lists.get(gt_fact.order(), ())
    for position, fact in enumerate(ranked, start=1):
        if fact == gt_fact:
            return float(position)
    return math.inf


def save_index(index: EmbeddingIndex, path) -> None:
    """Persist an index; approximate forests are rebuilt from the seed on load."""
    orders = np.array([emb.mask.order() for emb in index.embeddings], dtype=np.int64)
    meta = {
        "version": _INDEX_VERSION,
        "mode": index.mode,
        "scope": index.scope,
        "seed": index.seed,
        "target_recall": index.target_recall,
        "n_trees": index.n_trees,
        "leaf_size": index.leaf_size,
        "slot_dims": list(index.slot_dims),
        "ids": list(index.ids),
    }
    with open(path, "wb") as fh:
        np.savez(fh, matrix=index.matrix, orders=orders, meta=json.dumps(meta))


def load_index(path) -> EmbeddingIndex:
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        if meta.get("version") != _INDEX_VERSION:
            raise ValidationError(f"unsupported index version {meta.get('version')!r}")
        matrix = data["matrix"]
        orders = data["orders"]
    slot_dims = tuple(meta["slot_dims"])
    starts = np.concatenate([[0], np.cumsum(slot_dims)])
    embeddings = []
    for row, order in zip(matrix, orders):
        slots = [row[starts[i]: starts[i + 1]] for i in range(3)]
        embeddings.append(
            FactEmbedding(slots[0], slots[1], slots[2], WildcardMask.from_order(int(order)))
        )
    entries = list(zip(meta["ids"], embeddings))
    scope = meta["scope"] if meta["scope"] == ALL_ORDERS else int(meta["scope"])
    return build_index(
        entries,
        mode=meta["mode"],
        scope=scope,
        seed=meta["seed"] if meta["seed"] is not None else 0,
        target_recall=meta["target_recall"] if meta["target_recall"] is not None else 0.95,
        n_trees=meta["n_trees"],
        leaf_size=meta["leaf_size"],
    )
