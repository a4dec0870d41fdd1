"""Structured facts, wildcard masks, dataset records, and dataset file I/O.

A fact is a subject with optional predicate and object modifiers:
``<S>``, ``<S,P>``, or ``<S,P,O>``. Lower orders carry wildcards in the
unspecified slots; those slots are excluded from losses and distances
elsewhere in the package.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterator, Mapping

import numpy as np

from .errors import BadFeatureDim, DatasetError, DuplicatePair, MalformedFact

Tokens = tuple[str, ...]


def normalize_component(component) -> Tokens:
    """Normalize one fact component into a token tuple.

    Accepts a phrase string or an iterable of tokens. Lowercases,
    splits underscores and whitespace, and drops empty pieces, so
    "sitting_on" and "Sitting On" both become ("sitting", "on").
    """
    if isinstance(component, str):
        pieces = [component]
    else:
        pieces = [str(t) for t in component]
    tokens: list[str] = []
    for piece in pieces:
        for tok in piece.replace("_", " ").lower().split():
            tokens.append(tok)
    return tuple(tokens)


@dataclass(frozen=True)
class WildcardMask:
    """0/1 activity flags for the S, P, O slots of a fact embedding.

    The subject slot is always active and an active object requires an
    active predicate, so only the three per-order patterns exist.
    """

    s_active: bool = True
    p_active: bool = False
    o_active: bool = False

    def __post_init__(self):
        if not self.s_active:
            raise MalformedFact("subject slot must always be active")
        if self.o_active and not self.p_active:
            raise MalformedFact("active object slot requires an active predicate slot")

    @classmethod
    def from_order(cls, order: int) -> "WildcardMask":
        if order not in (1, 2, 3):
            raise MalformedFact(f"fact order must be 1, 2, or 3, got {order}")
        return cls(True, order >= 2, order == 3)

    def order(self) -> int:
        return 1 + int(self.p_active) + int(self.o_active)

    def flags(self) -> tuple[bool, bool, bool]:
        return (self.s_active, self.p_active, self.o_active)

    def weights(self) -> np.ndarray:
        """Loss weights (1 for active slots, 0 for wildcards)."""
        return np.array(self.flags(), dtype=np.float64)


_RESERVED_CHARS = set("|,<>*_")


def _check_tokens(tokens: Tokens, slot: str) -> None:
    for tok in tokens:
        bad = (
            not tok
            or tok != tok.lower()
            or any(c.isspace() or c in _RESERVED_CHARS for c in tok)
        )
        if bad:
            raise MalformedFact(f"{slot} token {tok!r} is not normalized")


@dataclass(frozen=True)
class StructuredFact:
    """A language-view fact: subject plus optional predicate and object.

    Token tuples must already be normalized (see ``normalize_component``);
    use ``from_components`` or ``parse_fact`` to build facts from raw text.
    """

    subject: Tokens
    predicate: Tokens | None = None
    object: Tokens | None = None

    def __post_init__(self):
        object.__setattr__(self, "subject", tuple(self.subject))
        if self.predicate is not None:
            object.__setattr__(self, "predicate", tuple(self.predicate))
        if self.object is not None:
            object.__setattr__(self, "object", tuple(self.object))
        if not self.subject:
            raise MalformedFact("fact subject must be non-empty")
        if self.object is not None and self.predicate is None:
            raise MalformedFact("object without predicate: <S,*,O> facts do not exist")
        if self.predicate is not None and not self.predicate:
            raise MalformedFact("predicate present but empty")
        if self.object is not None and not self.object:
            raise MalformedFact("object present but empty")
        _check_tokens(self.subject, "subject")
        if self.predicate is not None:
            _check_tokens(self.predicate, "predicate")
        if self.object is not None:
            _check_tokens(self.object, "object")

    @classmethod
    def from_components(cls, subject, predicate=None, object=None) -> "StructuredFact":
        """Build a fact from raw strings/token lists, normalizing each part.

        Empty components (after normalization) are treated as absent.
        """
        s = normalize_component(subject)
        p = normalize_component(predicate) if predicate is not None else ()
        o = normalize_component(object) if object is not None else ()
        return cls(s, p or None, o or None)

    def order(self) -> int:
        return 1 + int(self.predicate is not None) + int(self.object is not None)

    def mask(self) -> WildcardMask:
        return WildcardMask.from_order(self.order())

    def components(self) -> tuple[Tokens | None, Tokens | None, Tokens | None]:
        return (self.subject, self.predicate, self.object)

    def __str__(self) -> str:
        return serialize_fact(self)


def fact_order(fact: StructuredFact) -> int:
    """Order of a fact: 1 for <S>, 2 for <S,P>, 3 for <S,P,O>."""
    return fact.order()


def parse_fact(text: str) -> StructuredFact:
    """Parse ``<S[,P[,O]]>`` or pipe-delimited ``S|P|O`` text into a fact.

    "*" or an empty component marks a wildcard; wildcards are only legal
    in trailing positions (there is no <S,*,O> shape).
    """
    if not isinstance(text, str):
        raise MalformedFact(f"fact text must be a string, got {type(text).__name__}")
    raw = text.strip()
    if raw.startswith("<") and raw.endswith(">"):
        parts = raw[1:-1].split(",")
    else:
        parts = raw.split("|")
    if len(parts) > 3:
        raise MalformedFact(f"too many components in {text!r}")
    comps = [normalize_component(p.replace("*", " ")) for p in parts]
    while len(comps) < 3:
        comps.append(())
    s, p, o = comps
    if not s:
        raise MalformedFact(f"empty subject in {text!r}")
    if o and not p:
        raise MalformedFact(f"object without predicate in {text!r}")
    return StructuredFact(s, p or None, o or None)


def serialize_fact(fact: StructuredFact) -> str:
    """Pipe-delimited text form; inverse of ``parse_fact`` on valid facts."""
    parts = [" ".join(c) for c in fact.components() if c is not None]
    return "|".join(parts)


@dataclass(frozen=True)
class FactInstance:
    """One (image features, language fact) pair with its split tag."""

    image_id: str
    features: np.ndarray
    fact: StructuredFact
    split: str = "train"

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim != 1:
            raise BadFeatureDim(f"features must be 1-D, got shape {feats.shape}")
        feats.flags.writeable = False
        object.__setattr__(self, "features", feats)
        if self.split not in ("train", "test"):
            raise DatasetError(f"split must be 'train' or 'test', got {self.split!r}")


@dataclass(frozen=True)
class Dataset:
    """Immutable collection of fact instances with a common feature width."""

    instances: tuple[FactInstance, ...]
    feature_dim: int

    def __post_init__(self):
        object.__setattr__(self, "instances", tuple(self.instances))
        for inst in self.instances:
            if inst.features.shape[0] != self.feature_dim:
                raise BadFeatureDim(
                    f"instance {inst.image_id!r} has {inst.features.shape[0]} features, "
                    f"expected {self.feature_dim}"
                )

    def __len__(self) -> int:
        return len(self.instances)

    def __iter__(self) -> Iterator[FactInstance]:
        return iter(self.instances)

    def split_instances(self, split: str) -> tuple[FactInstance, ...]:
        return tuple(inst for inst in self.instances if inst.split == split)

    def train_instances(self) -> tuple[FactInstance, ...]:
        return self.split_instances("train")

    def test_instances(self) -> tuple[FactInstance, ...]:
        return self.split_instances("test")

    def unique_facts(self, split: str | None = None) -> tuple[StructuredFact, ...]:
        """Unique facts in file order, optionally restricted to one split."""
        seen: dict[StructuredFact, None] = {}
        for inst in self.instances:
            if split is None or inst.split == split:
                seen.setdefault(inst.fact, None)
        return tuple(seen)


def load_dataset(path) -> Dataset:
    """Read a JSON-lines dataset file.

    The first line is a header ``{"feature_dim": D}``; every other line is
    ``{"image_id", "split", "s", "p", "o", "features"}`` with ``p``/``o``
    null for wildcard slots. Instances keep file order.
    """
    with open(path, "r", encoding="utf-8") as fh:
        header_line = fh.readline()
        if not header_line.strip():
            raise DatasetError(f"{path}: missing header line")
        try:
            header = json.loads(header_line)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"{path}: header is not valid JSON: {exc}") from exc
        if not isinstance(header, dict) or "feature_dim" not in header:
            raise DatasetError(f"{path}: header must be an object with 'feature_dim'")
        feature_dim = header["feature_dim"]
        if not isinstance(feature_dim, int) or feature_dim <= 0:
            raise BadFeatureDim(f"{path}: feature_dim must be a positive integer")

        instances = []
        seen_pairs: set[tuple[str, StructuredFact]] = set()
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            try:
                fact = StructuredFact.from_components(
                    rec["s"], rec.get("p"), rec.get("o")
                )
            except KeyError as exc:
                raise DatasetError(f"{path}:{lineno}: missing field {exc}") from exc
            features = rec.get("features", [])
            if len(features) != feature_dim:
                raise BadFeatureDim(
                    f"{path}:{lineno}: {len(features)} features, expected {feature_dim}"
                )
            image_id = str(rec["image_id"])
            key = (image_id, fact)
            if key in seen_pairs:
                raise DuplicatePair(
                    f"{path}:{lineno}: duplicate pair ({image_id!r}, {serialize_fact(fact)!r})"
                )
            seen_pairs.add(key)
            instances.append(
                FactInstance(image_id, features, fact, rec.get("split", "train"))
            )
    return Dataset(tuple(instances), feature_dim)


def save_dataset(dataset: Dataset, path) -> None:
    """Write a dataset in the JSON-lines format read by ``load_dataset``."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"feature_dim": dataset.feature_dim}) + "\n")
        for inst in dataset:
            rec = {
                "image_id": inst.image_id,
                "split": inst.split,
                "s": list(inst.fact.subject),
                "p": list(inst.fact.predicate) if inst.fact.predicate else None,
                "o": list(inst.fact.object) if inst.fact.object else None,
                "features": [float(v) for v in inst.features],
            }
            fh.write(json.dumps(rec) + "\n")


@dataclass(frozen=True)
class FrequencyTable:
    """Train-split counts per unique fact plus component marginals.

    A marginal counts every train instance whose fact defines all the
    named components with exactly equal token lists, regardless of the
    fact's order (so <person,riding> and <person,riding,horse> both feed
    the (person, riding) SP marginal).
    """

    fact_counts: Mapping[StructuredFact, int]
    s_counts: Mapping[Tokens, int] = field(default_factory=dict)
    p_counts: Mapping[Tokens, int] = field(default_factory=dict)
    o_counts: Mapping[Tokens, int] = field(default_factory=dict)
    sp_counts: Mapping[tuple[Tokens, Tokens], int] = field(default_factory=dict)
    po_counts: Mapping[tuple[Tokens, Tokens], int] = field(default_factory=dict)
    so_counts: Mapping[tuple[Tokens, Tokens], int] = field(default_factory=dict)
    train_total: int = 0

    def count(self, fact: StructuredFact) -> int:
        return self.fact_counts.get(fact, 0)

    def s(self, fact: StructuredFact) -> int:
        return self.s_counts.get(fact.subject, 0)

    def p(self, fact: StructuredFact) -> int:
        return 0 if fact.predicate is None else self.p_counts.get(fact.predicate, 0)

    def o(self, fact: StructuredFact) -> int:
        return 0 if fact.object is None else self.o_counts.get(fact.object, 0)

    def sp(self, fact: StructuredFact) -> int:
        if fact.predicate is None:
            return 0
        return self.sp_counts.get((fact.subject, fact.predicate), 0)

    def po(self, fact: StructuredFact) -> int:
        if fact.predicate is None or fact.object is None:
            return 0
        return self.po_counts.get((fact.predicate, fact.object), 0)

    def so(self, fact: StructuredFact) -> int:
        if fact.object is None:
            return 0
        return self.so_counts.get((fact.subject, fact.object), 0)


def fact_frequency_table(dataset: Dataset) -> FrequencyTable:
    """Exact counts over the train split for facts and component marginals."""
    fact_counts: dict[StructuredFact, int] = {}
    s_counts: dict[Tokens, int] = {}
    p_counts: dict[Tokens, int] = {}
    o_counts: dict[Tokens, int] = {}
    sp_counts: dict[tuple[Tokens, Tokens], int] = {}
    po_counts: dict[tuple[Tokens, Tokens], int] = {}
    so_counts: dict[tuple[Tokens, Tokens], int] = {}
    total = 0
    for inst in dataset.train_instances():
        fact = inst.fact
        total += 1
        fact_counts[fact] = fact_counts.get(fact, 0) + 1
        s, p, o = fact.components()
        s_counts[s] = s_counts.get(s, 0) + 1
        if p is not None:
            p_counts[p] = p_counts.get(p, 0) + 1
            sp_counts[(s, p)] = sp_counts.get((s, p), 0) + 1
        if o is not None:
            o_counts[o] = o_counts.get(o, 0) + 1
            po_counts[(p, o)] = po_counts.get((p, o), 0) + 1
            so_counts[(s, o)] = so_counts.get((s, o), 0) + 1
    return FrequencyTable(
        fact_counts, s_counts, p_counts, o_counts,
        sp_counts, po_counts, so_counts, total,
    )
