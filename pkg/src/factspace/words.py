"""Pretrained word vectors and the fixed language-side encoder.

Each fact component is embedded as the unit-normalized mean of its token
vectors; active slots then have the training mean subtracted, wildcard
slots are filled with zeros.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .embedding import FactEmbedding
from .errors import BadVectorDim, EmptyTable, UnknownComponent, ValidationError
from .facts import StructuredFact, Tokens


@dataclass(frozen=True)
class WordTable:
    """Token -> vector map with a single shared dimensionality."""

    dim: int
    vectors: Mapping[str, np.ndarray]

    def __contains__(self, token: str) -> bool:
        return token in self.vectors

    def __len__(self) -> int:
        return len(self.vectors)

    def get(self, token: str) -> np.ndarray | None:
        return self.vectors.get(token)


def load_word_table(path) -> WordTable:
    """Read the plain-text vector format: ``token v1 ... vd`` per line.

    The dimension is inferred from the first line. Duplicate tokens keep
    the last occurrence (a warning is emitted).
    """
    vectors: dict[str, np.ndarray] = {}
    dim = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            token, values = parts[0], parts[1:]
            if dim is None:
                dim = len(values)
                if dim == 0:
                    raise BadVectorDim(f"{path}:{lineno}: no vector values")
            elif len(values) != dim:
                raise BadVectorDim(
                    f"{path}:{lineno}: {len(values)} values, expected {dim}"
                )
            if token in vectors:
                warnings.warn(f"duplicate token {token!r} in {path}; last occurrence wins")
            vec = np.array([float(v) for v in values], dtype=np.float64)
            vec.flags.writeable = False
            vectors[token] = vec
    if dim is None or not vectors:
        raise EmptyTable(f"{path}: word table is empty")
    return WordTable(dim, vectors)


def save_word_table(table: WordTable, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for token, vec in table.vectors.items():
            fh.write(token + " " + " ".join(repr(float(v)) for v in vec) + "\n")


def embed_component(tokens: Sequence[str] | Tokens, table: WordTable) -> np.ndarray:
    """Unit-normalized mean of the token vectors found in the table.

    Tokens missing from the table are skipped with a warning; if none of
    the tokens is covered the component cannot be embedded and
    UnknownComponent is raised.
    """
    tokens = tuple(tokens)
    if not tokens:
        raise ValidationError("cannot embed an empty component")
    found = [table.vectors[t] for t in tokens if t in table.vectors]
    missing = [t for t in tokens if t not in table.vectors]
    if not found:
        raise UnknownComponent(
            f"no word vector for any of {missing}", missing=missing
        )
    if missing:
        warnings.warn(f"tokens {missing} not in word table; averaging the rest")
    mean = np.mean(found, axis=0)
    norm = np.linalg.norm(mean)
    if norm == 0.0:
        # Degenerate cancellation; keep the zero vector rather than divide.
        return mean
    return mean / norm


@dataclass(frozen=True)
class LangNormalizer:
    """Per-slot means of the training-set component embeddings."""

    mean_s: np.ndarray
    mean_p: np.ndarray
    mean_o: np.ndarray

    def __post_init__(self):
        for name in ("mean_s", "mean_p", "mean_o"):
            vec = np.asarray(getattr(self, name), dtype=np.float64)
            vec.flags.writeable = False
            object.__setattr__(self, name, vec)

    @classmethod
    def zero(cls, dim: int) -> "LangNormalizer":
        z = np.zeros(dim)
        return cls(z, z.copy(), z.copy())


def fit_normalizer(train_facts: Iterable[StructuredFact], table: WordTable) -> LangNormalizer:
    """Slotwise means over the active slots of the training facts.

    Wildcard slots contribute nothing; a slot active in no training fact
    gets a zero mean (degenerate, reported via warning).
    """
    sums = [np.zeros(table.dim) for _ in range(3)]
    counts = [0, 0, 0]
    n_facts = 0
    for fact in train_facts:
        n_facts += 1
        for i, comp in enumerate(fact.components()):
            if comp is not None:
                sums[i] += embed_component(comp, table)
                counts[i] += 1
    if n_facts == 0:
        raise ValidationError("fit_normalizer needs at least one training fact")
    means = []
    for name, total, count in zip(("s", "p", "o"), sums, counts):
        if count == 0:
            warnings.warn(f"no training fact activates the {name} slot; mean is zero")
            means.append(np.zeros(table.dim))
        else:
            means.append(total / count)
    return LangNormalizer(*means)


def encode_language(
    fact: StructuredFact, table: WordTable, normalizer: LangNormalizer
) -> FactEmbedding:
    """Structured language embedding: centered unit slot vectors, zeros for wildcards."""
    mask = fact.mask()
    means = (normalizer.mean_s, normalizer.mean_p, normalizer.mean_o)
    slots = []
    for comp, mean in zip(fact.components(), means):
        if comp is None:
            slots.append(np.zeros(table.dim))
        else:
            slots.append(embed_component(comp, table) - mean)
    return FactEmbedding(slots[0], slots[1], slots[2], mask)
