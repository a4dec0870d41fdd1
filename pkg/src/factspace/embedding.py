"""Points in the structured fact space: three slot vectors plus a mask."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import MaskMismatch, ShapeError
from .facts import WildcardMask


@dataclass(frozen=True)
class FactEmbedding:
    """Slot vectors for S, P, O; wildcard slots are exactly zero.

    Slot widths may differ (or be zero, as in the flat embeddings the CCA
    baseline produces); the concatenation is the point's coordinates.
    """

    s: np.ndarray
    p: np.ndarray
    o: np.ndarray
    mask: WildcardMask

    def __post_init__(self):
        for name in ("s", "p", "o"):
            vec = np.asarray(getattr(self, name), dtype=np.float64)
            if vec.ndim != 1:
                raise ShapeError(f"slot {name} must be 1-D, got shape {vec.shape}")
            vec.flags.writeable = False
            object.__setattr__(self, name, vec)
        for name, active in zip(("s", "p", "o"), self.mask.flags()):
            if not active and np.any(getattr(self, name) != 0.0):
                raise MaskMismatch(f"wildcard slot {name} holds non-zero values")

    @classmethod
    def from_slots(cls, s, p, o, mask: WildcardMask) -> "FactEmbedding":
        """Build an embedding, zeroing whatever sits in wildcard slots."""
        slots = [np.array(v, dtype=np.float64) for v in (s, p, o)]
        for vec, active in zip(slots, mask.flags()):
            if not active:
                vec[:] = 0.0
        return cls(slots[0], slots[1], slots[2], mask)

    def slot_dims(self) -> tuple[int, int, int]:
        return (self.s.shape[0], self.p.shape[0], self.o.shape[0])

    def concat(self) -> np.ndarray:
        return np.concatenate([self.s, self.p, self.o])


def average_spo(embedding: FactEmbedding) -> np.ndarray:
    """Mean of the active slot vectors (the unstructured ablation).

    Wildcard slots are excluded from the mean, so a <S,P> embedding
    averages only its S and P parts.
    """
    dims = embedding.slot_dims()
    if len(set(dims)) != 1:
        raise ShapeError(f"average_spo needs equal slot dims, got {dims}")
    active = [
        vec for vec, flag in zip((embedding.s, embedding.p, embedding.o), embedding.mask.flags())
        if flag
    ]
    return np.mean(active, axis=0)
