"""Synthetic dataset generator with a recorded generative oracle.

Token embeddings are random unit vectors; each image feature is a fixed
random linear map of its fact's zero-padded slot concatenation plus
gaussian noise. Because the map is recorded, the Bayes-optimal nearest
fact for any generated feature is computable exactly, which is what the
quantitative acceptance tests lean on. An optional rectifier map makes
the feature-side relationship nonlinear.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleSpec, ValidationError
from .facts import Dataset, FactInstance, StructuredFact, parse_fact, serialize_fact
from .validation import as_matrix
from .words import WordTable


@dataclass(frozen=True)
class SynthSpec:
    """Shape of the generated corpus; identical seeds give identical bytes."""

    s_vocab: int
    p_vocab: int
    o_vocab: int
    facts1: int
    facts2: int
    facts3: int
    images_per_fact: int = 20
    latent_dim: int = 16
    sigma: float = 0.05
    seed: int = 0
    holdout_share: float = 0.0
    test_fraction: float = 0.25
    longtail_alpha: float | None = None
    nonlinear: bool = False

    def __post_init__(self):
        for name in ("s_vocab", "p_vocab", "o_vocab", "latent_dim"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"{name} must be positive")
        for name in ("facts1", "facts2", "facts3"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be non-negative")
        if self.facts1 + self.facts2 + self.facts3 < 1:
            raise ValidationError("at least one fact is required")
        if self.images_per_fact < 2:
            raise ValidationError("images_per_fact must be >= 2 (train and test)")
        if self.sigma < 0:
            raise ValidationError("sigma must be non-negative")
        if not 0 <= self.holdout_share < 1:
            raise ValidationError("holdout_share must lie in [0, 1)")
        if not 0 < self.test_fraction < 1:
            raise ValidationError("test_fraction must lie in (0, 1)")

    def feature_dim(self) -> int:
        return 3 * self.latent_dim


@dataclass(frozen=True)
class SynthOracle:
    """Everything needed to recompute the generative mapping exactly."""

    spec: SynthSpec
    mixing: np.ndarray  # (feature_dim, 3 * latent_dim)
    token_vectors: dict
    facts: tuple[StructuredFact, ...]
    heldout: frozenset
    rectifier_weight: np.ndarray | None = None
    rectifier_bias: np.ndarray | None = None

    def language_vector(self, fact: StructuredFact) -> np.ndarray:
        d = self.spec.latent_dim
        slots = []
        for comp in fact.components():
            if comp is None:
                slots.append(np.zeros(d))
            else:
                vecs = [self.token_vectors[t] for t in comp]
                slots.append(np.mean(vecs, axis=0))
        return np.concatenate(slots)

    def clean_feature(self, fact: StructuredFact) -> np.ndarray:
        x = self.mixing @ self.language_vector(fact)
        if self.rectifier_weight is not None:
            x = np.maximum(self.rectifier_weight @ x + self.rectifier_bias, 0.0)
        return x

    def nearest_fact(self, features) -> StructuredFact:
        """Bayes-optimal decode: the fact whose clean feature is closest."""
        x = np.asarray(features, dtype=np.float64)
        clean = np.stack([self.clean_feature(f) for f in self.facts])
        diffs = clean - x
        return self.facts[int(np.argmin(np.einsum("ij,ij->i", diffs, diffs)))]

    def nearest_facts(self, features) -> list[StructuredFact]:
        """Vectorized ``nearest_fact`` over feature rows."""
        X = as_matrix(features, "features", cols=self.spec.feature_dim())
        clean = np.stack([self.clean_feature(f) for f in self.facts])
        d2 = (
            np.sum(X * X, axis=1)[:, None]
            - 2.0 * X @ clean.T
            + np.sum(clean * clean, axis=1)[None, :]
        )
        return [self.facts[int(i)] for i in np.argmin(d2, axis=1)]

    def to_json(self) -> str:
        data = {
            "spec": {
                k: getattr(self.spec, k)
                for k in (
                    "s_vocab", "p_vocab", "o_vocab", "facts1", "facts2", "facts3",
                    "images_per_fact", "latent_dim", "sigma", "seed",
                    "holdout_share", "test_fraction", "longtail_alpha", "nonlinear",
                )
            },
            "mixing": self.mixing.tolist(),
            "token_vectors": {t: v.tolist() for t, v in self.token_vectors.items()},
            "facts": [serialize_fact(f) for f in self.facts],
            "heldout": sorted(serialize_fact(f) for f in self.heldout),
            "rectifier_weight": None
            if self.rectifier_weight is None else self.rectifier_weight.tolist(),
            "rectifier_bias": None
            if self.rectifier_bias is None else self.rectifier_bias.tolist(),
        }
        return json.dumps(data, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SynthOracle":
        data = json.loads(text)
        spec = SynthSpec(**data["spec"])
        return cls(
            spec=spec,
            mixing=np.array(data["mixing"]),
            token_vectors={t: np.array(v) for t, v in data["token_vectors"].items()},
            facts=tuple(parse_fact(f) for f in data["facts"]),
            heldout=frozenset(parse_fact(f) for f in data["heldout"]),
            rectifier_weight=None
            if data["rectifier_weight"] is None else np.array(data["rectifier_weight"]),
            rectifier_bias=None
            if data["rectifier_bias"] is None else np.array(data["rectifier_bias"]),
        )


def _unit_vectors(rng, count: int, dim: int) -> list[np.ndarray]:
    vecs = rng.standard_normal((count, dim))
    return list(vecs / np.linalg.norm(vecs, axis=1, keepdims=True))


def _sample_facts(rng, spec: SynthSpec) -> list[StructuredFact]:
    s_tokens = [f"s{i:03d}" for i in range(spec.s_vocab)]
    p_tokens = [f"p{i:03d}" for i in range(spec.p_vocab)]
    o_tokens = [f"o{i:03d}" for i in range(spec.o_vocab)]
    limits = (
        (spec.facts1, spec.s_vocab),
        (spec.facts2, spec.s_vocab * spec.p_vocab),
        (spec.facts3, spec.s_vocab * spec.p_vocab * spec.o_vocab),
    )
    for order, (want, available) in enumerate(limits, start=1):
        if want > available:
            raise InfeasibleSpec(
                f"{want} order-{order} facts requested but only {available} exist"
            )
    facts: list[StructuredFact] = []
    for i in rng.choice(spec.s_vocab, size=spec.facts1, replace=False):
        facts.append(StructuredFact((s_tokens[i],)))
    for flat in rng.choice(spec.s_vocab * spec.p_vocab, size=spec.facts2, replace=False):
        si, pi = divmod(int(flat), spec.p_vocab)
        facts.append(StructuredFact((s_tokens[si],), (p_tokens[pi],)))
    total3 = spec.s_vocab * spec.p_vocab * spec.o_vocab
    for flat in rng.choice(total3, size=spec.facts3, replace=False):
        si, rest = divmod(int(flat), spec.p_vocab * spec.o_vocab)
        pi, oi = divmod(rest, spec.o_vocab)
        facts.append(StructuredFact((s_tokens[si],), (p_tokens[pi],), (o_tokens[oi],)))
    return facts


def _images_for_fact(spec: SynthSpec, position: int) -> int:
    if spec.longtail_alpha is None:
        return spec.images_per_fact
    count = int(round(spec.images_per_fact * (position + 1) ** (-spec.longtail_alpha)))
    return max(2, count)


def synth_generate(spec: SynthSpec) -> tuple[Dataset, WordTable, SynthOracle]:
    """Generate (dataset, word table, oracle) from a SynthSpec, deterministically.

    Held-out facts (per-order share) appear only in the test split; every
    other fact contributes both train and test images.
    """
    rng = np.random.default_rng(spec.seed)

    tokens = (
        [f"s{i:03d}" for i in range(spec.s_vocab)]
        + [f"p{i:03d}" for i in range(spec.p_vocab)]
        + [f"o{i:03d}" for i in range(spec.o_vocab)]
    )
    vectors = _unit_vectors(rng, len(tokens), spec.latent_dim)
    token_vectors = dict(zip(tokens, vectors))
    table = WordTable(spec.latent_dim, token_vectors)

    facts = _sample_facts(rng, spec)

    heldout: set[StructuredFact] = set()
    if spec.holdout_share > 0:
        for order in (1, 2, 3):
            of_order = [f for f in facts if f.order() == order]
            if not of_order:
                continue
            n_hold = min(len(of_order), max(1, round(spec.holdout_share * len(of_order))))
            for i in rng.choice(len(of_order), size=n_hold, replace=False):
                heldout.add(of_order[i])

    d = spec.latent_dim
    feature_dim = spec.feature_dim()
    mixing = rng.standard_normal((feature_dim, 3 * d)) / np.sqrt(3 * d)
    rect_w = rect_b = None
    if spec.nonlinear:
        rect_w = rng.standard_normal((feature_dim, feature_dim)) / np.sqrt(feature_dim)
        rect_b = 0.1 * rng.standard_normal(feature_dim)

    oracle = SynthOracle(
        spec=spec,
        mixing=mixing,
        token_vectors=token_vectors,
        facts=tuple(facts),
        heldout=frozenset(heldout),
        rectifier_weight=rect_w,
        rectifier_bias=rect_b,
    )

    instances: list[FactInstance] = []
    counter = 0
    for position, fact in enumerate(facts):
        count = _images_for_fact(spec, position)
        clean = oracle.clean_feature(fact)
        noise = spec.sigma * rng.standard_normal((count, feature_dim))
        if fact in heldout:
            n_test = count
        else:
            n_test = min(count - 1, max(1, round(spec.test_fraction * count)))
        for j in range(count):
            split = "test" if j >= count - n_test else "train"
            instances.append(
                FactInstance(f"img{counter:06d}", clean + noise[j], fact, split)
            )
            counter += 1
    return Dataset(tuple(instances), feature_dim), table, oracle
