"""Wildcard-masked alignment loss, analytic gradients, and the SGD trainer.

The loss between a visual embedding v and a language embedding l of the
same fact is the sum of slotwise distances over the fact's active slots;
wildcard slots contribute nothing, so their projections receive no
gradient. Language embeddings are fixed targets (the word table is not
trained); only the visual encoder parameters move.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .embedding import FactEmbedding
from .encoder import EncoderParams, backward_slots, forward_slots
from .errors import DivergenceError, MaskMismatch, ShapeError, ValidationError
from .facts import Dataset, FactInstance, StructuredFact

SQEUCLIDEAN = "sqeuclidean"
EUCLIDEAN = "euclidean"


@dataclass(frozen=True)
class LossConfig:
    """Distance choice for the slotwise terms.

    ``sqeuclidean`` is the default (smooth everywhere). ``euclidean``
    uses sqrt(||a-b||^2 + epsilon^2), which smooths the distance at the
    origin so its gradient stays defined.
    """

    distance_kind: str = SQEUCLIDEAN
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.distance_kind not in (SQEUCLIDEAN, EUCLIDEAN):
            raise ValidationError(f"unknown distance kind {self.distance_kind!r}")
        if not self.epsilon > 0:
            raise ValidationError("epsilon must be positive")


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer schedule for the momentum trainer.

    Update rule (classical momentum with weight decay):
        u <- momentum * u - lr_p * (grad + weight_decay * theta)
        theta <- theta + u
    where lr_p = base_lr * gamma^(iter // lr_step_iters), multiplied by
    ``new_param_lr_multiplier`` for the randomly initialized slot
    projections.
    """

    base_lr: float = 0.5e-4
    new_param_lr_multiplier: float = 10.0
    momentum: float = 0.9
    weight_decay: float = 1e-4
    lr_gamma: float = 0.1
    lr_step_iters: int = 5000
    batch_size: int = 100
    max_iters: int = 10000
    seed: int = 0

    def __post_init__(self):
        for name in ("base_lr", "new_param_lr_multiplier", "weight_decay", "lr_gamma"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be non-negative")
        for name in ("lr_step_iters", "batch_size", "max_iters"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"{name} must be positive")
        if not 0 <= self.momentum < 1:
            raise ValidationError("momentum must lie in [0, 1)")


def _slot_terms(v: np.ndarray, l: np.ndarray, cfg: LossConfig):
    """Per-row slot distance and gradient w.r.t. v for batched slot matrices."""
    resid = v - l
    sq = np.sum(resid * resid, axis=1)
    if cfg.distance_kind == SQEUCLIDEAN:
        return sq, 2.0 * resid
    dist = np.sqrt(sq + cfg.epsilon**2)
    return dist, resid / dist[:, None]


def wildcard_loss(v: FactEmbedding, l: FactEmbedding, cfg: LossConfig | None = None) -> float:
    """Masked alignment loss between the two views of one fact.

    Both embeddings must carry the same mask; only active slots enter the
    sum, so perturbing a wildcard slot can never change the value.
    """
    cfg = cfg or LossConfig()
    if v.mask != l.mask:
        raise MaskMismatch(f"visual mask {v.mask} != language mask {l.mask}")
    if v.slot_dims() != l.slot_dims():
        raise ShapeError(f"slot dims differ: {v.slot_dims()} vs {l.slot_dims()}")
    total = 0.0
    for v_slot, l_slot, active in zip(
        (v.s, v.p, v.o), (l.s, l.p, l.o), v.mask.flags()
    ):
        if active:
            term, _ = _slot_terms(v_slot.reshape(1, -1), l_slot.reshape(1, -1), cfg)
            total += float(term[0])
    return total


def _batch_arrays(
    params: EncoderParams,
    batch: Sequence[FactInstance],
    lang: Mapping[StructuredFact, FactEmbedding],
):
    """Stack features, language slot targets, and 0/1 weights for a batch."""
    if not batch:
        raise ValidationError("batch must be non-empty")
    d_s, d_p, d_o = params.spec.slot_dims
    n = len(batch)
    X = np.empty((n, params.spec.input_dim))
    LS = np.zeros((n, d_s))
    LP = np.zeros((n, d_p))
    LO = np.zeros((n, d_o))
    W = np.zeros((n, 3))
    for i, inst in enumerate(batch):
        emb = lang[inst.fact]
        if emb.mask != inst.fact.mask():
            raise MaskMismatch(
                f"language embedding mask {emb.mask} does not match fact {inst.fact}"
            )
        if emb.slot_dims() != (d_s, d_p, d_o):
            raise ShapeError(
                f"language slot dims {emb.slot_dims()} != encoder dims {(d_s, d_p, d_o)}"
            )
        if inst.features.shape[0] != params.spec.input_dim:
            raise ShapeError(
                f"instance {inst.image_id!r} feature width {inst.features.shape[0]} "
                f"!= encoder input {params.spec.input_dim}"
            )
        X[i] = inst.features
        LS[i], LP[i], LO[i] = emb.s, emb.p, emb.o
        W[i] = emb.mask.weights()
    return X, LS, LP, LO, W


def _loss_and_grads(params, X, LS, LP, LO, W, cfg: LossConfig):
    """Mean batch loss and gradients w.r.t. every encoder parameter."""
    n = X.shape[0]
    vs, vp, vo, cache = forward_slots(params, X)
    loss = 0.0
    slot_grads = []
    for v, l, col in ((vs, LS, 0), (vp, LP, 1), (vo, LO, 2)):
        term, dv = _slot_terms(v, l, cfg)
        w = W[:, col]
        loss += float(np.dot(w, term)) / n
        slot_grads.append((w / n)[:, None] * dv)
    grads = backward_slots(params, cache, *slot_grads)
    return loss, grads


def batch_loss(
    params: EncoderParams,
    batch: Sequence[FactInstance],
    lang: Mapping[StructuredFact, FactEmbedding],
    cfg: LossConfig | None = None,
) -> float:
    """Mean wildcard loss of a batch at the current parameters."""
    cfg = cfg or LossConfig()
    X, LS, LP, LO, W = _batch_arrays(params, batch, lang)
    loss, _ = _loss_and_grads(params, X, LS, LP, LO, W, cfg)
    return loss


def loss_gradients(
    params: EncoderParams,
    batch: Sequence[FactInstance],
    lang: Mapping[StructuredFact, FactEmbedding],
    cfg: LossConfig | None = None,
) -> dict[str, np.ndarray]:
    """Exact mean-over-batch gradient of the wildcard loss.

    Keys match ``EncoderParams.named_parameters()`` names.
    """
    cfg = cfg or LossConfig()
    X, LS, LP, LO, W = _batch_arrays(params, batch, lang)
    _, grads = _loss_and_grads(params, X, LS, LP, LO, W, cfg)
    return grads


@dataclass(frozen=True)
class TraceStep:
    iteration: int
    loss: float
    lr: float


def write_loss_trace(trace: Sequence[TraceStep], path) -> None:
    """Emit the per-iteration trace as ``iter,loss,lr`` CSV."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iter", "loss", "lr"])
        for step in trace:
            writer.writerow([step.iteration, repr(step.loss), repr(step.lr)])


def train(
    params: EncoderParams,
    dataset: Dataset,
    lang: Mapping[StructuredFact, FactEmbedding],
    train_cfg: TrainConfig | None = None,
    loss_cfg: LossConfig | None = None,
) -> tuple[EncoderParams, list[TraceStep]]:
    """Minibatch momentum gradient descent over the train split.

    Instances are reshuffled every epoch; the learning rate drops by
    ``lr_gamma`` every ``lr_step_iters`` iterations; slot projections use
    ``base_lr * new_param_lr_multiplier``. The input parameters are left
    untouched; a trained copy is returned with the per-iteration batch
    loss trace. Raises DivergenceError if the loss becomes non-finite.
    """
    train_cfg = train_cfg or TrainConfig()
    loss_cfg = loss_cfg or LossConfig()
    instances = dataset.train_instances()
    if not instances:
        raise ValidationError("train split is empty")

    X, LS, LP, LO, W = _batch_arrays(params, instances, lang)
    n = len(instances)
    out = params.copy()
    arrays = out.param_dict()
    velocity = {name: np.zeros_like(arr) for name, arr in arrays.items()}

    rng = np.random.default_rng(train_cfg.seed)
    order = rng.permutation(n)
    cursor = 0
    trace: list[TraceStep] = []
    for iteration in range(train_cfg.max_iters):
        if cursor >= n:
            order = rng.permutation(n)
            cursor = 0
        idx = order[cursor:cursor + train_cfg.batch_size]
        cursor += train_cfg.batch_size

        loss, grads = _loss_and_grads(
            out, X[idx], LS[idx], LP[idx], LO[idx], W[idx], loss_cfg
        )
        if not np.isfinite(loss):
            raise DivergenceError(f"loss diverged at iteration {iteration}", iteration)

        lr = train_cfg.base_lr * train_cfg.lr_gamma ** (iteration // train_cfg.lr_step_iters)
        for name, arr in arrays.items():
            lr_p = lr * train_cfg.new_param_lr_multiplier if name.startswith("proj") else lr
            vel = velocity[name]
            vel *= train_cfg.momentum
            vel -= lr_p * (grads[name] + train_cfg.weight_decay * arr)
            arr += vel
        trace.append(TraceStep(iteration, loss, lr))
    return out, trace
