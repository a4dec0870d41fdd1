"""Shared test utilities: random fact/embedding generators and the
finite-difference gradient oracle."""

from __future__ import annotations

import numpy as np

from factspace import (
    EncoderSpec,
    FactEmbedding,
    StackSpec,
    StructuredFact,
    WildcardMask,
    batch_loss,
    init_params,
)
from factspace.facts import FactInstance


def random_fact(rng, order=None, s_pool=6, p_pool=6, o_pool=6, max_tokens=2):
    """A random normalized fact with single- or multi-token components."""
    order = order or int(rng.integers(1, 4))

    def comp(prefix, pool):
        n = int(rng.integers(1, max_tokens + 1))
        return tuple(f"{prefix}{int(rng.integers(pool))}" for _ in range(n))

    subject = comp("s", s_pool)
    predicate = comp("p", p_pool) if order >= 2 else None
    obj = comp("o", o_pool) if order == 3 else None
    return StructuredFact(subject, predicate, obj)


def random_embedding(rng, slot_dims, order):
    """A FactEmbedding with random active slots and zeroed wildcards."""
    mask = WildcardMask.from_order(order)
    slots = [rng.standard_normal(d) for d in slot_dims]
    return FactEmbedding.from_slots(*slots, mask)


def make_gradcheck_case(rng, model_kind, orders=(1, 2, 3), batch_size=5):
    """Random small encoder + batch + language targets for gradient checks."""
    input_dim = int(rng.integers(2, 9))
    slot_dims = tuple(int(rng.integers(2, 9)) for _ in range(3))
    depth = int(rng.integers(0, 3))
    shared = StackSpec(tuple(int(rng.integers(2, 9)) for _ in range(depth)))
    if model_kind == "model2":
        s_depth = int(rng.integers(0, 3))
        po_depth = int(rng.integers(0, 3))
        s_branch = StackSpec(tuple(int(rng.integers(2, 9)) for _ in range(s_depth)))
        po_branch = StackSpec(tuple(int(rng.integers(2, 9)) for _ in range(po_depth)))
    else:
        s_branch = po_branch = StackSpec()
    spec = EncoderSpec(model_kind, input_dim, slot_dims, shared, s_branch, po_branch)
    params = init_params(spec, seed=int(rng.integers(1 << 30)))

    batch = []
    lang = {}
    for i in range(batch_size):
        order = int(rng.choice(orders))
        fact = StructuredFact(
            (f"s{i}",),
            (f"p{i}",) if order >= 2 else None,
            (f"o{i}",) if order == 3 else None,
        )
        features = rng.standard_normal(input_dim)
        batch.append(FactInstance(f"img{i}", features, fact, "train"))
        lang[fact] = random_embedding(rng, slot_dims, order)
    return params, batch, lang


def fd_gradients(params, batch, lang, cfg, h=1e-5):
    """Central finite differences of the batch loss over every parameter."""
    grads = {}
    for name, arr in params.named_parameters():
        grad = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = batch_loss(params, batch, lang, cfg)
            flat[i] = orig - h
            down = batch_loss(params, batch, lang, cfg)
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * h)
        grads[name] = grad
    return grads


def max_rel_error(analytic: dict, numeric: dict) -> float:
    """Worst relative error with a unit floor (absolute for tiny gradients)."""
    worst = 0.0
    for name, a in analytic.items():
        f = numeric[name]
        denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(f)))
        worst = max(worst, float(np.max(np.abs(a - f) / denom)))
    return worst
