"""Visual-side encoders over precomputed feature vectors.

Two topologies share the projection layout:

* model1 - a single trunk stack feeds all three slot projections.
* model2 - a shared stem splits into an S branch and a PO branch; the
  S projection consumes the S branch, the P and O projections both
  consume the PO branch.

Stacks are affine layers with a rectifier after every layer; the slot
projections are plain matrices with no bias or nonlinearity.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .embedding import FactEmbedding
from .errors import ShapeError, ValidationError
from .facts import WildcardMask
from .validation import as_matrix, as_vector

MODEL1 = "model1"
MODEL2 = "model2"


@dataclass(frozen=True)
class StackSpec:
    """Output widths of each affine+rectifier layer; empty = identity."""

    widths: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if any(w <= 0 for w in self.widths):
            raise ValidationError(f"stack widths must be positive, got {self.widths}")

    def output_dim(self, input_dim: int) -> int:
        return self.widths[-1] if self.widths else input_dim


@dataclass(frozen=True)
class EncoderSpec:
    """Architecture declaration for either encoder topology."""

    model_kind: str
    input_dim: int
    slot_dims: tuple[int, int, int]
    shared: StackSpec = StackSpec()
    s_branch: StackSpec = StackSpec()
    po_branch: StackSpec = StackSpec()

    def __post_init__(self):
        if self.model_kind not in (MODEL1, MODEL2):
            raise ValidationError(f"unknown model kind {self.model_kind!r}")
        if self.input_dim <= 0:
            raise ValidationError("input_dim must be positive")
        object.__setattr__(self, "slot_dims", tuple(int(d) for d in self.slot_dims))
        if len(self.slot_dims) != 3 or any(d <= 0 for d in self.slot_dims):
            raise ValidationError(f"slot_dims must be three positive ints, got {self.slot_dims}")
        if self.model_kind == MODEL1 and (self.s_branch.widths or self.po_branch.widths):
            raise ValidationError("model1 has no branch stacks")


@dataclass
class AffineLayer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)


@dataclass
class EncoderParams:
    """All learnable parameters; mutated only by the trainer."""

    spec: EncoderSpec
    shared: list[AffineLayer]
    s_branch: list[AffineLayer]
    po_branch: list[AffineLayer]
    proj_s: np.ndarray
    proj_p: np.ndarray
    proj_o: np.ndarray
    seed: int | None = None

    def named_parameters(self) -> Iterator[tuple[str, np.ndarray]]:
        """Stable (name, array) iteration; arrays are live references."""
        for stack_name in ("shared", "s_branch", "po_branch"):
            for i, layer in enumerate(getattr(self, stack_name)):
                yield f"{stack_name}.{i}.weight", layer.weight
                yield f"{stack_name}.{i}.bias", layer.bias
        yield "proj_s", self.proj_s
        yield "proj_p", self.proj_p
        yield "proj_o", self.proj_o

    def param_dict(self) -> dict[str, np.ndarray]:
        return dict(self.named_parameters())

    def copy(self) -> "EncoderParams":
        return EncoderParams(
            self.spec,
            [AffineLayer(l.weight.copy(), l.bias.copy()) for l in self.shared],
            [AffineLayer(l.weight.copy(), l.bias.copy()) for l in self.s_branch],
            [AffineLayer(l.weight.copy(), l.bias.copy()) for l in self.po_branch],
            self.proj_s.copy(),
            self.proj_p.copy(),
            self.proj_o.copy(),
            self.seed,
        )


def _init_stack(rng: np.random.Generator, input_dim: int, spec: StackSpec) -> list[AffineLayer]:
    layers = []
    fan_in = input_dim
    for width in spec.widths:
        bound = 1.0 / np.sqrt(fan_in)
        weight = rng.uniform(-bound, bound, size=(width, fan_in))
        bias = rng.uniform(-bound, bound, size=width)
        layers.append(AffineLayer(weight, bias))
        fan_in = width
    return layers


def init_params(spec: EncoderSpec, seed: int) -> EncoderParams:
    """Symmetric-uniform fan-in-scaled init for weights and biases.

    Everything is drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in)) in a
    fixed order, so identical seeds give identical parameters. Non-zero
    biases also keep rectifier pre-activations off the exact kink when an
    upstream layer saturates to zero.
    """
    rng = np.random.default_rng(seed)
    shared = _init_stack(rng, spec.input_dim, spec.shared)
    trunk_out = spec.shared.output_dim(spec.input_dim)
    if spec.model_kind == MODEL2:
        s_branch = _init_stack(rng, trunk_out, spec.s_branch)
        po_branch = _init_stack(rng, trunk_out, spec.po_branch)
        s_out = spec.s_branch.output_dim(trunk_out)
        po_out = spec.po_branch.output_dim(trunk_out)
    else:
        s_branch, po_branch = [], []
        s_out = po_out = trunk_out
    d_s, d_p, d_o = spec.slot_dims
    proj_s = rng.uniform(-1.0 / np.sqrt(s_out), 1.0 / np.sqrt(s_out), size=(d_s, s_out))
    proj_p = rng.uniform(-1.0 / np.sqrt(po_out), 1.0 / np.sqrt(po_out), size=(d_p, po_out))
    proj_o = rng.uniform(-1.0 / np.sqrt(po_out), 1.0 / np.sqrt(po_out), size=(d_o, po_out))
    return EncoderParams(spec, shared, s_branch, po_branch, proj_s, proj_p, proj_o, seed)


def apply_stack(layers: Sequence[AffineLayer], x) -> np.ndarray:
    """Apply affine+rectifier layers in order; an empty stack is the identity."""
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    out = arr.reshape(1, -1) if single else as_matrix(arr, "stack input")
    for i, layer in enumerate(layers):
        if out.shape[1] != layer.weight.shape[1]:
            raise ShapeError(
                f"layer {i} expects width {layer.weight.shape[1]}, got {out.shape[1]}"
            )
        out = np.maximum(out @ layer.weight.T + layer.bias, 0.0)
    return out[0] if single else out


def _stack_forward(layers: Sequence[AffineLayer], x: np.ndarray):
    """Batched forward keeping (input, pre-activation) per layer for backprop."""
    cache = []
    out = x
    for i, layer in enumerate(layers):
        if out.shape[1] != layer.weight.shape[1]:
            raise ShapeError(
                f"layer {i} expects width {layer.weight.shape[1]}, got {out.shape[1]}"
            )
        pre = out @ layer.weight.T + layer.bias
        cache.append((out, pre))
        out = np.maximum(pre, 0.0)
    return out, cache


def _stack_backward(layers, cache, grad_out, grads: dict, prefix: str) -> np.ndarray:
    """Accumulate per-layer gradients and return the gradient on the stack input."""
    grad = grad_out
    for i in range(len(layers) - 1, -1, -1):
        inp, pre = cache[i]
        grad = grad * (pre > 0.0)
        grads[f"{prefix}.{i}.weight"] += grad.T @ inp
        grads[f"{prefix}.{i}.bias"] += grad.sum(axis=0)
        grad = grad @ layers[i].weight
    return grad


def forward_slots(params: EncoderParams, features: np.ndarray):
    """Unmasked slot outputs (V_S, V_P, V_O) for a batch, plus the backprop cache."""
    X = as_matrix(features, "features", cols=params.spec.input_dim)
    trunk_out, trunk_cache = _stack_forward(params.shared, X)
    if params.spec.model_kind == MODEL1:
        vs = trunk_out @ params.proj_s.T
        vp = trunk_out @ params.proj_p.T
        vo = trunk_out @ params.proj_o.T
        cache = {"trunk": trunk_cache, "trunk_out": trunk_out}
    else:
        s_out, s_cache = _stack_forward(params.s_branch, trunk_out)
        po_out, po_cache = _stack_forward(params.po_branch, trunk_out)
        vs = s_out @ params.proj_s.T
        vp = po_out @ params.proj_p.T
        vo = po_out @ params.proj_o.T
        cache = {
            "trunk": trunk_cache, "trunk_out": trunk_out,
            "s": s_cache, "s_out": s_out,
            "po": po_cache, "po_out": po_out,
        }
    return vs, vp, vo, cache


def backward_slots(params: EncoderParams, cache, grad_vs, grad_vp, grad_vo) -> dict:
    """Parameter gradients given gradients on the three slot outputs."""
    grads = {name: np.zeros_like(arr) for name, arr in params.named_parameters()}
    if params.spec.model_kind == MODEL1:
        trunk_out = cache["trunk_out"]
        grads["proj_s"] += grad_vs.T @ trunk_out
        grads["proj_p"] += grad_vp.T @ trunk_out
        grads["proj_o"] += grad_vo.T @ trunk_out
        grad_trunk = grad_vs @ params.proj_s + grad_vp @ params.proj_p + grad_vo @ params.proj_o
        _stack_backward(params.shared, cache["trunk"], grad_trunk, grads, "shared")
    else:
        grads["proj_s"] += grad_vs.T @ cache["s_out"]
        grads["proj_p"] += grad_vp.T @ cache["po_out"]
        grads["proj_o"] += grad_vo.T @ cache["po_out"]
        grad_s = grad_vs @ params.proj_s
        grad_po = grad_vp @ params.proj_p + grad_vo @ params.proj_o
        grad_trunk = _stack_backward(params.s_branch, cache["s"], grad_s, grads, "s_branch")
        grad_trunk = grad_trunk + _stack_backward(
            params.po_branch, cache["po"], grad_po, grads, "po_branch"
        )
        _stack_backward(params.shared, cache["trunk"], grad_trunk, grads, "shared")
    return grads


def encode_visual(params: EncoderParams, features, mask: WildcardMask) -> FactEmbedding:
    """Structured visual embedding of one feature vector; wildcard slots zeroed."""
    vec = as_vector(features, "features", dim=params.spec.input_dim)
    vs, vp, vo, _ = forward_slots(params, vec.reshape(1, -1))
    return FactEmbedding.from_slots(vs[0], vp[0], vo[0], mask)
