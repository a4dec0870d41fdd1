"""Versioned JSON checkpoints for encoders and the CCA baseline.

Matrices are stored row-major with their shapes declared, alongside the
model kind, architecture spec, language normalizer, and the seed that
produced the initialization.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .cca import CcaModel
from .encoder import AffineLayer, EncoderParams, EncoderSpec, StackSpec
from .errors import ValidationError
from .words import LangNormalizer

_CHECKPOINT_VERSION = 1


def _encode_array(arr: np.ndarray) -> dict:
    return {"shape": list(arr.shape), "data": np.ravel(arr, order="C").tolist()}


def _decode_array(obj: dict) -> np.ndarray:
    return np.array(obj["data"], dtype=np.float64).reshape(obj["shape"])


def _encode_stack(layers) -> list:
    return [
        {"weight": _encode_array(l.weight), "bias": _encode_array(l.bias)}
        for l in layers
    ]


def _decode_stack(items) -> list:
    return [
        AffineLayer(_decode_array(l["weight"]), _decode_array(l["bias"]))
        for l in items
    ]


@dataclass(frozen=True)
class Checkpoint:
    kind: str  # "model1" | "model2" | "cca"
    model: object  # EncoderParams or CcaModel
    normalizer: LangNormalizer
    seed: int | None = None


def save_checkpoint(checkpoint: Checkpoint, path) -> None:
    norm = checkpoint.normalizer
    data = {
        "version": _CHECKPOINT_VERSION,
        "kind": checkpoint.kind,
        "seed": checkpoint.seed,
        "normalizer": {
            "mean_s": _encode_array(norm.mean_s),
            "mean_p": _encode_array(norm.mean_p),
            "mean_o": _encode_array(norm.mean_o),
        },
    }
    model = checkpoint.model
    if checkpoint.kind == "cca":
        if not isinstance(model, CcaModel):
            raise ValidationError("kind 'cca' requires a CcaModel")
        data["cca"] = {
            "proj_visual": _encode_array(model.proj_visual),
            "proj_language": _encode_array(model.proj_language),
            "correlations": _encode_array(model.correlations),
            "regularizer": model.regularizer,
            "mean_visual": _encode_array(model.mean_visual),
            "mean_language": _encode_array(model.mean_language),
        }
    else:
        if not isinstance(model, EncoderParams):
            raise ValidationError(f"kind {checkpoint.kind!r} requires EncoderParams")
        spec = model.spec
        data["encoder"] = {
            "spec": {
                "model_kind": spec.model_kind,
                "input_dim": spec.input_dim,
                "slot_dims": list(spec.slot_dims),
                "shared": list(spec.shared.widths),
                "s_branch": list(spec.s_branch.widths),
                "po_branch": list(spec.po_branch.widths),
            },
            "shared": _encode_stack(model.shared),
            "s_branch": _encode_stack(model.s_branch),
            "po_branch": _encode_stack(model.po_branch),
            "proj_s": _encode_array(model.proj_s),
            "proj_p": _encode_array(model.proj_p),
            "proj_o": _encode_array(model.proj_o),
        }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path) -> Checkpoint:
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    if data.get("version") != _CHECKPOINT_VERSION:
        raise ValidationError(f"unsupported checkpoint version {data.get('version')!r}")
    norm_data = data["normalizer"]
    normalizer = LangNormalizer(
        _decode_array(norm_data["mean_s"]),
        _decode_array(norm_data["mean_p"]),
        _decode_array(norm_data["mean_o"]),
    )
    kind = data["kind"]
    if kind == "cca":
        c = data["cca"]
        model: object = CcaModel(
            proj_visual=_decode_array(c["proj_visual"]),
            proj_language=_decode_array(c["proj_language"]),
            correlations=_decode_array(c["correlations"]),
            regularizer=float(c["regularizer"]),
            mean_visual=_decode_array(c["mean_visual"]),
            mean_language=_decode_array(c["mean_language"]),
        )
    else:
        e = data["encoder"]
        spec = EncoderSpec(
            model_kind=e["spec"]["model_kind"],
            input_dim=e["spec"]["input_dim"],
            slot_dims=tuple(e["spec"]["slot_dims"]),
            shared=StackSpec(tuple(e["spec"]["shared"])),
            s_branch=StackSpec(tuple(e["spec"]["s_branch"])),
            po_branch=StackSpec(tuple(e["spec"]["po_branch"])),
        )
        model = EncoderParams(
            spec=spec,
            shared=_decode_stack(e["shared"]),
            s_branch=_decode_stack(e["s_branch"]),
            po_branch=_decode_stack(e["po_branch"]),
            proj_s=_decode_array(e["proj_s"]),
            proj_p=_decode_array(e["proj_p"]),
            proj_o=_decode_array(e["proj_o"]),
            seed=data.get("seed"),
        )
    return Checkpoint(kind, model, normalizer, data.get("seed"))
