"""Versioned text container for model weights and learned primitives.

One JSON document per artifact: a format version, hyperparameters,
normalization stats and named arrays of decimal floats in row-major order.
Python's shortest-repr float serialization makes the round trip exact at
double precision.
"""

import json

import numpy as np

from .errors import ConfigError
from .mdn_gru import GruDirectionParams, MdnHeadParams, ModelParams
from .vmp import ViaPointMP

FORMAT_VERSION = 1

_DIR_FIELDS = ("w_z", "w_r", "w_h", "u_z", "u_r", "u_h", "b_z", "b_r", "b_h")


def _arrays_out(named):
    return {
        name: {"shape": list(arr.shape), "data": [float(v) for v in np.ravel(arr)]}
        for name, arr in named.items()
    }


def _array_in(entry, name):
    arr = np.array(entry["data"], dtype=float).reshape(entry["shape"])
    if not np.all(np.isfinite(arr)):
        raise ConfigError(f"array {name!r} contains non-finite values")
    return arr


def _dump(doc, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")


def _load(path, kind):
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format_version") != FORMAT_VERSION:
        raise ConfigError(f"{path}: unsupported container version {doc.get('format_version')!r}")
    if doc.get("kind") != kind:
        raise ConfigError(f"{path}: expected a {kind!r} container, got {doc.get('kind')!r}")
    return doc


def save_model(model, path):
    named = {}
    for prefix, direction in (("fwd", model.fwd), ("bwd", model.bwd)):
        for f in _DIR_FIELDS:
            named[f"{prefix}.{f}"] = getattr(direction, f)
    named["head.weight"] = model.head.weight
    named["head.bias"] = model.head.bias
    doc = {
        "format_version": FORMAT_VERSION,
        "kind": "bigru_mdn",
        "hyper": {
            "window_len": model.window_len,
            "hidden": model.fwd.hidden,
            "mixtures": model.head.mixtures,
            "in_dim": model.in_dim,
            "out_dim": model.head.out_dim,
            "sigma_floor": model.sigma_floor,
        },
        "normalization": {
            "mean": [float(v) for v in model.norm_mean],
            "std": [float(v) for v in model.norm_std],
        },
        "arrays": _arrays_out(named),
    }
    _dump(doc, path)


def load_model(path):
    doc = _load(path, "bigru_mdn")
    arrays = doc["arrays"]

    def direction(prefix):
        return GruDirectionParams(**{f: _array_in(arrays[f"{prefix}.{f}"], f) for f in _DIR_FIELDS})

    hyper = doc["hyper"]
    head = MdnHeadParams(
        weight=_array_in(arrays["head.weight"], "head.weight"),
        bias=_array_in(arrays["head.bias"], "head.bias"),
        mixtures=int(hyper["mixtures"]),
        out_dim=int(hyper["out_dim"]),
    )
    return ModelParams(
        fwd=direction("fwd"),
        bwd=direction("bwd"),
        head=head,
        norm_mean=np.array(doc["normalization"]["mean"], dtype=float),
        norm_std=np.array(doc["normalization"]["std"], dtype=float),
        window_len=int(hyper["window_len"]),
        sigma_floor=float(hyper["sigma_floor"]),
    )


def save_vmp(vmp, path):
    doc = {
        "format_version": FORMAT_VERSION,
        "kind": "vmp",
        "hyper": {"mode": vmp.mode, "duration_s": vmp.duration},
        "arrays": _arrays_out(
            {
                "start": vmp.start,
                "goal": vmp.goal,
                "centers": vmp.centers,
                "widths": vmp.widths,
                "weights": vmp.weights,
                "anchor": vmp.anchor,
            }
        ),
    }
    _dump(doc, path)


def load_vmp(path):
    doc = _load(path, "vmp")
    arrays = doc["arrays"]
    return ViaPointMP(
        start=_array_in(arrays["start"], "start"),
        goal=_array_in(arrays["goal"], "goal"),
        centers=_array_in(arrays["centers"], "centers"),
        widths=_array_in(arrays["widths"], "widths"),
        weights=_array_in(arrays["weights"], "weights"),
        duration=float(doc["hyper"]["duration_s"]),
        mode=doc["hyper"]["mode"],
        anchor=_array_in(arrays["anchor"], "anchor"),
    )
