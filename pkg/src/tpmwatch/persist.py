"""Versioned, checksummed model files.

A model file is one JSON document::

    {"format": "tpmwatch-model", "version": 1, "method": "...",
     "payload": {...}, "config": {...}, "checksum": "<sha256>"}

Every float array is stored as base64 of its little-endian float64 bytes
together with its shape, so a save/load round trip is bit-exact on any
machine.  The checksum is the SHA-256 of the canonical JSON of all other
fields.
"""

from __future__ import annotations

import base64
import hashlib
import json
from pathlib import Path

import numpy as np

from .baselines import D2qModel, OrModel, WlrModel
from .deconfound import ConfounderPartition, DeconfoundedModel
from .net import MultiHeadNet, NetConfig
from .ranks import OrdinalScale, build_tree, build_tree_from_splits
from .tpm import TpmModel

__all__ = ["FORMAT", "VERSION", "ModelFileError", "save_model", "load_model", "method_of"]

FORMAT = "tpmwatch-model"
VERSION = 1


class ModelFileError(ValueError):
    pass


def _arr(a) -> dict:
    a = np.ascontiguousarray(a, dtype="<f8")
    return {"shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode("ascii")}


def _unarr(d) -> np.ndarray:
    raw = base64.b64decode(d["data"])
    return np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(d["shape"])


def _net(net: MultiHeadNet) -> dict:
    return {"config": net.config.to_dict(), "params": [_arr(p) for p in net.params]}


def _unnet(d) -> MultiHeadNet:
    return MultiHeadNet(NetConfig(**d["config"]), [_unarr(p) for p in d["params"]])


def _tree(tree) -> dict:
    return {
        "kind": tree.kind,
        "boundaries": _arr(tree.scale.boundaries),
        "nodes": [
            {"span": list(n.leaf_span), "children": None if n.is_leaf else list(n.children), "head": n.head}
            for n in tree.nodes
        ],
    }


def _untree(d):
    scale = OrdinalScale(_unarr(d["boundaries"]))
    try:
        if d["kind"] == "custom":
            nodes = d["nodes"]
            splits = {tuple(n["span"]): nodes[n["children"][1]]["span"][0]
                      for n in nodes if n["children"] is not None}
            tree = build_tree_from_splits(scale, splits)
        else:
            tree = build_tree(scale, d["kind"])
    except (ValueError, IndexError, KeyError, TypeError) as err:
        raise ModelFileError(f"invalid tree record: {err}") from None
    stored = [(tuple(n["span"]), None if n["children"] is None else tuple(n["children"]), n["head"])
              for n in d["nodes"]]
    rebuilt = [(n.leaf_span, n.children, n.head) for n in tree.nodes]
    if stored != rebuilt:
        raise ModelFileError("stored tree nodes do not match the tree rebuilt from its scale")
    return tree


def _partition(p: ConfounderPartition | None):
    return None if p is None else {"cuts": _arr(p.cuts), "prior": _arr(p.prior)}


def _unpartition(d):
    return None if d is None else ConfounderPartition(_unarr(d["cuts"]), _unarr(d["prior"]))


def method_of(model) -> str:
    for cls, tag in _TAGS:
        if isinstance(model, cls):
            return tag
    raise TypeError(f"cannot serialise {type(model).__name__}")


def _payload(model) -> dict:
    if isinstance(model, TpmModel):
        out = {"tree": _tree(model.tree), "net": _net(model.net)}
        if model.leaf_values is not None:
            out["leaf_values"] = _arr(model.leaf_values)
        return out
    if isinstance(model, DeconfoundedModel):
        return {
            "partition": _partition(model.partition),
            "conditioning": model.conditioning,
            "scale_mode": model.scale_mode,
            "trees": [_tree(t) for t in model.trees],
            "nets": [_net(n) for n in model.nets],
        }
    if isinstance(model, WlrModel):
        return {"threshold": model.threshold, "net": _net(model.net)}
    if isinstance(model, D2qModel):
        return {
            "partition": _partition(model.partition),
            "net": _net(model.net),
            "sorted_times": [_arr(s) for s in model.sorted_times],
        }
    if isinstance(model, OrModel):
        return {"scale": _arr(model.scale.boundaries), "net": _net(model.net),
                "partition": _partition(model.partition)}
    raise TypeError(f"cannot serialise {type(model).__name__}")


def _unpayload(method, p):
    if method == "tpm":
        values = p.get("leaf_values")
        return TpmModel(_untree(p["tree"]), _unnet(p["net"]), None if values is None else _unarr(values))
    if method == "tpm-deconfounded":
        return DeconfoundedModel(_unpartition(p["partition"]), [_untree(t) for t in p["trees"]],
                                 [_unnet(n) for n in p["nets"]], p["conditioning"], p["scale_mode"])
    if method == "wlr":
        return WlrModel(_unnet(p["net"]), float(p["threshold"]))
    if method == "d2q":
        return D2qModel(_unpartition(p["partition"]), _unnet(p["net"]),
                        [_unarr(s) for s in p["sorted_times"]])
    if method == "or":
        return OrModel(OrdinalScale(_unarr(p["scale"])), _unnet(p["net"]), _unpartition(p["partition"]))
    raise ModelFileError(f"unknown method tag {method!r}")


def _checksum(doc: dict) -> str:
    body = {k: v for k, v in doc.items() if k != "checksum"}
    canon = json.dumps(body, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def save_model(model, path, config: dict | None = None) -> None:
    doc = {
        "format": FORMAT,
        "version": VERSION,
        "method": method_of(model),
        "payload": _payload(model),
        "config": config or {},
    }
    doc["checksum"] = _checksum(doc)
    Path(path).write_text(json.dumps(doc, sort_keys=True))


def load_model(path, with_config: bool = False):
    """Read a model file; ``with_config=True`` also returns the stored run configuration."""
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as err:
        raise ModelFileError(f"{path}: unreadable model file ({err})") from None
    if doc.get("format") != FORMAT:
        raise ModelFileError(f"{path}: not a {FORMAT} file")
    if doc.get("version") != VERSION:
        raise ModelFileError(f"{path}: unsupported model format version {doc.get('version')!r}")
    if doc.get("checksum") != _checksum(doc):
        raise ModelFileError(f"{path}: checksum mismatch, file is corrupt or was edited")
    try:
        model = _unpayload(doc["method"], doc["payload"])
    except ModelFileError:
        raise
    except (KeyError, IndexError, TypeError, ValueError) as err:
        raise ModelFileError(f"{path}: invalid model payload ({err})") from None
    return (model, doc["config"]) if with_config else model


_TAGS = [
    (TpmModel, "tpm"),
    (DeconfoundedModel, "tpm-deconfounded"),
    (WlrModel, "wlr"),
    (D2qModel, "d2q"),
    (OrModel, "or"),
]
