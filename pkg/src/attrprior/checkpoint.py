"""Byte-deterministic model checkpoints.

Layout::

    8 bytes   magic b"ATPRCK01"
    8 bytes   header length H, unsigned little-endian
    H bytes   UTF-8 JSON header, sorted keys, no whitespace
    ...       array payload: every array listed in the header, in order,
              as little-endian float64, row-major

The header carries the training config, the composition-space digest,
per-classifier layer layout (activations, dropout rates, tau) and, for
each array, its name, shape and byte offset into the payload. Nothing
time- or host-dependent is written, so equal models give equal bytes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .classifiers import PrototypeClassifier
from .core import Mlp
from .errors import ValidationError
from .pipeline import CompositionalModel
from .priors import AttributePriorTable
from .training import TrainConfig

MAGIC = b"ATPRCK01"
FORMAT_TAG = "attrprior-checkpoint/1"
CLASSIFIERS = ("cs", "co", "cy")


def _net_layout(prefix, net: Mlp, arrays):
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        arrays.append((f"{prefix}.W{i}", w))
        arrays.append((f"{prefix}.b{i}", b))
    return {"activations": list(net.activations), "dropouts": [float(r) for r in net.dropouts]}


def encode_checkpoint(model) -> bytes:
    arrays = []
    nets = {}
    for name in CLASSIFIERS:
        clf = getattr(model, name)
        nets[name] = {"tau": clf.tau,
                      "embedder": _net_layout(f"{name}.embedder", clf.embedder, arrays),
                      "prototype": _net_layout(f"{name}.prototype", clf.prototype, arrays)}
    for key, arr in model.prior.to_arrays().items():
        arrays.append((f"prior.{key}", arr))

    index, blobs, offset = [], [], 0
    for name, arr in arrays:
        blob = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        index.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(blob)
        offset += len(blob)
    header = {
        "format": FORMAT_TAG,
        "config": model.config.to_dict(),
        "space_digest": model.space_digest,
        "prior_epoch": int(model.prior.epoch),
        "nets": nets,
        "arrays": index,
        "payload_bytes": offset,
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":"), allow_nan=True).encode()
    return MAGIC + struct.pack("<Q", len(head)) + head + b"".join(blobs)


def save_checkpoint(model, path) -> Path:
    path = Path(path)
    path.write_bytes(encode_checkpoint(model))
    return path


def decode_checkpoint(data: bytes):
    if len(data) < 16 or data[:8] != MAGIC:
        raise ValidationError("not a checkpoint file (bad magic)")
    (h_len,) = struct.unpack("<Q", data[8:16])
    try:
        header = json.loads(data[16:16 + h_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ValidationError(f"corrupt checkpoint header: {exc}") from exc
    if header.get("format") != FORMAT_TAG:
        raise ValidationError(f"unsupported checkpoint format {header.get('format')!r}")
    payload = data[16 + h_len:]
    if len(payload) != header["payload_bytes"]:
        raise ValidationError(f"checkpoint payload is {len(payload)} bytes, header says "
                              f"{header['payload_bytes']}")
    arrays = {}
    for entry in header["arrays"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        start = entry["offset"]
        raw = np.frombuffer(payload, dtype="<f8", count=count, offset=start)
        arrays[entry["name"]] = raw.reshape(entry["shape"]).astype(np.float64)

    def net(prefix, layout):
        n = len(layout["activations"])
        return Mlp([arrays[f"{prefix}.W{i}"] for i in range(n)],
                   [arrays[f"{prefix}.b{i}"] for i in range(n)],
                   list(layout["activations"]), list(layout["dropouts"]))

    clfs = {}
    for name in CLASSIFIERS:
        spec = header["nets"][name]
        clfs[name] = PrototypeClassifier(net(f"{name}.embedder", spec["embedder"]),
                                         net(f"{name}.prototype", spec["prototype"]),
                                         spec["tau"])
    prior = AttributePriorTable(arrays["prior.state_prior"], arrays["prior.object_prior"],
                                arrays["prior.k"], header["prior_epoch"])
    cfg = TrainConfig.from_dict(header["config"])
    return CompositionalModel(clfs["cs"], clfs["co"], clfs["cy"], prior, cfg,
                              header["space_digest"])


def load_checkpoint(path, space_digest: str | None = None):
    """Read a checkpoint; with ``space_digest`` given, refuse one trained on
    a different composition space."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except FileNotFoundError as exc:
        raise ValidationError(f"no checkpoint at {path}") from exc
    model = decode_checkpoint(data)
    if space_digest is not None and model.space_digest != space_digest:
        raise ValidationError("checkpoint was trained on a different composition space "
                              f"({model.space_digest[:12]} vs {space_digest[:12]})")
    return model
