"""FeatureBundle: features + labels + split assignment + composition space.

On-disk layout (a directory):

``meta.json``
    UTF-8 JSON, keys sorted, 1-space indent: format tag, composition space,
    semantic vectors, ``d_x``, ``n_samples``, per-sample ``splits`` and a
    free-text ``provenance`` note.
``features.f32``
    ``n_samples * d_x`` little-endian float32 values, row-major, no header.
``labels.csv``
    Header ``state,object`` then one row of integer indices per sample.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .classifiers import SemanticTable
from .errors import ValidationError
from .space import CompositionSpace, pair_indices

FORMAT_TAG = "attrprior-bundle/1"
SPLITS = ("train", "val", "test")

META_FILE = "meta.json"
FEATURE_FILE = "features.f32"
LABEL_FILE = "labels.csv"


@dataclass
class FeatureBundle:
    space: CompositionSpace
    semantics: SemanticTable
    features: np.ndarray
    states: np.ndarray
    objects: np.ndarray
    splits: np.ndarray
    provenance: str = ""

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.states = np.asarray(self.states, dtype=np.int64)
        self.objects = np.asarray(self.objects, dtype=np.int64)
        self.splits = np.asarray(self.splits, dtype=object)
        self.validate()

    def validate(self):
        n = len(self.features)
        if self.features.ndim != 2:
            raise ValidationError("feature matrix must be 2-D")
        if not (len(self.states) == len(self.objects) == len(self.splits) == n):
            raise ValidationError("labels, splits and features disagree on sample count")
        if not np.all(np.isfinite(self.features)):
            raise ValidationError("features contain NaN/Inf")
        bad = sorted(set(self.splits) - set(SPLITS))
        if bad:
            raise ValidationError(f"unknown split names {bad}")
        self.semantics.check(self.space)
        pairs = pair_indices(self.space, self.states, self.objects)
        train = self.splits == "train"
        if np.any(~self.space.seen_mask[pairs[train]]):
            raise ValidationError("train split contains samples of unseen pairs")
        self._pairs = pairs

    @property
    def d_x(self) -> int:
        return self.features.shape[1]

    @property
    def pairs(self) -> np.ndarray:
        return self._pairs

    def split(self, name: str):
        """``(features, states, objects, pair_indices)`` for one split."""
        m = self.splits == name
        return self.features[m], self.states[m], self.objects[m], self._pairs[m]

    def counts(self, name: str = "train") -> np.ndarray:
        return np.bincount(self._pairs[self.splits == name], minlength=self.space.n_pairs)

    def meta(self) -> dict:
        return {
            "format": FORMAT_TAG,
            "space": self.space.to_dict(),
            "semantics": {"states": self.semantics.states.tolist(),
                          "objects": self.semantics.objects.tolist()},
            "d_x": self.d_x,
            "n_samples": len(self.features),
            "splits": [str(s) for s in self.splits],
            "provenance": self.provenance,
        }

    def digest(self) -> str:
        h = hashlib.sha256()
        for blob in _encode(self):
            h.update(blob)
        return h.hexdigest()


def _encode(bundle: FeatureBundle):
    meta = json.dumps(bundle.meta(), sort_keys=True, indent=1).encode("utf-8") + b"\n"
    payload = np.ascontiguousarray(bundle.features, dtype="<f4").tobytes()
    buf = io.StringIO(newline="")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["state", "object"])
    writer.writerows(zip(bundle.states.tolist(), bundle.objects.tolist()))
    return meta, payload, buf.getvalue().encode("utf-8")


def write_bundle(bundle: FeatureBundle, path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    meta, payload, labels = _encode(bundle)
    (path / META_FILE).write_bytes(meta)
    (path / FEATURE_FILE).write_bytes(payload)
    (path / LABEL_FILE).write_bytes(labels)
    return path


def read_bundle(path) -> FeatureBundle:
    path = Path(path)
    try:
        meta = json.loads((path / META_FILE).read_text(encoding="utf-8"))
        payload = (path / FEATURE_FILE).read_bytes()
        label_text = (path / LABEL_FILE).read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise ValidationError(f"incomplete bundle at {path}: {exc.filename} missing") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"unreadable bundle metadata: {exc}") from exc
    if meta.get("format") != FORMAT_TAG:
        raise ValidationError(f"unsupported bundle format {meta.get('format')!r}")
    n, d_x = int(meta["n_samples"]), int(meta["d_x"])
    if len(payload) != n * d_x * 4:
        raise ValidationError(f"feature payload length mismatch: {len(payload)} bytes, "
                              f"expected {n} x {d_x} x 4 = {n * d_x * 4}")
    features = np.frombuffer(payload, dtype="<f4").reshape(n, d_x).astype(np.float64)
    rows = list(csv.reader(io.StringIO(label_text)))
    if not rows or rows[0] != ["state", "object"]:
        raise ValidationError("labels.csv must start with a 'state,object' header")
    labels = np.array([[int(a), int(b)] for a, b in rows[1:]], dtype=np.int64).reshape(-1, 2)
    if len(labels) != n:
        raise ValidationError(f"{len(labels)} label rows for {n} samples")
    space = CompositionSpace.from_dict(meta["space"])
    sem = SemanticTable(np.array(meta["semantics"]["states"], dtype=np.float64),
                        np.array(meta["semantics"]["objects"], dtype=np.float64))
    return FeatureBundle(space, sem, features, labels[:, 0], labels[:, 1],
                         np.array(meta["splits"], dtype=object), meta.get("provenance", ""))


def import_features(features, states, objects, splits, space: CompositionSpace,
                    semantics: SemanticTable, provenance="imported") -> FeatureBundle:
    """Wrap an externally produced feature matrix; values are rounded to float32
    so the in-memory bundle equals what a round trip through disk yields."""
    x = np.asarray(features, dtype=np.float32).astype(np.float64)
    return FeatureBundle(space, semantics, x, states, objects, splits, provenance)
