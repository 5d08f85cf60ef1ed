"""Cosine prototype classifiers and the ensemble posterior baseline."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .core import Mlp, init_mlp, mlp_backward, mlp_forward
from .errors import ShapeError, ValidationError
from .space import CompositionSpace

log = logging.getLogger(__name__)

_NORM_FLOOR = 1e-12


@dataclass
class SemanticTable:
    """Word-vector stand-ins: one row per state and per object."""

    states: np.ndarray
    objects: np.ndarray

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float64)
        self.objects = np.asarray(self.objects, dtype=np.float64)
        if self.states.ndim != 2 or self.objects.ndim != 2:
            raise ShapeError("semantic tables must be 2-D")
        if self.states.shape[1] != self.objects.shape[1]:
            raise ShapeError("state and object vectors must share a dimension")
        if not (np.all(np.isfinite(self.states)) and np.all(np.isfinite(self.objects))):
            raise ValidationError("semantic vectors must be finite")

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    def pair_vectors(self, space: CompositionSpace) -> np.ndarray:
        """Composition vectors: state vector concatenated with object vector."""
        return np.hstack([self.states[space.pair_state], self.objects[space.pair_object]])

    def check(self, space: CompositionSpace):
        if len(self.states) != space.n_states or len(self.objects) != space.n_objects:
            raise ValidationError(
                f"semantic table has {len(self.states)}/{len(self.objects)} rows, space needs "
                f"{space.n_states}/{space.n_objects}")


class PrototypeClassifier:
    """``logit(x, c) = cos(V(x), P(w_c)) / tau``.

    ``V`` embeds visual features and ``P`` maps a class's semantic vector to
    its prototype; both are MLPs ending in the same embedding width.
    """

    def __init__(self, embedder: Mlp, prototype: Mlp, tau: float):
        if tau <= 0:
            raise ValidationError(f"temperature must be positive, got {tau}")
        if embedder.out_dim != prototype.out_dim:
            raise ShapeError(f"embedder width {embedder.out_dim} != prototype width "
                             f"{prototype.out_dim}")
        self.embedder = embedder
        self.prototype = prototype
        self.tau = float(tau)

    @classmethod
    def create(cls, feature_dim, semantic_dim, rng, *, hidden=1024, embed=512, tau=0.1,
               dropout=0.3):
        embedder = init_mlp([feature_dim, hidden, embed], rng, dropout=dropout)
        prototype = init_mlp([semantic_dim, hidden, embed], rng, dropout=0.0)
        return cls(embedder, prototype, tau)

    def parameters(self) -> list[np.ndarray]:
        return self.embedder.parameters() + self.prototype.parameters()

    def mark_updated(self):
        self.embedder.version += 1
        self.prototype.version += 1

    def copy(self) -> "PrototypeClassifier":
        return PrototypeClassifier(self.embedder.copy(), self.prototype.copy(), self.tau)

    def forward(self, features, semantics, train_mode=False, rng=None):
        e, e_cache = mlp_forward(self.embedder, features, train_mode, rng)
        p, p_cache = mlp_forward(self.prototype, semantics, train_mode, rng)
        e_norm = np.linalg.norm(e, axis=1, keepdims=True)
        p_norm = np.linalg.norm(p, axis=1, keepdims=True)
        dead_e = e_norm[:, 0] < _NORM_FLOOR
        dead_p = p_norm[:, 0] < _NORM_FLOOR
        if dead_e.any() or dead_p.any():
            log.warning("zero-norm embedding (%d samples, %d prototypes); cosine set to 0",
                        int(dead_e.sum()), int(dead_p.sum()))
        u = np.where(dead_e[:, None], 0.0, e / np.maximum(e_norm, _NORM_FLOOR))
        q = np.where(dead_p[:, None], 0.0, p / np.maximum(p_norm, _NORM_FLOOR))
        logits = (u @ q.T) / self.tau
        cache = (e_cache, p_cache, u, q, e_norm, p_norm, dead_e, dead_p)
        return logits, cache

    def backward(self, cache, dlogits) -> list[np.ndarray]:
        """Gradients for :meth:`parameters` given d(loss)/d(logits)."""
        e_cache, p_cache, u, q, e_norm, p_norm, dead_e, dead_p = cache
        du = dlogits @ q / self.tau
        dq = dlogits.T @ u / self.tau
        de = (du - u * np.sum(du * u, axis=1, keepdims=True)) / np.maximum(e_norm, _NORM_FLOOR)
        dp = (dq - q * np.sum(dq * q, axis=1, keepdims=True)) / np.maximum(p_norm, _NORM_FLOOR)
        de[dead_e] = 0.0
        dp[dead_p] = 0.0
        ge, _ = mlp_backward(self.embedder, e_cache, de)
        gp, _ = mlp_backward(self.prototype, p_cache, dp)
        return ge + gp


def logits(clf: PrototypeClassifier, features, semantics) -> np.ndarray:
    """Eval-mode cosine logits, shape ``(samples, classes)``."""
    features = np.asarray(features, dtype=np.float64)
    semantics = np.asarray(semantics, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != clf.embedder.in_dim:
        raise ShapeError(f"features {features.shape} vs embedder input {clf.embedder.in_dim}")
    if semantics.ndim != 2 or semantics.shape[1] != clf.prototype.in_dim:
        raise ShapeError(f"semantics {semantics.shape} vs prototype input {clf.prototype.in_dim}")
    out, _ = clf.forward(features, semantics, train_mode=False)
    return out


def ensemble_posterior(py, ps, po, delta: float, space: CompositionSpace) -> np.ndarray:
    """Per-pair score ``delta*p(y|x) + (1-delta)*(p(s|x) + p(o|x))``.

    Rows need not sum to one; the output is only meant for ranking.
    """
    if not 0.0 <= delta <= 1.0:
        raise ValidationError(f"ensemble weight {delta} outside [0, 1]")
    py, ps, po = (np.atleast_2d(np.asarray(a, dtype=np.float64)) for a in (py, ps, po))
    n = py.shape[0]
    if py.shape != (n, space.n_pairs) or ps.shape != (n, space.n_states) \
            or po.shape != (n, space.n_objects):
        raise ShapeError(f"posterior shapes {py.shape}, {ps.shape}, {po.shape} do not match "
                         "the composition space")
    return delta * py + (1.0 - delta) * (ps[:, space.pair_state] + po[:, space.pair_object])
