"""Attribute prior estimation and the seen/unseen inference priors.

The composition prior ``k`` is a softmax over *feasible* pairs only; an
infeasible pair gets exactly zero mass instead of the ``exp(0)`` weight a
literal dense softmax would hand it.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .classifiers import PrototypeClassifier, SemanticTable, logits
from .core import softmax
from .errors import ContractError, ShapeError, ValidationError
from .space import CompositionSpace

log = logging.getLogger(__name__)

EPS = 1e-12

PRODUCT = "product"
LOG_PRODUCT = "log"


@dataclass
class AttributePriorTable:
    state_prior: np.ndarray
    object_prior: np.ndarray
    k: np.ndarray
    epoch: int = 0

    def to_arrays(self) -> dict:
        return {"state_prior": self.state_prior, "object_prior": self.object_prior, "k": self.k}


@dataclass
class InferencePrior:
    """Per-class log-priors; ``log_prior`` is ``(|Y|,)`` or ``(samples, |Y|)``."""

    log_prior: np.ndarray
    lam: float
    eta: float
    eps: float = EPS


def _pair_products(ps, po, space: CompositionSpace, form: str) -> np.ndarray:
    ps = np.asarray(ps, dtype=np.float64)
    po = np.asarray(po, dtype=np.float64)
    if ps.shape[-1] != space.n_states or po.shape[-1] != space.n_objects:
        raise ShapeError(f"prior lengths {ps.shape[-1]}/{po.shape[-1]} vs space "
                         f"{space.n_states}/{space.n_objects}")
    a = ps[..., space.pair_state]
    b = po[..., space.pair_object]
    if form == PRODUCT:
        return a * b
    if form == LOG_PRODUCT:
        return np.log(np.maximum(a, EPS)) + np.log(np.maximum(b, EPS))
    raise ValueError(f"unknown prior form {form!r}")


def compute_k(state_prior, object_prior, space: CompositionSpace, form: str = PRODUCT):
    """Softmax over feasible pairs of ``p(s) * p(o)``.

    ``form="log"`` feeds ``log p(s) + log p(o)`` to the softmax instead, which
    makes ``k`` the renormalised product itself.
    """
    return softmax(_pair_products(state_prior, object_prior, space, form))


def instance_k_hat(ps_x, po_x, space: CompositionSpace, form: str = PRODUCT):
    """Per-sample composition posterior from the state/object classifiers.

    Accepts one sample (1-D inputs) or a batch (2-D inputs).
    """
    return softmax(_pair_products(ps_x, po_x, space, form))


def estimate_attribute_prior(cs: PrototypeClassifier, co: PrototypeClassifier,
                             train_features, semantics: SemanticTable,
                             space: CompositionSpace, form: str = PRODUCT,
                             epoch: int = 0) -> AttributePriorTable:
    """Average the state/object posteriors over the training features."""
    x = np.asarray(train_features, dtype=np.float64)
    if x.ndim != 2 or len(x) == 0:
        raise ContractError("attribute prior needs a nonempty training set")
    ps = softmax(logits(cs, x, semantics.states))
    po = softmax(logits(co, x, semantics.objects))
    return prior_from_posteriors(ps, po, space, form, epoch)


def prior_from_posteriors(ps, po, space, form=PRODUCT, epoch=0) -> AttributePriorTable:
    ps = np.atleast_2d(ps)
    po = np.atleast_2d(po)
    if len(ps) == 0 or len(ps) != len(po):
        raise ContractError("posterior batches must be nonempty and aligned")
    state_prior = ps.mean(axis=0)
    object_prior = po.mean(axis=0)
    k = compute_k(state_prior, object_prior, space, form)
    return AttributePriorTable(state_prior, object_prior, k, epoch)


def class_frequency_prior(pair_labels, space: CompositionSpace) -> AttributePriorTable:
    """Class prior from training-split counts (ablation baseline only).

    Unseen pairs have no counts; they receive the mean seen frequency so the
    training loss neither drops them nor favours them.
    """
    counts = np.bincount(np.asarray(pair_labels, dtype=np.int64),
                         minlength=space.n_pairs).astype(np.float64)
    seen = space.seen_mask
    if counts[seen].sum() == 0:
        raise ContractError("no training labels on seen pairs")
    freq = counts.copy()
    freq[~seen] = counts[seen].mean()
    k = freq / freq.sum()
    uniform_s = np.full(space.n_states, 1.0 / space.n_states)
    uniform_o = np.full(space.n_objects, 1.0 / space.n_objects)
    return AttributePriorTable(uniform_s, uniform_o, k, 0)


def uniform_prior(space: CompositionSpace) -> AttributePriorTable:
    return AttributePriorTable(np.full(space.n_states, 1.0 / space.n_states),
                               np.full(space.n_objects, 1.0 / space.n_objects),
                               np.full(space.n_pairs, 1.0 / space.n_pairs), 0)


def build_inference_prior(k, k_hat, lam: float, eta: float, space: CompositionSpace,
                          eps: float = EPS) -> InferencePrior:
    """Seen pairs: ``k`` renormalised over the seen set.

    Unseen pairs: ``k + k_hat / (lam * k)`` renormalised over the unseen set,
    where ``k_hat`` is the per-sample composition posterior (1-D for one
    sample, 2-D for a batch). ``lam = inf`` drops the sample term.
    """
    if isinstance(k, AttributePriorTable):
        k = k.k
    k = np.asarray(k, dtype=np.float64)
    if k.shape != (space.n_pairs,):
        raise ShapeError(f"k has shape {k.shape}, expected ({space.n_pairs},)")
    if not lam > 0:
        raise ValidationError(f"lambda must be positive, got {lam}")
    if eta < 0:
        raise ValidationError(f"eta must be non-negative, got {eta}")
    seen = space.seen_mask
    unseen = ~seen
    k_hat = np.asarray(k_hat, dtype=np.float64)
    if k_hat.shape[-1] != space.n_pairs:
        raise ShapeError(f"k_hat last axis {k_hat.shape[-1]} != {space.n_pairs}")

    prior = np.zeros(np.broadcast_shapes(k.shape, k_hat.shape))
    if seen.any():
        prior[..., seen] = k[seen] / k[seen].sum()
    if unseen.any():
        k_u = k[unseen]
        if np.any(k_u <= 0):
            log.warning("zero attribute prior on %d unseen pairs; flooring denominator at %g",
                        int(np.sum(k_u <= 0)), eps)
        if np.isinf(lam):
            raw = np.broadcast_to(k_u, prior[..., unseen].shape)
        else:
            raw = k_u + k_hat[..., unseen] / (lam * np.maximum(k_u, eps))
        prior[..., unseen] = raw / raw.sum(axis=-1, keepdims=True)
    return InferencePrior(np.log(np.maximum(prior, eps)), float(lam), float(eta), eps)
