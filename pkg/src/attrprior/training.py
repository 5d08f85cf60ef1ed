"""Losses and the two-stage training schedule.

Stage 1 fits the state and object classifiers with the sum of two
cross-entropies. Stage 2 estimates the attribute prior from them, freezes
it (unless a refresh interval is set) and fits the composition classifier
with the prior-adjusted cross-entropy. Both stages early-stop on validation
AUC and restore the best epoch.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .bundle import FeatureBundle
from .classifiers import PrototypeClassifier
from .core import Adam, log_softmax, make_rng, softmax
from .errors import ContractError, NumericalError, ValidationError
from .evaluate import bias_sweep
from .priors import (EPS, PRODUCT, AttributePriorTable, build_inference_prior,
                     class_frequency_prior, estimate_attribute_prior, instance_k_hat,
                     uniform_prior)

log = logging.getLogger(__name__)

PRIOR_MODES = ("attribute", "class-frequency", "none")


@dataclass
class TrainConfig:
    lr: float = 5e-4
    batch_size: int = 128
    epochs_stage1: int = 50
    epochs_stage2: int = 1000
    patience: int = 20
    eta: float = 1.0
    lam: float = 10.0
    tau: float = 0.1
    dropout: float = 0.3
    hidden: int = 1024
    embed: int = 512
    seed: int = 0
    prior_refresh: int = 0
    prior: str = "attribute"
    prior_form: str = PRODUCT
    inference_prior: bool = True
    stage2_update_attr: bool = False

    def __post_init__(self):
        if not self.lr > 0:
            raise ValidationError("learning rate must be positive")
        if self.batch_size < 1:
            raise ValidationError("batch size must be at least 1")
        if self.patience < 1:
            raise ValidationError("patience must be at least 1")
        if self.eta < 0:
            raise ValidationError("eta must be non-negative")
        if not self.lam > 0:
            raise ValidationError("lambda must be positive")
        if not self.tau > 0:
            raise ValidationError("tau must be positive")
        if not 0 <= self.dropout < 1:
            raise ValidationError("dropout must lie in [0, 1)")
        if self.epochs_stage1 < 0 or self.epochs_stage2 < 0 or self.prior_refresh < 0:
            raise ValidationError("epoch counts must be non-negative")
        if self.prior not in PRIOR_MODES:
            raise ValidationError(f"prior mode must be one of {PRIOR_MODES}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ValidationError(f"unknown training options {unknown}")
        return cls(**doc)


@dataclass
class TrainTrace:
    stage: str
    losses: list = field(default_factory=list)
    val_auc: list = field(default_factory=list)
    best_epoch: int = 0
    seconds: float = 0.0

    def records(self):
        for epoch, auc in enumerate(self.val_auc):
            loss = self.losses[epoch - 1] if epoch else None
            yield {"stage": self.stage, "epoch": epoch, "loss": loss, "val_auc": auc,
                   "best": epoch == self.best_epoch}


# -- losses -------------------------------------------------------------------

def cross_entropy(logits, labels):
    """Mean cross-entropy and its gradient w.r.t. the logits."""
    z = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n, c = z.shape
    if len(labels) != n or labels.min(initial=0) < 0 or labels.max(initial=0) >= c:
        raise ContractError("labels out of range for the logit matrix")
    lp = log_softmax(z)
    rows = np.arange(n)
    loss = -lp[rows, labels].mean()
    grad = np.exp(lp)
    grad[rows, labels] -= 1.0
    return float(loss), grad / n


def loss_ic(cs_logits, co_logits, state_labels, object_labels):
    """Independent-classifier loss: state CE + object CE, batch mean."""
    ls, gs = cross_entropy(cs_logits, state_labels)
    lo, go = cross_entropy(co_logits, object_labels)
    return ls + lo, gs, go


def loss_cls(cy_logits, labels, k, eta: float, eps: float = EPS):
    """Prior-adjusted composition loss.

    ``log(1 + sum_{j != y} (k_j / k_y)^eta * exp(C_j - C_y))`` is evaluated as
    the cross-entropy of ``C + eta * log k``.
    """
    if isinstance(k, AttributePriorTable):
        k = k.k
    k = np.asarray(k, dtype=np.float64)
    z = np.asarray(cy_logits, dtype=np.float64)
    if k.shape != (z.shape[1],):
        raise ContractError(f"prior length {k.shape} vs {z.shape[1]} logit columns")
    labels = np.asarray(labels, dtype=np.int64)
    if eta == 0:
        return cross_entropy(z, labels)
    if np.any(k[labels] <= 0):
        log.warning("ground-truth class with zero prior; flooring at %g", eps)
    return cross_entropy(z + eta * np.log(np.maximum(k, eps)), labels)


# -- stage helpers -------------------------------------------------------------

def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def _check_finite(loss, stage, epoch):
    if not np.isfinite(loss):
        raise NumericalError(f"{stage}: non-finite loss at epoch {epoch}")


def attribute_posteriors(cs, co, x, semantics):
    ps = softmax(cs.forward(x, semantics.states)[0])
    po = softmax(co.forward(x, semantics.objects)[0])
    return ps, po


def stage1_scores(cs, co, x, bundle: FeatureBundle):
    """Composition scores from the independent classifiers: p(s|x) * p(o|x)."""
    ps, po = attribute_posteriors(cs, co, x, bundle.semantics)
    space = bundle.space
    return ps[:, space.pair_state] * po[:, space.pair_object]


def _need_split(bundle, name):
    if not np.any(bundle.splits == name):
        raise ValidationError(f"bundle has no {name!r} samples")


def _ic_step(cs, co, opt, x, s, o, sem, rng):
    zs, cache_s = cs.forward(x, sem.states, True, rng)
    zo, cache_o = co.forward(x, sem.objects, True, rng)
    loss, gs, go = loss_ic(zs, zo, s, o)
    opt.step(cs.backward(cache_s, gs) + co.backward(cache_o, go))
    cs.mark_updated()
    co.mark_updated()
    return loss


def train_stage1(bundle: FeatureBundle, cfg: TrainConfig, rng=None):
    """Fit C_s and C_o on the train split; returns ``(cs, co, trace)``."""
    _need_split(bundle, "train")
    _need_split(bundle, "val")
    rng = make_rng(cfg.seed) if rng is None else rng
    sem = bundle.semantics
    cs = PrototypeClassifier.create(bundle.d_x, sem.dim, rng, hidden=cfg.hidden,
                                    embed=cfg.embed, tau=cfg.tau, dropout=cfg.dropout)
    co = PrototypeClassifier.create(bundle.d_x, sem.dim, rng, hidden=cfg.hidden,
                                    embed=cfg.embed, tau=cfg.tau, dropout=cfg.dropout)
    x, s, o, _ = bundle.split("train")
    xv, _, _, yv = bundle.split("val")
    opt = Adam(cs.parameters() + co.parameters(), lr=cfg.lr)
    trace = TrainTrace("stage1")
    t0 = time.perf_counter()

    def val_auc():
        return _auc(bias_sweep(stage1_scores(cs, co, xv, bundle), yv, bundle.space))

    best = val_auc()
    trace.val_auc.append(best)
    best_state = (cs.copy(), co.copy())
    for epoch in range(1, cfg.epochs_stage1 + 1):
        total, count = 0.0, 0
        for idx in _batches(len(x), cfg.batch_size, rng):
            loss = _ic_step(cs, co, opt, x[idx], s[idx], o[idx], sem, rng)
            _check_finite(loss, "stage1", epoch)
            total += loss * len(idx)
            count += len(idx)
        trace.losses.append(total / count)
        auc = val_auc()
        trace.val_auc.append(auc)
        if auc > best:
            best, trace.best_epoch = auc, epoch
            best_state = (cs.copy(), co.copy())
        elif epoch - trace.best_epoch >= cfg.patience:
            break
    trace.seconds = time.perf_counter() - t0
    cs, co = best_state
    log.info("stage1: best val AUC %.4f at epoch %d", best, trace.best_epoch)
    return cs, co, trace


def _auc(report):
    return float(report.auc) if report.auc is not None else float(report.best_hm)


def make_prior(bundle: FeatureBundle, cs, co, cfg: TrainConfig, epoch=0) -> AttributePriorTable:
    space = bundle.space
    if cfg.prior == "attribute":
        x, _, _, _ = bundle.split("train")
        return estimate_attribute_prior(cs, co, x, bundle.semantics, space,
                                        cfg.prior_form, epoch)
    if cfg.prior == "class-frequency":
        return class_frequency_prior(bundle.split("train")[3], space)
    return uniform_prior(space)


def inference_prior_for(table: AttributePriorTable, cs, co, x, bundle, cfg: TrainConfig):
    """Per-sample inference prior for features ``x`` under the configured mode."""
    space = bundle.space
    if cfg.prior == "attribute":
        ps, po = attribute_posteriors(cs, co, x, bundle.semantics)
        k_hat = instance_k_hat(ps, po, space, cfg.prior_form)
        return build_inference_prior(table.k, k_hat, cfg.lam, cfg.eta, space)
    # no per-sample evidence without attribute posteriors: unseen branch is k itself
    k_hat = np.zeros(space.n_pairs)
    return build_inference_prior(table.k, k_hat, np.inf, cfg.eta, space)


def composition_scores(cy, table, cs, co, x, bundle, cfg: TrainConfig,
                       inference_prior: bool | None = None):
    """Adjusted inference scores ``C_y + eta * log prior`` (raw ``C_y`` when the
    inference prior is switched off or eta is zero)."""
    z = cy.forward(x, bundle.semantics.pair_vectors(bundle.space))[0]
    use_prior = cfg.inference_prior if inference_prior is None else inference_prior
    if not use_prior or cfg.eta == 0:
        return z
    prior = inference_prior_for(table, cs, co, x, bundle, cfg)
    return z + cfg.eta * prior.log_prior


def train_stage2(bundle: FeatureBundle, cs, co, cfg: TrainConfig, rng=None):
    """Fit C_y with the prior-adjusted loss.

    Returns ``(cy, table, trace, cs, co)``. ``cs``/``co`` come back untouched
    unless ``cfg.stage2_update_attr`` is set, in which case copies of them keep
    taking independent-classifier steps alongside C_y.
    """
    _need_split(bundle, "train")
    _need_split(bundle, "val")
    rng = make_rng(cfg.seed + 1) if rng is None else rng
    space = bundle.space
    sem = bundle.semantics
    pair_sem = sem.pair_vectors(space)
    cy = PrototypeClassifier.create(bundle.d_x, 2 * sem.dim, rng, hidden=cfg.hidden,
                                    embed=cfg.embed, tau=cfg.tau, dropout=cfg.dropout)
    x, s, o, y = bundle.split("train")
    xv, _, _, yv = bundle.split("val")
    if cfg.stage2_update_attr:
        cs, co = cs.copy(), co.copy()
        attr_opt = Adam(cs.parameters() + co.parameters(), lr=cfg.lr)
    table = make_prior(bundle, cs, co, cfg)
    opt = Adam(cy.parameters(), lr=cfg.lr)
    trace = TrainTrace("stage2")
    t0 = time.perf_counter()

    def val_auc():
        scores = composition_scores(cy, table, cs, co, xv, bundle, cfg)
        return _auc(bias_sweep(scores, yv, space))

    best = val_auc()
    trace.val_auc.append(best)
    best_state = (cy.copy(), table, cs, co)
    for epoch in range(1, cfg.epochs_stage2 + 1):
        if cfg.prior_refresh and epoch > 1 and (epoch - 1) % cfg.prior_refresh == 0:
            table = make_prior(bundle, cs, co, cfg, epoch - 1)
        total, count = 0.0, 0
        for idx in _batches(len(x), cfg.batch_size, rng):
            z, cache = cy.forward(x[idx], pair_sem, True, rng)
            loss, g = loss_cls(z, y[idx], table.k, cfg.eta)
            _check_finite(loss, "stage2", epoch)
            opt.step(cy.backward(cache, g))
            cy.mark_updated()
            if cfg.stage2_update_attr:
                _ic_step(cs, co, attr_opt, x[idx], s[idx], o[idx], sem, rng)
            total += loss * len(idx)
            count += len(idx)
        trace.losses.append(total / count)
        auc = val_auc()
        trace.val_auc.append(auc)
        if auc > best:
            best, trace.best_epoch = auc, epoch
            snap = (cs.copy(), co.copy()) if cfg.stage2_update_attr else (cs, co)
            best_state = (cy.copy(), table, *snap)
        elif epoch - trace.best_epoch >= cfg.patience:
            break
    trace.seconds = time.perf_counter() - t0
    cy, table, cs, co = best_state
    log.info("stage2: best val AUC %.4f at epoch %d", best, trace.best_epoch)
    return cy, table, trace, cs, co
