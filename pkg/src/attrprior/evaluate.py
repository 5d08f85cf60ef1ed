"""Adjusted inference and the generalized zero-shot metric suite.

The calibration sweep adds a scalar bias to every unseen-pair score. A
sample's decision only flips where the bias crosses the gap between its best
seen score and its best unseen score, so evaluating at those gaps (plus the
two infinite limits) traces the whole accuracy curve exactly.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .priors import InferencePrior
from .space import CompositionSpace

log = logging.getLogger(__name__)


@dataclass
class EvalReport:
    best_seen: float
    best_unseen: float
    best_hm: float
    auc: float | None
    best_state: float
    best_object: float
    n_samples: int
    n_seen_samples: int
    n_unseen_samples: int
    auc_defined: bool = True
    curve: dict = field(default_factory=dict, repr=False)

    def summary(self) -> dict:
        out = asdict(self)
        out.pop("curve")
        return out

    def curve_csv(self) -> str:
        buf = io.StringIO(newline="")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["bias", "seen_acc", "unseen_acc", "hm", "state_acc", "object_acc"])
        for row in zip(*(self.curve[k] for k in
                         ("bias", "seen", "unseen", "hm", "state", "object"))):
            w.writerow([repr(float(v)) for v in row])
        return buf.getvalue()


def infer(cy_logits, prior: InferencePrior | None, eta: float | None = None):
    """Scores ``C_y(x) + eta * log prior(y)`` and their argmax.

    ``prior=None`` scores raw logits. ``np.argmax`` returns the first maximum,
    i.e. ties go to the lowest dense index.
    """
    z = np.asarray(cy_logits, dtype=np.float64)
    if prior is None:
        scores = z.copy()
    else:
        eta = prior.eta if eta is None else eta
        scores = z + eta * prior.log_prior if eta else z.copy()
    return scores, np.argmax(scores, axis=-1)


def harmonic_mean(a_s: float, a_u: float) -> float:
    if a_s <= 0 or a_u <= 0:
        return 0.0
    return 2.0 / (1.0 / a_s + 1.0 / a_u)


def attribute_accuracy(predicted, truth, space: CompositionSpace):
    """State/object accuracy of composition predictions.

    ``predicted`` may be ``(samples,)`` or ``(points, samples)``; for the
    latter the best value over the points is returned.
    """
    predicted = np.atleast_2d(np.asarray(predicted, dtype=np.int64))
    truth = np.asarray(truth, dtype=np.int64)
    if predicted.shape[1] == 0:
        return 0.0, 0.0
    ps, po = space.pair_state, space.pair_object
    state_acc = (ps[predicted] == ps[truth]).mean(axis=1)
    obj_acc = (po[predicted] == po[truth]).mean(axis=1)
    return float(state_acc.max()), float(obj_acc.max())


def _split_argmax(scores, seen):
    """Best seen/unseen class per sample and the gap between their scores."""
    seen_idx = np.flatnonzero(seen)
    unseen_idx = np.flatnonzero(~seen)
    bs = seen_idx[np.argmax(scores[:, seen_idx], axis=1)]
    bu = unseen_idx[np.argmax(scores[:, unseen_idx], axis=1)]
    rows = np.arange(len(scores))
    gap = scores[rows, bs] - scores[rows, bu]
    return bs, bu, gap


def candidate_biases(gap) -> np.ndarray:
    """Every decision-changing bias plus the two infinite limits, ascending."""
    finite = np.unique(gap[np.isfinite(gap)])
    return np.concatenate([[-np.inf], finite, [np.inf]])


def bias_sweep(scores, truth, space: CompositionSpace, biases=None) -> EvalReport:
    """Sweep a bias over unseen-pair scores and summarise the curve.

    At bias ``b`` a sample predicts its best unseen pair iff
    ``gap < b``; equality keeps the seen pair (lower dense index). AUC is the
    trapezoidal area under seen accuracy as a function of unseen accuracy.
    """
    scores = np.atleast_2d(np.asarray(scores, dtype=np.float64))
    truth = np.asarray(truth, dtype=np.int64)
    seen = space.seen_mask
    n = len(truth)
    truth_seen = seen[truth]
    n_s, n_u = int(truth_seen.sum()), int((~truth_seen).sum())

    if seen.all() or (~seen).all():
        pred = np.argmax(scores, axis=1)
        acc = float(np.mean(pred == truth)) if n else 0.0
        st, ob = attribute_accuracy(pred, truth, space)
        a_s = acc if seen.all() else 0.0
        a_u = acc if not seen.all() else 0.0
        log.warning("composition space lacks one side; AUC undefined")
        return EvalReport(a_s, a_u, 0.0, None, st, ob, n, n_s, n_u, auc_defined=False,
                          curve={k: np.array([v]) for k, v in
                                 dict(bias=0.0, seen=a_s, unseen=a_u, hm=0.0,
                                      state=st, object=ob).items()})

    bs, bu, gap = _split_argmax(scores, seen)
    if biases is None:
        biases = candidate_biases(gap)
    biases = np.asarray(biases, dtype=np.float64)

    # (points, samples): True where the unseen branch wins
    to_unseen = gap[None, :] < biases[:, None]
    pred = np.where(to_unseen, bu[None, :], bs[None, :])
    correct = pred == truth[None, :]
    seen_acc = correct[:, truth_seen].mean(axis=1) if n_s else np.zeros(len(biases))
    unseen_acc = correct[:, ~truth_seen].mean(axis=1) if n_u else np.zeros(len(biases))
    hm = np.array([harmonic_mean(a, b) for a, b in zip(seen_acc, unseen_acc)])
    ps, po = space.pair_state, space.pair_object
    state_acc = (ps[pred] == ps[truth][None, :]).mean(axis=1)
    obj_acc = (po[pred] == po[truth][None, :]).mean(axis=1)

    auc_defined = n_s > 0 and n_u > 0
    auc = None
    if auc_defined:
        order = np.lexsort((-seen_acc, unseen_acc))
        auc = float(np.trapezoid(seen_acc[order], unseen_acc[order]))
    else:
        log.warning("test split lacks seen or unseen samples; AUC undefined")

    curve = dict(bias=biases, seen=seen_acc, unseen=unseen_acc, hm=hm,
                 state=state_acc, object=obj_acc)
    return EvalReport(float(seen_acc.max()), float(unseen_acc.max()), float(hm.max()),
                      auc, float(state_acc.max()), float(obj_acc.max()), n, n_s, n_u,
                      auc_defined=auc_defined, curve=curve)


def hm_at_bias(scores, truth, space: CompositionSpace, bias: float = 0.0) -> float:
    rep = bias_sweep(scores, truth, space, biases=[bias])
    return float(rep.curve["hm"][0])


def report_to_json_dict(report: EvalReport) -> dict:
    out = report.summary()
    for key, val in out.items():
        if isinstance(val, float) and not math.isfinite(val):
            out[key] = None
    return out
