"""End-to-end orchestration: train both stages, score a split in any of the
inference modes, and run hyper-parameter sweeps."""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .bundle import FeatureBundle
from .classifiers import PrototypeClassifier, ensemble_posterior
from .core import make_rng, softmax
from .evaluate import EvalReport, bias_sweep
from .priors import AttributePriorTable
from .training import (TrainConfig, TrainTrace, attribute_posteriors, composition_scores,
                       train_stage1, train_stage2)

log = logging.getLogger(__name__)

# scoring modes for evaluation
ADJUSTED = "adjusted"            # C_y + eta * log prior (or raw C_y with the prior off)
COMPOSITION = "composition"      # p(y|x) only
ENSEMBLE = "ensemble"            # delta * p(y|x) + (1 - delta) * (p(s|x) + p(o|x))
INDEPENDENT = "independent"      # p(s|x) + p(o|x) only
MODES = (ADJUSTED, COMPOSITION, ENSEMBLE, INDEPENDENT)


@dataclass
class CompositionalModel:
    cs: PrototypeClassifier
    co: PrototypeClassifier
    cy: PrototypeClassifier
    prior: AttributePriorTable
    config: TrainConfig
    space_digest: str
    traces: list = field(default_factory=list)


def fit(bundle: FeatureBundle, cfg: TrainConfig, stage1=None) -> CompositionalModel:
    """Both training stages. ``stage1`` may carry a ``(cs, co, trace)`` triple
    from an earlier run on the same bundle and seed to skip refitting."""
    if stage1 is None:
        stage1 = train_stage1(bundle, cfg, make_rng(cfg.seed))
    cs, co, trace1 = stage1
    cy, table, trace2, cs, co = train_stage2(bundle, cs, co, cfg, make_rng(cfg.seed + 1))
    return CompositionalModel(cs, co, cy, table, cfg, bundle.space.digest(), [trace1, trace2])


def split_scores(model: CompositionalModel, bundle: FeatureBundle, split: str = "test",
                 mode: str = ADJUSTED, inference_prior: bool | None = None,
                 delta: float = 0.5) -> np.ndarray:
    x, _, _, _ = bundle.split(split)
    return scores_for(model, bundle, x, mode, inference_prior, delta)


def scores_for(model, bundle, x, mode=ADJUSTED, inference_prior=None, delta=0.5):
    if mode == ADJUSTED:
        return composition_scores(model.cy, model.prior, model.cs, model.co, x, bundle,
                                  model.config, inference_prior)
    space = bundle.space
    ps, po = attribute_posteriors(model.cs, model.co, x, bundle.semantics)
    py = softmax(model.cy.forward(x, bundle.semantics.pair_vectors(space))[0])
    if mode == COMPOSITION:
        return py
    if mode == ENSEMBLE:
        return ensemble_posterior(py, ps, po, delta, space)
    if mode == INDEPENDENT:
        return ensemble_posterior(py, ps, po, 0.0, space)
    raise ValueError(f"unknown scoring mode {mode!r}")


def evaluate(model, bundle, split="test", mode=ADJUSTED, inference_prior=None,
             delta=0.5) -> EvalReport:
    scores = split_scores(model, bundle, split, mode, inference_prior, delta)
    return bias_sweep(scores, bundle.split(split)[3], bundle.space)


def report_metrics(report: EvalReport) -> dict:
    return {"auc": report.auc, "hm": report.best_hm, "seen": report.best_seen,
            "unseen": report.best_unseen, "state": report.best_state,
            "object": report.best_object}


def sweep(bundle: FeatureBundle, base: TrainConfig, grid: dict, seeds, split="test",
          mode=ADJUSTED, delta=0.5):
    """Train and evaluate every grid cell for every seed.

    ``grid`` maps TrainConfig field names to value lists; cells are the
    cartesian product. Returns long-format rows ``(cell, seed, metric, value)``
    plus a per-cell error list; a failing cell is recorded and skipped.
    """
    names = sorted(grid)
    rows, errors = [], []
    for values in itertools.product(*(grid[n] for n in names)):
        cell = ",".join(f"{n}={v}" for n, v in zip(names, values))
        for seed in seeds:
            try:
                cfg = replace(base, seed=int(seed), **dict(zip(names, values)))
                model = fit(bundle, cfg)
                rep = evaluate(model, bundle, split, mode, delta=delta)
            except Exception as exc:  # noqa: BLE001 - sweep keeps going
                log.error("cell %s seed %s failed: %s", cell, seed, exc)
                errors.append({"cell": cell, "seed": seed, "error": str(exc)})
                continue
            for metric, value in report_metrics(rep).items():
                rows.append({"cell": cell, "seed": seed, "metric": metric, "value": value})
    return rows, errors


def stage_traces(model: CompositionalModel) -> list[TrainTrace]:
    return list(model.traces)
