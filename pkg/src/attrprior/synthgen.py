"""Synthetic compositional benchmark with controllable attribute imbalance.

Each state and object owns a random unit latent vector. A sample of pair
``(s, o)`` is ``normalize(state_part + mu_o) + noise``. For ordinary pairs
``state_part = mu_s``. For *biased* pairs the state part is pulled toward an
object-specific direction ``d_o``::

    state_part = (1 - beta) * mu_s + beta * d_o

so at ``beta = 1`` the state of a biased pair leaves no trace in its
features.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np
from scipy.stats import spearmanr

from .bundle import FeatureBundle
from .classifiers import SemanticTable
from .core import make_rng
from .errors import ValidationError
from .space import CompositionSpace, build_space

_MAX_DRAWS = 1000


@dataclass
class SynthSpec:
    n_states: int = 8
    n_objects: int = 10
    density: float = 0.6
    unseen_fraction: float = 0.25
    samples_per_pair: int = 40
    eval_samples_per_pair: int = 10
    d_x: int = 64
    d_w: int = 16
    noise: float = 1.5
    beta: float = 0.0
    biased_fraction: float = 0.5
    # training count per seen pair decays as samples_per_pair * r**-count_skew,
    # r the pair's rank in a random order; 0 keeps every pair equally sized
    count_skew: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.n_states < 1 or self.n_objects < 1:
            raise ValidationError("need at least one state and one object")
        if not 0 < self.density <= 1:
            raise ValidationError("density must lie in (0, 1]")
        if not 0 <= self.unseen_fraction < 1:
            raise ValidationError("unseen fraction must lie in [0, 1)")
        if not 0 <= self.beta <= 1:
            raise ValidationError("beta must lie in [0, 1]")
        if not 0 <= self.biased_fraction <= 1:
            raise ValidationError("biased fraction must lie in [0, 1]")
        if self.samples_per_pair < 1 or self.eval_samples_per_pair < 1:
            raise ValidationError("sample counts must be positive")
        if self.d_x < 1 or self.d_w < 1 or self.noise < 0 or self.count_skew < 0:
            raise ValidationError("dimensions must be positive and noise/skew non-negative")
        n_pairs = round(self.density * self.n_states * self.n_objects)
        if n_pairs < max(self.n_states, self.n_objects):
            raise ValidationError("density too low to cover every state and object")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "SynthSpec":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ValidationError(f"unknown synthetic spec options {unknown}")
        return cls(**doc)


def _unit_rows(rng, n, d):
    v = rng.standard_normal((n, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _draw_pairs(spec: SynthSpec, rng):
    """Feasible pairs and seen flags such that every state/object has a seen pair."""
    n_s, n_o = spec.n_states, spec.n_objects
    n_pairs = round(spec.density * n_s * n_o)
    n_unseen = int(round(spec.unseen_fraction * n_pairs))
    if n_pairs - n_unseen < max(n_s, n_o):
        raise ValidationError("too few seen pairs to cover every state and object")
    grid = np.array([(s, o) for s in range(n_s) for o in range(n_o)])
    for _ in range(_MAX_DRAWS):
        chosen = grid[rng.choice(len(grid), n_pairs, replace=False)]
        unseen = np.zeros(n_pairs, dtype=bool)
        unseen[rng.choice(n_pairs, n_unseen, replace=False)] = True
        seen_pairs = chosen[~unseen]
        if len(np.unique(seen_pairs[:, 0])) == n_s and len(np.unique(seen_pairs[:, 1])) == n_o:
            return [(int(s), int(o), not u) for (s, o), u in zip(chosen, unseen)]
    raise ValidationError("could not draw a pair set covering every state and object")


def generate(spec: SynthSpec):
    """Returns ``(space, semantics, bundle, biased)``.

    ``biased`` is a boolean vector over the space's dense pair index marking
    pairs whose state component was displaced.
    """
    rng = make_rng(spec.seed)
    triples = _draw_pairs(spec, rng)
    space = build_space([f"s{i}" for i in range(spec.n_states)],
                        [f"o{i}" for i in range(spec.n_objects)], triples)

    mu_s = _unit_rows(rng, spec.n_states, spec.d_x)
    mu_o = _unit_rows(rng, spec.n_objects, spec.d_x)
    d_o = _unit_rows(rng, spec.n_objects, spec.d_x)
    semantics = SemanticTable(rng.standard_normal((spec.n_states, spec.d_w)),
                              rng.standard_normal((spec.n_objects, spec.d_w)))

    n_biased = int(round(spec.biased_fraction * space.n_pairs))
    biased = np.zeros(space.n_pairs, dtype=bool)
    biased[rng.choice(space.n_pairs, n_biased, replace=False)] = True

    seen_idx = np.flatnonzero(space.seen_mask)
    train_counts = np.full(space.n_pairs, 0, dtype=np.int64)
    if spec.count_skew > 0:
        ranks = rng.permutation(len(seen_idx)) + 1
        train_counts[seen_idx] = np.maximum(
            1, np.round(spec.samples_per_pair * ranks ** -spec.count_skew)).astype(np.int64)
    else:
        train_counts[seen_idx] = spec.samples_per_pair

    feats, states, objects, splits = [], [], [], []
    for p, (s, o, seen) in enumerate(space.pairs):
        state_part = mu_s[s]
        if biased[p]:
            state_part = (1.0 - spec.beta) * mu_s[s] + spec.beta * d_o[o]
        center = state_part + mu_o[o]
        norm = np.linalg.norm(center)
        center = center / norm if norm > 0 else center
        parts = [("train", train_counts[p]), ("val", spec.eval_samples_per_pair),
                 ("test", spec.eval_samples_per_pair)]
        for split, count in parts:
            if count == 0:
                continue
            noise = rng.standard_normal((count, spec.d_x)) * (spec.noise / np.sqrt(spec.d_x))
            feats.append(center + noise)
            states.extend([s] * count)
            objects.extend([o] * count)
            splits.extend([split] * count)
    x = np.vstack(feats).astype(np.float32).astype(np.float64)
    note = "synthetic: " + ", ".join(f"{k}={v}" for k, v in spec.to_dict().items())
    bundle = FeatureBundle(space, semantics, x, np.array(states), np.array(objects),
                           np.array(splits, dtype=object), note)
    return space, semantics, bundle, biased


def imbalance_report(posteriors, labels, n_classes: int, split_mask=None,
                     class_filter=None):
    """Per class: normalised sample count next to the mean posterior the model
    puts on the true class.

    ``posteriors`` is ``(samples, n_classes)``; ``labels`` the true class per
    sample. Returns a dict of column arrays plus the Spearman correlation
    between the two columns (``nan`` when undefined).
    """
    posteriors = np.asarray(posteriors, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if split_mask is not None:
        posteriors, labels = posteriors[split_mask], labels[split_mask]
    counts = np.bincount(labels, minlength=n_classes).astype(np.float64)
    classes = np.flatnonzero(counts > 0)
    if class_filter is not None:
        classes = np.array([c for c in classes if c in set(class_filter)], dtype=np.int64)
    if len(classes) == 0:
        return {"class": np.array([], dtype=np.int64), "count": np.array([]),
                "posterior": np.array([]), "spearman": float("nan")}
    true_post = posteriors[np.arange(len(labels)), labels]
    mean_post = np.array([true_post[labels == c].mean() for c in classes])
    norm_count = counts[classes] / counts[classes].sum()
    rho = float("nan")
    if len(classes) > 2 and np.ptp(norm_count) > 0 and np.ptp(mean_post) > 0:
        rho = float(spearmanr(norm_count, mean_post).statistic)
    return {"class": classes, "count": norm_count, "posterior": mean_post, "spearman": rho}


def biased_state_fraction(space: CompositionSpace, biased, counts) -> np.ndarray:
    """Per state, the share of its training samples drawn from biased pairs."""
    counts = np.asarray(counts, dtype=np.float64)
    out = np.zeros(space.n_states)
    for s in range(space.n_states):
        m = space.pair_state == s
        total = counts[m].sum()
        out[s] = counts[m & biased].sum() / total if total else 0.0
    return out
