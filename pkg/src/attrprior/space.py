"""State/object label universe and the feasible composition set."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class CompositionSpace:
    """Feasible (state, object) pairs with a dense index.

    Seen pairs come first, then unseen ones; each block is ordered by
    ``(state, object)``. Build through :func:`build_space`.
    """

    states: tuple[str, ...]
    objects: tuple[str, ...]
    pairs: tuple[tuple[int, int, bool], ...]
    _index: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def n_objects(self) -> int:
        return len(self.objects)

    @property
    def n_pairs(self) -> int:
        return len(self.pairs)

    @property
    def n_seen(self) -> int:
        return sum(1 for p in self.pairs if p[2])

    @property
    def n_unseen(self) -> int:
        return self.n_pairs - self.n_seen

    @cached_property
    def pair_state(self) -> np.ndarray:
        return _frozen(np.array([p[0] for p in self.pairs], dtype=np.int64))

    @cached_property
    def pair_object(self) -> np.ndarray:
        return _frozen(np.array([p[1] for p in self.pairs], dtype=np.int64))

    @cached_property
    def seen_mask(self) -> np.ndarray:
        return _frozen(np.array([p[2] for p in self.pairs], dtype=bool))

    def feasibility_mask(self) -> np.ndarray:
        """The |S| x |O| indicator of feasible compositions."""
        sigma = np.zeros((self.n_states, self.n_objects), dtype=bool)
        for s, o, _ in self.pairs:
            sigma[s, o] = True
        return sigma

    def pair_names(self) -> list[str]:
        return [f"{self.states[s]} {self.objects[o]}" for s, o, _ in self.pairs]

    def to_dict(self) -> dict:
        return {
            "states": list(self.states),
            "objects": list(self.objects),
            "pairs": [[s, o, bool(seen)] for s, o, seen in self.pairs],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "CompositionSpace":
        try:
            return build_space(doc["states"], doc["objects"],
                               [(int(s), int(o), bool(seen)) for s, o, seen in doc["pairs"]])
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ValidationError):
                raise
            raise ValidationError(f"malformed composition space document: {exc}") from exc

    def digest(self) -> str:
        """sha256 of the canonical JSON form; binds checkpoints to a space."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _frozen(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


def build_space(states, objects, pairs) -> CompositionSpace:
    """Validate and index a composition space.

    ``pairs`` holds ``(state_index, object_index, seen)`` triples. Every state
    and object must occur in at least one seen pair.
    """
    states = tuple(str(s) for s in states)
    objects = tuple(str(o) for o in objects)
    if not states or not objects:
        raise ValidationError("states and objects must be nonempty")
    if len(set(states)) != len(states) or len(set(objects)) != len(objects):
        raise ValidationError("duplicate state or object name")
    seen_at: dict[tuple[int, int], bool] = {}
    for s, o, seen in pairs:
        s, o = int(s), int(o)
        if not (0 <= s < len(states) and 0 <= o < len(objects)):
            raise ValidationError(f"pair ({s}, {o}) out of range")
        if (s, o) in seen_at:
            raise ValidationError(f"duplicate pair ({s}, {o})")
        seen_at[(s, o)] = bool(seen)
    if not seen_at:
        raise ValidationError("no pairs given")
    seen_states = {s for (s, _), seen in seen_at.items() if seen}
    seen_objects = {o for (_, o), seen in seen_at.items() if seen}
    missing_s = [states[i] for i in range(len(states)) if i not in seen_states]
    missing_o = [objects[i] for i in range(len(objects)) if i not in seen_objects]
    if missing_s or missing_o:
        raise ValidationError(
            f"states {missing_s} / objects {missing_o} appear in no seen pair")

    ordered = sorted(seen_at.items(), key=lambda kv: (not kv[1], kv[0]))
    triples = tuple((s, o, seen) for (s, o), seen in ordered)
    space = CompositionSpace(states, objects, triples)
    space._index.update({(s, o): i for i, (s, o, _) in enumerate(triples)})
    return space


def pair_index(space: CompositionSpace, s: int, o: int) -> int | None:
    """Dense index of ``(s, o)``, or ``None`` when the pair is infeasible."""
    return space._index.get((int(s), int(o)))


def pair_indices(space: CompositionSpace, s, o) -> np.ndarray:
    """Vectorised :func:`pair_index`; raises on infeasible pairs."""
    out = np.empty(len(s), dtype=np.int64)
    for i, (a, b) in enumerate(zip(s, o)):
        idx = space._index.get((int(a), int(b)))
        if idx is None:
            raise ValidationError(f"sample {i}: pair ({a}, {b}) is not feasible")
        out[i] = idx
    return out
