"""Ensemble voting across the 28 pairwise classifiers.

Each pairwise net emits two logits for its own label pair; a full ensemble
evaluation is therefore 28 (pair, logits) entries per test image.  Two vote
rules are provided: simple (one vote to the preferred label of each pair)
and weighted (the preferred label receives the winning logit itself).  All
ties break by canonical label order, so both rules are deterministic.
"""

from dataclasses import dataclass

import numpy as np

from .labels import LABELS, label_index
from .training import all_pair_specs

VOTE_METHODS = ("simple", "weighted")


@dataclass(frozen=True)
class VoteTally:
    """Per-class vote accumulators for one test instance."""

    per_class: np.ndarray  # real[8] in canonical label order
    method: str

    def __post_init__(self):
        if self.method not in VOTE_METHODS:
            raise ValueError(f"method must be one of {VOTE_METHODS}, got {self.method!r}")
        arr = np.asarray(self.per_class, dtype=np.float64)
        if arr.shape != (len(LABELS),):
            raise ValueError(f"per_class must have shape ({len(LABELS)},), got {arr.shape}")
        object.__setattr__(self, "per_class", arr)

    @property
    def winner(self) -> str:
        # argmax takes the first maximum, which is the canonical-order tiebreak
        return LABELS[int(np.argmax(self.per_class))]


def _checked_pairs(logit_pairs):
    """Validate one entry per canonical pair; returns [(spec, logits), ...]."""
    specs = all_pair_specs()
    entries = list(logit_pairs)
    seen = set()
    for spec, logits in entries:
        if spec not in specs:
            raise ValueError(f"unknown pair spec {spec}")
        if spec in seen:
            raise ValueError(f"duplicate entry for pair {spec}")
        seen.add(spec)
    missing = [s for s in specs if s not in seen]
    if missing:
        raise ValueError(f"missing entries for {len(missing)} pairs, first is {missing[0]}")
    out = []
    for spec, logits in entries:
        arr = np.asarray(logits, dtype=np.float64)
        if arr.shape != (2,):
            raise ValueError(f"pair {spec} logits must have shape (2,), got {arr.shape}")
        out.append((spec, arr))
    return out


def vote_tally(logit_pairs, method: str = "simple", probability_weights: bool = False) -> VoteTally:
    """Accumulate one instance's 28 pairwise verdicts into per-class totals.

    Simple method: the preferred label of each pair gains 1 vote.  Weighted
    method: it gains the winning logit, read off raw; with
    `probability_weights` it instead gains the two-way softmax probability
    of the preferred label, which stays positive when logits are negative.
    """
    if method not in VOTE_METHODS:
        raise ValueError(f"method must be one of {VOTE_METHODS}, got {method!r}")
    acc = np.zeros(len(LABELS), dtype=np.float64)
    for spec, logits in _checked_pairs(logit_pairs):
        k = int(np.argmax(logits))  # tie -> index 0 -> canonical-first label
        ci = label_index(spec.labels[k])
        if method == "simple":
            acc[ci] += 1.0
        elif probability_weights:
            margin = logits[k] - logits[1 - k]
            acc[ci] += 1.0 / (1.0 + np.exp(-margin))
        else:
            acc[ci] += logits[k]
    return VoteTally(per_class=acc, method=method)


def simple_vote(logit_pairs) -> str:
    """Majority vote: each pair classifier casts one ballot for its argmax."""
    return vote_tally(logit_pairs, method="simple").winner


def weighted_vote(logit_pairs, probability_weights: bool = False) -> str:
    """Confidence-weighted vote: each pair adds its winning logit (or two-way
    softmax probability) to the preferred class."""
    return vote_tally(logit_pairs, method="weighted",
                      probability_weights=probability_weights).winner


def ensemble_logit_pairs(classifiers, images, eval_batch: int = 128):
    """Run all 28 pair classifiers over an image batch.

    `classifiers` holds one trained pairwise classifier per canonical pair
    (any order).  Returns a list with one logit_pairs structure per image,
    each directly consumable by the vote functions.
    """
    specs = all_pair_specs()
    by_pair = {clf.pair: clf for clf in classifiers}
    missing = [s for s in specs if s not in by_pair]
    if missing:
        raise ValueError(f"classifier set missing {len(missing)} pairs, first is {missing[0]}")
    if len(classifiers) != len(specs):
        raise ValueError("duplicate classifiers for at least one pair")
    images = np.asarray(images)
    per_pair = []
    for spec in specs:
        net = by_pair[spec].net
        chunks = [net.predict_logits(images[i:i + eval_batch])
                  for i in range(0, len(images), eval_batch)]
        per_pair.append(np.concatenate(chunks, axis=0))
    return [[(spec, per_pair[p][i]) for p, spec in enumerate(specs)]
            for i in range(len(images))]


def ensemble_predict(classifiers, images, method: str = "simple",
                     probability_weights: bool = False, eval_batch: int = 128) -> list:
    """Predict a label for each image by voting across the 28 pair nets."""
    out = []
    for pairs in ensemble_logit_pairs(classifiers, images, eval_batch=eval_batch):
        out.append(vote_tally(pairs, method=method,
                              probability_weights=probability_weights).winner)
    return out
