"""Confusion matrices, mask overlap, and click-attention aggregation.

This is the comparison layer: model predictions and human trial records
both reduce to confusion matrices, saliency maps, and binary masks here, so
the same correlation and dice machinery applies to either side.
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .labels import LABELS, label_index
from .saliency import SaliencyMap
from .stats import StatsResult, pearson_r
from .stimuli import ClickMask

N_LABELS = len(LABELS)


@dataclass
class ConfusionMatrix:
    """Counts indexed (true, predicted) over the eight expression labels."""

    counts: np.ndarray  # int [8,8]

    def __post_init__(self):
        arr = np.asarray(self.counts)
        if arr.shape != (N_LABELS, N_LABELS):
            raise ValueError(f"counts must be {N_LABELS}x{N_LABELS}, got {arr.shape}")
        if not np.issubdtype(arr.dtype, np.integer):
            raise ValueError(f"counts must be integers, got dtype {arr.dtype}")
        if (arr < 0).any():
            raise ValueError("counts must be nonnegative")
        self.counts = arr.astype(np.int64)

    @cached_property
    def normalized(self) -> np.ndarray:
        """Row-normalized real[8,8]; rows with zero count stay all-zero."""
        row_sums = self.counts.sum(axis=1, keepdims=True)
        safe = np.where(row_sums == 0, 1, row_sums)
        return self.counts / safe

    @cached_property
    def display(self) -> np.ndarray:
        """Square roots of the normalized values, for heatmap colormaps."""
        return np.sqrt(self.normalized)

    @property
    def empty_rows(self) -> np.ndarray:
        """Boolean [8]: True where a true label never occurred."""
        return self.counts.sum(axis=1) == 0

    @property
    def labels(self) -> tuple:
        return LABELS


def confusion(preds) -> ConfusionMatrix:
    """Tally (true_label, predicted_label) pairs into a ConfusionMatrix."""
    counts = np.zeros((N_LABELS, N_LABELS), dtype=np.int64)
    for true, predicted in preds:
        counts[label_index(true), label_index(predicted)] += 1
    return ConfusionMatrix(counts=counts)


def matrix_correlation(a: ConfusionMatrix, b: ConfusionMatrix,
                       include_diagonal: bool = True) -> StatsResult:
    """Pearson r between two confusion matrices' row-normalized entries.

    All 64 entries enter by default since whole matrices are being compared;
    `include_diagonal=False` restricts to the 56 off-diagonal cells, which
    isolates the error structure from raw accuracy.
    """
    x = a.normalized
    y = b.normalized
    if not include_diagonal:
        off = ~np.eye(N_LABELS, dtype=bool)
        x = x[off]
        y = y[off]
    return pearson_r(x.ravel(), y.ravel())


def dice(a, b) -> float:
    """Dice overlap 2|a&b| / (|a| + |b|) between two binary masks.

    Accepts BinaryMask instances or boolean arrays.  Two empty masks count
    as identical (1.0); empty against nonempty gives 0.
    """
    abits = np.asarray(getattr(a, "bits", a)).astype(bool)
    bbits = np.asarray(getattr(b, "bits", b)).astype(bool)
    if abits.shape != bbits.shape:
        raise ValueError(f"mask shape mismatch: {abits.shape} vs {bbits.shape}")
    total = int(abits.sum()) + int(bbits.sum())
    if total == 0:
        return 1.0
    return 2.0 * int((abits & bbits).sum()) / total


def aggregate_click_attention(trials, radius: float, shape,
                              correct_only: bool = True) -> SaliencyMap:
    """Average the union-of-disks reveal fields across trials.

    Each trial contributes the boolean field of its clicks (disks of
    `radius` on an image of `shape` = (height, width)); the mean over the
    selected trials is returned as a human_clicks saliency map.  The values
    are raw averages of indicators, already in [0, 1], so the map is not
    min-max renormalized.  By default only correct trials enter, following
    the convention of conditioning attention on a right answer.
    """
    trials = list(trials)
    if not trials:
        raise ValueError("no trials to aggregate")
    if correct_only:
        trials = [t for t in trials if t.correct]
        if not trials:
            raise ValueError("no correct trials to aggregate; pass correct_only=False to keep all")
    h, w = int(shape[0]), int(shape[1])
    acc = np.zeros((h, w), dtype=np.float64)
    for t in trials:
        clicks = tuple((ev.x, ev.y) for ev in t.clicks)
        acc += ClickMask(height=h, width=w, radius=radius, clicks=clicks).field
    acc /= len(trials)
    return SaliencyMap(values=acc, source="human_clicks",
                       class_index=label_index(trials[0].true_label), normalized=False)


def click_sequence_colors(trial) -> list:
    """Color-code a trial's click sequence from red (first) to yellow (last).

    Returns [(x, y, (r, g, b)), ...] in click order: the green channel runs
    linearly from 0 to 255 by click index with round-half-up, so a lone
    click stays pure red and the midpoint of three lands on (255, 128, 0).
    """
    clicks = trial.clicks
    n = len(clicks)
    if n == 0:
        raise ValueError("trial has no clicks to color")
    out = []
    for i, ev in enumerate(clicks):
        green = 0 if n == 1 else int(np.floor(255.0 * i / (n - 1) + 0.5))
        out.append((ev.x, ev.y, (255, green, 0)))
    return out
