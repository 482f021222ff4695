"""The eight expression categories, in canonical order.

The ordering is load-bearing: every confusion matrix, vote tally, and pair
index uses it.
"""

from itertools import combinations

LABELS = ("neutral", "happy", "sad", "surprise", "fear", "disgust", "anger", "contempt")

PAIRS = tuple(combinations(LABELS, 2))  # 28 unordered pairs, canonical order


def label_index(label: str) -> int:
    try:
        return LABELS.index(label)
    except ValueError:
        raise ValueError(f"unknown expression label {label!r}; expected one of {LABELS}") from None


def validate_label(label: str) -> str:
    label_index(label)
    return label


def pair_index(a: str, b: str) -> int:
    """Index of the unordered pair (a, b) in the canonical 28-pair list."""
    ia, ib = label_index(a), label_index(b)
    if ia == ib:
        raise ValueError(f"pair labels must differ, got {a!r} twice")
    if ia > ib:
        ia, ib = ib, ia
    return PAIRS.index((LABELS[ia], LABELS[ib]))
