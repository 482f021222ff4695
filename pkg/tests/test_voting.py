"""Simple and weighted voting across the 28 pairwise classifiers."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ferbench.labels import LABELS
from ferbench.training import PairSpec, all_pair_specs
from ferbench.voting import (
    VoteTally,
    simple_vote,
    vote_tally,
    weighted_vote,
)

from oracles import vote_recount

SPECS = all_pair_specs()


def pairs_from_preference(beats):
    """Build a full logit set where `beats(a, b)` says a's logit is larger."""
    out = []
    for spec in SPECS:
        a, b = spec.labels
        out.append((spec, [1.0, 0.0] if beats(a, b) else [0.0, 1.0]))
    return out


def random_pairs(rng, scale=1.0):
    return [(spec, scale * rng.standard_normal(2)) for spec in SPECS]


class TestVoteTally:
    def test_rejects_bad_method(self):
        with pytest.raises(ValueError, match="method"):
            VoteTally(per_class=np.zeros(8), method="plurality")

    def test_rejects_wrong_shape(self):
        with pytest.raises(ValueError, match="shape"):
            VoteTally(per_class=np.zeros(7), method="simple")

    def test_winner_breaks_ties_canonically(self):
        acc = np.zeros(8)
        acc[2] = acc[5] = 4.0
        assert VoteTally(per_class=acc, method="weighted").winner == LABELS[2]

    def test_simple_tallies_are_integers_summing_to_28(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            tally = vote_tally(random_pairs(rng), method="simple")
            np.testing.assert_array_equal(tally.per_class, np.round(tally.per_class))
            assert tally.per_class.sum() == 28


class TestSimpleVote:
    def test_dominant_class_wins_with_seven_votes(self):
        pairs = pairs_from_preference(lambda a, b: a == "happy" or b != "happy")
        # happy wins all 7 of its pairs, everyone else loses at least to happy
        tally = vote_tally(pairs, method="simple")
        assert tally.per_class[LABELS.index("happy")] == 7
        assert simple_vote(pairs) == "happy"

    def test_three_way_tie_goes_to_canonical_first(self):
        cycle = {("neutral", "happy"): "neutral",
                 ("happy", "sad"): "happy",
                 ("sad", "neutral"): "sad"}
        trio = ("neutral", "happy", "sad")

        def beats(a, b):
            if (a, b) in cycle:
                return cycle[(a, b)] == a
            if (b, a) in cycle:
                return cycle[(b, a)] == a
            if (a in trio) != (b in trio):
                return a in trio  # cycle members beat every outsider
            return True  # outsider pairs: canonical-first wins

        pairs = pairs_from_preference(beats)
        tally = vote_tally(pairs, method="simple")
        for lab in trio:
            assert tally.per_class[LABELS.index(lab)] == 6
        assert simple_vote(pairs) == "neutral"

    def test_matches_independent_recount_over_1000_instances(self):
        rng = np.random.default_rng(11)
        for _ in range(1000):
            pairs = random_pairs(rng)
            expected, _ = vote_recount(
                [(spec.labels, logits) for spec, logits in pairs], LABELS)
            assert simple_vote(pairs) == expected

    def test_equal_logits_within_pair_vote_for_first_label(self):
        pairs = [(spec, [0.3, 0.3]) for spec in SPECS]
        tally = vote_tally(pairs, method="simple")
        # each label collects one vote per pair where it sits first
        expected = [7, 6, 5, 4, 3, 2, 1, 0]
        np.testing.assert_array_equal(tally.per_class, expected)
        assert simple_vote(pairs) == "neutral"

    def test_missing_pair_rejected(self):
        pairs = random_pairs(np.random.default_rng(0))[:-1]
        with pytest.raises(ValueError, match="missing"):
            simple_vote(pairs)

    def test_duplicate_pair_rejected(self):
        pairs = random_pairs(np.random.default_rng(0))
        pairs[5] = pairs[4]
        with pytest.raises(ValueError, match="duplicate"):
            simple_vote(pairs)

    def test_wrong_logit_shape_rejected(self):
        pairs = random_pairs(np.random.default_rng(0))
        pairs[0] = (pairs[0][0], [1.0, 2.0, 3.0])
        with pytest.raises(ValueError, match="shape"):
            simple_vote(pairs)

    def test_winner_never_trails_any_other_class(self):
        rng = np.random.default_rng(23)
        for _ in range(200):
            tally = vote_tally(random_pairs(rng), method="simple")
            assert tally.per_class[LABELS.index(tally.winner)] == tally.per_class.max()


class TestWeightedVote:
    def test_all_equal_logits_gives_canonical_winner(self):
        pairs = [(spec, [0.3, 0.3]) for spec in SPECS]
        assert weighted_vote(pairs) == "neutral"

    def test_hand_summed_tally(self):
        logits = {}
        for spec in SPECS:
            a, b = spec.labels
            if (a, b) == ("neutral", "contempt"):
                logits[spec] = [0.0, 9.9]
            elif "happy" in (a, b):
                logits[spec] = [0.5, 0.0] if a == "happy" else [0.0, 0.5]
            else:
                logits[spec] = [0.1, 0.0]
        pairs = [(spec, logits[spec]) for spec in SPECS]
        tally = vote_tally(pairs, method="weighted")
        np.testing.assert_allclose(
            tally.per_class, [0.5, 3.5, 0.5, 0.4, 0.3, 0.2, 0.1, 9.9], atol=1e-12)
        # one huge logit outvotes seven steady wins under the weighted rule
        assert weighted_vote(pairs) == "contempt"
        assert simple_vote(pairs) == "happy"

    def test_invariant_under_common_positive_rescaling(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            base = random_pairs(rng)
            baseline = weighted_vote(base)
            for scale in (0.5, 3.0, 17.0):
                scaled = [(spec, scale * np.asarray(lg)) for spec, lg in base]
                assert weighted_vote(scaled) == baseline

    def test_probability_weights_stay_positive_on_negative_logits(self):
        logits = {}
        for spec in SPECS:
            a, b = spec.labels
            if "fear" in (a, b):
                logits[spec] = [-1.0, -2.0] if a == "fear" else [-2.0, -1.0]
            else:
                logits[spec] = [0.2, 0.1]
        pairs = [(spec, logits[spec]) for spec in SPECS]
        # raw rule: fear racks up 7 * (-1.0) and cannot win anything
        assert weighted_vote(pairs) == "neutral"
        raw = vote_tally(pairs, method="weighted")
        assert raw.per_class[LABELS.index("fear")] == pytest.approx(-7.0)
        # probability rule: each fear win adds sigmoid(1), the biggest total
        assert weighted_vote(pairs, probability_weights=True) == "fear"
        prob = vote_tally(pairs, method="weighted", probability_weights=True)
        sig1 = 1.0 / (1.0 + np.exp(-1.0))
        assert prob.per_class[LABELS.index("fear")] == pytest.approx(7 * sig1)

    @given(seed=st.integers(0, 10_000))
    @settings(max_examples=25, deadline=None)
    def test_probability_contributions_bounded(self, seed):
        pairs = random_pairs(np.random.default_rng(seed))
        tally = vote_tally(pairs, method="weighted", probability_weights=True)
        assert (tally.per_class >= 0).all()
        assert tally.per_class.sum() <= 28.0 + 1e-9
