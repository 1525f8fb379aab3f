"""Decoding, dependency ranges, scoring and baselines"""

import numpy as np
import pytest
from nltk import Tree
from scipy import stats

from corpus import GoldTree, parse_gold_tree
from errors import TreeFormatError
from tree_ops import (
    all_hard_ranges,
    baseline_f1,
    baseline_tree,
    binarize,
    binary_spans,
    catalan,
    check_no_partial_overlap,
    corpus_f1,
    decode_sentence,
    distances_to_tree,
    hard_ranges,
    profile_to_tree,
    read_unlabeled_tree,
    tree_from_ranges,
    tree_to_string,
    unlabeled_f1,
    upper_bound_f1,
)


class TestDecoding:
    def test_worked_example(self):
        tree = distances_to_tree([0.1, 0.9, 0.2])
        assert tree == ((0, 1), (2, 3))
        assert tree_to_string(tree, "abcd") == "((a b) (c d))"
        assert binary_spans(tree) == {(0, 3), (0, 1), (2, 3)}

    def test_single_token(self):
        assert distances_to_tree([]) == 0
        assert binary_spans(0) == set()

    def test_decreasing_distances_branch_right(self):
        tree = distances_to_tree([0.9, 0.5, 0.2])
        assert binary_spans(tree) == binary_spans(baseline_tree("rbranch", 4))

    def test_increasing_distances_branch_left(self):
        tree = distances_to_tree([0.1, 0.5, 0.9])
        assert binary_spans(tree) == binary_spans(baseline_tree("lbranch", 4))

    def test_ties_split_leftmost(self):
        assert distances_to_tree([0.5, 0.5]) == (0, (1, 2))

    def test_profile_drops_initial_distance(self):
        assert profile_to_tree([100.0, 0.1, 0.9, 0.2]) == distances_to_tree([0.1, 0.9, 0.2])

    def test_decode_sentence_length_mismatch(self):
        with pytest.raises(TreeFormatError):
            decode_sentence(["a", "b"], [0.1, 0.2, 0.3])

    def test_empty_profile(self):
        with pytest.raises(TreeFormatError):
            profile_to_tree([])


class TestRanges:
    def test_increasing_profile_sees_everything(self):
        profile = [0.0, 0.1, 0.2, 0.3, 0.4]
        assert all(left == 0 for left, _ in all_hard_ranges(profile))

    def test_decreasing_profile_sees_predecessor(self):
        profile = [0.9, 0.8, 0.6, 0.3, 0.1]
        assert [left for left, _ in all_hard_ranges(profile)] == [0, 1, 2, 3]

    def test_blocked_after_maximum(self):
        profile = [0.0, 0.2, 0.9, 0.1, 0.3, 0.5]
        assert hard_ranges(profile, 5) == (2, 5)

    def test_position_out_of_range(self):
        with pytest.raises(TreeFormatError):
            hard_ranges([0.1, 0.2], 2)

    def test_partial_overlap_reported(self):
        ok, violation = check_no_partial_overlap([(2, 5), (3, 7)])
        assert not ok
        assert violation == ((2, 5), (3, 7))

    def test_nested_ranges_valid(self):
        assert check_no_partial_overlap([(2, 5), (3, 5)]) == (True, None)

    def test_random_profiles_never_overlap(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            profile = rng.uniform(size=int(rng.integers(2, 13)))
            assert check_no_partial_overlap(all_hard_ranges(profile))[0]

    def test_ranges_rebuild_decoded_tree(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            n = int(rng.integers(1, 11))
            profile = rng.uniform(size=n)
            rebuilt = tree_from_ranges(all_hard_ranges(profile), n)
            assert binary_spans(rebuilt) == binary_spans(profile_to_tree(profile))

    def test_tree_from_incomplete_ranges(self):
        with pytest.raises(TreeFormatError):
            tree_from_ranges([(0, 1)], 3)


class TestScoring:
    def test_identical_sets(self):
        spans = {(0, 1), (2, 3), (0, 3)}
        assert unlabeled_f1(spans, spans, 4) == (1.0, 1.0, 1.0)

    def test_hand_counted(self):
        assert unlabeled_f1({(0, 1), (1, 3)}, {(0, 1), (2, 3)}, 4) == (0.5, 0.5, 0.5)

    def test_empty_prediction(self):
        assert unlabeled_f1(set(), {(0, 1)}, 4)[2] == 0.0

    def test_both_empty_after_filtering(self):
        assert unlabeled_f1({(0, 2)}, {(1, 1)}, 3) == (1.0, 1.0, 1.0)

    def test_trivial_spans_filtered(self):
        assert unlabeled_f1({(0, 3), (2, 2), (0, 1)}, {(0, 1)}, 4) == (1.0, 1.0, 1.0)

    def test_sentence_and_bracket_aggregation_differ(self):
        pairs = [({(0, 1)}, {(0, 1)}, 4), ({(0, 1), (0, 2), (0, 3)}, {(2, 4), (1, 4), (3, 4)}, 5)]
        assert corpus_f1(pairs, "sentence")["f1"] == pytest.approx(0.5)
        assert corpus_f1(pairs, "bracket")["f1"] == pytest.approx(2 * 0.25 * 0.25 / 0.5)

    def test_unknown_aggregation(self):
        with pytest.raises(ValueError):
            corpus_f1([], "macro")

    def test_read_unlabeled_tree(self):
        tokens, spans = read_unlabeled_tree("((a b) (c d))")
        assert tokens == ["a", "b", "c", "d"]
        assert spans == {(0, 3), (0, 1), (2, 3)}

    @pytest.mark.parametrize("text", ["((a b)", "(a b))", "()", ""])
    def test_malformed_unlabeled_tree(self, text):
        with pytest.raises(TreeFormatError):
            read_unlabeled_tree(text)


class TestBaselines:
    def test_right_branching(self):
        assert binary_spans(baseline_tree("rbranch", 4)) == {(0, 3), (1, 3), (2, 3)}

    def test_left_branching(self):
        assert binary_spans(baseline_tree("lbranch", 4)) == {(0, 3), (0, 2), (0, 1)}

    def test_unknown_baseline(self):
        with pytest.raises(ValueError):
            baseline_tree("middle", 4)

    def test_random_tree_is_seeded(self):
        assert baseline_tree("random", 9, seed=3) == baseline_tree("random", 9, seed=3)

    def test_random_trees_are_uniform(self):
        rng = np.random.default_rng(0)
        n, draws = 5, 2800
        counts = {}
        for _ in range(draws):
            key = tree_to_string(baseline_tree("random", n, rng=rng), "abcde")
            counts[key] = counts.get(key, 0) + 1
        assert len(counts) == catalan(n - 1)
        observed = np.array(list(counts.values()))
        assert stats.chisquare(observed).pvalue > 1e-3

    def test_lbranch_below_rbranch_on_right_branching_gold(self):
        gold = [parse_gold_tree("(S (A a) (B (C b) (D (E c) (F (G d) (H e)))))")] * 3
        assert baseline_f1(gold, "lbranch")["f1"] < baseline_f1(gold, "rbranch")["f1"]

    def test_binarize_collapses_unary(self):
        tree = Tree("S", [Tree("NP", ["a"]), Tree("VP", ["b", "c", "d"])])
        assert binarize(tree) == (0, (1, (2, 3)))

    def test_upper_bound_of_flat_constituent(self):
        gold = [parse_gold_tree("(S (A a) (B (C b) (D c) (E d)))")]
        assert upper_bound_f1(gold)["f1"] == pytest.approx(2.0 / 3.0)

    def test_upper_bound_of_binary_gold(self):
        gold = [parse_gold_tree("(S (NP a b) (VP c d))")]
        assert upper_bound_f1(gold)["f1"] == 1.0

    def test_upper_bound_of_flat_gold(self):
        gold = [GoldTree(tokens=list("abcd"), spans={(0, 3)}, tree=Tree("S", list("abcd")))]
        assert upper_bound_f1(gold)["f1"] == 0.0
