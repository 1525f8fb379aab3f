"""
Tree decoding, dependency ranges and unlabeled bracket scoring

Binary trees are nested 2-tuples whose leaves are token indices, e.g.
((0, 1), (2, 3)). Spans are inclusive (start, end) pairs over those indices.
"""

import math
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple, Union

import numpy as np

from errors import TreeFormatError

BinaryTree = Union[int, Tuple["BinaryTree", "BinaryTree"]]
Span = Tuple[int, int]
SpanSet = Set[Span]
Range = Tuple[int, int]

BASELINES = ("random", "lbranch", "rbranch")


# ============================================================================
# Tree helpers
# ============================================================================

def leaves(tree: BinaryTree) -> List[int]:
    if isinstance(tree, tuple):
        return leaves(tree[0]) + leaves(tree[1])
    return [tree]


def count_internal(tree: BinaryTree) -> int:
    if isinstance(tree, tuple):
        return 1 + count_internal(tree[0]) + count_internal(tree[1])
    return 0


def binary_spans(tree: BinaryTree) -> SpanSet:
    """Spans of every internal node"""
    spans: SpanSet = set()

    def walk(node) -> Span:
        if not isinstance(node, tuple):
            return node, node
        left = walk(node[0])
        right = walk(node[1])
        spans.add((left[0], right[1]))
        return left[0], right[1]

    walk(tree)
    return spans


def tree_to_string(tree: BinaryTree, tokens: Sequence[str]) -> str:
    """Parenthesized rendering, e.g. '((a b) (c d))'; a lone token prints bare"""
    if isinstance(tree, tuple):
        return f"({tree_to_string(tree[0], tokens)} {tree_to_string(tree[1], tokens)})"
    return str(tokens[tree])


def _tokenize_brackets(text: str) -> List[str]:
    return text.replace("(", " ( ").replace(")", " ) ").split()


def read_unlabeled_tree(text: str) -> Tuple[List[str], SpanSet]:
    """
    Read one unlabeled bracketing such as '((a b) (c d))'.

    Every atom is a token; every bracket pair is a constituent.
    """
    items = _tokenize_brackets(text)
    if not items:
        raise TreeFormatError("Empty tree")
    tokens: List[str] = []
    spans: SpanSet = set()
    stack: List[int] = []
    for item in items:
        if item == "(":
            stack.append(len(tokens))
        elif item == ")":
            if not stack:
                raise TreeFormatError(f"Unbalanced parentheses in '{text.strip()}'")
            start = stack.pop()
            if len(tokens) == start:
                raise TreeFormatError(f"Empty constituent in '{text.strip()}'")
            spans.add((start, len(tokens) - 1))
        else:
            tokens.append(item)
    if stack:
        raise TreeFormatError(f"Unbalanced parentheses in '{text.strip()}'")
    return tokens, spans


# ============================================================================
# Decoding
# ============================================================================

def _decode(values: np.ndarray, start: int, end: int, anchor: int) -> BinaryTree:
    if start == end:
        return start
    # the sentence-initial distance never competes; a remainder's first one does
    first = max(start, anchor + 1)
    split = first + int(np.argmax(values[first : end + 1]))
    right: BinaryTree = split if split == end else (split, _decode(values, split + 1, end, split))
    if split == start:
        return right
    return (_decode(values, start, split - 1, anchor), right)


def distances_to_tree(distances: Sequence[float]) -> BinaryTree:
    """
    Binary tree from the n-1 distances between adjacent tokens.

    Args:
        distances: d_1..d_{n-1}, d_i between token i-1 and token i

    Returns:
        Binary tree over leaves 0..n-1. The largest distance splits first; ties
        go to the leftmost position.
    """
    inner = np.asarray(distances, dtype=np.float64).reshape(-1)
    values = np.concatenate([[-np.inf], inner])
    return _decode(values, 0, len(values) - 1, 0)


def profile_to_tree(profile: Sequence[float]) -> BinaryTree:
    """Tree from a full per-token distance profile (d_0 against padding is dropped)"""
    profile = np.asarray(profile, dtype=np.float64).reshape(-1)
    if profile.size == 0:
        raise TreeFormatError("Cannot decode a tree from an empty distance profile")
    return distances_to_tree(profile[1:])


def decode_sentence(tokens: Sequence[str], profile: Sequence[float]) -> BinaryTree:
    if len(tokens) != len(profile):
        raise TreeFormatError(
            f"{len(tokens)} tokens but {len(profile)} distances",
            tokens=len(tokens),
            distances=len(profile),
        )
    return profile_to_tree(profile)


# ============================================================================
# Hard dependency ranges
# ============================================================================

def hard_ranges(profile: Sequence[float], t: int) -> Range:
    """
    Half-open range [l_t, t) of memory positions whose hard gates are open.

    l_t is the latest position j in [1, t-1] with d_j >= d_t, or 0 when every
    such distance is smaller.
    """
    profile = np.asarray(profile, dtype=np.float64).reshape(-1)
    if not 0 <= t < profile.size:
        raise TreeFormatError(f"Position {t} outside a profile of length {profile.size}")
    blockers = np.nonzero(profile[1:t] >= profile[t])[0]
    left = int(blockers[-1]) + 1 if blockers.size else 0
    return left, t


def all_hard_ranges(profile: Sequence[float]) -> List[Range]:
    """Ranges for t = 1..n-1"""
    return [hard_ranges(profile, t) for t in range(1, len(profile))]


def check_no_partial_overlap(ranges: Sequence[Range]) -> Tuple[bool, Optional[Tuple[Range, Range]]]:
    """True iff every pair of half-open ranges is disjoint or nested"""
    ordered = sorted(ranges, key=lambda r: (r[0], -r[1]))
    for index, (a, b) in enumerate(ordered):
        for c, d in ordered[index + 1 :]:
            if c >= b:
                break
            if a < c < b < d:
                return False, ((a, b), (c, d))
    return True, None


def tree_from_ranges(ranges: Sequence[Range], n: int) -> BinaryTree:
    """
    Rebuild the binary tree from hard ranges alone.

    A segment anchored at position a splits at the rightmost token whose range
    starts at a; the part after the split is anchored at the split token.
    """
    lefts = {t: left for left, t in ranges}
    if sorted(lefts) != list(range(1, n)):
        raise TreeFormatError(f"Need one range for each t in 1..{n - 1}")

    def build(start: int, end: int, anchor: int) -> BinaryTree:
        if start == end:
            return start
        candidates = [t for t in range(max(start, anchor + 1), end + 1) if lefts[t] == anchor]
        if not candidates:
            raise TreeFormatError(f"Ranges do not form a tree over [{start}, {end}]")
        split = candidates[-1]
        right = split if split == end else (split, build(split + 1, end, split))
        if split == start:
            return right
        return (build(start, split - 1, anchor), right)

    return build(0, n - 1, 0)


# ============================================================================
# Scoring
# ============================================================================

def filter_spans(spans: Iterable[Span], n: int) -> SpanSet:
    """Drop spans of length one and the whole-sentence span"""
    return {(s, e) for s, e in spans if 2 <= e - s + 1 <= n - 1}


def unlabeled_f1(pred: Iterable[Span], gold: Iterable[Span], n: int) -> Tuple[float, float, float]:
    """
    Unlabeled precision, recall and F1 over spans that could be wrong.

    Returns:
        (precision, recall, f1); 1.0 each when both filtered sets are empty
    """
    pred_set = filter_spans(pred, n)
    gold_set = filter_spans(gold, n)
    if not pred_set and not gold_set:
        return 1.0, 1.0, 1.0
    overlap = len(pred_set & gold_set)
    precision = overlap / len(pred_set) if pred_set else 0.0
    recall = overlap / len(gold_set) if gold_set else 0.0
    if precision + recall == 0:
        return precision, recall, 0.0
    return precision, recall, 2 * precision * recall / (precision + recall)


def corpus_f1(
    pairs: Iterable[Tuple[Iterable[Span], Iterable[Span], int]],
    mode: str = "sentence",
) -> Dict[str, float]:
    """
    Aggregate UF1 over (pred, gold, n) triples.

    Args:
        mode: 'sentence' averages per-sentence scores; 'bracket' sums matched,
            proposed and gold brackets over the corpus first
    """
    if mode not in ("sentence", "bracket"):
        raise ValueError(f"Unknown aggregation mode '{mode}'")
    sentences = 0
    sums = np.zeros(3)
    matched = proposed = expected = 0
    for pred, gold, n in pairs:
        sentences += 1
        if mode == "sentence":
            sums += unlabeled_f1(pred, gold, n)
        else:
            pred_set, gold_set = filter_spans(pred, n), filter_spans(gold, n)
            matched += len(pred_set & gold_set)
            proposed += len(pred_set)
            expected += len(gold_set)

    if sentences == 0:
        return {"sentences": 0, "precision": 0.0, "recall": 0.0, "f1": 0.0}
    if mode == "sentence":
        precision, recall, f1 = (sums / sentences).tolist()
    else:
        precision = matched / proposed if proposed else 0.0
        recall = matched / expected if expected else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return {"sentences": sentences, "precision": precision, "recall": recall, "f1": f1}


# ============================================================================
# Baselines
# ============================================================================

def catalan(n: int) -> int:
    return math.comb(2 * n, n) // (n + 1)


def _random_tree(start: int, end: int, rng: np.random.Generator) -> BinaryTree:
    size = end - start + 1
    if size == 1:
        return start
    # left part of k leaves: Catalan(k-1) * Catalan(size-k-1) trees
    weights = np.array([catalan(k - 1) * catalan(size - k - 1) for k in range(1, size)], dtype=np.float64)
    k = 1 + int(rng.choice(size - 1, p=weights / weights.sum()))
    return (_random_tree(start, start + k - 1, rng), _random_tree(start + k, end, rng))


def baseline_tree(
    kind: str,
    n: int,
    seed: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> BinaryTree:
    """RANDOM (uniform over binary trees), LBRANCH or RBRANCH tree over n leaves"""
    if n < 1:
        raise ValueError(f"Need at least one leaf, got {n}")
    if kind == "lbranch":
        tree: BinaryTree = 0
        for leaf in range(1, n):
            tree = (tree, leaf)
        return tree
    if kind == "rbranch":
        tree = n - 1
        for leaf in range(n - 2, -1, -1):
            tree = (leaf, tree)
        return tree
    if kind == "random":
        return _random_tree(0, n - 1, rng if rng is not None else np.random.default_rng(seed))
    raise ValueError(f"Unknown baseline '{kind}' (expected one of {', '.join(BASELINES)})")


def binarize(tree) -> BinaryTree:
    """
    Right-factored binarization of an n-ary tree.

    Accepts nltk.Tree-like objects (iterable nodes, string leaves); unary
    chains collapse into their single child.
    """
    counter = [0]

    def walk(node) -> BinaryTree:
        if isinstance(node, str):
            index = counter[0]
            counter[0] += 1
            return index
        children = [walk(child) for child in node]
        if not children:
            raise TreeFormatError("Empty constituent")
        result = children[-1]
        for child in reversed(children[:-1]):
            result = (child, result)
        return result

    return walk(tree)


def upper_bound_f1(gold_trees: Sequence, mode: str = "sentence") -> Dict[str, float]:
    """Best score a binary parser can reach: any binarization of the gold tree"""
    pairs = [
        (binary_spans(binarize(gold.tree)), gold.spans, len(gold.tokens))
        for gold in gold_trees
        if gold.tokens
    ]
    return corpus_f1(pairs, mode=mode)


def baseline_f1(gold_trees: Sequence, kind: str, seed: int = 0, mode: str = "sentence") -> Dict[str, float]:
    rng = np.random.default_rng(seed)
    pairs = [
        (binary_spans(baseline_tree(kind, len(gold.tokens), rng=rng)), gold.spans, len(gold.tokens))
        for gold in gold_trees
        if gold.tokens
    ]
    return corpus_f1(pairs, mode=mode)
