"""
Synthetic Nested-Bracket Corpus Generator

Generates Dyck-style sentences over 4 bracket pairs (vocabulary 8) with
nesting depth at most 4, together with their gold trees. Every matched pair is
one constituent; the sentence is the root.

Usage:
    python generate_corpus.py --output-dir data/synthetic --train-tokens 20000
"""

import argparse
import os
from typing import List, Tuple

import numpy as np

OPEN_TOKENS = ("la", "lb", "lc", "ld")
CLOSE_TOKENS = ("ra", "rb", "rc", "rd")


class NestedBracketGenerator:
    """
    Generate bracket sentences and their bracketed gold trees
    """

    def __init__(
        self,
        seed: int = 42,
        max_depth: int = 4,
        max_length: int = 20,
        nest_prob: float = 0.6,
        max_siblings: int = 3,
    ):
        """
        Args:
            seed: random seed for reproducibility
            max_depth: deepest allowed nesting of pairs
            max_length: longest sentence in tokens (longer draws are rejected)
            nest_prob: chance that a pair has children, below max_depth
            max_siblings: most pairs side by side at one level
        """
        self.rng = np.random.default_rng(seed)
        self.max_depth = max_depth
        self.max_length = max_length
        self.nest_prob = nest_prob
        self.max_siblings = max_siblings

    def _sequence(self, depth: int) -> Tuple[List[str], List[str]]:
        """Tokens and tree strings of a run of sibling pairs at `depth`"""
        tokens: List[str] = []
        trees: List[str] = []
        for _ in range(int(self.rng.integers(1, self.max_siblings + 1))):
            kind = int(self.rng.integers(len(OPEN_TOKENS)))
            inner_tokens: List[str] = []
            inner_trees: List[str] = []
            if depth < self.max_depth and self.rng.random() < self.nest_prob:
                inner_tokens, inner_trees = self._sequence(depth + 1)
            tokens += [OPEN_TOKENS[kind], *inner_tokens, CLOSE_TOKENS[kind]]
            children = [f"(T {OPEN_TOKENS[kind]})", *inner_trees, f"(T {CLOSE_TOKENS[kind]})"]
            trees.append(f"(P {' '.join(children)})")
        return tokens, trees

    def generate_sentence(self) -> Tuple[List[str], str]:
        while True:
            tokens, trees = self._sequence(1)
            if len(tokens) <= self.max_length:
                return tokens, f"(S {' '.join(trees)})"

    def generate_split(self, min_tokens: int = 0, num_sentences: int = 0) -> List[Tuple[List[str], str]]:
        """Sentences until both the token and sentence quotas are met"""
        sentences = []
        total = 0
        while total < min_tokens or len(sentences) < num_sentences:
            tokens, tree = self.generate_sentence()
            sentences.append((tokens, tree))
            total += len(tokens)
        return sentences

    def save_split(self, sentences: List[Tuple[List[str], str]], output_dir: str, name: str):
        os.makedirs(output_dir, exist_ok=True)
        text_path = os.path.join(output_dir, f"{name}.txt")
        tree_path = os.path.join(output_dir, f"{name}.trees")
        with open(text_path, "w", encoding="utf-8") as f:
            f.writelines(" ".join(tokens) + "\n" for tokens, _ in sentences)
        with open(tree_path, "w", encoding="utf-8") as f:
            f.writelines(tree + "\n" for _, tree in sentences)
        tokens = sum(len(t) for t, _ in sentences)
        print(f"✅ Saved {len(sentences)} sentences ({tokens} tokens) to {text_path} and {tree_path}")

    def generate_corpus(
        self,
        output_dir: str,
        train_tokens: int = 20000,
        valid_tokens: int = 2000,
        test_sentences: int = 200,
    ):
        self.save_split(self.generate_split(min_tokens=train_tokens), output_dir, "train")
        self.save_split(self.generate_split(min_tokens=valid_tokens), output_dir, "valid")
        self.save_split(self.generate_split(num_sentences=test_sentences), output_dir, "test")


def main():
    parser = argparse.ArgumentParser(description="Generate a synthetic nested-bracket corpus")
    parser.add_argument("--output-dir", type=str, default="data/synthetic", help="Output directory")
    parser.add_argument("--train-tokens", type=int, default=20000, help="Minimum training tokens")
    parser.add_argument("--valid-tokens", type=int, default=2000, help="Minimum validation tokens")
    parser.add_argument("--test-sentences", type=int, default=200, help="Held-out sentences with gold trees")
    parser.add_argument("--max-depth", type=int, default=4, help="Deepest nesting")
    parser.add_argument("--max-length", type=int, default=20, help="Longest sentence")
    parser.add_argument("--seed", type=int, default=42, help="Random seed for reproducibility")

    args = parser.parse_args()

    generator = NestedBracketGenerator(seed=args.seed, max_depth=args.max_depth, max_length=args.max_length)
    generator.generate_corpus(
        args.output_dir,
        train_tokens=args.train_tokens,
        valid_tokens=args.valid_tokens,
        test_sentences=args.test_sentences,
    )

    print("\n📊 To train on this corpus:")
    print("   python Product/main.py train --config desk-synthetic")


if __name__ == "__main__":
    main()
