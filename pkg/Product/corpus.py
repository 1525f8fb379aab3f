"""
Corpus loading for language modeling and parsing evaluation
"""

import logging
import os
from dataclasses import dataclass
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from nltk import Tree

from errors import CorpusError, TreeFormatError
from tree_ops import SpanSet, check_no_partial_overlap, read_unlabeled_tree

logger = logging.getLogger(__name__)

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
EOS_TOKEN = "<eos>"

# POS tags dropped before WSJ10 filtering and scoring
PUNCTUATION_TAGS = frozenset({".", ",", ":", "``", "''", "-LRB-", "-RRB-", "#", "$", "-NONE-"})


class Vocab:
    """Bijective token <-> id map built in first-occurrence order"""

    def __init__(self, specials: Sequence[str] = (), unk_token: Optional[str] = None):
        self.itos: List[str] = []
        self.stoi: Dict[str, int] = {}
        self.frozen = False
        for token in specials:
            self.add(token)
        self.unk_token = unk_token
        self.pad_id = self.stoi.get(PAD_TOKEN)
        self.unk_id = self.stoi.get(unk_token) if unk_token else None

    @classmethod
    def for_mode(cls, mode: str) -> "Vocab":
        if mode == "char":
            return cls()
        if mode == "word":
            return cls(specials=(PAD_TOKEN, UNK_TOKEN), unk_token=UNK_TOKEN)
        raise CorpusError(f"Unknown corpus mode '{mode}'", mode=mode)

    @property
    def mode(self) -> str:
        return "word" if self.unk_id is not None else "char"

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def add(self, token: str) -> int:
        if token not in self.stoi:
            self.stoi[token] = len(self.itos)
            self.itos.append(token)
        return self.stoi[token]

    def lookup(self, token: str) -> int:
        if token in self.stoi:
            return self.stoi[token]
        if not self.frozen:
            return self.add(token)
        if self.unk_id is not None:
            return self.unk_id
        raise CorpusError(f"Symbol {token!r} is not in the closed training alphabet", token=token)

    def encode(self, tokens: Iterable[str]) -> np.ndarray:
        return np.fromiter((self.lookup(token) for token in tokens), dtype=np.int64)

    def decode(self, ids: Iterable[int]) -> List[str]:
        return [self.itos[int(i)] for i in ids]

    def freeze(self) -> "Vocab":
        self.frozen = True
        return self

    def to_dict(self) -> Dict[str, Any]:
        return {"tokens": list(self.itos), "unk_token": self.unk_token}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Vocab":
        vocab = cls(specials=data["tokens"], unk_token=data.get("unk_token"))
        return vocab.freeze()


def _read_text(path: str) -> str:
    if not os.path.exists(path):
        raise CorpusError(f"Corpus file '{path}' does not exist", path=path)
    try:
        with open(path, "r", encoding="utf-8", newline="") as f:
            text = f.read()
    except UnicodeDecodeError as exc:
        raise CorpusError(f"Corpus file '{path}' is not valid UTF-8: {exc.reason}", path=path) from None
    if not text:
        raise CorpusError(f"Corpus file '{path}' is empty", path=path)
    return text


def tokenize(text: str, mode: str) -> List[str]:
    """Characters (newline included) or space-separated words with <eos> per newline"""
    if mode == "char":
        return list(text)
    tokens: List[str] = []
    lines = text.split("\n")
    for index, line in enumerate(lines):
        tokens.extend(word for word in line.split(" ") if word)
        if index < len(lines) - 1:
            tokens.append(EOS_TOKEN)
    return tokens


def detokenize(tokens: Sequence[str], mode: str) -> str:
    if mode == "char":
        return "".join(tokens)
    return " ".join(tokens).replace(f" {EOS_TOKEN} ", "\n").replace(EOS_TOKEN, "\n")


def load_lm_corpus(path: str, mode: str, vocab: Optional[Vocab] = None) -> Tuple[np.ndarray, Vocab]:
    """
    Read a language-modeling corpus into one id stream.

    Args:
        path: UTF-8 text file
        mode: 'char' or 'word'
        vocab: frozen vocab from the training split; a new one is built when None

    Returns:
        (ids, vocab)
    """
    text = _read_text(path)
    if vocab is None:
        vocab = Vocab.for_mode(mode)
    ids = vocab.encode(tokenize(text, mode))
    if ids.size == 0:
        raise CorpusError(f"Corpus file '{path}' holds no tokens", path=path)
    logger.info("Loaded %s (%d tokens, vocab %d)", path, ids.size, len(vocab))
    return ids, vocab


def load_sentences(path: str, vocab: Optional[Vocab] = None, lowercase: bool = False) -> Tuple[List[List[int]], Vocab]:
    """One sentence per non-empty line, word tokens, no <eos>"""
    text = _read_text(path)
    if vocab is None:
        vocab = Vocab.for_mode("word")
    sentences = []
    for line in text.splitlines():
        words = [w.lower() if lowercase else w for w in line.split(" ") if w]
        if words:
            sentences.append(vocab.encode(words).tolist())
    if not sentences:
        raise CorpusError(f"Corpus file '{path}' holds no sentences", path=path)
    return sentences, vocab


# ============================================================================
# Gold trees
# ============================================================================

@dataclass
class GoldTree:
    tokens: List[str]
    spans: SpanSet
    tree: Optional[Tree] = None

    def __len__(self) -> int:
        return len(self.tokens)


def read_bracketed_trees(text: str) -> List[Tree]:
    """Top-level trees of a treebank file, parsed as children of one wrapper node"""
    try:
        wrapper = Tree.fromstring(f"(TREEBANK {text}\n)")
    except ValueError as exc:
        raise TreeFormatError(f"Malformed treebank: {exc}") from None
    stray = [child for child in wrapper if isinstance(child, str)]
    if stray:
        raise TreeFormatError(f"Text outside brackets: {stray[0]!r}", token=stray[0])
    return list(wrapper)


def _strip_punctuation(node):
    if isinstance(node, str):
        return node
    if len(node) == 1 and isinstance(node[0], str) and node.label() in PUNCTUATION_TAGS:
        return None
    children = [child for child in (_strip_punctuation(c) for c in node) if child is not None]
    if not children:
        return None
    return Tree(node.label(), children)


def constituent_spans(tree) -> SpanSet:
    """Inclusive span of every tree node (leaves excluded)"""
    spans: SpanSet = set()

    def walk(node, start: int) -> int:
        if isinstance(node, str):
            return start + 1
        end = start
        for child in node:
            end = walk(child, end)
        spans.add((start, end - 1))
        return end

    walk(tree, 0)
    return spans


def parse_gold_tree(source: Union[str, Tree], lowercase: bool = False) -> GoldTree:
    """Gold tree from bracketed text or an already parsed nltk Tree"""
    if isinstance(source, Tree):
        tree = source
    else:
        try:
            tree = Tree.fromstring(source)
        except ValueError as exc:
            raise TreeFormatError(f"Malformed tree: {exc}") from None
    if isinstance(tree, str) or len(tree) == 0:
        raise TreeFormatError("Empty tree")
    stripped = _strip_punctuation(tree)
    if stripped is None:
        return GoldTree(tokens=[], spans=set(), tree=None)
    tokens = [w.lower() if lowercase else w for w in stripped.leaves()]
    spans = constituent_spans(stripped)
    ok, violation = check_no_partial_overlap([(s, e + 1) for s, e in spans])
    if not ok:
        raise TreeFormatError(f"Crossing gold spans {violation}")
    return GoldTree(tokens=tokens, spans=spans, tree=stripped)


def load_gold_trees(path: str, lowercase: bool = False) -> List[GoldTree]:
    """Read a bracketed treebank file; labels are kept on .tree but unused for scoring"""
    if not os.path.exists(path):
        raise CorpusError(f"Tree file '{path}' does not exist", path=path)
    with open(path, "r", encoding="utf-8") as f:
        text = f.read()
    parsed = read_bracketed_trees(text)
    if not parsed:
        raise TreeFormatError(f"No trees in '{path}'", path=path)
    trees = [parse_gold_tree(tree, lowercase=lowercase) for tree in parsed]
    logger.info("Loaded %d gold trees from %s", len(trees), path)
    return trees


def wsj10_filter(trees: Iterable[GoldTree], max_length: int = 10) -> List[GoldTree]:
    return [tree for tree in trees if 1 <= len(tree.tokens) <= max_length]


def load_predicted_trees(path: str) -> List[Tuple[List[str], SpanSet]]:
    """One unlabeled bracketing per line, as printed by the parse command"""
    if not os.path.exists(path):
        raise CorpusError(f"Prediction file '{path}' does not exist", path=path)
    with open(path, "r", encoding="utf-8") as f:
        return [read_unlabeled_tree(line) for line in f if line.strip()]
