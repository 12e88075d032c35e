"""Vocabularies and parallel corpus loading.

Tokens are exact whitespace-separated strings; no lowercasing or subword
processing happens here (inputs are assumed pre-tokenized, e.g. by an
external BPE step).
"""

from __future__ import annotations

from collections import Counter

from .model import BOS, EOS, PAD, UNK

RESERVED = ["<pad>", "<bos>", "<eos>", "<unk>"]


class Vocab:
    """Frequency-sorted token table with fixed reserved ids."""

    def __init__(self, tokens):
        self.tokens = list(RESERVED) + list(tokens)
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("duplicate tokens in vocabulary")
        self._ids = {t: i for i, t in enumerate(self.tokens)}

    def __len__(self):
        return len(self.tokens)

    def id(self, token):
        return self._ids.get(token, UNK)

    def token(self, idx):
        return self.tokens[idx]

    def encode(self, tokens):
        return [self.id(t) for t in tokens]

    def decode(self, ids, strip_special=True):
        toks = [self.token(i) for i in ids]
        if strip_special:
            toks = [t for t in toks if t not in RESERVED]
        return toks

    @classmethod
    def build(cls, sentences, size_limit=None):
        """Most frequent first, ties broken lexicographically."""
        counts = Counter(tok for sent in sentences for tok in sent)
        ordered = sorted(counts, key=lambda t: (-counts[t], t))
        if size_limit is not None:
            ordered = ordered[:max(size_limit - len(RESERVED), 0)]
        return cls(ordered)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for tok in self.tokens[len(RESERVED):]:
                fh.write(tok + "\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls([line.rstrip("\n") for line in fh if line.rstrip("\n")])


def read_lines(path):
    with open(path, encoding="utf-8") as fh:
        lines = [line.rstrip("\n") for line in fh]
    if lines and lines[-1] == "":
        lines.pop()
    return lines


def load_corpus(path):
    """Whitespace-tokenized sentences, one per line; empty lines rejected."""
    sentences = []
    for ln, line in enumerate(read_lines(path), start=1):
        toks = line.split()
        if not toks:
            raise ValueError(f"{path}:{ln}: empty line in corpus")
        sentences.append(toks)
    return sentences


def load_parallel(src_path, tgt_path):
    src = load_corpus(src_path)
    tgt = load_corpus(tgt_path)
    if len(src) != len(tgt):
        raise ValueError(f"corpus line counts differ: {src_path} has {len(src)}, "
                         f"{tgt_path} has {len(tgt)}")
    return list(zip(src, tgt))


def read_supervision(path):
    labels = []
    for ln, line in enumerate(read_lines(path), start=1):
        row = line.split()
        if any(v not in ("0", "1") for v in row):
            raise ValueError(f"{path}:{ln}: supervision labels must be 0/1")
        labels.append([int(v) for v in row])
    return labels


def write_supervision(labels, path):
    with open(path, "w", encoding="utf-8") as fh:
        for row in labels:
            fh.write(" ".join(str(v) for v in row) + "\n")
