"""Pointwise mutual information tables and gate supervision labels.

Two counting scenarios share one table layout:

* bilingual: for every parallel sentence pair, each (distinct target type,
  distinct source type) combination co-occurs once.
* monolingual: for every target position i, each distinct type in the strict
  prefix co-occurs once with the token at i.

pmi(mu, nu) = ln Z + ln(C(mu,nu) / (C(mu) C(nu))), with Z the total pair
mass.  Unseen pairs score -inf.  A target token is attributed to the source
(label 1) when its best bilingual PMI strictly beats its best prefix PMI.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from math import inf, log

BILINGUAL = "BILINGUAL"
MONOLINGUAL = "MONOLINGUAL"

NEG_INF = -inf


@dataclass
class PmiTable:
    scenario: str
    unigram_a: Counter = field(default_factory=Counter)  # target word y_i
    unigram_b: Counter = field(default_factory=Counter)  # x_j or preceding y_k
    pair: Counter = field(default_factory=Counter)       # (a, b) -> count
    Z: int = 0

    def pmi(self, mu, nu):
        c_pair = self.pair.get((mu, nu), 0)
        c_mu = self.unigram_a.get(mu, 0)
        c_nu = self.unigram_b.get(nu, 0)
        if c_pair == 0 or c_mu == 0 or c_nu == 0:
            return NEG_INF
        return log(self.Z) + log(c_pair / (c_mu * c_nu))

    def merge(self, other):
        if other.scenario != self.scenario:
            raise ValueError("cannot merge tables of different scenarios")
        self.unigram_a.update(other.unigram_a)
        self.unigram_b.update(other.unigram_b)
        self.pair.update(other.pair)
        self.Z += other.Z
        return self

    # -- persistence -------------------------------------------------------

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"scenario {self.scenario} Z {self.Z}\n")
            fh.write("#unigram_a\n")
            for tok, n in sorted(self.unigram_a.items()):
                fh.write(f"{tok}\t{n}\n")
            fh.write("#unigram_b\n")
            for tok, n in sorted(self.unigram_b.items()):
                fh.write(f"{tok}\t{n}\n")
            fh.write("#pairs\n")
            for (a, b), n in sorted(self.pair.items()):
                fh.write(f"{a}\t{b}\t{n}\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().split()
            if len(header) != 4 or header[0] != "scenario" or header[2] != "Z":
                raise ValueError(f"malformed PMI table header in {path}")
            table = cls(scenario=header[1], Z=int(header[3]))
            if table.scenario not in (BILINGUAL, MONOLINGUAL):
                raise ValueError(f"unknown scenario {table.scenario!r}")
            section = None
            for line in fh:
                line = line.rstrip("\n")
                if line.startswith("#"):
                    section = line[1:]
                    continue
                cells = line.split("\t")
                if section == "unigram_a":
                    table.unigram_a[cells[0]] = int(cells[1])
                elif section == "unigram_b":
                    table.unigram_b[cells[0]] = int(cells[1])
                elif section == "pairs":
                    table.pair[(cells[0], cells[1])] = int(cells[2])
                else:
                    raise ValueError(f"line outside any section in {path}")
        return table


def count_bilingual(pairs):
    """pairs: iterable of (src_tokens, tgt_tokens)."""
    table = PmiTable(BILINGUAL)
    for src, tgt in pairs:
        tgt_types = set(tgt)
        src_types = set(src)
        for y in tgt_types:
            table.unigram_a[y] += 1
            for x in src_types:
                table.pair[(y, x)] += 1
        for x in src_types:
            table.unigram_b[x] += 1
        table.Z += len(tgt_types) * len(src_types)
    return table


def count_monolingual(sentences):
    """sentences: iterable of target token sequences."""
    table = PmiTable(MONOLINGUAL)
    for sent in sentences:
        prefix = set()
        for i, tok in enumerate(sent):
            if prefix:
                table.unigram_a[tok] += 1
                for prev in prefix:
                    table.pair[(tok, prev)] += 1
                    table.unigram_b[prev] += 1
                table.Z += len(prefix)
            prefix.add(tok)
    return table


def max_bilingual_pmi(token, src_tokens, bilingual):
    return max((bilingual.pmi(token, x) for x in set(src_tokens)), default=NEG_INF)


def max_monolingual_pmi(token, prefix_tokens, monolingual):
    return max((monolingual.pmi(token, y) for y in set(prefix_tokens)), default=NEG_INF)


def supervision_label(token, src_tokens, prefix_tokens, bilingual, monolingual):
    """1 when the token is source-attributed, 0 otherwise (ties go to 0;
    an empty prefix scores -inf)."""
    best_src = max_bilingual_pmi(token, src_tokens, bilingual)
    best_prefix = max_monolingual_pmi(token, prefix_tokens, monolingual)
    return 1 if best_src > best_prefix else 0


def gen_supervision(src_tokens, tgt_tokens, bilingual, monolingual):
    """Per-token binary labels for one sentence pair."""
    return [supervision_label(tok, src_tokens, tgt_tokens[:i], bilingual, monolingual)
            for i, tok in enumerate(tgt_tokens)]
