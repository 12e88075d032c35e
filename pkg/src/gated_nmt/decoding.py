"""Beam search, BLEU, and the forced-decoding error diagnostics.

A forced-decoding (teacher-forced) pass scores the reference under the
model; a position is a translation error when the model's argmax token
differs from the reference token (ties resolve to the lowest token id, so
the comparison is deterministic).  A context selection error is a
translation error where the reference token and the argmax token get
different source/target attribution labels from the PMI rule, evaluated in
the same sentence context.  Rates are per reference token, EOS excluded.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .model import BOS, EOS, GATED, PAD
from .pmi import supervision_label


@dataclass
class Hypothesis:
    tokens: list            # generated ids, EOS-terminated when finished
    logprob: float          # sum of per-step log probabilities
    finished: bool

    def score(self, alpha):
        return self.logprob / max(len(self.tokens), 1) ** alpha


def _log_softmax_np(logits):
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def beam_search(model, src_ids, beam_size=4, max_len=None, alpha=0.6):
    """Best finished hypothesis for one source sentence by length-normalized
    log-probability (logprob / len^alpha).  Falls back to the best unfinished
    beam, flagged via `finished`, if nothing terminates within max_len."""
    if max_len is None:
        max_len = model.config.max_len - 1
    src = np.asarray(src_ids)[None, :]
    h = model.encode(src)
    live = [Hypothesis([], 0.0, False)]
    finished = []
    for _ in range(max_len):
        k = len(live)
        src_k = np.repeat(src, k, axis=0)
        h_k = T.Tensor(np.repeat(h.data, k, axis=0))
        tgt_in = np.array([[BOS] + hyp.tokens for hyp in live])
        out = model.forward(src_k, tgt_in, encoder_top=h_k)
        logp = _log_softmax_np(out.logits.data[:, -1, :])
        candidates = []
        for row, hyp in enumerate(live):
            top = np.argsort(-logp[row], kind="stable")[:beam_size]
            for tok in top:
                candidates.append(Hypothesis(hyp.tokens + [int(tok)],
                                             hyp.logprob + logp[row, tok],
                                             int(tok) == EOS))
        candidates.sort(key=lambda hp: (-hp.logprob, hp.tokens))
        live = []
        for hyp in candidates:
            if hyp.finished:
                finished.append(hyp)
            elif len(live) < beam_size:
                live.append(hyp)
            if len(live) >= beam_size and len(finished) >= beam_size:
                break
        if not live or len(finished) >= beam_size:
            break
    if finished:
        return max(finished, key=lambda hp: hp.score(alpha))
    return max(live, key=lambda hp: hp.score(alpha))


@dataclass
class ForcedDecodeResult:
    scored_ids: np.ndarray   # reference ids with EOS appended
    logprobs: np.ndarray     # log P(scored_ids[i] | prefix, src)
    argmax_ids: np.ndarray   # model argmax per position (lowest id on ties)
    gates: np.ndarray | None  # [layers, positions, dim] or None (ungated)

    @property
    def errors(self):
        return self.argmax_ids != self.scored_ids

    @property
    def logprob(self):
        return float(self.logprobs.sum())


def forced_decode(model, src_ids, ref_ids):
    """Teacher-forced scoring of one reference translation."""
    scored = np.asarray(list(ref_ids) + [EOS])
    tgt_in = np.array([[BOS] + list(ref_ids)])
    out = model.forward(np.asarray(src_ids)[None, :], tgt_in)
    logp = _log_softmax_np(out.logits.data[0])
    gates = None
    if out.gates:
        gates = np.stack([z.data[0] for z in out.gates])
    return ForcedDecodeResult(
        scored_ids=scored,
        logprobs=logp[np.arange(len(scored)), scored],
        argmax_ids=logp.argmax(axis=-1),
        gates=gates)


@dataclass
class ErrorReport:
    fer: float
    cer: float
    ce_over_fe: float
    token_count: int


def context_selection_errors(sentences, bilingual, monolingual):
    """Aggregate FER/CER over (src_tokens, ref_tokens, argmax_tokens,
    error_flags) records; flags and argmax cover the reference tokens only
    (no EOS).  A context selection error needs a translation error first."""
    tokens = fe = ce = 0
    for src, ref, hyp, errs in sentences:
        tokens += len(ref)
        for i, tok in enumerate(ref):
            if not errs[i]:
                continue
            fe += 1
            z_ref = supervision_label(tok, src, ref[:i], bilingual, monolingual)
            z_hyp = supervision_label(hyp[i], src, ref[:i], bilingual, monolingual)
            if z_ref != z_hyp:
                ce += 1
    if tokens == 0:
        raise ValueError("error analysis over an empty corpus")
    return ErrorReport(fer=fe / tokens, cer=ce / tokens,
                       ce_over_fe=ce / fe if fe else 0.0, token_count=tokens)


# ---------------------------------------------------------------------------
# gate statistics


@dataclass
class RunningMoments:
    """Streaming mean/variance (Welford), mergeable across shards."""
    n: int = 0
    mean: float = 0.0
    m2: float = 0.0

    def update(self, values):
        values = np.asarray(values, dtype=float).ravel()
        if values.size == 0:
            return
        other = RunningMoments(values.size, float(values.mean()),
                               float(((values - values.mean()) ** 2).sum()))
        self.merge(other)

    def merge(self, other):
        if other.n == 0:
            return self
        if self.n == 0:
            self.n, self.mean, self.m2 = other.n, other.mean, other.m2
            return self
        delta = other.mean - self.mean
        total = self.n + other.n
        self.mean += delta * other.n / total
        self.m2 += other.m2 + delta * delta * self.n * other.n / total
        self.n = total
        return self

    @property
    def variance(self):
        return self.m2 / self.n if self.n else 0.0


def gate_statistics(model, pairs):
    """Mean and variance of every gate component over a corpus of
    (src_ids, ref_ids) pairs; every layer, position and dimension counts."""
    if model.config.gate_mode != GATED:
        raise ValueError("gate statistics need a gated model")
    moments = RunningMoments()
    for src_ids, ref_ids in pairs:
        result = forced_decode(model, src_ids, ref_ids)
        moments.update(result.gates)
    return moments.mean, moments.variance


# ---------------------------------------------------------------------------
# BLEU


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(hypotheses, references, case_insensitive=True, max_order=4):
    """Corpus-level BLEU with uniform weights and brevity penalty, range
    [0, 100].  No smoothing: a zero n-gram precision zeroes the score."""
    if len(hypotheses) != len(references):
        raise ValueError("hypothesis/reference corpora are misaligned")
    if not hypotheses:
        raise ValueError("BLEU of an empty corpus is undefined")
    matched = [0] * max_order
    total = [0] * max_order
    hyp_len = ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        if case_insensitive:
            hyp = [t.lower() for t in hyp]
            ref = [t.lower() for t in ref]
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, max_order + 1):
            hyp_counts = _ngrams(hyp, n)
            ref_counts = _ngrams(ref, n)
            total[n - 1] += max(len(hyp) - n + 1, 0)
            matched[n - 1] += sum(min(c, ref_counts[g]) for g, c in hyp_counts.items())
    # orders the corpus is too short to produce drop out of the geometric
    # mean; a produced order with zero matches still zeroes the score
    orders = [(m, t) for m, t in zip(matched, total) if t > 0]
    if not orders or any(m == 0 for m, _ in orders):
        return 0.0
    log_prec = sum(math.log(m / t) for m, t in orders) / len(orders)
    bp = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    return 100.0 * bp * math.exp(log_prec)


def bucketed_eval(hypotheses, references, sources, bucket_edges,
                  case_insensitive=True):
    """BLEU partitioned by source length.  Edges must increase strictly;
    bucket k holds lengths in (edges[k-1], edges[k]], with open-ended first
    and last buckets.  Empty buckets are omitted."""
    if list(bucket_edges) != sorted(set(bucket_edges)):
        raise ValueError("bucket edges must be strictly increasing")
    edges = list(bucket_edges)
    bounds = [(0, edges[0])] + list(zip(edges, edges[1:])) + [(edges[-1], math.inf)]
    rows = []
    for lo, hi in bounds:
        idx = [i for i, s in enumerate(sources) if lo < len(s) <= hi]
        if not idx:
            continue
        label = f"{lo + 1}-{hi}" if hi != math.inf else f">{lo}"
        rows.append((label,
                     bleu([hypotheses[i] for i in idx], [references[i] for i in idx],
                          case_insensitive=case_insensitive),
                     len(idx)))
    return rows
