"""Adam training of the regularized objective.

Loss = per-token NLL + lambda * hinge penalty on the context gates.  A gate
component is penalized only when it sits on the wrong side of 0.5 for its
supervision label: label 1 (source-attributed) pays max(0.5 - z, 0), label 0
pays max(z - 0.5, 0).  The hinge vector is reduced by a mean over gate
components and a mean over supervised tokens, then summed over the selected
layers, so lambda's scale does not depend on model_dim or batch size.
The penalty exists only at training time; decoding never evaluates it.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .model import BOS, EOS, GATED, PAD


@dataclass
class TrainConfig:
    lam: float = 1.0
    regularized_layers: frozenset | None = None  # None means ALL
    warmup_steps: int = 4000
    lr_scale: float = 1.0
    max_tokens_per_batch: int = 4096
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-9
    max_steps: int = 100
    checkpoint_every: int = 0  # 0: only the final checkpoint
    seed: int = 0
    label_smoothing: float = 0.1
    log_every: int = 10

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")


@dataclass
class Batch:
    src: np.ndarray        # [B, S] int
    tgt_in: np.ndarray     # [B, T] int, BOS-prefixed
    tgt_out: np.ndarray    # [B, T] int, EOS-suffixed
    tgt_mask: np.ndarray   # [B, T] 1.0 on real prediction targets
    labels: np.ndarray | None = None      # [B, T] float 0/1
    label_mask: np.ndarray | None = None  # [B, T] 1.0 where a label exists

    @property
    def num_tokens(self):
        return int(self.tgt_mask.sum())


def pad_batch(sentences, pad_to=None):
    width = pad_to or max(len(s) for s in sentences)
    out = np.full((len(sentences), width), PAD, dtype=np.int64)
    for i, s in enumerate(sentences):
        out[i, :len(s)] = s
    return out


def make_batch(pairs, labels=None):
    """pairs: list of (src_ids, tgt_ids); labels: per-sentence 0/1 lists
    aligned with tgt_ids (EOS carries no label)."""
    src = pad_batch([p[0] for p in pairs])
    tgt_in = pad_batch([[BOS] + list(p[1]) for p in pairs])
    tgt_out = pad_batch([list(p[1]) + [EOS] for p in pairs])
    tgt_mask = (tgt_out != PAD).astype(float)
    lab = lab_mask = None
    if labels is not None:
        width = tgt_in.shape[1]
        lab = np.zeros((len(pairs), width))
        lab_mask = np.zeros((len(pairs), width))
        for i, (pair, ls) in enumerate(zip(pairs, labels)):
            if len(ls) != len(pair[1]):
                raise ValueError("supervision labels misaligned with target sentence")
            lab[i, :len(ls)] = ls
            lab_mask[i, :len(ls)] = 1.0
    return Batch(src, tgt_in, tgt_out, tgt_mask, lab, lab_mask)


def make_batches(pairs, labels, max_tokens, rng=None):
    order = np.arange(len(pairs))
    if rng is not None:
        rng.shuffle(order)
    batches, cur, cur_labels, cur_tokens = [], [], [], 0
    for idx in order:
        n = len(pairs[idx][1]) + 1
        if cur and cur_tokens + n > max_tokens:
            batches.append(make_batch(cur, cur_labels if labels is not None else None))
            cur, cur_labels, cur_tokens = [], [], 0
        cur.append(pairs[idx])
        if labels is not None:
            cur_labels.append(labels[idx])
        cur_tokens += n
    if cur:
        batches.append(make_batch(cur, cur_labels if labels is not None else None))
    return batches


# ---------------------------------------------------------------------------


def gate_penalty(gates, labels, label_mask, regularized_layers=None):
    """Scalar hinge penalty over the selected decoder layers.

    gates: per-layer tensors [B, T, d]; labels/label_mask: [B, T] arrays.
    regularized_layers: set of 1-based layer indices, None for all.
    """
    if not gates:
        raise ValueError("gate_penalty needs gates from a gated forward pass")
    if labels.shape != gates[0].shape[:2] or label_mask.shape != labels.shape:
        raise ValueError("supervision labels misaligned with gate tensors")
    if regularized_layers is not None:
        bad = set(regularized_layers) - set(range(1, len(gates) + 1))
        if bad:
            raise ValueError(f"regularized layers out of range: {sorted(bad)}")
    count = label_mask.sum()
    if count == 0:
        return T.Tensor(0.0)
    zstar = T.Tensor(labels[:, :, None])
    one_minus = T.Tensor(1.0 - labels[:, :, None])
    mask = T.Tensor(label_mask)
    total = None
    for l, z in enumerate(gates, start=1):
        if regularized_layers is not None and l not in regularized_layers:
            continue
        hinge = T.add(T.mul(zstar, T.relu(T.sub(0.5, z))),
                      T.mul(one_minus, T.relu(T.sub(z, 0.5))))
        per_tok = T.tmean(hinge, axis=-1)
        layer_sum = T.tsum(T.mul(per_tok, mask))
        total = layer_sum if total is None else T.add(total, layer_sum)
    if total is None:
        return T.Tensor(0.0)
    return T.scale(total, 1.0 / count)


def loss_fn(model, batch, tcfg, training=True):
    """Returns (total, nll, penalty) scalar tensors for one batch."""
    gated = model.config.gate_mode == GATED
    out = model.forward(batch.src, batch.tgt_in, training=training)
    logits = T.reshape(out.logits, (-1, model.config.vocab_size_tgt))
    smoothing = tcfg.label_smoothing if training else 0.0
    nll = T.cross_entropy(logits, batch.tgt_out.ravel(),
                          mask=batch.tgt_mask.ravel(), label_smoothing=smoothing)
    if not gated or tcfg.lam == 0:
        return nll, nll, T.Tensor(0.0)
    if batch.labels is None:
        raise ValueError("lambda > 0 requires gate supervision labels")
    penalty = gate_penalty(out.gates, batch.labels, batch.label_mask,
                           tcfg.regularized_layers)
    return T.add(nll, T.scale(penalty, tcfg.lam)), nll, penalty


# ---------------------------------------------------------------------------


class Adam:
    def __init__(self, params, beta1=0.9, beta2=0.98, eps=1e-9):
        self.params = dict(params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.t = 0

    def step(self, lr):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for k, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            mhat = self.m[k] / (1 - b1 ** self.t)
            vhat = self.v[k] / (1 - b2 ** self.t)
            p.data -= lr * mhat / (np.sqrt(vhat) + self.eps)

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()


def learning_rate(step, model_dim, warmup_steps, scale=1.0):
    """Warmup then inverse square root decay."""
    step = max(step, 1)
    return scale * model_dim ** -0.5 * min(step ** -0.5, step * warmup_steps ** -1.5)


def train(model, pairs, supervision, tcfg, out_dir):
    """Run the training loop; writes metrics.log and checkpoints to out_dir.

    pairs: list of (src_ids, tgt_ids).  supervision: aligned label lists, or
    None (required when lambda > 0 on a gated model).
    """
    gated = model.config.gate_mode == GATED
    if gated and tcfg.lam > 0 and supervision is None:
        raise ValueError("lambda > 0 requires a supervision file for a gated model")
    if tcfg.regularized_layers is not None:
        bad = set(tcfg.regularized_layers) - set(range(1, model.config.num_layers + 1))
        if bad:
            raise ValueError(f"regularized layers out of range: {sorted(bad)}")
    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.default_rng(tcfg.seed)
    opt = Adam(model.params, tcfg.beta1, tcfg.beta2, tcfg.eps)
    step = 0
    log_path = os.path.join(out_dir, "metrics.log")
    with open(log_path, "w", encoding="utf-8") as log:
        while step < tcfg.max_steps:
            for batch in make_batches(pairs, supervision, tcfg.max_tokens_per_batch, rng):
                step += 1
                lr = learning_rate(step, model.config.model_dim,
                                   tcfg.warmup_steps, tcfg.lr_scale)
                opt.zero_grad()
                total, nll, penalty = loss_fn(model, batch, tcfg, training=True)
                T.backward(total)
                opt.step(lr)
                if step % tcfg.log_every == 0 or step == tcfg.max_steps:
                    log.write(f"{step}\t{nll.item():.6f}\t{penalty.item():.6f}\t{lr:.8f}\n")
                if tcfg.checkpoint_every and step % tcfg.checkpoint_every == 0:
                    model.save(os.path.join(out_dir, f"ckpt_{step}.npz"))
                if step >= tcfg.max_steps:
                    break
    model.save(os.path.join(out_dir, "ckpt_final.npz"))
    return log_path
