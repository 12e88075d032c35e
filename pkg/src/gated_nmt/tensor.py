"""Dense tensors with reverse-mode automatic differentiation.

The tape is recorded dynamically: every op output remembers its parents and
a closure that routes the incoming gradient to them.  ``backward`` walks the
recorded graph once, in reverse execution order, and accumulates gradients
into ``.grad`` of every tensor that requires them.  Graphs are throwaway:
one forward pass, one backward pass, then the tensors are garbage.

Everything is float64 so finite-difference gradient checks are meaningful.
"""

from __future__ import annotations

import numpy as np

DTYPE = np.float64


class Tensor:
    """A dense n-dimensional array, optionally tracked on the autodiff tape."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_done")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._backward = _backward
        self._done = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward_fn):
    # Constant subgraphs are pruned from the tape.
    if any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=tuple(parents), _backward=backward_fn)
    return Tensor(data)


def _accum(t, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        # copy: incoming gradients may be views into other arrays
        t.grad = np.array(g, dtype=DTYPE)
        if t.grad.shape != t.data.shape:
            t.grad = np.broadcast_to(t.grad, t.data.shape).copy()
    else:
        t.grad += g


def _reduce_to(g, shape):
    """Sum `g` down to `shape`, undoing numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def backward(loss):
    """Backpropagate from a scalar loss through the recorded graph."""
    if loss.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.shape}")
    if loss._done:
        raise RuntimeError("backward already ran from this tensor; rebuild the graph")
    topo = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None:
            node._backward(node.grad)
    loss._done = True


# ---------------------------------------------------------------------------
# elementwise / arithmetic


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data + b.data

    def bw(g):
        _accum(a, _reduce_to(g, a.shape))
        _accum(b, _reduce_to(g, b.shape))

    return _make(out_data, (a, b), bw)


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data - b.data

    def bw(g):
        _accum(a, _reduce_to(g, a.shape))
        _accum(b, -_reduce_to(g, b.shape))

    return _make(out_data, (a, b), bw)


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data * b.data

    def bw(g):
        _accum(a, _reduce_to(g * b.data, a.shape))
        _accum(b, _reduce_to(g * a.data, b.shape))

    return _make(out_data, (a, b), bw)


def neg(a):
    a = _as_tensor(a)

    def bw(g):
        _accum(a, -g)

    return _make(-a.data, (a,), bw)


def scale(a, s):
    a = _as_tensor(a)
    s = float(s)

    def bw(g):
        _accum(a, g * s)

    return _make(a.data * s, (a,), bw)


def relu(a):
    a = _as_tensor(a)
    keep = a.data > 0

    def bw(g):
        _accum(a, g * keep)

    return _make(np.where(keep, a.data, 0.0), (a,), bw)


def sigmoid(a):
    a = _as_tensor(a)
    x = a.data
    # Branch on sign so neither exp overflows.
    out_data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                        np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    # keep the open interval (0,1) even where float64 would saturate
    out_data = np.clip(out_data, np.nextafter(0.0, 1.0), np.nextafter(1.0, 0.0))

    def bw(g):
        _accum(a, g * out_data * (1.0 - out_data))

    return _make(out_data, (a,), bw)


# ---------------------------------------------------------------------------
# shape manipulation


def reshape(a, shape):
    a = _as_tensor(a)
    old = a.shape

    def bw(g):
        _accum(a, g.reshape(old))

    return _make(a.data.reshape(shape), (a,), bw)


def transpose(a, axes):
    a = _as_tensor(a)
    inv = tuple(np.argsort(axes))

    def bw(g):
        _accum(a, g.transpose(inv))

    return _make(a.data.transpose(axes), (a,), bw)


def concat_last_axis(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape[:-1] != b.shape[:-1]:
        raise ValueError(f"concat shapes disagree: {a.shape} vs {b.shape}")
    split = a.shape[-1]

    def bw(g):
        _accum(a, g[..., :split])
        _accum(b, g[..., split:])

    return _make(np.concatenate([a.data, b.data], axis=-1), (a, b), bw)


# ---------------------------------------------------------------------------
# reductions


def tsum(a, axis=None, keepdims=False):
    a = _as_tensor(a)

    def bw(g):
        if axis is None:
            _accum(a, np.broadcast_to(g, a.shape).copy())
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.shape).copy())

    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), bw)


def tmean(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    if axis is None:
        n = a.size
    else:
        n = a.shape[axis]
    return scale(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 1 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")
    out_data = np.matmul(a.data, b.data)

    def bw(g):
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            _accum(a, _reduce_to(ga, a.shape))
        if b.requires_grad:
            if b.ndim == 2 and a.ndim > 2:
                # batched activations against a plain weight matrix: flatten
                # instead of building a [batch, k, n] temporary
                k, n = b.shape
                gb = a.data.reshape(-1, k).T @ g.reshape(-1, n)
            else:
                gb = _reduce_to(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
            _accum(b, gb)

    return _make(out_data, (a, b), bw)


# ---------------------------------------------------------------------------
# normalization / attention building blocks


def softmax(a, axis=-1):
    a = _as_tensor(a)
    x = a.data
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        dot = (g * out_data).sum(axis=axis, keepdims=True)
        _accum(a, out_data * (g - dot))

    return _make(out_data, (a,), bw)


def layer_norm(x, gain, bias, eps=1e-6):
    """Normalize the last axis to zero mean / unit variance, then affine."""
    x, gain, bias = _as_tensor(x), _as_tensor(gain), _as_tensor(bias)
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out_data = gain.data * xhat + bias.data

    def bw(g):
        n = x.shape[-1]
        gg = g * gain.data
        gx = inv * (gg - gg.mean(axis=-1, keepdims=True)
                    - xhat * (gg * xhat).mean(axis=-1, keepdims=True))
        _accum(x, gx)
        _accum(gain, _reduce_to(g * xhat, gain.shape))
        _accum(bias, _reduce_to(g, bias.shape))

    return _make(out_data, (x, gain, bias), bw)


def embedding_lookup(table, ids):
    table = _as_tensor(table)
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"token id out of range for vocabulary of {table.shape[0]}")

    def bw(g):
        if table.requires_grad:
            gt = np.zeros_like(table.data)
            np.add.at(gt, ids, g)
            _accum(table, gt)

    return _make(table.data[ids], (table,), bw)


def log_softmax(a, axis=-1):
    a = _as_tensor(a)
    x = a.data
    shifted = x - x.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out_data = shifted - lse
    sm = np.exp(out_data)

    def bw(g):
        _accum(a, g - sm * g.sum(axis=axis, keepdims=True))

    return _make(out_data, (a,), bw)


def cross_entropy(logits, target_ids, mask=None, label_smoothing=0.0, reduction="mean"):
    """Negative log-likelihood of `target_ids` under `logits`.

    logits: [N, V]; target_ids: [N] ints; mask: [N] with 1 for real tokens.
    With label smoothing the target distribution puts 1 - ls on the gold id
    and ls / (V - 1) elsewhere.  Reduction is over unmasked tokens.
    """
    logits = _as_tensor(logits)
    ids = np.asarray(target_ids)
    n, v = logits.shape
    if ids.size and (ids.min() < 0 or ids.max() >= v):
        raise IndexError(f"target id out of range for vocabulary of {v}")
    if mask is None:
        mask = np.ones(n, dtype=DTYPE)
    else:
        mask = np.asarray(mask, dtype=DTYPE)
    count = mask.sum()
    if count == 0:
        raise ValueError("cross_entropy over a fully masked batch")

    q = np.full((n, v), label_smoothing / (v - 1) if v > 1 else 0.0, dtype=DTYPE)
    q[np.arange(n), ids] = 1.0 - label_smoothing

    x = logits.data
    shifted = x - x.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    logp = shifted - lse
    per_tok = -(q * logp).sum(axis=-1)
    if reduction == "mean":
        out_data = (per_tok * mask).sum() / count
        w = mask / count
    elif reduction == "sum":
        out_data = (per_tok * mask).sum()
        w = mask
    else:
        raise ValueError(f"unknown reduction {reduction!r}")
    sm = np.exp(logp)

    def bw(g):
        _accum(logits, g * w[:, None] * (sm - q))

    return _make(out_data, (logits,), bw)
