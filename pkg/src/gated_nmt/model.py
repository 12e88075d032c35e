"""Transformer encoder plus a context-gated decoder.

Each decoder layer separates a target context t (causal self-attention over
the previous layer, with layer norm and a residual add) from a source
context s (cross-attention over the encoder top, layer norm, no residual).
A per-dimension sigmoid gate z interpolates them; the layer output is the
usual position-wise feed-forward over the gated mix, layer-normed, with a
residual add of the mix.  In "baseline" mode the interpolation is replaced
by the plain sum t + s, which is the ungated model.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T

PAD, BOS, EOS, UNK = 0, 1, 2, 3

GATED = "gated"
BASELINE = "baseline"

NEG_BIG = -1e9  # additive mask value; large enough to zero attention weights


@dataclass
class ModelConfig:
    vocab_size_src: int
    vocab_size_tgt: int
    num_layers: int = 4
    num_heads: int = 4
    model_dim: int = 256
    ff_dim: int = 1024
    max_len: int = 256
    gate_mode: str = GATED
    dropout_rate: float = 0.1

    def __post_init__(self):
        if self.model_dim % self.num_heads != 0:
            raise ValueError("model_dim must be divisible by num_heads")
        if self.gate_mode not in (GATED, BASELINE):
            raise ValueError(f"unknown gate_mode {self.gate_mode!r}")
        if not (0.0 <= self.dropout_rate < 1.0):
            raise ValueError("dropout_rate must be in [0,1)")

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass
class ForwardOutput:
    logits: T.Tensor            # [batch, tgt_len, vocab_tgt]
    gates: list                 # per layer, [batch, tgt_len, model_dim]; empty in baseline mode
    encoder_top: T.Tensor       # [batch, src_len, model_dim]


def sinusoidal_positions(length, dim):
    pos = np.arange(length)[:, None].astype(float)
    i = np.arange(dim // 2)[None, :].astype(float)
    angles = pos / np.power(10000.0, 2 * i / dim)
    enc = np.zeros((length, dim))
    enc[:, 0::2] = np.sin(angles)
    enc[:, 1::2] = np.cos(angles)
    return enc


class Model:
    def __init__(self, config: ModelConfig, seed=0):
        self.config = config
        self.params = {}
        self._rng = np.random.default_rng(seed)
        self._dropout_rng = np.random.default_rng(seed + 1)
        self._build()

    # -- parameter construction -------------------------------------------

    def _xavier(self, name, fan_in, fan_out):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        self.params[name] = T.Tensor(
            self._rng.uniform(-limit, limit, size=(fan_in, fan_out)),
            requires_grad=True)

    def _linear(self, name, fan_in, fan_out):
        self._xavier(name + ".W", fan_in, fan_out)
        self.params[name + ".b"] = T.Tensor(np.zeros(fan_out), requires_grad=True)

    def _ln(self, name, dim):
        self.params[name + ".g"] = T.Tensor(np.ones(dim), requires_grad=True)
        self.params[name + ".b"] = T.Tensor(np.zeros(dim), requires_grad=True)

    def _attention_params(self, name, d):
        for proj in ("q", "k", "v", "o"):
            self._linear(f"{name}.{proj}", d, d)

    def _build(self):
        cfg = self.config
        d = cfg.model_dim
        self.params["src_embed"] = T.Tensor(
            self._rng.normal(0, d ** -0.5, size=(cfg.vocab_size_src, d)), requires_grad=True)
        self.params["tgt_embed"] = T.Tensor(
            self._rng.normal(0, d ** -0.5, size=(cfg.vocab_size_tgt, d)), requires_grad=True)
        for l in range(cfg.num_layers):
            self._attention_params(f"enc{l}.att", d)
            self._ln(f"enc{l}.att_ln", d)
            self._linear(f"enc{l}.ff1", d, cfg.ff_dim)
            self._linear(f"enc{l}.ff2", cfg.ff_dim, d)
            self._ln(f"enc{l}.ff_ln", d)
        for l in range(cfg.num_layers):
            self._attention_params(f"dec{l}.self", d)
            self._ln(f"dec{l}.self_ln", d)
            self._attention_params(f"dec{l}.cross", d)
            self._ln(f"dec{l}.cross_ln", d)
            if cfg.gate_mode == GATED:
                self._linear(f"dec{l}.gate", 2 * d, d)
            self._linear(f"dec{l}.ff1", d, cfg.ff_dim)
            self._linear(f"dec{l}.ff2", cfg.ff_dim, d)
            self._ln(f"dec{l}.ff_ln", d)
        self._linear("out", d, cfg.vocab_size_tgt)
        self._pos = sinusoidal_positions(cfg.max_len, d)

    def named_parameters(self):
        return self.params

    # -- building blocks ---------------------------------------------------

    def _apply_linear(self, name, x):
        return T.add(T.matmul(x, self.params[name + ".W"]), self.params[name + ".b"])

    def _apply_ln(self, name, x):
        return T.layer_norm(x, self.params[name + ".g"], self.params[name + ".b"])

    def _dropout(self, x, training):
        rate = self.config.dropout_rate
        if not training or rate == 0.0:
            return x
        keep = self._dropout_rng.random(x.shape) >= rate
        return T.mul(x, T.Tensor(keep / (1.0 - rate)))

    def _mha(self, name, q_in, kv_in, mask):
        """Multi-head attention; mask is an additive array broadcastable to
        [batch, heads, q_len, kv_len], or None."""
        cfg = self.config
        b, tq, d = q_in.shape
        tk = kv_in.shape[1]
        h, dh = cfg.num_heads, d // cfg.num_heads

        def split(x, t):
            x = T.reshape(x, (b, t, h, dh))
            return T.transpose(x, (0, 2, 1, 3))

        q = split(self._apply_linear(name + ".q", q_in), tq)
        k = split(self._apply_linear(name + ".k", kv_in), tk)
        v = split(self._apply_linear(name + ".v", kv_in), tk)
        scores = T.scale(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), dh ** -0.5)
        if mask is not None:
            scores = T.add(scores, T.Tensor(mask))
        att = T.matmul(T.softmax(scores, axis=-1), v)
        att = T.reshape(T.transpose(att, (0, 2, 1, 3)), (b, tq, d))
        return self._apply_linear(name + ".o", att)

    def _ffn(self, prefix, x):
        return self._apply_linear(prefix + "ff2",
                                  T.relu(self._apply_linear(prefix + "ff1", x)))

    def _embed(self, table_name, ids):
        cfg = self.config
        length = ids.shape[1]
        if length > cfg.max_len:
            raise ValueError(f"sequence length {length} exceeds max_len {cfg.max_len}")
        emb = T.embedding_lookup(self.params[table_name], ids)
        emb = T.scale(emb, cfg.model_dim ** 0.5)
        return T.add(emb, T.Tensor(self._pos[:length]))

    # -- forward -----------------------------------------------------------

    def encode(self, src_ids, training=False):
        src_ids = np.asarray(src_ids)
        pad_mask = np.where(src_ids == PAD, NEG_BIG, 0.0)[:, None, None, :]
        x = self._dropout(self._embed("src_embed", src_ids), training)
        for l in range(self.config.num_layers):
            att = self._dropout(self._mha(f"enc{l}.att", x, x, pad_mask), training)
            x = T.add(x, self._apply_ln(f"enc{l}.att_ln", att))
            ff = self._dropout(self._ffn(f"enc{l}.", x), training)
            x = T.add(x, self._apply_ln(f"enc{l}.ff_ln", ff))
        return x

    def _decoder_layer(self, l, c_prev, h, causal_mask, src_pad_mask,
                       combine, training):
        # target context: causal self-attention, layer norm, residual
        self_att = self._mha(f"dec{l}.self", c_prev, c_prev, causal_mask)
        t = T.add(c_prev, self._apply_ln(f"dec{l}.self_ln",
                                         self._dropout(self_att, training)))
        # source context: cross-attention, layer norm, no residual
        cross = self._mha(f"dec{l}.cross", t, h, src_pad_mask)
        s = self._apply_ln(f"dec{l}.cross_ln", self._dropout(cross, training))
        z = None
        if combine == GATED:
            z = T.sigmoid(self._apply_linear(f"dec{l}.gate", T.concat_last_axis(t, s)))
            mix = T.add(T.mul(T.sub(1.0, z), t), T.mul(z, s))
        else:
            mix = T.add(t, s)
        c = T.add(mix, self._apply_ln(f"dec{l}.ff_ln",
                                      self._dropout(self._ffn(f"dec{l}.", mix), training)))
        return c, z

    def forward(self, src_ids, tgt_in_ids, training=False, combine=None,
                encoder_top=None):
        """Teacher-forced pass.  tgt_in_ids is the BOS-prefixed target input;
        logits at position i predict the token following tgt_in_ids[:, i].

        `combine` overrides the combination step ("gated" or "baseline"
        semantics) without touching the parameter set; used to demonstrate
        the reduction to the ungated model.  `encoder_top` reuses an already
        computed encoder output (incremental decoding)."""
        cfg = self.config
        if combine is None:
            combine = cfg.gate_mode
        src_ids = np.asarray(src_ids)
        tgt_in_ids = np.asarray(tgt_in_ids)
        tlen = tgt_in_ids.shape[1]

        h = encoder_top if encoder_top is not None else self.encode(src_ids, training=training)
        src_pad_mask = np.where(src_ids == PAD, NEG_BIG, 0.0)[:, None, None, :]
        causal = np.triu(np.full((tlen, tlen), NEG_BIG), k=1)[None, None, :, :]
        tgt_pad = np.where(tgt_in_ids == PAD, NEG_BIG, 0.0)[:, None, None, :]
        causal = causal + tgt_pad

        c = self._dropout(self._embed("tgt_embed", tgt_in_ids), training)
        gates = []
        for l in range(cfg.num_layers):
            c, z = self._decoder_layer(l, c, h, causal, src_pad_mask, combine, training)
            if z is not None:
                gates.append(z)
        logits = self._apply_linear("out", c)
        return ForwardOutput(logits=logits, gates=gates, encoder_top=h)

    # -- persistence -------------------------------------------------------

    def save(self, path):
        arrays = {"param:" + k: v.data for k, v in self.params.items()}
        arrays["config_json"] = np.frombuffer(
            json.dumps(self.config.to_dict(), sort_keys=True).encode(), dtype=np.uint8)
        np.savez(path, **arrays)

    @classmethod
    def load(cls, path):
        with np.load(path) as blob:
            cfg = ModelConfig(**json.loads(bytes(blob["config_json"]).decode()))
            model = cls(cfg, seed=0)
            for k in model.params:
                model.params[k] = T.Tensor(blob["param:" + k], requires_grad=True)
        return model

    def copy_shared_params_to(self, other):
        """Copy every parameter whose name exists in `other` (used to compare
        a gated model against a baseline one with identical shared weights)."""
        for name, p in self.params.items():
            if name in other.params:
                other.params[name] = T.Tensor(p.data.copy(), requires_grad=True)
