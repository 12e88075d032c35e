import numpy as np
import pytest

from gated_nmt import tensor as T
from gated_nmt.model import (BASELINE, BOS, EOS, GATED, Model, ModelConfig, PAD)
from conftest import assert_grads_match

TINY = dict(vocab_size_src=11, vocab_size_tgt=13, num_layers=2, num_heads=2,
            model_dim=8, ff_dim=16, max_len=16, dropout_rate=0.0)


def tiny_model(gate_mode=GATED, seed=0, **over):
    cfg = ModelConfig(**{**TINY, **over, "gate_mode": gate_mode})
    return Model(cfg, seed=seed)


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(vocab_size_src=5, vocab_size_tgt=5, model_dim=10, num_heads=3)
    with pytest.raises(ValueError):
        ModelConfig(vocab_size_src=5, vocab_size_tgt=5, gate_mode="turbo")


def test_encode_shape():
    m = tiny_model()
    out = m.encode(np.array([[4]]))
    assert out.shape == (1, 1, 8)


def test_padding_does_not_leak():
    m = tiny_model()
    sent = [4, 5, 6]
    short = m.encode(np.array([sent])).data
    padded = m.encode(np.array([sent + [PAD, PAD, PAD]])).data
    np.testing.assert_allclose(padded[:, :3], short, atol=1e-6)


def test_logits_shape_and_gate_count():
    m = tiny_model()
    src = np.array([[4, 5], [6, 7]])
    tgt = np.array([[BOS, 4, 5], [BOS, 6, 7]])
    out = m.forward(src, tgt)
    assert out.logits.shape == (2, 3, 13)
    assert len(out.gates) == 2
    for z in out.gates:
        assert z.shape == (2, 3, 8)
        assert np.all(z.data > 0) and np.all(z.data < 1)


def test_baseline_mode_has_no_gates():
    m = tiny_model(BASELINE)
    out = m.forward(np.array([[4, 5]]), np.array([[BOS, 4]]))
    assert out.gates == []
    assert not any(".gate." in k for k in m.params)


def test_causality():
    m = tiny_model(seed=3)
    rng = np.random.default_rng(0)
    src = rng.integers(4, 11, size=(1, 4))
    tgt = rng.integers(4, 13, size=(1, 5))
    base = m.forward(src, tgt).logits.data
    for j in range(1, 5):
        perturbed = tgt.copy()
        perturbed[0, j] = (perturbed[0, j] - 4 + 1) % 9 + 4
        out = m.forward(src, perturbed).logits.data
        np.testing.assert_allclose(out[:, :j], base[:, :j], atol=1e-6)


def test_gated_combination_is_symmetric_at_half():
    # with z = 0.5 and t = s the mix equals t: check the algebra directly
    rng = np.random.default_rng(1)
    t = T.Tensor(rng.standard_normal((2, 3, 4)))
    z = T.Tensor(np.full((2, 3, 4), 0.5))
    mix = T.add(T.mul(T.sub(1.0, z), t), T.mul(z, t))
    np.testing.assert_allclose(mix.data, t.data, atol=1e-12)


def test_reduction_to_baseline():
    # forcing the sum combination in the gated model reproduces the baseline
    gated = tiny_model(GATED, seed=7)
    base = tiny_model(BASELINE, seed=99)
    gated.copy_shared_params_to(base)
    rng = np.random.default_rng(2)
    for _ in range(20):
        src = rng.integers(4, 11, size=(2, 3))
        tgt = rng.integers(4, 13, size=(2, 4))
        forced = gated.forward(src, tgt, combine=BASELINE)
        ref = base.forward(src, tgt)
        assert forced.gates == []
        np.testing.assert_allclose(forced.logits.data, ref.logits.data, atol=1e-6)


def test_determinism():
    m = tiny_model(seed=5)
    src = np.array([[4, 5, 6]])
    tgt = np.array([[BOS, 7, 8]])
    a = m.forward(src, tgt).logits.data
    b = m.forward(src, tgt).logits.data
    np.testing.assert_array_equal(a, b)


def test_length_error():
    m = tiny_model()
    with pytest.raises(ValueError):
        m.encode(np.full((1, 20), 4))


def test_checkpoint_roundtrip(tmp_path):
    m = tiny_model(seed=11)
    src = np.array([[4, 5], [9, 10]])
    tgt = np.array([[BOS, 6, 7], [BOS, 8, EOS]])
    before = m.forward(src, tgt).logits.data
    path = tmp_path / "model.npz"
    m.save(path)
    loaded = Model.load(path)
    after = loaded.forward(src, tgt).logits.data
    np.testing.assert_array_equal(before, after)
    assert loaded.config == m.config


def test_encoder_gradient():
    m = tiny_model(num_layers=1)
    src = np.array([[4, 5]])
    params = list(m.params.values())

    def f():
        return T.tsum(T.sigmoid(m.encode(src)))

    for p in params:
        p.zero_grad()
    T.backward(f())
    touched = [p for p in params if p.grad is not None and np.abs(p.grad).max() > 1e-12]
    assert touched
    assert_grads_match(f, touched[:6], tol=1e-3)


def test_end_to_end_gradient():
    m = tiny_model(num_layers=1, seed=2)
    src = np.array([[4, 5, 6], [7, 8, PAD]])
    tgt_in = np.array([[BOS, 4, 5], [BOS, 6, PAD]])
    tgt_out = np.array([[4, 5, EOS], [6, EOS, PAD]])
    mask = (tgt_out != PAD).astype(float).ravel()

    def f():
        out = m.forward(src, tgt_in)
        logits = T.reshape(out.logits, (-1, m.config.vocab_size_tgt))
        return T.cross_entropy(logits, tgt_out.ravel(), mask=mask)

    # full finite-difference sweep over a subset of parameters keeps runtime sane
    names = ["tgt_embed", "dec0.gate.W", "dec0.gate.b", "dec0.cross.q.W",
             "dec0.self_ln.g", "out.b", "src_embed", "enc0.ff1.b"]
    assert_grads_match(f, [m.params[n] for n in names], tol=1e-3)
