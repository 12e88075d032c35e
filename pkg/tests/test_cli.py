import math

import numpy as np
import pytest

from gated_nmt import pmi
from gated_nmt.cli import main, parse_config, parse_layers
from gated_nmt.data import Vocab, load_corpus, read_supervision

SRC_LINES = ["a b", "a c", "b c a", "c b"]
TGT_LINES = ["x y", "x z", "y z x", "z y"]

TINY_CONFIG = """\
num_layers = 2
num_heads = 2
model_dim = 8
ff_dim = 16
max_len = 16
dropout_rate = 0.0
warmup_steps = 20
max_steps = 8
log_every = 2
label_smoothing = 0.0
max_tokens_per_batch = 64
"""


@pytest.fixture
def workdir(tmp_path):
    (tmp_path / "train.src").write_text("\n".join(SRC_LINES) + "\n")
    (tmp_path / "train.tgt").write_text("\n".join(TGT_LINES) + "\n")
    (tmp_path / "config").write_text(TINY_CONFIG)
    return tmp_path


def run(*argv):
    return main([str(a) for a in argv])


class TestVocabCommand:
    def test_frequency_order(self, tmp_path):
        (tmp_path / "c.txt").write_text("a a b\n")
        assert run("build-vocab", tmp_path / "c.txt", "--out", tmp_path / "v") == 0
        v = Vocab.load(tmp_path / "v")
        assert v.tokens == ["<pad>", "<bos>", "<eos>", "<unk>", "a", "b"]
        assert v.id("a") == 4

    def test_truncation_maps_to_unk(self, tmp_path):
        (tmp_path / "c.txt").write_text("a a b\n")
        run("build-vocab", tmp_path / "c.txt", "--limit", 5, "--out", tmp_path / "v")
        v = Vocab.load(tmp_path / "v")
        assert len(v) == 5
        assert v.id("b") == 3  # UNK

    def test_deterministic_bytes(self, tmp_path):
        (tmp_path / "c.txt").write_text("b a b a c\n")
        run("build-vocab", tmp_path / "c.txt", "--out", tmp_path / "v1")
        run("build-vocab", tmp_path / "c.txt", "--out", tmp_path / "v2")
        assert (tmp_path / "v1").read_bytes() == (tmp_path / "v2").read_bytes()

    def test_missing_file_fails(self, tmp_path, capsys):
        assert run("build-vocab", tmp_path / "nope", "--out", tmp_path / "v") == 1
        assert "error:" in capsys.readouterr().err


class TestPmiCommands:
    def build(self, workdir):
        assert run("build-pmi", "--src", workdir / "train.src",
                   "--tgt", workdir / "train.tgt",
                   "--bilingual-out", workdir / "bi.pmi",
                   "--monolingual-out", workdir / "mono.pmi") == 0

    def test_roundtrip_queries(self, workdir):
        self.build(workdir)
        loaded = pmi.PmiTable.load(workdir / "bi.pmi")
        direct = pmi.count_bilingual([(s.split(), t.split())
                                      for s, t in zip(SRC_LINES, TGT_LINES)])
        rng = np.random.default_rng(0)
        toks = ["a", "b", "c", "x", "y", "z", "qq"]
        for _ in range(100):
            mu, nu = rng.choice(toks, 2)
            assert loaded.pmi(mu, nu) == direct.pmi(mu, nu)

    def test_supervision_alignment_and_oracle(self, workdir):
        self.build(workdir)
        assert run("gen-supervision", "--src", workdir / "train.src",
                   "--tgt", workdir / "train.tgt",
                   "--bilingual", workdir / "bi.pmi",
                   "--monolingual", workdir / "mono.pmi",
                   "--out", workdir / "sup") == 0
        labels = read_supervision(workdir / "sup")
        bi = pmi.PmiTable.load(workdir / "bi.pmi")
        mono = pmi.PmiTable.load(workdir / "mono.pmi")
        for row, src, tgt in zip(labels, SRC_LINES, TGT_LINES):
            assert len(row) == len(tgt.split())
            assert row == pmi.gen_supervision(src.split(), tgt.split(), bi, mono)

    def test_scenario_mismatch_rejected(self, workdir, capsys):
        self.build(workdir)
        code = run("gen-supervision", "--src", workdir / "train.src",
                   "--tgt", workdir / "train.tgt",
                   "--bilingual", workdir / "mono.pmi",
                   "--monolingual", workdir / "bi.pmi",
                   "--out", workdir / "sup")
        assert code == 1
        assert "not a bilingual table" in capsys.readouterr().err


class TestPipeline:
    def prepare(self, workdir):
        run("build-vocab", workdir / "train.src", "--out", workdir / "src.vocab")
        run("build-vocab", workdir / "train.tgt", "--out", workdir / "tgt.vocab")
        run("build-pmi", "--src", workdir / "train.src", "--tgt", workdir / "train.tgt",
            "--bilingual-out", workdir / "bi.pmi",
            "--monolingual-out", workdir / "mono.pmi")
        run("gen-supervision", "--src", workdir / "train.src",
            "--tgt", workdir / "train.tgt", "--bilingual", workdir / "bi.pmi",
            "--monolingual", workdir / "mono.pmi", "--out", workdir / "sup")

    def train(self, workdir, out, *extra):
        return run("train", "--src", workdir / "train.src",
                   "--tgt", workdir / "train.tgt",
                   "--src-vocab", workdir / "src.vocab",
                   "--tgt-vocab", workdir / "tgt.vocab",
                   "--config", workdir / "config", "--out", out, *extra)

    def test_baseline_train_and_tools(self, workdir, capsys):
        self.prepare(workdir)
        out = workdir / "run"
        assert self.train(workdir, out, "--lambda", "0",
                          "--gate-mode", "BASELINE", "--seed", "1") == 0
        ckpt = out / "ckpt_final.npz"
        assert ckpt.exists()

        assert run("translate", "--src", workdir / "train.src",
                   "--checkpoint", ckpt, "--src-vocab", workdir / "src.vocab",
                   "--tgt-vocab", workdir / "tgt.vocab", "--beam", 2,
                   "--out", workdir / "hyp") == 0
        assert len((workdir / "hyp").read_text().splitlines()) == len(SRC_LINES)

        assert run("score", "--src", workdir / "train.src",
                   "--tgt", workdir / "train.tgt", "--checkpoint", ckpt,
                   "--src-vocab", workdir / "src.vocab",
                   "--tgt-vocab", workdir / "tgt.vocab",
                   "--out", workdir / "scores") == 0
        scores = [float(l) for l in (workdir / "scores").read_text().splitlines()]
        assert len(scores) == len(SRC_LINES) and all(s < 0 for s in scores)

        # analyze requires a gated checkpoint
        assert run("analyze", "--src", workdir / "train.src",
                   "--tgt", workdir / "train.tgt", "--checkpoint", ckpt,
                   "--src-vocab", workdir / "src.vocab",
                   "--tgt-vocab", workdir / "tgt.vocab",
                   "--bilingual", workdir / "bi.pmi",
                   "--monolingual", workdir / "mono.pmi",
                   "--out", workdir / "report") == 1
        capsys.readouterr()

    def test_gated_train_analyze_and_determinism(self, workdir):
        self.prepare(workdir)
        for name in ("run1", "run2"):
            assert self.train(workdir, workdir / name, "--lambda", "1",
                              "--supervision", workdir / "sup", "--seed", "7") == 0
        assert ((workdir / "run1" / "metrics.log").read_bytes()
                == (workdir / "run2" / "metrics.log").read_bytes())

        ckpt = workdir / "run1" / "ckpt_final.npz"
        assert run("analyze", "--src", workdir / "train.src",
                   "--tgt", workdir / "train.tgt", "--checkpoint", ckpt,
                   "--src-vocab", workdir / "src.vocab",
                   "--tgt-vocab", workdir / "tgt.vocab",
                   "--bilingual", workdir / "bi.pmi",
                   "--monolingual", workdir / "mono.pmi",
                   "--out", workdir / "report") == 0
        lines = [l for l in (workdir / "report").read_text().splitlines()
                 if not l.startswith("#")]
        metrics = dict(l.split("\t") for l in lines)
        assert set(metrics) == {"fer", "cer", "ce_over_fe",
                                "gate_mean", "gate_variance"}
        assert float(metrics["cer"]) <= float(metrics["fer"])
        assert 0.0 <= float(metrics["ce_over_fe"]) <= 1.0

    def test_missing_supervision_with_lambda(self, workdir, capsys):
        self.prepare(workdir)
        assert self.train(workdir, workdir / "bad", "--lambda", "1") == 1
        assert "supervision" in capsys.readouterr().err


class TestBleuCommand:
    def test_identity_and_buckets(self, tmp_path, capsys):
        (tmp_path / "ref").write_text("a b c d\ne f g h\n")
        (tmp_path / "src").write_text("s s\ns s s s s s\n")
        assert run("bleu", "--hyp", tmp_path / "ref", "--ref", tmp_path / "ref") == 0
        assert capsys.readouterr().out.strip() == "100.00"
        assert run("bleu", "--hyp", tmp_path / "ref", "--ref", tmp_path / "ref",
                   "--src", tmp_path / "src", "--buckets", "4") == 0
        out = capsys.readouterr().out.splitlines()
        assert out[0] == "bucket\tbleu\tsentences"
        assert len(out) == 3  # header + two non-empty buckets


class TestConfigParsing:
    def test_unknown_key_rejected(self, tmp_path):
        (tmp_path / "cfg").write_text("turbo=1\n")
        with pytest.raises(ValueError):
            parse_config(tmp_path / "cfg")

    def test_layers_flag(self):
        assert parse_layers("ALL") is None
        assert parse_layers("1,3") == frozenset({1, 3})
        with pytest.raises(ValueError):
            parse_layers("1,x")
