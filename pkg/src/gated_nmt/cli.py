"""Command-line entry point.

Subcommands cover the whole pipeline: vocabulary and PMI table
construction, supervision generation, training, beam-search translation,
forced-decoding scoring, error analysis, and BLEU.  Training options come
from a flat key=value config file; command-line flags win over the file.
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import data, decoding, pmi, training
from .model import BASELINE, GATED, Model, ModelConfig

MODEL_KEYS = {"num_layers", "num_heads", "model_dim", "ff_dim", "max_len",
              "gate_mode", "dropout_rate"}
TRAIN_KEYS = {"lambda", "layers", "warmup_steps", "lr_scale",
              "max_tokens_per_batch", "beta1", "beta2", "eps", "max_steps",
              "checkpoint_every", "seed", "label_smoothing", "log_every"}


def parse_config(path):
    cfg = {}
    for ln, line in enumerate(data.read_lines(path), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{ln}: expected key=value")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in MODEL_KEYS | TRAIN_KEYS:
            raise ValueError(f"{path}:{ln}: unknown config key {key!r}")
        cfg[key] = value
    return cfg


def parse_layers(text):
    if text.upper() == "ALL":
        return None
    try:
        return frozenset(int(part) for part in text.split(","))
    except ValueError:
        raise ValueError(f"bad --layers value {text!r}; expected ALL or e.g. 1,3")


def eval_threads():
    return max(int(os.environ.get("GATED_NMT_THREADS", "1")), 1)


def _map_sentences(fn, items):
    n = eval_threads()
    if n == 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------


def cmd_build_vocab(args):
    vocab = data.Vocab.build(data.load_corpus(args.corpus), size_limit=args.limit)
    vocab.save(args.out)


def cmd_build_pmi(args):
    pairs = data.load_parallel(args.src, args.tgt)
    pmi.count_bilingual(pairs).save(args.bilingual_out)
    pmi.count_monolingual([tgt for _, tgt in pairs]).save(args.monolingual_out)


def _load_tables(bi_path, mono_path):
    bi = pmi.PmiTable.load(bi_path)
    mono = pmi.PmiTable.load(mono_path)
    if bi.scenario != pmi.BILINGUAL:
        raise ValueError(f"{bi_path} is not a bilingual table")
    if mono.scenario != pmi.MONOLINGUAL:
        raise ValueError(f"{mono_path} is not a monolingual table")
    return bi, mono


def cmd_gen_supervision(args):
    bi, mono = _load_tables(args.bilingual, args.monolingual)
    pairs = data.load_parallel(args.src, args.tgt)
    labels = [pmi.gen_supervision(src, tgt, bi, mono) for src, tgt in pairs]
    data.write_supervision(labels, args.out)


def _train_configs(args):
    cfg = parse_config(args.config) if args.config else {}
    if args.lam is not None:
        cfg["lambda"] = str(args.lam)
    if args.layers is not None:
        cfg["layers"] = args.layers
    if args.gate_mode is not None:
        cfg["gate_mode"] = args.gate_mode
    if args.seed is not None:
        cfg["seed"] = str(args.seed)

    model_kw = {}
    for key in MODEL_KEYS & cfg.keys():
        raw = cfg[key]
        if key == "gate_mode":
            model_kw[key] = raw.lower()
        elif key == "dropout_rate":
            model_kw[key] = float(raw)
        else:
            model_kw[key] = int(raw)
    train_kw = {}
    for key in TRAIN_KEYS & cfg.keys():
        raw = cfg[key]
        if key == "lambda":
            train_kw["lam"] = float(raw)
        elif key == "layers":
            train_kw["regularized_layers"] = parse_layers(raw)
        elif key in ("lr_scale", "beta1", "beta2", "eps", "label_smoothing"):
            train_kw[key] = float(raw)
        else:
            train_kw[key] = int(raw)
    return model_kw, train_kw


def cmd_train(args):
    model_kw, train_kw = _train_configs(args)
    src_vocab = data.Vocab.load(args.src_vocab)
    tgt_vocab = data.Vocab.load(args.tgt_vocab)
    pairs = data.load_parallel(args.src, args.tgt)
    ids = [(src_vocab.encode(s), tgt_vocab.encode(t)) for s, t in pairs]

    supervision = None
    if args.supervision:
        supervision = data.read_supervision(args.supervision)
        if len(supervision) != len(pairs):
            raise ValueError("supervision line count differs from corpus")
        for row, (_, tgt) in zip(supervision, pairs):
            if len(row) != len(tgt):
                raise ValueError("supervision labels misaligned with target corpus")

    tcfg = training.TrainConfig(**train_kw)
    mcfg = ModelConfig(vocab_size_src=len(src_vocab), vocab_size_tgt=len(tgt_vocab),
                       **model_kw)
    model = Model(mcfg, seed=tcfg.seed)
    training.train(model, ids, supervision, tcfg, args.out)


def _load_model(args):
    return Model.load(args.checkpoint)


def cmd_translate(args):
    model = _load_model(args)
    src_vocab = data.Vocab.load(args.src_vocab)
    tgt_vocab = data.Vocab.load(args.tgt_vocab)
    sentences = data.load_corpus(args.src)

    def translate(sent):
        hyp = decoding.beam_search(model, src_vocab.encode(sent),
                                   beam_size=args.beam, max_len=args.max_len)
        return hyp

    hyps = _map_sentences(translate, sentences)
    unfinished = sum(1 for h in hyps if not h.finished)
    if unfinished:
        print(f"warning: {unfinished} hypotheses hit the length limit unfinished",
              file=sys.stderr)
    with open(args.out, "w", encoding="utf-8") as fh:
        for hyp in hyps:
            fh.write(" ".join(tgt_vocab.decode(hyp.tokens)) + "\n")


def cmd_score(args):
    model = _load_model(args)
    src_vocab = data.Vocab.load(args.src_vocab)
    tgt_vocab = data.Vocab.load(args.tgt_vocab)
    pairs = data.load_parallel(args.src, args.tgt)

    def score(pair):
        src, tgt = pair
        return decoding.forced_decode(model, src_vocab.encode(src),
                                      tgt_vocab.encode(tgt)).logprob

    scores = _map_sentences(score, pairs)
    with open(args.out, "w", encoding="utf-8") as fh:
        for lp in scores:
            fh.write(f"{lp:.6f}\n")


def cmd_analyze(args):
    model = _load_model(args)
    if model.config.gate_mode != GATED:
        raise ValueError("analyze needs a gated checkpoint (gate statistics)")
    src_vocab = data.Vocab.load(args.src_vocab)
    tgt_vocab = data.Vocab.load(args.tgt_vocab)
    bi, mono = _load_tables(args.bilingual, args.monolingual)
    pairs = data.load_parallel(args.src, args.tgt)

    moments = decoding.RunningMoments()
    rows = []

    def run(pair):
        src, tgt = pair
        res = decoding.forced_decode(model, src_vocab.encode(src),
                                     tgt_vocab.encode(tgt))
        return src, tgt, res

    for src, tgt, res in _map_sentences(run, pairs):
        moments.update(res.gates)
        n = len(tgt)  # EOS position not eligible for error analysis
        hyp_toks = [tgt_vocab.token(i) for i in res.argmax_ids[:n]]
        rows.append((src, tgt, hyp_toks, list(res.errors[:n])))

    report = decoding.context_selection_errors(rows, bi, mono)
    lines = [("fer", report.fer), ("cer", report.cer),
             ("ce_over_fe", report.ce_over_fe),
             ("gate_mean", moments.mean), ("gate_variance", moments.variance)]
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(f"# token-level rates over {report.token_count} reference tokens\n")
        for name, value in lines:
            fh.write(f"{name}\t{value:.6f}\n")


def cmd_bleu(args):
    hyps = data.load_corpus(args.hyp)
    refs = data.load_corpus(args.ref)
    ci = not args.case_sensitive
    if args.buckets:
        if not args.src:
            raise ValueError("--buckets needs --src for source lengths")
        srcs = data.load_corpus(args.src)
        edges = [int(e) for e in args.buckets.split(",")]
        rows = decoding.bucketed_eval(hyps, refs, srcs, edges, case_insensitive=ci)
        print("bucket\tbleu\tsentences")
        for label, score, count in rows:
            print(f"{label}\t{score:.2f}\t{count}")
    else:
        print(f"{decoding.bleu(hyps, refs, case_insensitive=ci):.2f}")


# ---------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="gated-nmt")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-vocab", help="frequency-sorted vocabulary")
    p.add_argument("corpus")
    p.add_argument("--limit", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_vocab)

    p = sub.add_parser("build-pmi", help="bilingual and monolingual PMI tables")
    p.add_argument("--src", required=True)
    p.add_argument("--tgt", required=True)
    p.add_argument("--bilingual-out", required=True)
    p.add_argument("--monolingual-out", required=True)
    p.set_defaults(func=cmd_build_pmi)

    p = sub.add_parser("gen-supervision", help="per-token 0/1 gate labels")
    p.add_argument("--src", required=True)
    p.add_argument("--tgt", required=True)
    p.add_argument("--bilingual", required=True)
    p.add_argument("--monolingual", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_supervision)

    p = sub.add_parser("train")
    p.add_argument("--src", required=True)
    p.add_argument("--tgt", required=True)
    p.add_argument("--src-vocab", required=True)
    p.add_argument("--tgt-vocab", required=True)
    p.add_argument("--supervision")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--layers")
    p.add_argument("--gate-mode", choices=[GATED, BASELINE, "GATED", "BASELINE"])
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("translate")
    p.add_argument("--src", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--src-vocab", required=True)
    p.add_argument("--tgt-vocab", required=True)
    p.add_argument("--beam", type=int, default=4)
    p.add_argument("--max-len", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_translate)

    p = sub.add_parser("score", help="forced-decoding log-probabilities")
    p.add_argument("--src", required=True)
    p.add_argument("--tgt", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--src-vocab", required=True)
    p.add_argument("--tgt-vocab", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("analyze", help="FER/CER and gate statistics")
    p.add_argument("--src", required=True)
    p.add_argument("--tgt", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--src-vocab", required=True)
    p.add_argument("--tgt-vocab", required=True)
    p.add_argument("--bilingual", required=True)
    p.add_argument("--monolingual", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("bleu")
    p.add_argument("--hyp", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--src")
    p.add_argument("--buckets")
    p.add_argument("--case-sensitive", action="store_true")
    p.set_defaults(func=cmd_bleu)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    if getattr(args, "gate_mode", None):
        args.gate_mode = args.gate_mode.lower()
    try:
        args.func(args)
    except (ValueError, OSError, IndexError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
