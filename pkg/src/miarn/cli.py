"""Command-line surface: prepare, train, eval, attend."""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import corpus, trainer, viz
from .checkpoint import (
    CheckpointError,
    load_model_checkpoint,
    save_model_checkpoint,
)
from .model import ATTENTION_KINDS, MODEL_KINDS
from .numerics import substream


def _write_atomic(path, text):
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


# ----------------------------------------------------------------------
# prepare
# ----------------------------------------------------------------------

def cmd_prepare(args):
    splits = {}
    stats = []
    for name, path in (("train", args.train), ("dev", args.dev), ("test", args.test)):
        raw = corpus.load_tsv(path)
        kept, split_stats = corpus.clean_split(name, raw)
        splits[name] = kept
        stats.append(split_stats)

    vocab = corpus.build_vocab(splits["train"])

    os.makedirs(args.out_dir, exist_ok=True)
    vocab.save(os.path.join(args.out_dir, "vocab.txt"))
    for name, docs in splits.items():
        encoded = [corpus.encode(d, vocab, args.max_len) for d in docs]
        corpus.save_encoded(os.path.join(args.out_dir, f"{name}.encoded.tsv"), encoded)

    lines = ["split\ttotal\trejected_url\trejected_short\tkept\tavg_tokens"]
    for s in stats:
        lines.append(
            f"{s.name}\t{s.total}\t{s.rejected_url}\t{s.rejected_short}"
            f"\t{s.kept}\t{s.avg_tokens:.2f}"
        )
    lines.append(f"vocab_size\t{len(vocab)}")
    lines.append(f"max_len\t{args.max_len}")
    report = "\n".join(lines) + "\n"
    _write_atomic(os.path.join(args.out_dir, "stats.txt"), report)
    sys.stdout.write(report)
    return 0


# ----------------------------------------------------------------------
# train
# ----------------------------------------------------------------------

def cmd_train(args, parser):
    if args.model == "miarn" and not args.k:
        parser.error("--k is required for --model miarn")
    if args.model != "miarn" and args.k:
        print(f"warning: --k is ignored by model {args.model!r}", file=sys.stderr)

    train_docs = corpus.load_encoded(os.path.join(args.data_dir, "train.encoded.tsv"))
    dev_docs = corpus.load_encoded(os.path.join(args.data_dir, "dev.encoded.tsv"))
    vocab_path = os.path.join(args.data_dir, "vocab.txt")
    vocab = corpus.Vocabulary.load(vocab_path)
    if not train_docs:
        raise ValueError(f"{args.data_dir}: empty training split")
    max_len = len(train_docs[0].ids)

    config = trainer.TrainConfig(
        model=args.model,
        n=args.n,
        d=args.d,
        k=args.k if args.model == "miarn" else None,
        lam=args.lam,
        lr=args.lr,
        epochs=args.epochs,
        batch_size=args.batch_size,
        max_len=max_len,
        seed=args.seed,
    )
    embedding = None
    if args.embeddings:
        embedding = corpus.load_pretrained(
            args.embeddings, vocab, args.n, substream(args.seed, "init")
        )

    result = trainer.train(
        config, train_docs, dev_docs, vocab_size=len(vocab), embedding=embedding
    )

    save_model_checkpoint(
        args.out,
        result.model,
        extra_meta={
            "L": max_len,
            "seed": config.seed,
            "lr": config.lr,
            "lambda": config.lam,
            "epochs": config.epochs,
            "batch_size": config.batch_size,
            "best_epoch": result.best_epoch,
            "vocab": vocab_path,
        },
    )

    history_path = args.history or f"{args.out}.history.tsv"
    rows = [
        f"{h.epoch}\t{h.train_loss:.6f}\t{h.dev_accuracy:.6f}\t{h.dev_macro_f1:.6f}"
        for h in result.history
    ]
    _write_atomic(history_path, "\n".join(rows) + "\n")

    print(
        f"saved {args.out} (best epoch {result.best_epoch}, "
        f"dev macro-F1 {result.best_dev_f1:.4f})"
    )
    return 0


# ----------------------------------------------------------------------
# eval
# ----------------------------------------------------------------------

def cmd_eval(args):
    net, meta = load_model_checkpoint(args.checkpoint)
    docs = corpus.load_encoded(args.data)
    vocab_size = int(meta["vocab_size"])
    for d in docs:
        if d.ids.max(initial=0) >= vocab_size:
            raise ValueError(
                f"{args.data}: token id {int(d.ids.max())} out of range for "
                f"checkpoint vocabulary of size {vocab_size}"
            )
    metrics = trainer.evaluate(net, docs, batch_size=args.batch_size)
    print("P R F1 Acc")
    print(
        f"{metrics.macro_p * 100:.2f} {metrics.macro_r * 100:.2f} "
        f"{metrics.macro_f1 * 100:.2f} {metrics.accuracy * 100:.2f}"
    )
    return 0


# ----------------------------------------------------------------------
# attend
# ----------------------------------------------------------------------

def _encode_line(text, vocab, max_len):
    tokens = [
        corpus.MENTION_TOKEN if t.startswith("@") and len(t) > 1 else t
        for t in corpus.tokenize(text)
    ]
    if not tokens:
        return None
    tokens = tokens[:max_len]
    ids = np.full(max_len, corpus.PAD_ID, dtype=np.int32)
    for i, tok in enumerate(tokens):
        ids[i] = vocab.lookup(tok)
    return tokens, ids, len(tokens)


def cmd_attend(args):
    net, meta = load_model_checkpoint(args.checkpoint)
    if net.kind not in ATTENTION_KINDS:
        raise ValueError(f"model {net.kind!r} has no attention to visualize")
    vocab_path = args.vocab or meta.get("vocab")
    if not vocab_path:
        raise ValueError("checkpoint carries no vocabulary path; pass --vocab")
    vocab = corpus.Vocabulary.load(vocab_path)
    max_len = int(meta.get("L", 40))

    token_rows, id_rows, lens = [], [], []
    with open(args.input, encoding="utf-8") as fh:
        for line in fh:
            encoded = _encode_line(line.strip(), vocab, max_len)
            if encoded is None:
                continue
            tokens, ids, valid = encoded
            token_rows.append(tokens)
            id_rows.append(ids)
            lens.append(valid)
    if not id_rows:
        raise ValueError(f"{args.input}: no non-empty lines")

    batch = corpus.Batch(
        ids=np.stack(id_rows),
        valid_lens=np.asarray(lens, dtype=np.int32),
        labels=np.zeros(len(id_rows), dtype=np.int64),
        tokens=token_rows,
    )
    _, records = net.forward(batch, with_records=True)

    if args.format == "html":
        _write_atomic(args.out, viz.render_html(records))
        print(f"wrote {args.out}", file=sys.stderr)
    else:
        for record in records:
            print(viz.render_ansi(record))
    for record in records:
        sys.stdout.write(viz.audit_text(record))
    return 0


# ----------------------------------------------------------------------
# parser
# ----------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="miarn",
        description="Intra-attention recurrent networks for binary text classification.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="tokenize, clean, build vocab, encode splits")
    p.add_argument("--train", required=True, help="training TSV (label<TAB>text)")
    p.add_argument("--dev", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--max-len", type=int, default=40)

    p = sub.add_parser("train", help="train a model on a prepared directory")
    p.add_argument("--model", required=True, choices=MODEL_KINDS)
    p.add_argument("--data-dir", required=True)
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--embeddings", help="pretrained embedding text file")
    p.add_argument("--n", type=int, default=100, help="embedding size")
    p.add_argument("--d", type=int, default=100, help="LSTM hidden size")
    p.add_argument("--k", type=int, help="pair-projection width (miarn)")
    p.add_argument("--lambda", dest="lam", type=float, default=1e-8, help="L2 weight")
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--history", help="history TSV path (default: <out>.history.tsv)")

    p = sub.add_parser("eval", help="evaluate a checkpoint on an encoded split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="encoded TSV from prepare")
    p.add_argument("--batch-size", type=int, default=256)

    p = sub.add_parser("attend", help="render attention maps for raw text lines")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="text file, one document per line")
    p.add_argument("--format", choices=("html", "ansi"), default="ansi")
    p.add_argument("--out", default="attention.html", help="output path for html")
    p.add_argument("--vocab", help="vocabulary file (default: path stored in checkpoint)")

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "prepare":
            return cmd_prepare(args)
        if args.command == "train":
            return cmd_train(args, parser)
        if args.command == "eval":
            return cmd_eval(args)
        return cmd_attend(args)
    except (OSError, ValueError, CheckpointError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
