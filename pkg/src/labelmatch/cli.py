"""Command line for labelmatch: synth, train, predict, evaluate, explain.

Every flag can also be set through an environment variable named
``LABELMATCH_<FLAG>`` (upper case, dashes as underscores); flags win.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .baseline import Mode
from .checkpoint import TRAIN_LOG, CheckpointError, load_checkpoint, save_checkpoint
from .corpus import CorpusError, Dataset, load_dataset, load_label_vocabulary
from .embeddings import DEFAULT_DIM, EmbeddingError, OovPolicy, load_embeddings, random_init
from .evaluation import (PredictionSet, ZERO_SHOT, evaluate, frequency_buckets)
from .interaction import add_label
from .synthetic import SynthConfig, generate
from .training import TrainConfig, score_matrix, train

ENV_PREFIX = "LABELMATCH_"
log = logging.getLogger("labelmatch")


def round9(x: float) -> float:
    return float(f"{x:.9g}")


# -- shared model/prediction plumbing ------------------------------------------------------

def load_inference_model(args):
    ckpt = load_checkpoint(args.checkpoint)
    model = ckpt.model
    if getattr(args, "labels", None):
        vocab = load_label_vocabulary(args.labels)
        if vocab.ids != model.vocab.ids:
            raise CheckpointError(f"{args.labels} does not match the checkpoint's label vocabulary")
    if getattr(args, "add_labels", None):
        vocab = model.vocab
        extra = load_label_vocabulary(args.add_labels)
        for label in extra:
            vocab = add_label(vocab, label)
        model = type(model)(model.table, model.weights.extended(len(extra)), vocab, model.policy, model.mode)
    if getattr(args, "mode", None):
        model.mode = Mode(args.mode)
    threshold = ckpt.threshold if args.threshold is None else args.threshold
    return model, threshold, ckpt


def predict_dataset(model, dataset: Dataset, jobs: int):
    """Per-document rankings with scores rounded as they are written to disk."""
    scores, anchors = score_matrix(model, dataset.documents, jobs=jobs)
    scores = np.vectorize(round9, otypes=[float])(scores) if scores.size else scores
    ids = model.vocab.ids
    out = []
    for i, doc in enumerate(dataset):
        order = sorted(range(len(ids)), key=lambda j: (-scores[i, j], ids[j]))
        out.append([(ids[j], float(scores[i, j]), None if anchors[i, j] < 0 else int(anchors[i, j]))
                    for j in order])
    return out


def _open_out(path):
    if path in (None, "-"):
        return sys.stdout
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    return open(path, "w", encoding="utf-8", newline="\n")


def _close(fh):
    if fh is not sys.stdout:
        fh.close()


# -- subcommands ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    config = SynthConfig(
        n_labels=args.n_labels, zipf_exponent=args.zipf_exponent, n_train=args.n_train, n_dev=args.n_dev,
        n_test=args.n_test, dim=args.dim, seed=args.seed, synonym_noise=args.synonym_noise,
        implicit_fraction=args.implicit_fraction, zero_shot_fraction=args.zero_shot_fraction,
        doc_len=args.doc_len, labels_per_doc=args.labels_per_doc,
    )
    corpus = generate(config)
    paths = corpus.save(args.out)
    if not args.quiet:
        freq = corpus.train.label_frequencies()
        buckets = frequency_buckets(corpus.train, corpus.vocab)
        print("bucket\tlabels\ttrain_min\ttrain_max\ttrain_total")
        for name in [f"q{i}" for i in range(1, 5)] + [ZERO_SHOT]:
            counts = [freq.get(i, 0) for i, b in buckets.items() if b == name]
            if counts:
                print(f"{name}\t{len(counts)}\t{min(counts)}\t{max(counts)}\t{sum(counts)}")
        for key, path in paths.items():
            log.info("wrote %s: %s", key, path)
    return 0


def cmd_train(args) -> int:
    vocab = load_label_vocabulary(args.labels)
    train_set = load_dataset(args.train, vocab, "train")
    dev_set = load_dataset(args.dev, vocab, "dev")
    if args.embeddings:
        table, duplicates = load_embeddings(args.embeddings, return_duplicates=True)
        if duplicates:
            log.warning("%s: %d duplicate tokens, kept the last occurrence", args.embeddings, duplicates)
    else:
        tokens = vocab.name_tokens()
        for dataset in (train_set, dev_set):
            for doc in dataset:
                tokens.update(doc.tokens)
        table = random_init(tokens, args.dim, args.seed)
    config = TrainConfig(
        learning_rate=args.lr, epochs=args.epochs, batch_size=args.batch_size, seed=args.seed,
        mode=Mode(args.mode), max_doc_len=args.max_doc_len,
        freeze_embeddings_for_base=args.freeze_embeddings_for_base, policy=OovPolicy(args.oov_policy),
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    log_path = Path(args.log) if args.log else out / TRAIN_LOG
    with open(log_path, "w", encoding="utf-8", newline="\n") as log_fh:
        def on_epoch(record):
            log_fh.write(json.dumps(record) + "\n")
            log_fh.flush()

        result = train(train_set, dev_set, vocab, table, config, jobs=args.jobs, on_epoch=on_epoch)
    extra = {f"train.{k}": v for k, v in config.manifest().items()}
    extra["best_epoch"] = str(result.best_epoch)
    extra["dev_macro_f1"] = repr(result.dev_macro_f1)
    save_checkpoint(out, result.model, result.threshold, extra)
    log.info("best epoch %d (dev MacroF1 %.4f, threshold %.6f) -> %s",
             result.best_epoch, result.dev_macro_f1, result.threshold, out)
    return 0


def cmd_predict(args) -> int:
    model, threshold, _ = load_inference_model(args)
    dataset = load_dataset(args.input, model.vocab, "test")
    rankings = predict_dataset(model, dataset, args.jobs)
    fh = _open_out(args.output)
    try:
        for doc, ranking in zip(dataset, rankings):
            if args.top_k is not None:
                ranking = ranking[:args.top_k]
            record = {
                "doc_id": doc.id,
                "ranking": [list(r) for r in ranking],
                "predicted": [label_id for label_id, score, _ in ranking if score >= threshold],
                "threshold": threshold,
            }
            fh.write(json.dumps(record) + "\n")
    finally:
        _close(fh)
    return 0


def read_predictions(path) -> tuple[list[dict], float | None]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: malformed prediction record ({exc.msg})") from None
    thresholds = {r.get("threshold") for r in records} - {None}
    return records, (thresholds.pop() if len(thresholds) == 1 else None)


def cmd_evaluate(args) -> int:
    if bool(args.predictions) == bool(args.checkpoint):
        raise CorpusError("give exactly one of --predictions or --checkpoint")
    if args.checkpoint:
        model, threshold, _ = load_inference_model(args)
        vocab = model.vocab
        gold_set = load_dataset(args.gold, vocab, "test")
        rankings = predict_dataset(model, gold_set, args.jobs)
    else:
        if not args.labels:
            raise CorpusError("--predictions needs --labels for the label vocabulary")
        vocab = load_label_vocabulary(args.labels)
        gold_set = load_dataset(args.gold, vocab, "test")
        records, recorded = read_predictions(args.predictions)
        threshold = args.threshold if args.threshold is not None else recorded
        if threshold is None:
            raise CorpusError("no threshold recorded in predictions; pass --threshold")
        by_id = {r["doc_id"]: r["ranking"] for r in records}
        if set(by_id) != {doc.id for doc in gold_set} or len(records) != len(gold_set):
            raise CorpusError("predictions and gold documents do not align")
        rankings = [by_id[doc.id] for doc in gold_set]
    preds = [PredictionSet(doc.id, tuple((r[0], float(r[1])) for r in ranking), doc.gold_labels)
             for doc, ranking in zip(gold_set, rankings)]
    buckets = freq = None
    if args.train:
        train_set = load_dataset(args.train, vocab, "train")
        buckets = frequency_buckets(train_set, vocab)
        freq = train_set.label_frequencies()
    report = evaluate(preds, vocab, float(threshold), buckets, freq)
    fh = _open_out(args.output)
    try:
        fh.write(json.dumps(report.to_record()) + "\n")
    finally:
        _close(fh)
    if args.per_label:
        with open(args.per_label, "w", encoding="utf-8", newline="") as tsv:
            writer = csv.writer(tsv, delimiter="\t", lineterminator="\n")
            writer.writerow(["label_id", "train_freq", "bucket", "tp", "fp", "fn", "ap"])
            writer.writerows(report.per_label_rows())
    return 0


def cmd_explain(args) -> int:
    model, threshold, _ = load_inference_model(args)
    dataset = load_dataset(args.input, model.vocab, "test")
    rankings = predict_dataset(model, dataset, args.jobs)
    fh = _open_out(args.output)
    try:
        for doc, ranking in zip(dataset, rankings):
            if args.top_k is not None:
                ranking = ranking[:args.top_k]
            for label_id, score, anchor in ranking:
                if score < threshold:
                    continue
                if anchor is None:
                    window = ""
                else:
                    window = " ".join(doc.tokens[anchor:anchor + len(model.vocab[label_id])])
                fh.write(f"{doc.id}\t{label_id}\t{score:.9g}\t{'none' if anchor is None else anchor}\t{window}\n")
    finally:
        _close(fh)
    return 0


# -- parser --------------------------------------------------------------------------------

def _global_flags(parser: argparse.ArgumentParser, suppress: bool) -> None:
    default = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--jobs", type=int, default=default(1),
                        help="parallel documents; 1 keeps runs bit-reproducible")
    parser.add_argument("--seed", type=int, default=default(13), help="seed for every random draw")
    parser.add_argument("--quiet", action="store_true", default=default(False))


def _inference_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="dataset (.jsonl) to score")
    p.add_argument("--output", default="-")
    p.add_argument("--top-k", type=int)
    p.add_argument("--threshold", type=float, help="defaults to the checkpoint's threshold")
    p.add_argument("--mode", choices=[m.value for m in Mode], help="defaults to the checkpoint's mode")
    p.add_argument("--labels", help="label vocabulary to check against the checkpoint")
    p.add_argument("--add-labels", help="labels (id<TAB>name) added after training")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="labelmatch", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic long-tail corpus")
    _global_flags(p, suppress=True)
    p.add_argument("--out", required=True)
    defaults = SynthConfig()
    for name in ("n_labels", "n_train", "n_dev", "n_test", "dim", "doc_len"):
        p.add_argument("--" + name.replace("_", "-"), type=int, default=getattr(defaults, name))
    for name in ("zipf_exponent", "synonym_noise", "implicit_fraction", "zero_shot_fraction", "labels_per_doc"):
        p.add_argument("--" + name.replace("_", "-"), type=float, default=getattr(defaults, name))
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    _global_flags(p, suppress=True)
    p.add_argument("--train", required=True)
    p.add_argument("--dev", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--embeddings", help="text-format vectors; random init when omitted")
    p.add_argument("--out", required=True, help="checkpoint directory")
    p.add_argument("--log", help=f"training log path (default OUT/{TRAIN_LOG})")
    p.add_argument("--mode", choices=[m.value for m in Mode], default=Mode.MAX.value)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--dim", type=int, default=DEFAULT_DIM, help="embedding dim for random init")
    p.add_argument("--oov-policy", choices=[o.value for o in OovPolicy], default=OovPolicy.BINARY.value)
    p.add_argument("--max-doc-len", type=int, default=2500)
    p.add_argument("--freeze-embeddings-for-base", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="rank labels for each document")
    _global_flags(p, suppress=True)
    _inference_flags(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="compute metrics against gold labels")
    _global_flags(p, suppress=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--predictions")
    p.add_argument("--checkpoint")
    p.add_argument("--labels")
    p.add_argument("--add-labels")
    p.add_argument("--train", help="training set, enables frequency-bucket breakdowns")
    p.add_argument("--threshold", type=float)
    p.add_argument("--mode", choices=[m.value for m in Mode])
    p.add_argument("--per-label", help="write per-label TSV here")
    p.add_argument("--output", default="-")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("explain", help="show the matched text window for each predicted label")
    _global_flags(p, suppress=True)
    _inference_flags(p)
    p.set_defaults(func=cmd_explain)

    for parser_ in [parser, *sub.choices.values()]:
        _apply_env(parser_)
    return parser


def _apply_env(parser: argparse.ArgumentParser, environ=None) -> None:
    environ = os.environ if environ is None else environ
    for action in parser._actions:
        if not action.option_strings or action.dest in ("help", "version") or action.default is argparse.SUPPRESS:
            continue
        raw = environ.get(ENV_PREFIX + action.dest.upper())
        if raw is None:
            continue
        if isinstance(action, argparse._StoreTrueAction):
            action.default = raw.strip().lower() in ("1", "true", "yes", "on")
        else:
            action.default = action.type(raw) if action.type else raw
        action.required = False


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    if args.jobs < 1:
        parser.error("--jobs must be >= 1")
    try:
        return args.func(args)
    except (CorpusError, EmbeddingError, CheckpointError, ValueError, OSError) as exc:
        print(f"labelmatch {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
