"""Command-line entry point: ``layoutmrc {train,generate,eval,inspect,stats}``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import contextlib
import os
import sys
from pathlib import Path

from . import __version__
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig, parse_overrides, resolve
from .corpus import CorpusError, compute_stats, iter_qas, load_corpus
from .metrics import MetricsError, evaluate_pairs, read_lines
from .model import generate, init_params, param_shapes
from .serializer import (
    SequenceError,
    Vocabulary,
    build_input_sequence,
    build_vocabulary,
    format_sequence,
)
from .trainer import TrainingDiverged, pseudo_saliency_labels, train

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _existing(path: str, what: str) -> Path:
    if not path:
        raise UsageError(f"no {what} path given")
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{what} not found: {p}")
    return p


def _config(args) -> RunConfig:
    overrides = parse_overrides(args.set or [])
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    for key in ("train", "dev", "output_dir", "checkpoint", "test", "predictions", "vocab"):
        value = getattr(args, f"opt_{key}", None)
        if value is not None:
            overrides[key] = value
    return resolve(args.config, overrides)


def _checkpoint_paths(cfg: RunConfig) -> tuple[Path, Path]:
    ckpt = Path(cfg.run["checkpoint"] or Path(cfg.run["output_dir"]) / "model.ckpt")
    vocab = Path(cfg.run["vocab"]) if cfg.run["vocab"] else ckpt.with_name("vocab.txt")
    return ckpt, vocab


# --------------------------------------------------------------- commands


def cmd_train(args) -> int:
    cfg = _config(args)
    train_docs = load_corpus(_existing(cfg.run["train"], "training corpus"))
    dev_docs = load_corpus(_existing(cfg.run["dev"], "dev corpus")) if cfg.run["dev"] else None
    out = Path(cfg.run["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    vocab = build_vocabulary(train_docs, cfg.run["vocab_size"])
    params = init_params(cfg.model, len(vocab), seed=cfg.seed)
    with open(out / "metrics.log", "w", encoding="utf-8") as log_fh:
        result = train(train_docs, params, cfg.model, cfg.train, vocab, dev_docs, log_stream=log_fh)
    ckpt = out / "model.ckpt"
    save_checkpoint(params, ckpt)
    vocab.save(out / "vocab.txt")
    cfg.run["checkpoint"] = str(ckpt)
    (out / "config.txt").write_text(cfg.to_text(), encoding="utf-8")
    last = result.trace[-1] if result.trace else None
    print(f"wrote {ckpt} (best epoch {result.best_epoch})")
    if last is not None:
        print(last.format())
    return EXIT_OK


def cmd_generate(args) -> int:
    cfg = _config(args)
    ckpt, vocab_path = _checkpoint_paths(cfg)
    _existing(str(ckpt), "checkpoint")
    vocab = Vocabulary.load(_existing(str(vocab_path), "vocabulary"))
    docs = load_corpus(_existing(cfg.run["test"], "corpus"))
    params = load_checkpoint(ckpt, param_shapes(cfg.model, len(vocab)))
    lines = []
    for doc, qa in iter_qas(docs):
        lines.append(generate(qa.question, doc, params, cfg.model, vocab, cfg.run["decode"],
                              cfg.run["beam_size"], cfg.train.max_answer_len,
                              cfg.run["length_alpha"]))
    text = "".join(line + "\n" for line in lines)
    if cfg.run["predictions"]:
        Path(cfg.run["predictions"]).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_eval(args) -> int:
    preds = read_lines(_existing(args.predictions, "predictions file"))
    if args.references:
        refs = read_lines(_existing(args.references, "references file"))
    else:
        docs = load_corpus(_existing(args.corpus, "corpus"))
        refs = [qa.answer for _, qa in iter_qas(docs)]
    if len(preds) != len(refs):
        raise MetricsError(f"line count mismatch: {len(preds)} predictions vs {len(refs)} references")
    report = evaluate_pairs([(p, [r]) for p, r in zip(preds, refs)]).format()
    if args.report:
        Path(args.report).write_text(report, encoding="utf-8")
    sys.stdout.write(report)
    return EXIT_OK


def cmd_inspect(args) -> int:
    cfg = _config(args)
    docs = load_corpus(_existing(args.corpus, "corpus"))
    if not 0 <= args.index < len(docs):
        raise UsageError(f"document index {args.index} out of range (corpus has {len(docs)})")
    doc = docs[args.index]
    vocab = Vocabulary.load(_existing(args.vocab, "vocabulary")) if args.vocab else build_vocabulary(docs)
    if doc.qas:
        if not 0 <= args.qa < len(doc.qas):
            raise UsageError(f"QA index {args.qa} out of range (document has {len(doc.qas)})")
        qa = doc.qas[args.qa]
        seq = build_input_sequence(qa.question, doc, vocab, cfg.model.L_max)
        labels = pseudo_saliency_labels(seq, qa)
        print(f"question: {qa.question}")
        print(f"answer: {qa.answer}")
        print(f"relevant rois: {sorted(qa.relevant_roi_ids)}")
    else:
        seq = build_input_sequence("", doc, vocab, cfg.model.L_max)
        labels = None
    print(format_sequence(seq, labels))
    return EXIT_OK


def cmd_stats(args) -> int:
    docs = load_corpus(_existing(args.corpus, "corpus"))
    print(compute_stats(docs).format())
    return EXIT_OK


# ----------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="key=value configuration file")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config key (repeatable)")

    parser = argparse.ArgumentParser(prog="layoutmrc", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common], help="train a model and write a checkpoint")
    p.add_argument("--train", dest="opt_train", metavar="PATH")
    p.add_argument("--dev", dest="opt_dev", metavar="PATH")
    p.add_argument("--out", dest="opt_output_dir", metavar="DIR")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", parents=[common], help="generate one answer per QA pair")
    p.add_argument("--checkpoint", dest="opt_checkpoint", metavar="PATH")
    p.add_argument("--vocab", dest="opt_vocab", metavar="PATH")
    p.add_argument("--corpus", dest="opt_test", metavar="PATH")
    p.add_argument("--output", dest="opt_predictions", metavar="PATH")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("eval", parents=[common], help="score predictions against references")
    p.add_argument("predictions", metavar="PREDICTIONS")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--corpus", metavar="PATH", help="take references from a corpus file")
    group.add_argument("--references", metavar="PATH", help="one reference answer per line")
    p.add_argument("--report", metavar="PATH", help="also write the report here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("inspect", parents=[common], help="dump the encoder input for one document")
    p.add_argument("corpus", metavar="CORPUS")
    p.add_argument("index", type=int, metavar="INDEX")
    p.add_argument("--qa", type=int, default=0, help="QA pair within the document")
    p.add_argument("--vocab", metavar="PATH", help="vocabulary file (default: built from CORPUS)")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("stats", parents=[common], help="corpus statistics")
    p.add_argument("corpus", metavar="CORPUS")
    p.set_defaults(func=cmd_stats)
    return parser


def _thread_limit():
    raw = os.environ.get("LAYOUTMRC_THREADS")
    if not raw:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=max(1, int(raw)))


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        with _thread_limit():
            return args.func(args)
    except (UsageError, ConfigError, CorpusError, CheckpointError, SequenceError) as exc:
        print(f"layoutmrc {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingDiverged, MetricsError, OSError, ValueError) as exc:
        print(f"layoutmrc {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
