"""Command line entry point: build-corpus, train, predict, evaluate."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import asdict, fields
from pathlib import Path

from . import corpus, evaluation
from .errors import ConfigError, FormatError, HNN4ORTError
from .model import ModelConfig, load, predict, save
from .training import train

log = logging.getLogger("hnn4ort")

DEFAULT_SEED = 13


@contextmanager
def _atomic(path: str | Path):
    """Yield a temp path that replaces ``path`` only if the block succeeds."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent or ".")
    os.close(fd)
    try:
        yield tmp
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def _require_file(path: str) -> None:
    if not Path(path).is_file():
        raise FormatError(f"cannot read {path}: no such file")


# ---------------------------------------------------------------------------
# Config handling
# ---------------------------------------------------------------------------

_FIELD_TYPES = {"int": int, "float": float, "bool": bool}


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _coerce(name: str, text: str):
    kinds = {f.name: f.type for f in fields(ModelConfig)}
    if name not in kinds:
        raise ConfigError(f"unknown config field {name!r}")
    kind = _FIELD_TYPES[kinds[name] if isinstance(kinds[name], str) else kinds[name].__name__]
    try:
        return _parse_bool(text) if kind is bool else kind(text)
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {text!r} as {kind.__name__}") from None


def read_config_file(path: str) -> dict:
    """Flat ``key=value`` lines; ``#`` starts a comment."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            key = key.strip().replace("-", "_")
            out[key] = _coerce(key, value.strip())
    return out


def build_config(args) -> ModelConfig:
    values = asdict(ModelConfig.desk() if args.preset == "desk" else ModelConfig())
    values["seed"] = DEFAULT_SEED
    if args.config:
        values.update(read_config_file(args.config))
    for f in fields(ModelConfig):
        flag = getattr(args, f"cfg_{f.name}", None)
        if flag is not None:
            values[f.name] = _coerce(f.name, flag)
    return ModelConfig(**values)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_build_corpus(args) -> int:
    for p in (args.extractions, args.sentences):
        _require_file(p)
    outputs = corpus.read_extractor_outputs(args.extractions)
    sentences = corpus.read_sentences(args.sentences)
    agreed = corpus.intersect(outputs, required=args.min_agree, min_conf=args.min_conf)
    records, stats = corpus.build_records(sentences, agreed, workers=args.workers)
    stats_path = args.stats or f"{args.out}.stats.tsv"
    with _atomic(args.out) as tmp:
        corpus.write_corpus(tmp, records)
    with _atomic(stats_path) as tmp:
        with open(tmp, "w", encoding="utf-8") as fh:
            for k, v in stats.as_dict().items():
                fh.write(f"{k}\t{v}\n")
    for k, v in stats.as_dict().items():
        print(f"{k}\t{v}")
    return 0


def cmd_train(args) -> int:
    _require_file(args.corpus)
    config = build_config(args)
    records = corpus.read_corpus(args.corpus)
    train_recs, val_recs = corpus.split(records, args.val_fraction, seed=config.seed)
    words, pos = corpus.build_vocabs(train_recs)
    vectors = None
    if args.word_vectors:
        vectors, hits = corpus.load_word_vectors(args.word_vectors, words, config.word_dim, seed=config.seed)
        log.info("word vectors: %d of %d vocabulary rows from file", hits, len(words))
    log_path = args.metrics_log or f"{args.out}.metrics.jsonl"
    with _atomic(log_path) as tmp_log, open(tmp_log, "w", encoding="utf-8") as fh:

        def on_epoch(stats):
            fh.write(json.dumps(stats.as_dict(), sort_keys=True) + "\n")
            fh.flush()

        model, history = train(config, train_recs, val_recs, words, pos, vectors, on_epoch=on_epoch)
        fh.close()
        with _atomic(args.out) as tmp:
            save(model, tmp)
    best = min(history, key=lambda s: s.val_loss)
    print(f"epochs\t{len(history)}")
    print(f"best_epoch\t{best.epoch}")
    print(f"best_val_loss\t{best.val_loss!r}")
    print(f"best_val_f1\t{best.val_f1!r}")
    return 0


def read_pairs(path: str) -> list[tuple[str, tuple[int, ...], tuple[int, ...]]]:
    """``sentence_id<TAB>arg1 positions<TAB>arg2 positions``, positions comma-separated."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.rstrip("\n").split("\t")
            try:
                if len(parts) != 3:
                    raise ValueError(f"expected 3 fields, got {len(parts)}")
                sid, a1, a2 = parts
                out.append((sid, tuple(map(int, a1.split(","))), tuple(map(int, a2.split(",")))))
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
    return out


_worker_model = None


def _init_worker(checkpoint):
    global _worker_model
    _worker_model = load(checkpoint)


def _predict_job(job):
    sentence, pairs = job
    return predict(_worker_model, sentence, pairs)


def cmd_predict(args) -> int:
    for p in (args.checkpoint, args.sentences, args.pairs):
        _require_file(p)
    sentences = {s.id: s for s in corpus.read_sentences(args.sentences)}
    grouped: dict[str, list] = {}
    for sid, a1, a2 in read_pairs(args.pairs):
        if sid not in sentences:
            raise FormatError(f"{args.pairs}: unknown sentence id {sid!r}")
        grouped.setdefault(sid, []).append((a1, a2))
    jobs = [(sentences[sid], pairs) for sid, pairs in grouped.items()]
    if args.workers > 1 and jobs:
        with ProcessPoolExecutor(args.workers, initializer=_init_worker, initargs=(args.checkpoint,)) as pool:
            results = list(pool.map(_predict_job, jobs, chunksize=16))
    else:
        _init_worker(args.checkpoint)
        results = [_predict_job(j) for j in jobs]
    with _atomic(args.out) as tmp:
        evaluation.write_extractions(tmp, [x for chunk in results for x in chunk])
    print(f"extractions\t{sum(len(r) for r in results)}")
    return 0


def cmd_evaluate(args) -> int:
    for p in (args.predictions, args.gold):
        _require_file(p)
    preds = evaluation.read_extractions(args.predictions)
    golds = evaluation.read_extractions(args.gold)
    report = evaluation.prf(preds, golds, args.criterion, workers=args.workers)
    curve = evaluation.pr_curve(preds, golds, args.criterion)
    print(evaluation.format_table(report))
    print(evaluation.format_kv("metrics", asdict(report)))
    print(f"metrics.auc={curve.auc!r}")
    if args.pr_curve:
        with _atomic(args.pr_curve) as tmp:
            evaluation.write_pr_curve(tmp, curve)
    if args.errors:
        errors = evaluation.categorize_errors(preds, golds, args.criterion)
        print(evaluation.format_kv("errors", asdict(errors)))
        print(evaluation.format_kv("errors.share", errors.proportions()))
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hnn4ort", description=__doc__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-corpus", help="intersect extractor outputs into a tagged corpus")
    p.add_argument("extractions")
    p.add_argument("sentences")
    p.add_argument("out")
    p.add_argument("--min-agree", type=int, default=3)
    p.add_argument("--min-conf", type=float, default=0.5)
    p.add_argument("--stats", help="stats report path (default: OUT.stats.tsv)")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_build_corpus)

    p = sub.add_parser("train", help="train a model on a corpus file")
    p.add_argument("corpus")
    p.add_argument("out", help="checkpoint path")
    p.add_argument("--config", help="flat key=value file of model settings")
    p.add_argument("--preset", choices=("full", "desk"), default="full")
    p.add_argument("--val-fraction", type=float, default=0.172)
    p.add_argument("--word-vectors")
    p.add_argument("--metrics-log", help="JSON-lines epoch log (default: OUT.metrics.jsonl)")
    for f in fields(ModelConfig):
        p.add_argument(f"--{f.name.replace('_', '-')}", dest=f"cfg_{f.name}", metavar="VALUE")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="tag relations for candidate argument pairs")
    p.add_argument("checkpoint")
    p.add_argument("sentences")
    p.add_argument("pairs")
    p.add_argument("out")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="score predictions against gold")
    p.add_argument("predictions")
    p.add_argument("gold")
    p.add_argument("--criterion", choices=evaluation.CRITERIA, default="exact_string")
    p.add_argument("--pr-curve", metavar="OUT_TSV")
    p.add_argument("--errors", action="store_true")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (HNN4ORTError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
