"""Command line entry point: gen-corpus, train, eval, audit and chat."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import re
import sys
import time
from pathlib import Path

from . import tokenizer as tk
from .corpus import (
    audit_annotations,
    audit_scores,
    default_ontology,
    generate_synthetic_corpus,
    inject_noise,
    load_corpus,
    save_corpus,
    write_audit_report,
    write_noise_records,
)
from .database import load_database
from .engine import (
    EvalSettings,
    GoldReplay,
    ModelGenerator,
    evaluate_corpus,
    run_turn,
    training_sequences,
    vocab_texts,
    write_report,
)
from .model import TrainSettings
from .ontology import Ontology
from .schema import SequenceFormat, serialize_db

DEFAULT_SEED = 7

log = logging.getLogger("todseq")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _ontology(args) -> Ontology:
    if args.ontology:
        return Ontology.load(args.ontology)
    return default_ontology()


def _require(path, what: str) -> Path:
    if not path:
        raise UsageError(f"--{what} is required")
    p = Path(path)
    if not p.exists():
        raise DataError(f"{what} file not found: {p}")
    return p


def cmd_gen_corpus(args) -> None:
    ontology = _ontology(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dialogues, store = generate_synthetic_corpus(ontology, args.train + args.test, args.seed)
    save_corpus(dialogues[: args.train], out / "train.jsonl")
    save_corpus(dialogues[args.train :], out / "test.jsonl")
    store.save(out / "db.json")
    ontology.save(out / "ontology.json")
    print(f"wrote {args.train} train and {args.test} test dialogues, {len(store)} entities to {out}")


def _load_inputs(args, need_corpus: bool = True):
    ontology = _ontology(args)
    store = load_database(_require(args.db, "db"), ontology)
    corpus = None
    if need_corpus:
        corpus = load_corpus(_require(args.corpus, "corpus"), ontology)
        for flag in corpus.flags:
            log.warning(flag)
    return ontology, store, corpus


def _fmt(args) -> SequenceFormat:
    return SequenceFormat(end_tokens=not args.no_end_tokens, include_db=not args.no_db)


def cmd_train(args) -> None:
    import torch

    from .model import ModelConfig, Transformer, save_checkpoint, train

    torch.set_num_threads(args.threads)
    ontology, store, corpus = _load_inputs(args)
    if not corpus:
        raise DataError("training corpus is empty")
    fmt = _fmt(args)
    vocab = tk.build_vocab(vocab_texts(corpus, ontology, store, fmt), tk.DEFAULT_SPECIALS)
    config = ModelConfig(args.layers, args.heads, args.dim, args.ff, len(vocab), args.max_len)
    sequences = training_sequences(corpus, vocab, fmt, args.mask_context, config.max_len)
    settings = TrainSettings(steps=args.steps, batch_size=args.batch_size, lr=args.lr, decay=not args.no_decay,
                             mask_context=args.mask_context, log_every=args.log_every)
    model = Transformer(config, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    start = time.time()

    def progress(step, loss):
        print(f"step {step:5d}  loss {loss:.4f}  {time.time() - start:6.1f}s", flush=True)

    result = train(model, sequences, settings, seed=args.seed, progress=progress)
    meta = {
        "vocab": list(vocab.id_to_token),
        "specials": list(vocab.specials),
        "format": {"end_tokens": fmt.end_tokens, "include_db": fmt.include_db},
        "seed": args.seed,
        "steps": args.steps,
        "train_seconds": round(time.time() - start, 1),
    }
    save_checkpoint(model, out / "checkpoint.npz", meta)
    vocab.save(out / "vocab.txt")
    with open(out / "loss.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "loss"])
        w.writerows(enumerate(result.losses))
    print(f"trained {args.steps} steps in {meta['train_seconds']}s; checkpoint at {out / 'checkpoint.npz'}")


def load_trained(path):
    from .model import load_checkpoint

    try:
        model, meta = load_checkpoint(path)
    except (OSError, KeyError, ValueError) as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from None
    if "vocab" not in meta:
        raise DataError(f"checkpoint {path} carries no vocabulary")
    vocab = tk.Vocab(tuple(meta["vocab"]), tuple(meta.get("specials", tk.DEFAULT_SPECIALS)))
    fmt = SequenceFormat(**meta.get("format", {}))
    return model, vocab, fmt


def cmd_eval(args) -> None:
    ontology, store, corpus = _load_inputs(args)
    if not corpus:
        raise DataError("evaluation corpus is empty")
    settings = EvalSettings(args.belief_mode, args.db_mode, args.action_mode)
    if args.replay_gold:
        fmt = _fmt(args)
        vocab = tk.build_vocab(vocab_texts(corpus, ontology, store, fmt), tk.DEFAULT_SPECIALS)
        model = GoldReplay(vocab, corpus, fmt)
        checkpoint = None
    else:
        checkpoint = _require(args.checkpoint, "checkpoint")
        net, vocab, fmt = load_trained(checkpoint)
        model = ModelGenerator(net)
    report, _ = evaluate_corpus(model, vocab, corpus, store, ontology, settings, fmt)
    write_report(report, args.out, settings, args.seed, checkpoint, args.corpus)
    print(report.to_csv_line(), end="")


def cmd_audit(args) -> None:
    ontology, store, corpus = _load_inputs(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    records = []
    if args.noise_type:
        for i, kind in enumerate(args.noise_type):
            skip = {(r.dialogue_id, r.turn) for r in records}
            corpus, new = inject_noise(corpus, kind, args.noise_rate, args.seed + i, ontology, skip)
            records += new
        save_corpus(corpus, out / "noisy.jsonl")
        write_noise_records(records, out / "noise_records.csv")
    flags = audit_annotations(corpus, ontology, store)
    write_audit_report(flags, out / "audit.csv")
    print(f"{len(flags)} flags written to {out / 'audit.csv'}")
    if records:
        recall, precision = audit_scores(records, flags)
        print(f"injected {len(records)} records; recall {recall:.3f} precision {precision:.3f}")


def cmd_chat(args) -> None:
    ontology, store, _ = _load_inputs(args, need_corpus=False)
    net, vocab, fmt = load_trained(_require(args.checkpoint, "checkpoint"))
    model = ModelGenerator(net)
    settings = EvalSettings("generated", args.db_mode if args.db_mode != "oracle" else "dynamic", "generated")
    history: list[tuple[str, str]] = []
    print("type a message (empty line or ctrl-d to quit)")
    while True:
        try:
            line = input("user> ")
        except EOFError:
            break
        if not line.strip():
            break
        text = " ".join(re.sub(r"([?.!,])", r" \1 ", line.lower()).split())
        history.append(("user", text))
        r = run_turn(model, vocab, store, ontology, None, 0, settings, fmt, history=history)
        print("belief:", ", ".join(" ".join(t) for t in r.belief) or "(empty)")
        print("db:", serialize_db(r.db, fmt) if r.db is not None else "(none)")
        print("actions:", ", ".join(" ".join(a) for a in r.actions) or "(none)")
        print("system>", r.lex)
        history.append(("system", r.lex))


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="todseq", description="Single-sequence task-oriented dialogue toolkit")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp, corpus=True):
        sp.add_argument("--ontology", help="ontology JSON (default: built-in restaurant/train ontology)")
        sp.add_argument("--db", help="entity store JSON")
        if corpus:
            sp.add_argument("--corpus", help="dialogue corpus (JSON lines)")
        sp.add_argument("--seed", type=int, default=DEFAULT_SEED)
        sp.add_argument("--out", default="out")

    def fmt_flags(sp):
        sp.add_argument("--no-end-tokens", action="store_true", help="drop end-of-segment tokens")
        sp.add_argument("--no-db", action="store_true", help="omit the DB segment")

    g = sub.add_parser("gen-corpus", help="write a synthetic corpus, entity store and ontology")
    g.add_argument("--ontology")
    g.add_argument("--seed", type=int, default=DEFAULT_SEED)
    g.add_argument("--out", default="data")
    g.add_argument("--train", type=int, default=500)
    g.add_argument("--test", type=int, default=100)
    g.set_defaults(func=cmd_gen_corpus)

    t = sub.add_parser("train", help="train a model and write checkpoint, vocab and loss CSV")
    common(t)
    fmt_flags(t)
    t.add_argument("--layers", type=int, default=2)
    t.add_argument("--heads", type=int, default=4)
    t.add_argument("--dim", type=int, default=128)
    t.add_argument("--ff", type=int, default=512)
    t.add_argument("--max-len", type=int, default=512)
    t.add_argument("--steps", type=int, default=TrainSettings.steps)
    t.add_argument("--batch-size", type=int, default=TrainSettings.batch_size)
    t.add_argument("--lr", type=float, default=TrainSettings.lr)
    t.add_argument("--no-decay", action="store_true", help="hold the rate constant after warmup")
    t.add_argument("--mask-context", action="store_true", help="exclude context tokens from the loss")
    t.add_argument("--log-every", type=int, default=100)
    t.add_argument("--threads", type=int, default=1)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint and write metrics plus manifest")
    common(e)
    fmt_flags(e)
    e.add_argument("--checkpoint")
    e.add_argument("--belief-mode", choices=("generated", "oracle"), default="generated")
    e.add_argument("--db-mode", choices=("oracle", "dynamic", "none"), default="dynamic")
    e.add_argument("--action-mode", choices=("generated", "oracle"), default="generated")
    e.add_argument("--replay-gold", action="store_true", help="use the gold-replay stub instead of a checkpoint")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("audit", help="flag suspicious belief labels, optionally after injecting noise")
    common(a)
    a.add_argument("--noise-type", action="append", choices=("T2", "T3", "T4"),
                   help="inject this noise type first (repeatable; types hit disjoint turns)")
    a.add_argument("--noise-rate", type=float, default=0.1)
    a.set_defaults(func=cmd_audit)

    c = sub.add_parser("chat", help="interactive session with a trained checkpoint")
    common(c, corpus=False)
    c.add_argument("--checkpoint")
    c.add_argument("--db-mode", choices=("oracle", "dynamic", "none"), default="dynamic")
    c.set_defaults(func=cmd_chat)
    return p


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return 1
        if getattr(args, "noise_rate", 0.0) is not None and not 0.0 <= getattr(args, "noise_rate", 0.0) <= 1.0:
            raise UsageError("--noise-rate must be within [0, 1]")
        args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DataError, ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        return 3
    except Exception as exc:  # noqa: BLE001 - last-resort guard against stack traces
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
