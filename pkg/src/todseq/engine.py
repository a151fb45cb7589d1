"""Staged inference (belief, then DB lookup, then actions and response) and corpus evaluation."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Protocol

from . import tokenizer as tk
from .database import Database, EntityRow, active_domain, query, turn_summary
from .evaluator import DialogueOutcome, MetricsReport, bleu, combined_score, inform_success, joint_goal_accuracy
from .lexicon import lexicalize, placeholders_in
from .ontology import Ontology
from .schema import (
    BOOKING_STATUSES,
    BUCKETS,
    FULL_FORMAT,
    ActionTriplet,
    BeliefState,
    DbSummary,
    Dialogue,
    SequenceFormat,
    canonicalize_belief,
    context_history,
    parse_actions,
    parse_belief,
    parse_response,
    serialize_actions,
    serialize_belief,
    serialize_context,
    serialize_db,
    serialize_training_sequence,
)

BELIEF_MAX_NEW = 96
ACTION_MAX_NEW = 48
RESPONSE_MAX_NEW = 128

BELIEF_MODES = ("generated", "oracle")
DB_MODES = ("oracle", "dynamic", "none")
ACTION_MODES = ("generated", "oracle")

_OPENERS = (tk.CONTEXT, tk.USER, tk.SYSTEM, tk.BELIEF, tk.DB, tk.ACTION, tk.RESPONSE)


class Generator(Protocol):
    max_len: int

    def generate(self, prefix: list[int], stop_tokens, max_new: int) -> list[int]: ...


@dataclass(frozen=True)
class EvalSettings:
    belief_mode: str = "generated"
    db_mode: str = "dynamic"
    action_mode: str = "generated"

    def __post_init__(self):
        for name, value, allowed in (
            ("belief_mode", self.belief_mode, BELIEF_MODES),
            ("db_mode", self.db_mode, DB_MODES),
            ("action_mode", self.action_mode, ACTION_MODES),
        ):
            if value not in allowed:
                raise ValueError(f"{name} must be one of {allowed}, got {value!r}")


ALL_ORACLE = EvalSettings("oracle", "oracle", "oracle")


@dataclass
class TurnResult:
    belief: BeliefState
    db: DbSummary | None
    actions: list[ActionTriplet]
    delex: str
    lex: str
    offered: dict[str, EntityRow] = field(default_factory=dict)
    flags: list[str] = field(default_factory=list)
    sequence: str = ""


class GoldReplay:
    """Stand-in model that continues any prefix of a gold serialized sequence."""

    def __init__(self, vocab: tk.Vocab, corpus: list[Dialogue], fmt: SequenceFormat = FULL_FORMAT,
                 max_len: int = tk.MAX_SEQUENCE_LENGTH):
        self.max_len = max_len
        self._by_context: dict[tuple[int, ...], list[list[int]]] = {}
        self._context_end = vocab[tk.END_CONTEXT] if fmt.end_tokens else vocab[tk.BELIEF]
        self._unk = vocab.unk_id
        for d in corpus:
            for t in range(len(d.turns)):
                ids = tk.encode(vocab, serialize_training_sequence(d, t, fmt), max_len)
                key = self._key(ids)
                self._by_context.setdefault(key, []).append(ids)

    def _key(self, ids: list[int]) -> tuple[int, ...]:
        end = ids.index(self._context_end) if self._context_end in ids else len(ids)
        return tuple(ids[:end])

    def generate(self, prefix: list[int], stop_tokens, max_new: int) -> list[int]:
        stops = set(stop_tokens)
        n = len(prefix)
        for seq in self._by_context.get(self._key(prefix), []):
            if seq[:n] != list(prefix):
                continue
            out = []
            for tok in seq[n : n + max_new]:
                out.append(tok)
                if tok in stops:
                    break
            return out
        return [self._unk]


class ModelGenerator:
    """Adapter exposing a trained transformer through the ``generate`` interface."""

    def __init__(self, model):
        from .model import greedy_decode

        self.model = model
        self.max_len = model.config.max_len
        self._decode = greedy_decode

    def generate(self, prefix: list[int], stop_tokens, max_new: int) -> list[int]:
        return self._decode(self.model, prefix, stop_tokens, max_new)


def _stops(vocab: tk.Vocab, fmt: SequenceFormat, stage: str) -> set[int]:
    if fmt.end_tokens:
        close = {"belief": tk.END_BELIEF, "action": tk.END_ACTION, "response": tk.END_RESPONSE}[stage]
        return {vocab[close]}
    if stage == "belief":
        return {vocab[tk.DB], vocab[tk.ACTION], vocab[tk.RESPONSE]}
    if stage == "action":
        return {vocab[tk.RESPONSE]}
    return {vocab[t] for t in _OPENERS}


def _decode_stage(model: Generator, vocab: tk.Vocab, text: str, opener: str, stage: str, max_new: int,
                  fmt: SequenceFormat, flags: list[str]) -> str:
    """Generate one segment; returns the opener plus the generated body, minus any foreign stop token."""
    ids = tk.encode(vocab, f"{text} {opener}", 1 << 30)
    room = model.max_len - len(ids)
    if room < max_new:
        # keep the leading <|context|> token and drop the oldest history
        keep = model.max_len - max_new
        if keep < 2:
            flags.append(f"{stage}_no_room")
            return opener
        ids = ids[:1] + ids[len(ids) - keep + 1 :]
        flags.append(f"{stage}_truncated")
    stops = _stops(vocab, fmt, stage)
    out = model.generate(ids, stops, max_new)
    if out and out[-1] in stops and not fmt.end_tokens:
        out = out[:-1]
    return f"{opener} {tk.decode(vocab, out)}"


def run_turn(model: Generator, vocab: tk.Vocab, store: Database, ontology: Ontology,
             dialogue: Dialogue | None, t: int, settings: EvalSettings,
             fmt: SequenceFormat = FULL_FORMAT, history: list[tuple[str, str]] | None = None) -> TurnResult:
    """One turn of staged decoding; ``history`` overrides the gold context (used by chat)."""
    gold = dialogue.turns[t] if dialogue is not None else None
    if history is None:
        if dialogue is None:
            raise ValueError("run_turn needs a dialogue or an explicit history")
        history = context_history(dialogue, t)
    flags: list[str] = []

    def need_gold(what: str):
        value = getattr(gold, what, None) if gold is not None else None
        if value is None:
            raise ValueError(f"oracle {what} requested but the turn has no gold {what}")
        return value

    seq = serialize_context(history, fmt)
    if settings.belief_mode == "oracle":
        belief = need_gold("belief")
    else:
        text = _decode_stage(model, vocab, seq, tk.BELIEF, "belief", BELIEF_MAX_NEW, fmt, flags)
        parsed = parse_belief(text, ontology)
        if fmt.end_tokens:
            flags += list(parsed.flags)
        if parsed.dropped:
            flags.append(f"belief_dropped_{parsed.dropped}")
        belief = canonicalize_belief(parsed)
    seq = f"{seq} {serialize_belief(belief, fmt)}"

    if settings.db_mode == "oracle":
        db = need_gold("db")
    elif settings.db_mode == "dynamic":
        db = turn_summary(store, belief, ontology, with_booking=False)
    else:
        db = None
    if db is not None:
        seq = f"{seq} {serialize_db(db, fmt)}"

    if settings.action_mode == "oracle":
        actions = list(need_gold("actions"))
    else:
        text = _decode_stage(model, vocab, seq, tk.ACTION, "action", ACTION_MAX_NEW, fmt, flags)
        actions, aflags = parse_actions(text)
        flags += [f for f in aflags if fmt.end_tokens or f != "action_unclosed"]
    seq = f"{seq} {serialize_actions(actions, fmt)}"

    text = _decode_stage(model, vocab, seq, tk.RESPONSE, "response", RESPONSE_MAX_NEW, fmt, flags)
    delex, rflags = parse_response(text)
    flags += [f for f in rflags if fmt.end_tokens or f != "response_unclosed"]

    domain = active_domain(belief, ontology)
    rows = query(store, belief, domain) if domain else []
    lex, unresolved = lexicalize(delex, belief, rows, ontology, domain)
    if unresolved:
        flags.append("unresolved:" + " ".join(unresolved))
    offered = {}
    if rows:
        names = {f"[{rows[0].domain}_{s}]" for s in ("name", "id")}
        if names & set(placeholders_in(delex)):
            offered[rows[0].domain] = rows[0]
    return TurnResult(belief, db, actions, delex, lex, offered, flags, seq)


_PARSE_FLAG_PREFIXES = ("belief_unclosed", "belief_dropped", "no_action_opener", "action_unclosed",
                        "action_malformed", "no_response_opener", "response_unclosed")


def evaluate_corpus(model: Generator, vocab: tk.Vocab, corpus: list[Dialogue], store: Database,
                    ontology: Ontology, settings: EvalSettings, fmt: SequenceFormat = FULL_FORMAT,
                    progress=None) -> tuple[MetricsReport, list[list[TurnResult]]]:
    """Evaluate every turn against the gold history; returns the report and per-turn results."""
    if not corpus:
        raise ValueError("cannot evaluate an empty corpus")
    predicted, gold_beliefs, hyps, refs = [], [], [], []
    outcomes, all_results = [], []
    failures = 0
    for n, d in enumerate(corpus):
        offered: dict[str, EntityRow] = {}
        responses = []
        results = []
        for t, turn in enumerate(d.turns):
            r = run_turn(model, vocab, store, ontology, d, t, settings, fmt)
            results.append(r)
            offered.update(r.offered)
            responses.append(r.lex)
            predicted.append(r.belief)
            gold_beliefs.append(turn.belief if turn.belief is not None else BeliefState())
            hyps.append(r.delex)
            refs.append(turn.system_delex)
            failures += any(f.startswith(_PARSE_FLAG_PREFIXES) for f in r.flags)
        outcomes.append(DialogueOutcome(d.goal, offered, responses))
        all_results.append(results)
        if progress is not None:
            progress(n + 1, len(corpus))
    jga = joint_goal_accuracy(predicted, gold_beliefs)
    inform, success, flags = inform_success(outcomes)
    b = bleu(hyps, refs)
    report = MetricsReport(jga, inform, success, b, combined_score(inform, success, b),
                           turns=len(predicted), dialogues=len(corpus), parse_failures=failures, flags=flags)
    return report, all_results


def file_digest(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def write_report(report: MetricsReport, out_dir: str | Path, settings: EvalSettings, seed: int,
                 checkpoint: str | Path | None, corpus: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.json").write_text(report.to_json() + "\n", encoding="utf-8")
    (out / "metrics.csv").write_text(report.to_csv_line(), encoding="utf-8")
    manifest = {
        "settings": asdict(settings),
        "seed": seed,
        "checkpoint": str(checkpoint) if checkpoint else None,
        "checkpoint_sha256": file_digest(checkpoint) if checkpoint else None,
        "corpus": str(corpus),
        "corpus_sha256": file_digest(corpus),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def training_sequences(corpus: list[Dialogue], vocab: tk.Vocab, fmt: SequenceFormat = FULL_FORMAT,
                       mask_context: bool = False, max_len: int = 512) -> list[tuple[list[int], list[float] | None]]:
    """Token ids (and optional loss mask over targets) for every annotated turn."""
    out = []
    ctx_end = vocab[tk.END_CONTEXT] if fmt.end_tokens else vocab[tk.BELIEF]
    for d in corpus:
        for t in range(len(d.turns)):
            ids = tk.encode(vocab, serialize_training_sequence(d, t, fmt), max_len)
            mask = None
            if mask_context and ctx_end in ids:
                cut = ids.index(ctx_end)
                # target i predicts ids[i + 1]; keep targets from the context closer on
                mask = [0.0 if i + 1 < cut else 1.0 for i in range(len(ids) - 1)]
            out.append((ids, mask))
    return out


def vocab_texts(corpus: list[Dialogue], ontology: Ontology, store: Database,
                fmt: SequenceFormat = FULL_FORMAT) -> list[str]:
    """Training sequences plus every ontology value, DB value, placeholder and DB-segment word."""
    texts = [serialize_training_sequence(d, t, fmt) for d in corpus for t in range(len(d.turns))]
    for spec in ontology.domains.values():
        texts.append(" ".join(v for vs in spec.values.values() for v in vs))
    for rows in store.rows.values():
        texts += [" ".join(r.as_dict().values()) for r in rows]
    texts.append(" ".join(ontology.placeholders()))
    texts.append(" ".join(BUCKETS + BOOKING_STATUSES))
    return texts
