"""Dialogue data types and the single-sequence text format.

A training example for turn t is the concatenation

    <|context|> <|user|> ... <|system|> ... <|user|> ... <|endofcontext|>
    <|belief|> domain slot value , ... <|endofbelief|>
    <|db|> bucket status <|endofdb|>
    <|action|> domain act slot , ... <|endofaction|>
    <|response|> delexicalized text <|endofresponse|>

Triplets are separated by a standalone comma token so that a word-level
vocabulary never sees ``value,`` glued forms.  The parsers also accept the
glued form.
"""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

from . import tokenizer as tk

log = logging.getLogger(__name__)

BUCKETS = ("0", "1", "2", "3", "many")
BOOKING_STATUSES = ("available", "not_available", "not_applicable")

_SEGMENT_RE = re.compile("|".join(re.escape(t) for t in tk.SEGMENT_TOKENS))


class ParseFailure(ValueError):
    """Generated text lacks the segment opener needed to parse it."""


class BeliefTriplet(NamedTuple):
    domain: str
    slot: str
    value: str


class ActionTriplet(NamedTuple):
    domain: str
    action_type: str
    slot: str


@dataclass(frozen=True)
class BeliefState:
    """Set of (domain, slot, value) with one value per (domain, slot), kept sorted."""

    triplets: tuple[BeliefTriplet, ...] = ()
    dropped: int = field(default=0, compare=False)
    flags: tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self):
        merged: dict[tuple[str, str], str] = {}
        for trip in self.triplets:
            d, s, v = trip
            merged[(d, s)] = v
        ordered = tuple(BeliefTriplet(d, s, v) for (d, s), v in sorted(merged.items()))
        object.__setattr__(self, "triplets", ordered)

    @classmethod
    def of(cls, *triplets: tuple[str, str, str]) -> "BeliefState":
        return cls(tuple(BeliefTriplet(*t) for t in triplets))

    @classmethod
    def from_dict(cls, mapping: dict[tuple[str, str], str]) -> "BeliefState":
        return cls(tuple(BeliefTriplet(d, s, v) for (d, s), v in mapping.items()))

    def __iter__(self):
        return iter(self.triplets)

    def __len__(self) -> int:
        return len(self.triplets)

    def as_dict(self) -> dict[tuple[str, str], str]:
        return {(t.domain, t.slot): t.value for t in self.triplets}

    def domain(self, name: str) -> dict[str, str]:
        return {t.slot: t.value for t in self.triplets if t.domain == name}

    @property
    def domains(self) -> list[str]:
        return list(dict.fromkeys(t.domain for t in self.triplets))

    def get(self, domain: str, slot: str, default=None):
        return self.as_dict().get((domain, slot), default)

    def with_value(self, domain: str, slot: str, value: str) -> "BeliefState":
        d = self.as_dict()
        d[(domain, slot)] = value
        return BeliefState.from_dict(d)

    def without(self, domain: str, slot: str) -> "BeliefState":
        d = self.as_dict()
        d.pop((domain, slot), None)
        return BeliefState.from_dict(d)


@dataclass(frozen=True)
class DbSummary:
    match_count: int
    booking_status: str = "not_applicable"

    def __post_init__(self):
        if self.match_count < 0:
            raise ValueError("match_count must be nonnegative")
        if self.booking_status not in BOOKING_STATUSES:
            raise ValueError(f"unknown booking status {self.booking_status!r}")

    @property
    def match_bucket(self) -> str:
        return bucket(self.match_count)

    def serialize(self) -> str:
        return f"{tk.DB} {self.match_bucket} {self.booking_status} {tk.END_DB}"


def bucket(count: int) -> str:
    if count < 0:
        raise ValueError("negative match count")
    return BUCKETS[count] if count < 4 else "many"


@dataclass
class DomainGoal:
    info: dict[str, str] = field(default_factory=dict)
    reqt: list[str] = field(default_factory=list)
    book: dict[str, str] = field(default_factory=dict)


@dataclass
class Turn:
    user: str
    system_delex: str = ""
    system_lex: str = ""
    belief: BeliefState | None = None
    actions: list[ActionTriplet] | None = None
    db: DbSummary | None = None


@dataclass
class Dialogue:
    id: str
    goal: dict[str, DomainGoal]
    turns: list[Turn]


@dataclass(frozen=True)
class SequenceFormat:
    """Switches for the serialized layout (used by the no-DB and no-end-token variants)."""

    end_tokens: bool = True
    include_db: bool = True


FULL_FORMAT = SequenceFormat()


def _norm_text(value: str) -> str:
    return " ".join(value.split())


def canonical_value(value: str) -> str:
    value = value.lower()
    if "," in value:
        log.warning("stripping comma from value %r", value)
        value = value.replace(",", " ")
    return _norm_text(value)


def canonicalize_belief(b: BeliefState) -> BeliefState:
    return BeliefState(
        tuple(
            BeliefTriplet(canonical_value(d), canonical_value(s), canonical_value(v))
            for d, s, v in b.triplets
        )
    )


def _wrap(open_tok: str, body: str, close_tok: str, fmt: SequenceFormat) -> str:
    parts = [open_tok]
    if body:
        parts.append(body)
    if fmt.end_tokens:
        parts.append(close_tok)
    return " ".join(parts)


def serialize_context(history: list[tuple[str, str]], fmt: SequenceFormat = FULL_FORMAT) -> str:
    """``history`` is [(role, text), ...] with role in {"user", "system"}."""
    parts = []
    for role, text in history:
        parts.append(tk.USER if role == "user" else tk.SYSTEM)
        parts.append(_norm_text(text))
    return _wrap(tk.CONTEXT, " ".join(p for p in parts if p), tk.END_CONTEXT, fmt)


def serialize_belief(b: BeliefState, fmt: SequenceFormat = FULL_FORMAT) -> str:
    body = " , ".join(f"{d} {s} {v}" for d, s, v in b.triplets)
    return _wrap(tk.BELIEF, body, tk.END_BELIEF, fmt)


def serialize_db(summary: DbSummary, fmt: SequenceFormat = FULL_FORMAT) -> str:
    return _wrap(tk.DB, f"{summary.match_bucket} {summary.booking_status}", tk.END_DB, fmt)


def serialize_actions(actions: Iterable[ActionTriplet], fmt: SequenceFormat = FULL_FORMAT) -> str:
    body = " , ".join(f"{d} {a} {s}" for d, a, s in actions)
    return _wrap(tk.ACTION, body, tk.END_ACTION, fmt)


def serialize_response(delex: str, fmt: SequenceFormat = FULL_FORMAT) -> str:
    return _wrap(tk.RESPONSE, _norm_text(delex), tk.END_RESPONSE, fmt)


def context_history(dialogue: Dialogue, t: int) -> list[tuple[str, str]]:
    """Gold history [U_0, S_0, ..., U_t] with lexicalized system turns."""
    history = []
    for i, turn in enumerate(dialogue.turns[: t + 1]):
        history.append(("user", turn.user))
        if i < t:
            history.append(("system", turn.system_lex))
    return history


def serialize_training_sequence(d: Dialogue, t: int, fmt: SequenceFormat = FULL_FORMAT) -> str:
    if not 0 <= t < len(d.turns):
        raise IndexError(f"turn {t} out of range for dialogue {d.id} with {len(d.turns)} turns")
    turn = d.turns[t]
    missing = [name for name, val in (("belief", turn.belief), ("actions", turn.actions)) if val is None]
    if fmt.include_db and turn.db is None:
        missing.append("db")
    if missing:
        raise ValueError(f"dialogue {d.id} turn {t} lacks gold {', '.join(missing)}")
    parts = [serialize_context(context_history(d, t), fmt), serialize_belief(turn.belief, fmt)]
    if fmt.include_db:
        parts.append(serialize_db(turn.db, fmt))
    parts.append(serialize_actions(turn.actions, fmt))
    parts.append(serialize_response(turn.system_delex, fmt))
    return " ".join(parts)


def _span(text: str, open_tok: str, close_tok: str) -> tuple[str | None, bool]:
    """Text between ``open_tok`` and ``close_tok``.

    Returns (None, False) without an opener.  Without a closer the span runs to the
    next segment token or the end of the text and the second value is False.
    """
    start = text.find(open_tok)
    if start < 0:
        return None, False
    start += len(open_tok)
    end = text.find(close_tok, start)
    if end >= 0:
        return text[start:end], True
    nxt = _SEGMENT_RE.search(text, start)
    return (text[start : nxt.start()] if nxt else text[start:]), False


def _chunks(body: str) -> list[list[str]]:
    return [c.split() for c in body.split(",") if c.strip()]


def _split_slot(domain: str, rest: list[str], slot_vocab) -> tuple[str, str] | None:
    known: set[str] = set()
    if slot_vocab is not None:
        if hasattr(slot_vocab, "slot_names"):
            known = slot_vocab.slot_names(domain) or slot_vocab.slot_names()
        else:
            known = set(slot_vocab)
    best = None
    for slot in known:
        words = slot.split()
        if rest[: len(words)] == words and len(rest) > len(words):
            if best is None or len(words) > len(best.split()):
                best = slot
    if best is not None:
        n = len(best.split())
        return best, " ".join(rest[n:])
    if known:
        return None
    if rest[0] == "book" and len(rest) >= 3:
        return f"book {rest[1]}", " ".join(rest[2:])
    if len(rest) >= 2:
        return rest[0], " ".join(rest[1:])
    return None


def parse_belief(generated: str, slot_vocab=None) -> BeliefState:
    """Parse the belief segment of ``generated``.

    ``slot_vocab`` (an Ontology or a set of slot names) disambiguates multi-word
    slot names; without it a leading ``book`` joins the next word into the slot.
    Malformed chunks are dropped and counted in ``BeliefState.dropped``.
    """
    body, closed = _span(generated, tk.BELIEF, tk.END_BELIEF)
    if body is None:
        raise ParseFailure("no <|belief|> opener in generated text")
    flags = () if closed else ("belief_unclosed",)
    triplets = []
    dropped = 0
    for words in _chunks(body):
        if len(words) < 3:
            dropped += 1
            continue
        split = _split_slot(words[0], words[1:], slot_vocab)
        if split is None:
            dropped += 1
            continue
        triplets.append(BeliefTriplet(words[0], split[0], split[1]))
    return BeliefState(tuple(triplets), dropped=dropped, flags=flags)


class ActionResponse(NamedTuple):
    actions: list[ActionTriplet]
    response: str
    flags: list[str]


def parse_actions(generated: str) -> tuple[list[ActionTriplet], list[str]]:
    body, closed = _span(generated, tk.ACTION, tk.END_ACTION)
    if body is None:
        return [], ["no_action_opener"]
    flags = [] if closed else ["action_unclosed"]
    actions = []
    for words in _chunks(body):
        if len(words) < 3:
            flags.append("action_malformed")
            continue
        actions.append(ActionTriplet(words[0], words[1], " ".join(words[2:])))
    return actions, flags


def parse_response(generated: str) -> tuple[str, list[str]]:
    start = generated.find(tk.RESPONSE)
    if start < 0:
        return "", ["no_response_opener"]
    start += len(tk.RESPONSE)
    end = generated.find(tk.END_RESPONSE, start)
    if end < 0:
        return _norm_text(generated[start:]), ["response_unclosed"]
    return _norm_text(generated[start:end]), []


def parse_action_response(generated: str) -> ActionResponse:
    actions, flags = parse_actions(generated)
    response, rflags = parse_response(generated)
    return ActionResponse(actions, response, flags + rflags)
