"""Placeholder substitution between lexicalized and delexicalized responses."""
from __future__ import annotations

import re

from .database import EntityRow
from .ontology import IDENTIFYING, Ontology
from .schema import BeliefState

PLACEHOLDER_RE = re.compile(r"^\[([a-z]+)_([a-z ]+)\]$")

_PATTERNS = [
    (re.compile(r"^\d{1,2}:\d{2}$"), "[value_time]"),
    (re.compile(r"^\d+\.\d{2}$"), "[value_price]"),
    (re.compile(r"^\d+$"), "[value_count]"),
]


def _placeholder(ontology: Ontology | None, domain: str, slot: str) -> str:
    if ontology is not None:
        return ontology.placeholder(domain, slot)
    if slot in IDENTIFYING:
        return f"[{domain}_{slot}]"
    return f"[value_{slot}]"


def _value_type(ontology: Ontology | None, domain: str, slot: str) -> str:
    return ontology.value_type(domain, slot) if ontology is not None else slot


def is_placeholder(token: str) -> bool:
    return token.startswith("[") and token.endswith("]") and "_" in token


def delexicalize(
    response: str,
    row: EntityRow | None,
    b: BeliefState,
    ontology: Ontology | None = None,
) -> str:
    candidates: list[tuple[list[str], str]] = []
    if row is not None:
        for slot, value in row.attributes:
            candidates.append((value.split(), _placeholder(ontology, row.domain, slot)))
    for d, s, v in b.triplets:
        candidates.append((v.split(), _placeholder(ontology, d, s)))
    # longest first; stable so that row attributes win ties
    candidates = [c for c in candidates if c[0]]
    candidates.sort(key=lambda c: -len(c[0]))

    words = response.split()
    out: list[str] = []
    i = 0
    while i < len(words):
        if is_placeholder(words[i]):
            out.append(words[i])
            i += 1
            continue
        for value, ph in candidates:
            n = len(value)
            if words[i : i + n] == value:
                out.append(ph)
                i += n
                break
        else:
            word = words[i]
            for pattern, ph in _PATTERNS:
                if pattern.match(word):
                    word = ph
                    break
            out.append(word)
            i += 1
    return " ".join(out)


def lexicalize(
    delex: str,
    b: BeliefState,
    rows: list[EntityRow],
    ontology: Ontology | None = None,
    domain: str | None = None,
) -> tuple[str, list[str]]:
    """Fill placeholders from the first row, then the belief state, then the match count.

    Repeated generic placeholders (e.g. two ``[value_time]``) take successive
    candidates in attribute order.  Unresolved placeholders stay verbatim.
    """
    row = rows[0] if rows else None
    scope = row.domain if row is not None else domain
    belief_scope = [t for t in b.triplets if scope is None or t.domain == scope]
    used: dict[str, int] = {}
    out, unresolved = [], []
    for word in delex.split():
        if not is_placeholder(word):
            out.append(word)
            continue
        inner = word[1:-1]
        head, _, tail = inner.partition("_")
        value = None
        if head != "value":
            if row is not None and row.domain == head:
                value = row.get(tail)
            if value is None:
                value = b.get(head, tail)
        else:
            pool: list[str] = []
            if row is not None:
                pool += [v for s, v in row.attributes if _value_type(ontology, row.domain, s) == tail]
            pool += [t.value for t in belief_scope if _value_type(ontology, t.domain, t.slot) == tail]
            if tail == "count" and (rows or scope is not None):
                pool.append(str(len(rows)))
            pool = list(dict.fromkeys(pool))
            if pool:
                k = used.get(tail, 0)
                value = pool[k % len(pool)]
                used[tail] = k + 1
        if value is None:
            out.append(word)
            unresolved.append(word)
        else:
            out.append(value)
    return " ".join(out), unresolved


def placeholders_in(text: str) -> list[str]:
    return [w for w in text.split() if is_placeholder(w)]
