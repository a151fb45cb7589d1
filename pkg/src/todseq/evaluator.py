"""Dialogue metrics: joint goal accuracy, inform/success, corpus BLEU-4 and the combined score."""
from __future__ import annotations

import csv
import io
import json
import math
from collections import Counter
from dataclasses import asdict, dataclass, field

from .database import EntityRow
from .schema import BeliefState, DomainGoal, canonicalize_belief


@dataclass
class MetricsReport:
    joint_accuracy: float
    inform: float
    success: float
    bleu: float
    combined: float
    turns: int = 0
    dialogues: int = 0
    parse_failures: int = 0
    flags: list[str] = field(default_factory=list)

    CSV_FIELDS = ("joint_accuracy", "inform", "success", "bleu", "combined", "turns", "dialogues", "parse_failures")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1, sort_keys=True)

    def to_csv_line(self, header: bool = True) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        if header:
            w.writerow(self.CSV_FIELDS)
        w.writerow([getattr(self, k) for k in self.CSV_FIELDS])
        return buf.getvalue()


def joint_goal_accuracy(predicted: list[BeliefState], gold: list[BeliefState]) -> float:
    if len(predicted) != len(gold):
        raise ValueError(f"length mismatch: {len(predicted)} predicted vs {len(gold)} gold turns")
    if not gold:
        return 0.0
    hits = sum(
        set(canonicalize_belief(p).triplets) == set(canonicalize_belief(g).triplets)
        for p, g in zip(predicted, gold)
    )
    return hits / len(gold)


@dataclass
class DialogueOutcome:
    """What the system did in one dialogue: offers per domain and every lexicalized response."""

    goal: dict[str, DomainGoal] | None
    offered: dict[str, EntityRow | None]
    responses: list[str]


def _mentions(words: list[str], value: str) -> bool:
    v = value.split()
    return bool(v) and any(words[i : i + len(v)] == v for i in range(len(words) - len(v) + 1))


def inform_success(outcomes: list[DialogueOutcome]) -> tuple[float, float, list[str]]:
    """(inform %, success %, flags) over dialogue-domains."""
    informed = succeeded = total = 0
    flags = []
    for n, out in enumerate(outcomes):
        if not out.goal:
            flags.append(f"dialogue {n}: missing goal, skipped")
            continue
        words = [r.split() for r in out.responses]
        for domain, goal in out.goal.items():
            total += 1
            row = out.offered.get(domain)
            ok = row is not None and all(row.get(s) == v for s, v in goal.info.items())
            if not ok:
                continue
            informed += 1
            if all(
                (value := row.get(slot)) is not None and any(_mentions(w, value) for w in words)
                for slot in goal.reqt
            ):
                succeeded += 1
    if total == 0:
        return 0.0, 0.0, flags
    return 100.0 * informed / total, 100.0 * succeeded / total, flags


def _ngrams(words: list[str], n: int) -> Counter:
    return Counter(tuple(words[i : i + n]) for i in range(len(words) - n + 1))


def bleu(candidates: list[str], references: list[str], max_n: int = 4) -> float:
    """Corpus BLEU (no smoothing, one reference each) on whitespace tokens, scaled to 0..100."""
    if len(candidates) != len(references):
        raise ValueError("candidates and references differ in length")
    if not candidates:
        raise ValueError("bleu needs at least one pair")
    matched = [0] * max_n
    possible = [0] * max_n
    cand_len = ref_len = 0
    for cand, ref in zip(candidates, references):
        c, r = cand.split(), ref.split()
        cand_len += len(c)
        ref_len += len(r)
        for n in range(1, max_n + 1):
            cn, rn = _ngrams(c, n), _ngrams(r, n)
            matched[n - 1] += sum(min(k, rn[g]) for g, k in cn.items())
            possible[n - 1] += max(len(c) - n + 1, 0)
    if min(matched) == 0:
        return 0.0
    log_p = sum(math.log(m / p) for m, p in zip(matched, possible)) / max_n
    bp = 1.0 if cand_len > ref_len else math.exp(1 - ref_len / cand_len)
    return 100.0 * bp * math.exp(log_p)


def combined_score(inform: float, success: float, bleu_score: float) -> float:
    return bleu_score + 0.5 * (inform + success)
