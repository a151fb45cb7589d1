"""In-memory entity store queried with belief-state constraints."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .ontology import Ontology
from .schema import BeliefState, DbSummary, bucket, canonical_value

__all__ = [
    "EntityRow", "Database", "DbSummary", "bucket", "load_database", "query",
    "summarize_results", "active_domain", "booking_outcome", "turn_summary",
]


@dataclass(frozen=True)
class EntityRow:
    domain: str
    attributes: tuple[tuple[str, str], ...]

    @classmethod
    def make(cls, domain: str, attrs: dict[str, str]) -> "EntityRow":
        return cls(domain, tuple((k, canonical_value(str(v))) for k, v in attrs.items()))

    def __getitem__(self, slot: str) -> str:
        for k, v in self.attributes:
            if k == slot:
                return v
        raise KeyError(slot)

    def get(self, slot: str, default=None):
        for k, v in self.attributes:
            if k == slot:
                return v
        return default

    def as_dict(self) -> dict[str, str]:
        return dict(self.attributes)


class Database:
    def __init__(self, rows: dict[str, list[EntityRow]], ontology: Ontology | None = None):
        self.rows = {d: list(r) for d, r in rows.items()}
        self.ontology = ontology

    def __len__(self) -> int:
        return sum(len(r) for r in self.rows.values())

    def __eq__(self, other) -> bool:
        return isinstance(other, Database) and self.rows == other.rows

    def domain_rows(self, domain: str) -> list[EntityRow]:
        return self.rows.get(domain, [])

    def to_dict(self) -> dict:
        return {d: [r.as_dict() for r in rows] for d, rows in self.rows.items()}

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n", encoding="utf-8")


def load_database(path: str | Path, ontology: Ontology | None = None) -> Database:
    """Read ``{domain: [{slot: value, ...}, ...]}``; with an ontology, unknown names are errors."""
    text = Path(path).read_text(encoding="utf-8")
    data = json.loads(text) if text.strip() else {}
    problems = []
    rows: dict[str, list[EntityRow]] = {}
    for domain, records in data.items():
        spec = ontology.domains.get(domain) if ontology else None
        if ontology is not None and spec is None:
            problems.append(f"unknown domain {domain!r}")
            continue
        for i, rec in enumerate(records):
            if spec is not None:
                allowed = set(spec.attributes) | set(spec.belief_slots)
                bad = sorted(set(rec) - allowed)
                if bad:
                    problems.append(f"{domain}[{i}]: unknown slots {bad}")
                    continue
            rows.setdefault(domain, []).append(EntityRow.make(domain, rec))
    if problems:
        raise ValueError(f"{path}: " + "; ".join(problems))
    return Database(rows, ontology)


def _booking_slots(store: Database, domain: str) -> set[str]:
    if store.ontology is not None:
        return store.ontology.booking_slots(domain)
    return set()


def query(store: Database, b: BeliefState, domain: str) -> list[EntityRow]:
    """Rows of ``domain`` equal to every non-booking constraint of ``b`` for that domain."""
    skip = _booking_slots(store, domain)
    constraints = [
        (slot, canonical_value(value))
        for slot, value in b.domain(domain).items()
        if slot not in skip and not slot.startswith("book ")
    ]
    return [
        row for row in store.domain_rows(domain)
        if all(row.get(slot) == value for slot, value in constraints)
    ]


def summarize_results(rows: list[EntityRow], booking_outcome: str | None = None) -> DbSummary:
    return DbSummary(len(rows), booking_outcome or "not_applicable")


def active_domain(b: BeliefState, ontology: Ontology | None = None) -> str | None:
    """Domain whose rows feed the DB segment: the belief domain latest in ontology order."""
    present = b.domains
    if not present:
        return None
    if ontology is None:
        return present[-1]
    order = {d: i for i, d in enumerate(ontology.domain_order)}
    return max(present, key=lambda d: (order.get(d, -1), d))


def booking_outcome(row: EntityRow | None, b: BeliefState, ontology: Ontology, domain: str) -> str:
    """Deterministic availability rule used by the synthetic corpus.

    Booking applies once every booking slot of the domain is filled.  A table is
    unavailable when (sum of name/id characters + party size + day index) % 5 == 0.
    """
    slots = ontology.booking_slots(domain)
    held = b.domain(domain)
    if not slots or not all(s in held for s in slots) or row is None:
        return "not_applicable"
    key = row.get("name") or row.get("id") or ""
    days = ontology.domains[domain].values.get("book day", [])
    day = held.get("book day")
    day_idx = days.index(day) if day in days else 0
    try:
        people = int(held.get("book people", "0"))
    except ValueError:
        people = 0
    score = sum(map(ord, key)) + people + day_idx
    return "not_available" if score % 5 == 0 else "available"


def turn_summary(store: Database, b: BeliefState, ontology: Ontology, with_booking: bool = True) -> DbSummary:
    """Summary for the active domain of ``b``; booking status only when ``with_booking``."""
    domain = active_domain(b, ontology)
    if domain is None:
        return DbSummary(0)
    rows = query(store, b, domain)
    status = None
    if with_booking:
        status = booking_outcome(rows[0] if rows else None, b, ontology, domain)
    return summarize_results(rows, status)
