"""Domain/slot inventory shared by the parser, database, lexicon and corpus tools."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

# Attributes that name one concrete entity get a domain-scoped placeholder.
IDENTIFYING = ("name", "id", "reference", "address", "phone", "postcode")


@dataclass
class DomainSpec:
    name: str
    # slot -> value type; covers belief slots and DB attributes
    types: dict[str, str]
    belief_slots: list[str]
    booking_slots: list[str] = field(default_factory=list)
    attributes: list[str] = field(default_factory=list)
    requestable: list[str] = field(default_factory=list)
    values: dict[str, list[str]] = field(default_factory=dict)

    @property
    def informable(self) -> list[str]:
        return [s for s in self.belief_slots if s not in self.booking_slots]

    def placeholder(self, slot: str) -> str:
        if slot in IDENTIFYING:
            return f"[{self.name}_{slot}]"
        return f"[value_{self.types.get(slot, slot)}]"


@dataclass
class Ontology:
    domains: dict[str, DomainSpec]

    @property
    def domain_order(self) -> list[str]:
        return list(self.domains)

    def slot_names(self, domain: str | None = None) -> set[str]:
        if domain is not None:
            spec = self.domains.get(domain)
            return set(spec.belief_slots) if spec else set()
        return {s for d in self.domains.values() for s in d.belief_slots}

    def booking_slots(self, domain: str) -> set[str]:
        spec = self.domains.get(domain)
        return set(spec.booking_slots) if spec else set()

    def value_type(self, domain: str, slot: str) -> str:
        spec = self.domains.get(domain)
        if spec is None:
            return slot
        return spec.types.get(slot, slot)

    def placeholder(self, domain: str, slot: str) -> str:
        spec = self.domains.get(domain)
        if spec is None:
            return f"[value_{slot}]"
        return spec.placeholder(slot)

    def placeholders(self) -> list[str]:
        out: dict[str, None] = {}
        for spec in self.domains.values():
            for slot in list(spec.attributes) + list(spec.belief_slots):
                out[spec.placeholder(slot)] = None
        out["[value_count]"] = None
        return list(out)

    def to_dict(self) -> dict:
        return {
            "domains": {
                name: {
                    "types": spec.types,
                    "belief_slots": spec.belief_slots,
                    "booking_slots": spec.booking_slots,
                    "attributes": spec.attributes,
                    "requestable": spec.requestable,
                    "values": spec.values,
                }
                for name, spec in self.domains.items()
            },
            "placeholders": self.placeholders(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Ontology":
        domains = {}
        for name, d in data["domains"].items():
            domains[name] = DomainSpec(
                name=name,
                types=dict(d.get("types", {})),
                belief_slots=list(d.get("belief_slots", [])),
                booking_slots=list(d.get("booking_slots", [])),
                attributes=list(d.get("attributes", [])),
                requestable=list(d.get("requestable", [])),
                values={k: list(v) for k, v in d.get("values", {}).items()},
            )
        return cls(domains)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Ontology":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
