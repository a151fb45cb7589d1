"""Synthetic dialogue corpora, corpus files, annotation noise and the noise auditor."""
from __future__ import annotations

import csv
import json
import random
from dataclasses import dataclass, field
from pathlib import Path

from .database import Database, EntityRow, query, turn_summary
from .lexicon import delexicalize, lexicalize
from .ontology import DomainSpec, Ontology
from .schema import (
    ActionTriplet,
    BeliefState,
    BeliefTriplet,
    DbSummary,
    Dialogue,
    DomainGoal,
    Turn,
    canonical_value,
    canonicalize_belief,
)

DAYS = ["monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday"]
AREAS = ["centre", "north", "south", "east", "west"]
FOODS = ["italian", "chinese", "indian", "british", "french", "thai"]
PRICES = ["cheap", "moderate", "expensive"]
PLACES = ["cambridge", "ely", "london", "norwich", "stevenage", "bishops stortford", "peterborough"]
PEOPLE = [str(n) for n in range(2, 9)]
TIMES = ["17:00", "17:30", "18:00", "18:30", "19:00", "19:30", "20:00", "20:30"]
RESTAURANT_NAMES = [
    "the golden curry", "pizza palace", "the copper kettle", "bangkok city", "the oak bistro",
    "curry garden", "the river bar", "saigon house", "the lucky star", "la margherita",
    "the cotto", "jade garden", "royal spice", "the green olive", "the little rose",
    "yippee noodle bar", "the grafton hotel restaurant", "kymmoy", "loch fyne", "midsummer house",
    "the varsity", "rice boat", "the nirala", "pipasha",
]
STREETS = ["mill", "regent", "king", "trinity", "park", "bridge", "castle", "hills"]


def default_ontology() -> Ontology:
    restaurant = DomainSpec(
        name="restaurant",
        types={
            "name": "name", "area": "area", "food": "food", "pricerange": "pricerange",
            "phone": "phone", "address": "address",
            "book people": "count", "book day": "day", "book time": "time",
        },
        belief_slots=["area", "food", "pricerange", "book people", "book day", "book time"],
        booking_slots=["book people", "book day", "book time"],
        attributes=["name", "area", "food", "pricerange", "phone", "address"],
        requestable=["phone", "address"],
        values={
            "area": AREAS, "food": FOODS, "pricerange": PRICES,
            "book people": PEOPLE, "book day": DAYS, "book time": TIMES,
        },
    )
    train = DomainSpec(
        name="train",
        types={
            "id": "id", "departure": "place", "destination": "place", "day": "day",
            "leaveat": "time", "arriveby": "time", "price": "price", "book people": "count",
        },
        belief_slots=["departure", "destination", "day", "book people"],
        booking_slots=["book people"],
        attributes=["id", "departure", "destination", "day", "leaveat", "arriveby", "price"],
        requestable=["price"],
        values={"departure": PLACES, "destination": PLACES, "day": DAYS, "book people": PEOPLE},
    )
    return Ontology({"restaurant": restaurant, "train": train})


# ---------------------------------------------------------------------------
# database synthesis

def _fmt_time(minutes: int) -> str:
    return f"{minutes // 60:02d}:{minutes % 60:02d}"


def generate_database(ontology: Ontology, rng: random.Random, num_restaurants: int = 24) -> Database:
    rows: dict[str, list[EntityRow]] = {}
    if "restaurant" in ontology.domains:
        names = RESTAURANT_NAMES[:num_restaurants]
        # cycle through the value lists first so every value has at least one entity
        areas = (AREAS * 10)[: len(names)]
        foods = (FOODS * 10)[: len(names)]
        prices = (PRICES * 10)[: len(names)]
        rng.shuffle(foods)
        rng.shuffle(prices)
        phones = rng.sample(range(100000, 999999), len(names))
        rows["restaurant"] = [
            EntityRow.make("restaurant", {
                "name": name, "area": areas[i], "food": foods[i], "pricerange": prices[i],
                "phone": f"01223{phones[i]}",
                "address": f"{rng.randint(2, 99)} {rng.choice(STREETS)} {rng.choice(['road', 'street', 'lane'])}",
            })
            for i, name in enumerate(names)
        ]
    if "train" in ontology.domains:
        hub, others = PLACES[0], PLACES[1:]
        ids = rng.sample(range(1000, 9999), 2 * 2 * len(others) * len(DAYS))
        trains = []
        k = 0
        for other in others:
            minutes = rng.randint(3, 12) * 7
            price = f"{rng.randint(4, 40)}.{rng.choice(['10', '24', '50', '60', '88'])}"
            for dep, dest in ((hub, other), (other, hub)):
                for day in DAYS:
                    starts = sorted(rng.sample(range(5 * 12, 22 * 12), 2))
                    for s in starts:
                        leave = s * 5
                        trains.append({
                            "id": f"tr{ids[k]}", "departure": dep, "destination": dest, "day": day,
                            "leaveat": _fmt_time(leave), "arriveby": _fmt_time(leave + minutes), "price": price,
                        })
                        k += 1
        rows["train"] = [EntityRow.make("train", t) for t in trains]
    return Database(rows, ontology)


# ---------------------------------------------------------------------------
# dialogue synthesis

_RESTAURANT_SLOT_ORDER = ["area", "food", "pricerange"]
_TRAIN_SLOT_ORDER = ["departure", "destination", "day"]

_SLOT_QUESTIONS = {
    ("restaurant", "area"): ("what area would you like ?", "request"),
    ("restaurant", "food"): ("what type of food would you like ?", "request"),
    ("restaurant", "pricerange"): ("what price range would you like ?", "request"),
    ("train", "departure"): ("where will you be departing from ?", "request"),
    ("train", "destination"): ("where are you travelling to ?", "request"),
    ("train", "day"): ("what day will you travel ?", "request"),
}

_ANSWERS = {
    "area": ["the {v} please .", "i would like the {v} .", "in the {v} area ."],
    "food": ["{v} food please .", "i want {v} food .", "i would like {v} food ."],
    "pricerange": ["something {v} please .", "a {v} one .", "i want a {v} place ."],
    "departure": ["from {v} please .", "i will leave from {v} .", "i am departing from {v} ."],
    "destination": ["i am going to {v} .", "to {v} please .", "i want to go to {v} ."],
    "day": ["on {v} please .", "i want to travel on {v} .", "i am leaving on {v} ."],
}


def _restaurant_request(info: dict[str, str], rng: random.Random, also: bool) -> str:
    price = info.get("pricerange", "")
    food = info.get("food", "")
    area = info.get("area")
    lead = rng.choice(["i am also looking for", "i also want", "i also need"] if also
                      else ["i am looking for", "i want to find", "can you help me find", "i need"])
    noun = " ".join(w for w in (price, food, "restaurant") if w)
    tail = f" in the {area}" if area else ""
    end = " ?" if lead.startswith("can") else " ."
    article = "an" if noun[0] in "aeiou" else "a"
    return f"{lead} {article} {noun}{tail}{end}"


def _train_request(info: dict[str, str], rng: random.Random, also: bool, same_day: bool) -> str:
    parts = []
    if "departure" in info:
        parts.append(f"from {info['departure']}")
    if "destination" in info:
        parts.append(f"to {info['destination']}")
    rng.shuffle(parts)
    if same_day:
        parts.append("on the same day as my booking")
    elif "day" in info:
        parts.append(f"on {info['day']}")
    lead = rng.choice(["i also need a train", "i am also looking for a train"] if also
                      else ["i need a train", "i am looking for a train", "can you find me a train"])
    end = " ?" if lead.startswith("can") else " ."
    return " ".join([lead] + parts) + end


@dataclass
class _State:
    belief: dict[tuple[str, str], str] = field(default_factory=dict)
    turns: list[Turn] = field(default_factory=list)


class _DialogueBuilder:
    def __init__(self, ontology: Ontology, store: Database):
        self.ontology = ontology
        self.store = store
        self.state = _State()

    def belief(self) -> BeliefState:
        return BeliefState.from_dict(self.state.belief)

    def add_turn(self, user: str, delex_fn):
        """``delex_fn(belief, rows, summary)`` returns (delex response, actions)."""
        b = self.belief()
        summary = turn_summary(self.store, b, self.ontology)
        from .database import active_domain
        dom = active_domain(b, self.ontology)
        rows = query(self.store, b, dom) if dom else []
        delex, actions = delex_fn(b, rows, summary)
        lex, unresolved = lexicalize(delex, b, rows, self.ontology, dom)
        if unresolved:
            raise AssertionError(f"unresolved placeholders {unresolved} in {delex!r}")
        row = rows[0] if rows else None
        if delexicalize(lex, row, b, self.ontology) != delex:
            raise AssertionError(f"delexicalization does not invert lexicalization for {lex!r}")
        self.state.turns.append(Turn(user, delex, lex, b, list(actions), summary))
        return rows, summary


def _count_prefix(domain: str, count: int) -> tuple[str, list[ActionTriplet]]:
    if count <= 1:
        return "", []
    noun = "restaurants" if domain == "restaurant" else "trains"
    # worded by bucket so that user-given numbers are the only digits in context
    amount = "a few" if count <= 3 else "many"
    return f"there are {amount} {noun} that match .", [ActionTriplet(domain, "inform", "choice")]


def _constraint_phase(builder: _DialogueBuilder, domain: str, target: EntityRow, first: dict[str, str],
                      order: list[str], opener: str, rng: random.Random) -> tuple[dict[str, str], str]:
    """User states ``first``; the system asks for missing slots while more than 3 rows match."""
    for slot, value in first.items():
        builder.state.belief[(domain, slot)] = value
    info = dict(first)
    user = opener
    while True:
        b = builder.belief()
        rows = query(builder.store, b, domain)
        missing = [s for s in order if (domain, s) not in builder.state.belief]
        if len(rows) > 3 and missing:
            ask = missing[0]

            def ask_fn(b, rows, summary, ask=ask):
                prefix, acts = _count_prefix(domain, len(rows))
                question = _SLOT_QUESTIONS[(domain, ask)][0]
                text = f"{prefix} {question}".strip()
                return text, acts + [ActionTriplet(domain, "request", ask)]

            builder.add_turn(user, ask_fn)
            value = target[ask]
            builder.state.belief[(domain, ask)] = value
            info[ask] = value
            user = rng.choice(_ANSWERS[ask]).format(v=value)
            continue
        return info, user


def _offer_fn(domain: str):
    def fn(b, rows, summary):
        prefix, acts = _count_prefix(domain, len(rows))
        if domain == "restaurant":
            body = ("[restaurant_name] is [value_pricerange] and serves [value_food] food in the [value_area] . "
                    "shall i book a table ?")
            acts += [ActionTriplet("restaurant", "inform", s) for s in ("name", "pricerange", "food", "area")]
        else:
            body = "[train_id] leaves at [value_time] and arrives at [value_time] . shall i book it ?"
            acts += [ActionTriplet("train", "inform", s) for s in ("id", "leave", "arrive")]
        acts.append(ActionTriplet(domain, "offerbook", "none"))
        return f"{prefix} {body}".strip(), acts
    return fn


_REQUEST_UTTERANCES = {
    ("restaurant", ("phone",)): ["what is the phone number ?", "can i have their phone number ?"],
    ("restaurant", ("address",)): ["what is the address ?", "where is it located ?"],
    ("restaurant", ("phone", "address")): ["what is their phone number and address ?",
                                          "can i get the phone number and address ?"],
    ("train", ("price",)): ["how much is a ticket ?", "what is the price ?"],
}


def _request_fn(domain: str, slots: tuple[str, ...]):
    def fn(b, rows, summary):
        pieces = []
        for s in slots:
            if s == "phone":
                pieces.append("the phone number is [restaurant_phone]")
            elif s == "address":
                pieces.append("the address is [restaurant_address]")
            elif s == "price":
                pieces.append("the price is [value_price] pounds")
        text = " and ".join(pieces) + " . anything else ?"
        acts = [ActionTriplet(domain, "inform", s) for s in slots] + [ActionTriplet("general", "reqmore", "none")]
        return text, acts
    return fn


def _booking_fn(domain: str):
    def fn(b, rows, summary):
        if summary.booking_status == "available":
            if domain == "restaurant":
                text = "i have booked a table for [value_count] people on [value_day] at [value_time] ."
                acts = [ActionTriplet("restaurant", "offerbooked", s) for s in ("people", "day", "time")]
            else:
                text = "i have booked [value_count] tickets on [train_id] ."
                acts = [ActionTriplet("train", "offerbooked", "people")]
        else:
            noun = "tables" if domain == "restaurant" else "seats"
            text = f"sorry , no {noun} are available ."
            acts = [ActionTriplet(domain, "nobook", "none")]
        return text + " anything else ?", acts + [ActionTriplet("general", "reqmore", "none")]
    return fn


def _bye_fn(b, rows, summary):
    return "thank you for using our service . goodbye .", [ActionTriplet("general", "bye", "none")]


def _pick_first(target: EntityRow, order: list[str], rng: random.Random) -> dict[str, str]:
    k = rng.randint(1, len(order))
    chosen = sorted(rng.sample(order, k), key=order.index)
    return {s: target[s] for s in chosen}


def _generate_one(ontology: Ontology, store: Database, rng: random.Random, did: str) -> Dialogue:
    kind = rng.choices(["restaurant", "train", "both"], weights=[35, 35, 30])[0]
    domains = ["restaurant", "train"] if kind == "both" else [kind]
    builder = _DialogueBuilder(ontology, store)
    goal: dict[str, DomainGoal] = {}
    pending_user = None
    for n, domain in enumerate(domains):
        also = n > 0
        g = DomainGoal()
        if domain == "restaurant":
            target = rng.choice(store.domain_rows("restaurant"))
            first = _pick_first(target, _RESTAURANT_SLOT_ORDER, rng)
            opener = _restaurant_request(first, rng, also)
            order = _RESTAURANT_SLOT_ORDER
        else:
            same_day_value = builder.state.belief.get(("restaurant", "book day"))
            same_day = same_day_value is not None and rng.random() < 0.5
            candidates = store.domain_rows("train")
            if same_day:
                candidates = [r for r in candidates if r["day"] == same_day_value]
            target = rng.choice(candidates)
            first = _pick_first(target, _TRAIN_SLOT_ORDER, rng)
            if same_day:
                first["day"] = same_day_value
            opener = _train_request(first, rng, also, same_day)
            order = _TRAIN_SLOT_ORDER
        if pending_user is not None:
            # the closing remark of the previous domain merges into this opener
            opener = f"{pending_user} {opener}"
        info, user = _constraint_phase(builder, domain, target, first, order, opener, rng)
        builder.add_turn(user, _offer_fn(domain))
        g.info = dict(info)

        follow = []
        spec = ontology.domains[domain]
        if rng.random() < 0.6:
            k = rng.randint(1, len(spec.requestable))
            g.reqt = sorted(rng.sample(spec.requestable, k), key=spec.requestable.index)
            follow.append("reqt")
        if rng.random() < 0.5:
            if domain == "restaurant":
                g.book = {"people": rng.choice(PEOPLE), "day": rng.choice(DAYS), "time": rng.choice(TIMES)}
            else:
                g.book = {"people": rng.choice(PEOPLE)}
            follow.append("book")
        rng.shuffle(follow)
        utter = None
        for step in follow:
            if step == "reqt":
                utter = rng.choice(_REQUEST_UTTERANCES[(domain, tuple(g.reqt))])
                fn = _request_fn(domain, tuple(g.reqt))
            else:
                for k, v in g.book.items():
                    builder.state.belief[(domain, f"book {k}")] = v
                if domain == "restaurant":
                    utter = rng.choice([
                        "please book a table for {people} people on {day} at {time} .",
                        "can you book it for {people} people at {time} on {day} ?",
                        "yes , book a table for {people} on {day} at {time} please .",
                    ]).format(**g.book)
                else:
                    utter = rng.choice([
                        "yes , please book {people} tickets .",
                        "please book it for {people} people .",
                    ]).format(**g.book)
                fn = _booking_fn(domain)
            builder.add_turn(utter, fn)
        goal[domain] = g
        pending_user = rng.choice(["thanks .", "great , thank you ."]) if n + 1 < len(domains) else None
    builder.add_turn(rng.choice(["thank you , that is all i need .", "thanks , goodbye .", "that is all , thank you ."]),
                     _bye_fn)
    return Dialogue(did, goal, builder.state.turns)


def generate_synthetic_corpus(ontology: Ontology, num_dialogues: int, seed: int,
                              store: Database | None = None) -> tuple[list[Dialogue], Database]:
    """Deterministic corpus and entity store for ``seed``.

    Pass ``store`` to draw more dialogues against an existing database (e.g. a
    held-out split); otherwise the database is synthesized from the same seed.
    """
    rng = random.Random(seed)
    if store is None:
        store = generate_database(ontology, rng)
    dialogues = [_generate_one(ontology, store, rng, f"syn{seed}-{i:05d}") for i in range(num_dialogues)]
    return dialogues, store


# ---------------------------------------------------------------------------
# corpus files (MultiWOZ-like records, one JSON object per line)

class Corpus(list):
    """List of dialogues plus the load-time flags."""

    def __init__(self, dialogues=(), flags=None):
        super().__init__(dialogues)
        self.flags: list[str] = list(flags or [])


def _belief_to_metadata(b: BeliefState) -> dict:
    meta: dict[str, dict] = {}
    for d, s, v in b.triplets:
        entry = meta.setdefault(d, {"semi": {}, "book": {}})
        if s.startswith("book "):
            entry["book"][s[5:]] = v
        else:
            entry["semi"][s] = v
    return meta


def _metadata_to_belief(meta: dict, ontology: Ontology | None, where: str, flags: list[str]) -> BeliefState:
    trips = []
    for domain, entry in meta.items():
        domain = domain.lower()
        for part, prefix in (("semi", ""), ("book", "book ")):
            for slot, value in (entry.get(part) or {}).items():
                if not isinstance(value, str):
                    continue
                if value in ("", "not mentioned", "none"):
                    continue
                slot = prefix + slot.lower()
                if ontology is not None and slot not in ontology.slot_names(domain):
                    flags.append(f"{where}: unknown slot {domain} {slot}")
                trips.append(BeliefTriplet(domain, slot, value))
    return canonicalize_belief(BeliefState(tuple(trips)))


def _actions_to_acts(actions: list[ActionTriplet]) -> dict:
    acts: dict[str, list] = {}
    for d, a, s in actions:
        acts.setdefault(f"{d.capitalize()}-{a.capitalize()}", []).append([s, "none"])
    return acts


def _acts_to_actions(acts: dict) -> list[ActionTriplet]:
    out = []
    for key, pairs in acts.items():
        d, _, a = key.partition("-")
        for pair in pairs:
            out.append(ActionTriplet(d.lower(), a.lower(), str(pair[0]).lower()))
    return out


def dialogue_to_record(d: Dialogue) -> dict:
    log = []
    for turn in d.turns:
        log.append({"text": turn.user})
        sys = {"text": turn.system_lex, "text_delex": turn.system_delex}
        if turn.belief is not None:
            sys["metadata"] = _belief_to_metadata(turn.belief)
        if turn.actions is not None:
            sys["dialog_act"] = _actions_to_acts(turn.actions)
        if turn.db is not None:
            sys["db"] = {"count": turn.db.match_count, "status": turn.db.booking_status}
        log.append(sys)
    goal = {dom: {"info": g.info, "reqt": g.reqt, "book": g.book} for dom, g in d.goal.items()}
    return {"id": d.id, "goal": goal, "log": log}


def record_to_dialogue(rec: dict, ontology: Ontology | None = None, flags: list[str] | None = None,
                       where: str = "") -> Dialogue:
    flags = flags if flags is not None else []
    for key in ("id", "log"):
        if key not in rec:
            raise ValueError(f"{where}: missing field {key!r}")
    log = rec["log"]
    if not isinstance(log, list) or len(log) % 2:
        raise ValueError(f"{where}.log: expected alternating user/system entries")
    turns = []
    for i in range(0, len(log), 2):
        user, sys = log[i], log[i + 1]
        if "text" not in user or "text" not in sys:
            raise ValueError(f"{where}.log[{i}]: missing 'text'")
        tw = f"{where}.log[{i + 1}]"
        belief = _metadata_to_belief(sys["metadata"], ontology, tw, flags) if "metadata" in sys else None
        actions = _acts_to_actions(sys["dialog_act"]) if "dialog_act" in sys else None
        db = DbSummary(int(sys["db"]["count"]), sys["db"].get("status", "not_applicable")) if "db" in sys else None
        turns.append(Turn(
            user=user["text"], system_delex=sys.get("text_delex", sys["text"]), system_lex=sys["text"],
            belief=belief, actions=actions, db=db,
        ))
    goal = {}
    for dom, g in (rec.get("goal") or {}).items():
        if not isinstance(g, dict) or not g:
            continue
        goal[dom.lower()] = DomainGoal(
            info={k: canonical_value(str(v)) for k, v in (g.get("info") or {}).items()},
            reqt=list(g.get("reqt") or []),
            book={k: str(v) for k, v in (g.get("book") or {}).items() if not isinstance(v, (list, dict))},
        )
    return Dialogue(str(rec["id"]), goal, turns)


def save_corpus(dialogues: list[Dialogue], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for d in dialogues:
            fh.write(json.dumps(dialogue_to_record(d), sort_keys=True) + "\n")


def load_corpus(path: str | Path, ontology: Ontology | None = None) -> Corpus:
    flags: list[str] = []
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            where = f"{path}:{lineno}"
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{where}: invalid JSON ({exc.msg})") from None
            if not isinstance(rec, dict):
                raise ValueError(f"{where}: expected a JSON object")
            out.append(record_to_dialogue(rec, ontology, flags, where))
    return Corpus(out, flags)


# ---------------------------------------------------------------------------
# noise injection and auditing

# values shorter than this (party sizes, single digits) are not treated as misspellable
MIN_MISSPELL_LENGTH = 3

NOISE_TYPES = {"T1": "ambiguous", "T2": "missing_label", "T3": "spurious_label", "T4": "misspelled"}


@dataclass(frozen=True)
class NoiseRecord:
    dialogue_id: str
    turn: int
    noise_type: str
    original: tuple[str, str, str] | None
    corrupted: tuple[str, str, str] | None


@dataclass(frozen=True)
class AuditFlag:
    dialogue_id: str
    turn: int
    suspected_type: str
    evidence: str


def _contains(words: list[str], value: str) -> bool:
    v = value.split()
    n = len(v)
    return n > 0 and any(words[i : i + n] == v for i in range(len(words) - n + 1))


def _context_words(d: Dialogue, t: int, users_only: bool = False) -> list[str]:
    words: list[str] = []
    for i, turn in enumerate(d.turns[: t + 1]):
        words += turn.user.split()
        if i < t and not users_only:
            words += turn.system_lex.split()
    return words


def edit_distance(a: str, b: str) -> int:
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def misspell(value: str, rng: random.Random, kind: str | None = None) -> str:
    """One small edit: drop/substitute/transpose a character or split a word.

    ``kind="drop_token"`` removes the leading token instead ("the gandhi" -> "gandhi");
    it is never picked at random because it can exceed edit distance 2.
    """
    kind = kind or rng.choice(["delete", "substitute", "transpose", "space"])
    if kind == "drop_token":
        return " ".join(value.split()[1:])
    positions = [i for i, c in enumerate(value) if c != " "]
    i = rng.choice(positions)
    if kind == "delete":
        return value[:i] + value[i + 1 :]
    if kind == "substitute":
        alphabet = "0123456789" if value[i].isdigit() else "abcdefghijklmnopqrstuvwxyz"
        choices = [c for c in alphabet if c != value[i]]
        return value[:i] + rng.choice(choices) + value[i + 1 :]
    if kind == "transpose":
        j = i + 1 if i + 1 < len(value) and value[i + 1] != " " else i - 1
        if j < 0 or value[j] == " " or value[i] == value[j]:
            return value[:i] + value[i + 1 :]
        a, b = sorted((i, j))
        return value[:a] + value[b] + value[a] + value[b + 1 :]
    if kind == "space":
        if i == 0:
            i = 1
        return value[:i] + " " + value[i:]
    raise ValueError(f"unknown edit kind {kind!r}")


def inject_noise(corpus: list[Dialogue], noise_type: str, rate: float, seed: int,
                 ontology: Ontology | None = None, skip_turns: set[tuple[str, int]] | None = None
                 ) -> tuple[list[Dialogue], list[NoiseRecord]]:
    """Corrupt a ``rate`` fraction of turns with one noise type; returns copies plus ground truth.

    ``skip_turns`` excludes (dialogue id, turn) pairs, e.g. ones already corrupted
    by another noise type.
    """
    if not 0.0 <= rate <= 1.0:
        raise ValueError("rate must be within [0, 1]")
    if noise_type not in ("T2", "T3", "T4"):
        raise ValueError(f"noise type must be T2, T3 or T4, got {noise_type!r}")
    ontology = ontology or default_ontology()
    rng = random.Random(seed)
    skip = skip_turns or set()
    out: list[Dialogue] = []
    records: list[NoiseRecord] = []
    for d in corpus:
        turns = [Turn(t.user, t.system_delex, t.system_lex, t.belief, t.actions, t.db) for t in d.turns]
        for ti, turn in enumerate(turns):
            if (d.id, ti) in skip or turn.belief is None or rng.random() >= rate:
                continue
            context = _context_words(d, ti)
            users = _context_words(d, ti, users_only=True)
            b = turn.belief
            if noise_type == "T2":
                values = [t.value for t in b]
                options = [t for t in b if _contains(users, t.value) and values.count(t.value) == 1]
                if not options:
                    continue
                victim = rng.choice(options)
                turn.belief = b.without(victim.domain, victim.slot)
                records.append(NoiseRecord(d.id, ti, "T2", tuple(victim), None))
            elif noise_type == "T3":
                options = []
                for dom in b.domains or ontology.domain_order:
                    spec = ontology.domains.get(dom)
                    if spec is None:
                        continue
                    for slot in spec.belief_slots:
                        if (dom, slot) in b.as_dict():
                            continue
                        for value in spec.values.get(slot, []):
                            # absent from context and not a near miss of anything in it
                            if not _contains(context, value) and _near_match(value, context, []) is None:
                                options.append((dom, slot, value))
                if not options:
                    continue
                added = rng.choice(options)
                turn.belief = b.with_value(*added)
                records.append(NoiseRecord(d.id, ti, "T3", None, added))
            else:
                options = [t for t in b if len(t.value.replace(" ", "")) >= MIN_MISSPELL_LENGTH]
                if not options:
                    continue
                victim = rng.choice(options)
                for _ in range(20):
                    bad = misspell(victim.value, rng)
                    if bad and bad != victim.value and not _contains(context, bad):
                        break
                else:
                    continue
                turn.belief = b.with_value(victim.domain, victim.slot, bad)
                records.append(NoiseRecord(d.id, ti, "T4", tuple(victim), (victim.domain, victim.slot, bad)))
        out.append(Dialogue(d.id, d.goal, turns))
    return out, records


def _near_match(value: str, context: list[str], extra: list[str], max_dist: int = 2) -> str | None:
    n = len(value.split())
    best = None
    for width in range(max(1, n - 1), n + 2):
        for i in range(len(context) - width + 1):
            cand = " ".join(context[i : i + width])
            if cand != value and edit_distance(cand, value) <= max_dist:
                if best is None or edit_distance(cand, value) < edit_distance(best, value):
                    best = cand
    for cand in extra:
        if cand != value and edit_distance(cand, value) <= max_dist:
            if best is None or edit_distance(cand, value) < edit_distance(best, value):
                best = cand
    return best


def _user_mentions(d: Dialogue, t: int, ontology: Ontology) -> list[tuple[str, str, int]]:
    """(domain, value, turn) for ontology values said by the user while ``domain`` is in focus.

    Focus moves to a domain whenever the user names it; values are matched
    longest-first without overlap.
    """
    focus = None
    mentions = []
    for i, turn in enumerate(d.turns[: t + 1]):
        words = turn.user.split()
        for w in words:
            if w in ontology.domains:
                focus = w
        if focus is None:
            continue
        spec = ontology.domains[focus]
        values = sorted({v for vs in spec.values.values() for v in vs}, key=lambda v: -len(v.split()))
        taken = [False] * len(words)
        for v in values:
            vw = v.split()
            for j in range(len(words) - len(vw) + 1):
                if words[j : j + len(vw)] == vw and not any(taken[j : j + len(vw)]):
                    for k in range(j, j + len(vw)):
                        taken[k] = True
                    mentions.append((focus, v, i))
    return mentions


def audit_annotations(corpus: list[Dialogue], ontology: Ontology | None = None,
                      store: Database | None = None) -> list[AuditFlag]:
    """Flag suspected missing (T2), spurious (T3) and misspelled (T4) belief labels per turn."""
    ontology = ontology or default_ontology()
    flags: list[AuditFlag] = []
    for d in corpus:
        for ti, turn in enumerate(d.turns):
            if turn.belief is None:
                continue
            context = _context_words(d, ti)
            explained: set[str] = set()
            for dom, slot, value in turn.belief:
                if _contains(context, value):
                    continue
                db_values = []
                if store is not None:
                    db_values = sorted({r.get(slot) for r in store.domain_rows(dom) if r.get(slot)})
                near = None
                if len(value.replace(" ", "")) >= MIN_MISSPELL_LENGTH:
                    near = _near_match(value, context, db_values)
                if near is not None:
                    explained.add(near)
                    flags.append(AuditFlag(d.id, ti, "T4", f"{dom} {slot} {value!r} ~ {near!r}"))
                else:
                    flags.append(AuditFlag(d.id, ti, "T3", f"{dom} {slot} {value!r} absent from context"))
            labelled = {(t.domain, t.value) for t in turn.belief}
            seen = set()
            for dom, value, where in _user_mentions(d, ti, ontology):
                if (dom, value) in labelled or value in explained or (dom, value) in seen:
                    continue
                seen.add((dom, value))
                flags.append(AuditFlag(d.id, ti, "T2", f"user turn {where} mentions {dom} value {value!r}"))
    return flags


def write_noise_records(records: list[NoiseRecord], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["dialogue_id", "turn", "noise_type", "original", "corrupted"])
        for r in records:
            w.writerow([r.dialogue_id, r.turn, r.noise_type,
                        " | ".join(r.original) if r.original else "",
                        " | ".join(r.corrupted) if r.corrupted else ""])


def write_audit_report(flags: list[AuditFlag], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["dialogue_id", "turn", "suspected_type", "evidence"])
        for f in flags:
            w.writerow([f.dialogue_id, f.turn, f.suspected_type, f.evidence])


def audit_scores(records: list[NoiseRecord], flags: list[AuditFlag]) -> tuple[float, float]:
    """(recall, precision) of flags against injected records, matched on (dialogue, turn, type)."""
    truth = {(r.dialogue_id, r.turn, r.noise_type) for r in records}
    found = {(f.dialogue_id, f.turn, f.suspected_type) for f in flags}
    recall = len(truth & found) / len(truth) if truth else 1.0
    precision = len(truth & found) / len(found) if found else 1.0
    return recall, precision
