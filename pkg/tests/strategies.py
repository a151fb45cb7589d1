"""Hypothesis strategies shared by the property tests."""
from __future__ import annotations

import random

from hypothesis import strategies as st

from todseq.schema import ActionTriplet, BeliefState, BeliefTriplet

WORD = st.text(alphabet="abcdefghijklmnopqrstuvwxyz0123456789:.", min_size=1, max_size=8)
DOMAINS = ["restaurant", "train", "hotel", "taxi"]
SLOTS = ["area", "food", "pricerange", "name", "departure", "destination", "day",
         "book people", "book day", "book time", "leaveat"]


def value_strategy():
    return st.lists(WORD, min_size=1, max_size=3).map(" ".join)


@st.composite
def beliefs(draw, max_size=8):
    trips = draw(st.lists(
        st.tuples(st.sampled_from(DOMAINS), st.sampled_from(SLOTS), value_strategy()),
        max_size=max_size,
    ))
    return BeliefState(tuple(BeliefTriplet(*t) for t in trips))


@st.composite
def action_lists(draw, max_size=8):
    acts = draw(st.lists(
        st.tuples(
            st.sampled_from(DOMAINS + ["general"]),
            st.sampled_from(["inform", "request", "offerbook", "bye", "reqmore", "nobook"]),
            st.sampled_from(["name", "phone", "none", "choice", "book people", "price"]),
        ),
        max_size=max_size,
    ))
    return [ActionTriplet(*a) for a in acts]


def random_belief(rng: random.Random, max_size: int = 8) -> BeliefState:
    trips = []
    for _ in range(rng.randint(0, max_size)):
        value = " ".join(
            "".join(rng.choice("abcdefghij0123456789:") for _ in range(rng.randint(1, 6)))
            for _ in range(rng.randint(1, 3))
        )
        trips.append(BeliefTriplet(rng.choice(DOMAINS), rng.choice(SLOTS), value))
    return BeliefState(tuple(trips))
