import math
import random

import pytest

from oracles import brute_bleu
from strategies import random_belief
from todseq.database import EntityRow
from todseq.evaluator import (
    DialogueOutcome,
    MetricsReport,
    bleu,
    combined_score,
    inform_success,
    joint_goal_accuracy,
)
from todseq.schema import BeliefState, BeliefTriplet, DomainGoal

# Hand-derived corpus BLEU-4 fixture.
#   pair 1: "the cat sat on the mat" vs "the cat is on the mat"
#     1-grams 5/6 (the x2, cat, on, mat), 2-grams 3/5 (the cat, on the, the mat),
#     3-grams 1/4 (on the mat), 4-grams 0/3
#   pair 2: "there is a big dog" vs "there is a big dog here"
#     1-grams 5/5, 2-grams 4/4, 3-grams 3/3, 4-grams 2/2
#   corpus precisions: 10/11, 7/9, 4/7, 2/5 -> product 16/99
#   lengths: candidate 11, reference 12 -> brevity penalty exp(1 - 12/11) = exp(-1/11)
#   BLEU = 100 * exp(-1/11) * (16/99) ** (1/4)
FIXTURE_CANDIDATES = ["the cat sat on the mat", "there is a big dog"]
FIXTURE_REFERENCES = ["the cat is on the mat", "there is a big dog here"]
FIXTURE_BLEU = 57.894842991350174


def test_bleu_fixture():
    assert abs(FIXTURE_BLEU - 100 * math.exp(-1 / 11) * (16 / 99) ** 0.25) < 1e-12
    assert abs(bleu(FIXTURE_CANDIDATES, FIXTURE_REFERENCES) - FIXTURE_BLEU) < 1e-9


def test_bleu_identity_and_zero():
    assert bleu(["a b c d e"], ["a b c d e"]) == pytest.approx(100.0, abs=1e-12)
    assert bleu(["x y z w"], ["a b c d"]) == 0.0
    with pytest.raises(ValueError):
        bleu([], [])
    with pytest.raises(ValueError):
        bleu(["a"], [])


def test_bleu_matches_brute_force_and_is_order_invariant():
    rng = random.Random(4)
    words = "a b c d e f".split()
    for _ in range(100):
        n = rng.randint(1, 5)
        cands = [" ".join(rng.choice(words) for _ in range(rng.randint(1, 12))) for _ in range(n)]
        refs = [" ".join(rng.choice(words) for _ in range(rng.randint(1, 12))) for _ in range(n)]
        got = bleu(cands, refs)
        assert abs(got - brute_bleu(cands, refs)) < 1e-9
        order = list(range(n))
        rng.shuffle(order)
        assert abs(bleu([cands[i] for i in order], [refs[i] for i in order]) - got) < 1e-9


def test_combined_examples():
    assert abs(combined_score(84.4, 70.1, 15.01) - 92.26) < 1e-9
    assert abs(combined_score(85, 70.5, 15.23) - 92.98) < 1e-9
    assert combined_score(0, 0, 0) == 0


def test_joint_accuracy_exact_match():
    gold = [BeliefState.of(("train", "day", "monday"))] * 4
    pred = list(gold)
    pred[2] = gold[2].with_value("train", "destination", "ely")
    assert joint_goal_accuracy(gold, gold) == 1.0
    assert joint_goal_accuracy(pred, gold) == 0.75
    with pytest.raises(ValueError):
        joint_goal_accuracy(pred[:3], gold)


def test_joint_accuracy_matches_set_oracle():
    rng = random.Random(11)
    for _ in range(100):
        n = rng.randint(1, 6)
        gold = [random_belief(rng) for _ in range(n)]
        pred = []
        for g in gold:
            trips = list(g.triplets)
            if trips and rng.random() < 0.5:
                trips.pop(rng.randrange(len(trips)))
            if rng.random() < 0.3:
                trips.append(BeliefTriplet("hotel", "area", "east"))
            rng.shuffle(trips)
            pred.append(BeliefState(tuple(trips)))
        expect = sum(set(p.triplets) == set(g.triplets) for p, g in zip(pred, gold)) / n
        assert joint_goal_accuracy(pred, gold) == expect


ROW = EntityRow.make("restaurant", {"name": "pipasha", "area": "east", "food": "indian", "phone": "01223555000"})


def test_inform_but_not_success():
    goal = {"restaurant": DomainGoal({"area": "east"}, ["phone"])}
    out = DialogueOutcome(goal, {"restaurant": ROW}, ["pipasha is in the east ."])
    assert inform_success([out])[:2] == (100.0, 0.0)
    out.responses.append("the phone number is 01223555000 .")
    assert inform_success([out])[:2] == (100.0, 100.0)


def test_wrong_or_missing_entity():
    goal = {"restaurant": DomainGoal({"area": "north"})}
    assert inform_success([DialogueOutcome(goal, {"restaurant": ROW}, [])])[:2] == (0.0, 0.0)
    assert inform_success([DialogueOutcome(goal, {}, [])])[:2] == (0.0, 0.0)


def test_missing_goal_skipped_with_flag():
    inform, success, flags = inform_success([DialogueOutcome(None, {}, [])])
    assert (inform, success) == (0.0, 0.0) and len(flags) == 1


def test_inform_success_matches_brute_force():
    rng = random.Random(5)
    rows = [EntityRow.make("restaurant", {"name": f"n{i}", "area": rng.choice("ab"), "phone": f"p{i}"})
            for i in range(6)]
    outcomes, expect = [], [0, 0, 0]
    for _ in range(200):
        goal = {"restaurant": DomainGoal({"area": rng.choice("ab")}, rng.choice([[], ["phone"]]))}
        row = rng.choice(rows + [None])
        responses = [f"call {rng.choice(rows)['phone']} now" for _ in range(rng.randint(0, 2))]
        outcomes.append(DialogueOutcome(goal, {"restaurant": row} if row else {}, responses))
        expect[2] += 1
        if row is None or row["area"] != goal["restaurant"].info["area"]:
            continue
        expect[0] += 1
        said = " ".join(" " + r + " " for r in responses)
        if all(f" {row[s]} " in said for s in goal["restaurant"].reqt):
            expect[1] += 1
    inform, success, _ = inform_success(outcomes)
    assert inform == 100 * expect[0] / expect[2]
    assert success == 100 * expect[1] / expect[2]
    assert success <= inform


def test_report_serializations():
    r = MetricsReport(0.5, 80.0, 70.0, 20.0, combined_score(80, 70, 20), turns=4, dialogues=2)
    lines = r.to_csv_line().splitlines()
    assert lines[0].startswith("joint_accuracy,inform")
    assert lines[1].split(",")[4] == "95.0"
    assert '"combined": 95.0' in r.to_json()
