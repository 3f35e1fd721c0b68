import json
import random

import pytest

from icldst.corpus import BeliefState, accumulate_states
from icldst.dst import Prediction
from icldst.errors import (
    EmptyEvaluationError,
    NonContiguousTurnsError,
    UnsupportedFormatError,
)
from icldst.evaluate import (
    ErrorKind,
    EvalReport,
    accumulate_predictions,
    domain_influence,
    domain_jga,
    error_counts,
    export_report,
    judge_turn,
    report_from_dict,
    report_to_dict,
)
from icldst.retriever import RetrievedSet
from icldst.similarity import Candidate


def st(pairs):
    return BeliefState.of(pairs)


# ---------------------------------------------------------------------------
# independent oracle over plain string dicts
# ---------------------------------------------------------------------------

def oracle_classify(pred: dict, gold: dict, target: str):
    """Returns (correct, ignore, spurious, wrong) via naive dict scanning."""
    pred_t = {k: v for k, v in pred.items() if k.startswith(target + "-")}
    gold_t = {k: v for k, v in gold.items() if k.startswith(target + "-")}
    ignore = sum(1 for k in gold_t if k not in pred_t)
    spurious = sum(1 for k in pred_t if k not in gold_t)
    wrong = sum(1 for k in gold_t if k in pred_t and pred_t[k] != gold_t[k])
    return (pred_t == gold_t, ignore, spurious, wrong)


DOMAINS = ["attraction", "hotel", "restaurant", "taxi", "train"]
VALUES = ["centre", "north", "cheap", "14:45", "dontcare", "museum", "2"]


def random_state_pair(rng):
    slots = [f"{d}-slot{i}" for d in DOMAINS for i in range(3)]
    gold = {s: rng.choice(VALUES) for s in rng.sample(slots, rng.randrange(0, 8))}
    pred = {}
    for slot, value in gold.items():
        roll = rng.random()
        if roll < 0.55:
            pred[slot] = value
        elif roll < 0.75:
            pred[slot] = rng.choice(VALUES)
        # else omitted -> ignore
    for slot in rng.sample(slots, rng.randrange(0, 4)):
        if slot not in pred:
            pred[slot] = rng.choice(VALUES)
    return pred, gold


# ---------------------------------------------------------------------------
# judge_turn
# ---------------------------------------------------------------------------

def test_judge_identity_is_correct():
    j = judge_turn(st({"attraction-area": "centre"}), st({"attraction-area": "centre"}),
                   "attraction")
    assert j.correct and j.errors == ()


def test_judge_spurious_extras():
    gold = st({"restaurant-name": "eraina"})
    pred = st({"restaurant-name": "eraina", "restaurant-food": "european",
               "restaurant-pricerange": "expensive"})
    j = judge_turn(pred, gold, "restaurant")
    assert not j.correct
    kinds = [e.kind for e in j.errors]
    assert kinds.count(ErrorKind.SPURIOUS) == 2 and len(kinds) == 2


def test_judge_wrong_and_ignore():
    wrong = judge_turn(st({"train-leave": "15:00"}), st({"train-leave": "14:45"}), "train")
    assert [e.kind for e in wrong.errors] == [ErrorKind.WRONG]
    assert wrong.errors[0].predicted.text == "15:00"
    assert wrong.errors[0].gold.text == "14:45"
    ignore = judge_turn(st({}), st({"train-leave": "14:45"}), "train")
    assert [e.kind for e in ignore.errors] == [ErrorKind.IGNORE]


def test_judge_off_domain_slots_never_matter():
    gold = st({"train-leave": "14:45"})
    base = judge_turn(st({"train-leave": "14:45"}), gold, "train")
    noisy = judge_turn(st({"train-leave": "14:45", "hotel-area": "west"}), gold, "train")
    assert base.correct and noisy.correct
    assert noisy.errors == base.errors


def test_judge_empty_equals_empty_is_correct():
    assert judge_turn(st({}), st({}), "taxi").correct


def test_judge_matches_oracle_on_randomized_pairs():
    rng = random.Random(123)
    for _ in range(1000):
        pred, gold = random_state_pair(rng)
        target = rng.choice(DOMAINS)
        j = judge_turn(st(pred), st(gold), target)
        kinds = [e.kind for e in j.errors]
        expected = oracle_classify(pred, gold, target)
        got = (j.correct, kinds.count(ErrorKind.IGNORE), kinds.count(ErrorKind.SPURIOUS),
               kinds.count(ErrorKind.WRONG))
        assert got == expected


def test_judge_swap_symmetry_randomized():
    rng = random.Random(321)
    for _ in range(1000):
        pred, gold = random_state_pair(rng)
        target = rng.choice(DOMAINS)
        forward = judge_turn(st(pred), st(gold), target)
        backward = judge_turn(st(gold), st(pred), target)
        fk = [e.kind for e in forward.errors]
        bk = [e.kind for e in backward.errors]
        assert fk.count(ErrorKind.IGNORE) == bk.count(ErrorKind.SPURIOUS)
        assert fk.count(ErrorKind.SPURIOUS) == bk.count(ErrorKind.IGNORE)
        assert fk.count(ErrorKind.WRONG) == bk.count(ErrorKind.WRONG)


def test_error_partition_counts_every_mismatch_once():
    rng = random.Random(55)
    for _ in range(1000):
        pred, gold = random_state_pair(rng)
        target = rng.choice(DOMAINS)
        j = judge_turn(st(pred), st(gold), target)
        pred_t = {k: v for k, v in pred.items() if k.startswith(target + "-")}
        gold_t = {k: v for k, v in gold.items() if k.startswith(target + "-")}
        gold_only = len(set(gold_t) - set(pred_t))
        pred_only = len(set(pred_t) - set(gold_t))
        conflicts = sum(1 for k in set(gold_t) & set(pred_t) if gold_t[k] != pred_t[k])
        assert len(j.errors) == gold_only + pred_only + conflicts
        assert len({e.slot for e in j.errors}) == len(j.errors)


# ---------------------------------------------------------------------------
# domain_jga
# ---------------------------------------------------------------------------

def make_judgement(correct, dialogue_id="d", turn_index=1):
    if correct:
        return judge_turn(st({}), st({}), "taxi", dialogue_id, turn_index)
    return judge_turn(st({}), st({"taxi-leave": "14:45"}), "taxi", dialogue_id, turn_index)


def test_jga_all_correct():
    assert domain_jga([make_judgement(True)] * 4) == 1.0


def test_jga_two_of_three():
    judgements = [make_judgement(True), make_judgement(True), make_judgement(False)]
    assert domain_jga(judgements) == pytest.approx(2 / 3, abs=1e-9)


def test_jga_empty_is_error():
    with pytest.raises(EmptyEvaluationError):
        domain_jga([])


def test_jga_permutation_invariant():
    rng = random.Random(9)
    judgements = [make_judgement(rng.random() < 0.5) for _ in range(40)]
    value = domain_jga(judgements)
    for _ in range(10):
        rng.shuffle(judgements)
        assert domain_jga(judgements) == value


# ---------------------------------------------------------------------------
# accumulate_predictions
# ---------------------------------------------------------------------------

def make_pred(turn_index, pairs):
    return Prediction("d1", turn_index, st(pairs), raw_response="", retrieved_method="self")


def test_accumulate_single_turn():
    out = accumulate_predictions([make_pred(1, {"taxi-leave": "14:45"})])
    assert out == [(1, st({"taxi-leave": "14:45"}))]


def test_accumulate_fold_carries_slots_forward():
    out = accumulate_predictions([
        make_pred(1, {"taxi-leave": "14:45"}),
        make_pred(2, {"taxi-destination": "curry garden"}),
    ])
    assert out[1] == (2, st({"taxi-leave": "14:45", "taxi-destination": "curry garden"}))


def test_accumulate_fold_equals_from_scratch():
    rng = random.Random(77)
    slots = [f"taxi-s{i}" for i in range(5)] + [f"train-s{i}" for i in range(5)]
    preds = [
        make_pred(t + 1, {rng.choice(slots): rng.choice(VALUES)
                          for _ in range(rng.randrange(0, 4))})
        for t in range(12)
    ]
    out = accumulate_predictions(preds)
    for t, state in out:
        scratch = accumulate_states([p.predicted_turn_state for p in preds[:t]])
        assert state == scratch


def test_accumulate_rejects_gaps():
    with pytest.raises(NonContiguousTurnsError):
        accumulate_predictions([make_pred(1, {}), make_pred(3, {})])


# ---------------------------------------------------------------------------
# domain_influence
# ---------------------------------------------------------------------------

def make_set(labels):
    chosen = tuple(
        Candidate(i, (f"d{i}", 1), f"u{i}", st(label), 1.0)
        for i, label in enumerate(labels)
    )
    return RetrievedSet(chosen, (), method="self")


def test_influence_counts_distinct_domains_per_candidate():
    retrieved = make_set([
        {"taxi-leave": "14:45"},
        {"train-day": "thursday", "train-leave": "14:45"},
    ])
    assert domain_influence([retrieved]) == {"taxi": 1, "train": 1}


def test_influence_empty_labels_contribute_nothing():
    assert domain_influence([make_set([{}])]) == {}


def test_influence_multi_domain_label_counts_each_domain():
    retrieved = make_set([{"taxi-leave": "14:45", "train-day": "monday"}])
    assert domain_influence([retrieved]) == {"taxi": 1, "train": 1}


def test_influence_totals_match_recount():
    rng = random.Random(31)
    sets = []
    for _ in range(50):
        labels = []
        for _ in range(rng.randrange(0, 4)):
            labels.append({f"{rng.choice(DOMAINS)}-a": "x" for _ in range(rng.randrange(0, 3))})
        sets.append(make_set(labels))
    got = domain_influence(sets)
    recount: dict[str, int] = {}
    for s in sets:
        for cand in s.chosen:
            for domain in {name.domain for name in cand.label}:
                recount[domain] = recount.get(domain, 0) + 1
    assert got == recount


# ---------------------------------------------------------------------------
# export_report
# ---------------------------------------------------------------------------

def make_report():
    judgements = (
        judge_turn(st({"taxi-leave": "14:45"}), st({"taxi-leave": "14:45"}), "taxi", "d1", 1),
        judge_turn(st({}), st({"taxi-leave": "14:45"}), "taxi", "d1", 2),
        judge_turn(st({"taxi-leave": "15:00"}), st({"taxi-leave": "14:45"}), "taxi", "d2", 1),
    )
    return EvalReport(
        target_domain="taxi",
        n_turns=3,
        domain_jga=domain_jga(judgements),
        error_counts=error_counts(judgements),
        domain_influence={"train": 2, "hotel": 1},
        config={"method": "self", "k": 20, "m": 3},
        judgements=judgements,
        n_failed_predictions=1,
        n_dropped_slots=2,
    )


def test_export_json_round_trip():
    report = make_report()
    blob = export_report(report, "json")
    reloaded = report_from_dict(json.loads(blob))
    assert report_to_dict(reloaded) == report_to_dict(report)


def test_export_json_is_deterministic():
    assert export_report(make_report(), "json") == export_report(make_report(), "json")


def test_export_markdown_has_row_and_avg():
    text = export_report(make_report(), "markdown-summary").decode()
    assert "| method | taxi | avg |" in text
    assert "| self | 33.3 | 33.3 |" in text


def test_export_csv_one_row_per_turn():
    lines = export_report(make_report(), "csv-judgements").decode().splitlines()
    assert lines[0] == "dialogue_id,turn_index,correct,n_ignore,n_spurious,n_wrong"
    assert len(lines) == 1 + 3
    assert lines[1] == "d1,1,1,0,0,0"
    assert lines[2] == "d1,2,0,1,0,0"
    assert lines[3] == "d2,1,0,0,0,1"


def test_export_unknown_format():
    with pytest.raises(UnsupportedFormatError):
        export_report(make_report(), "xml")


# ---------------------------------------------------------------------------
# replayed over-prediction fixtures (prediction text -> parse -> judge)
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("response,gold,target,n_spurious", [
    ('{"restaurant-name": "Eraina", "restaurant-food": "European", '
     '"restaurant-pricerange": "expensive"}',
     {"restaurant-name": "eraina"}, "restaurant", 2),
    ('{"attraction-name": "wandlebury country park", "attraction-area": "south", '
     '"attraction-type": "park"}',
     {"attraction-name": "wandlebury country park"}, "attraction", 2),
    ('{"restaurant-area": "west", "restaurant-pricerange": "cheap"}',
     {}, "restaurant", 2),
])
def test_overprediction_cases_classify_as_spurious(response, gold, target, n_spurious):
    from icldst.dst import parse_dst_response

    pred = parse_dst_response(response)
    j = judge_turn(pred, st(gold), target)
    assert not j.correct
    kinds = [e.kind for e in j.errors]
    assert kinds.count(ErrorKind.SPURIOUS) == n_spurious
    assert len(kinds) == n_spurious
