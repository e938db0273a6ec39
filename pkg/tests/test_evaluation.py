import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from iva.errors import DomainError, FormatError
from iva.evaluation import (
    JudgeVerdict, aggregate, evaluate_model, judge_exact, judge_request_file, predict_answers,
    read_judge_responses, write_judge_requests,
)
from iva.features import generate_needle_dataset
from iva.host import IvaModel

from conftest import small_config


def test_exact_match():
    assert judge_exact([4, 5, 6], [4, 5, 6]) == JudgeVerdict(True, 5)
    assert judge_exact([4], [4]).answer == "yes"


def test_disjoint():
    v = judge_exact([1, 2], [3, 4])
    assert v == JudgeVerdict(False, 0) and v.answer == "no"


def test_half_prefix_rounds_up():
    assert judge_exact([1, 2, 9, 9], [1, 2, 3, 4]) == JudgeVerdict(False, 3)


def test_partial_scores_are_capped_below_five():
    # 9 of 10 tokens shared: 4.5 rounds to 5, capped to 4
    gold = list(range(10))
    assert judge_exact(gold[:9] + [99], gold) == JudgeVerdict(False, 4)
    # a longer prediction that contains the whole answer is still wrong
    assert judge_exact([1, 2, 3], [1, 2]) == JudgeVerdict(False, 4)
    assert judge_exact([], []) == JudgeVerdict(True, 5)
    assert judge_exact([1], []) == JudgeVerdict(False, 0)


@pytest.mark.parametrize("score", [-1, 6, 2.5])
def test_verdict_score_range(score):
    with pytest.raises(DomainError):
        JudgeVerdict(False, score)


def test_aggregate_two():
    r = aggregate([JudgeVerdict(True, 5), JudgeVerdict(False, 1)])
    assert (r.accuracy, r.mean_score, r.count) == (0.5, 3.0, 2)


def test_aggregate_all_yes():
    assert aggregate([JudgeVerdict(True, 5)] * 4).accuracy == 1.0


def test_aggregate_empty():
    with pytest.raises(DomainError):
        aggregate([])


TEN = [(True, 5), (False, 3), (True, 5), (False, 0), (False, 4),
       (True, 5), (False, 1), (False, 2), (True, 5), (False, 0)]


def test_ten_sample_fixture():
    r = aggregate([JudgeVerdict(c, s) for c, s in TEN])
    assert r.accuracy == 0.4          # 4 yes of 10
    assert r.mean_score == 3.0        # 30 / 10
    assert [rec["id"] for rec in r.records] == list(range(10))


def test_thousand_random_verdicts_recount():
    rng = np.random.default_rng(0)
    correct = rng.random(1000) < 0.37
    scores = np.where(correct, 5, rng.integers(0, 5, 1000))
    r = aggregate([JudgeVerdict(bool(c), int(s)) for c, s in zip(correct, scores)])
    yes = 0
    total = 0
    for c, s in zip(correct, scores):
        yes += 1 if c else 0
        total += int(s)
    assert r.accuracy == yes / 1000
    assert r.mean_score == total / 1000


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.booleans(), st.integers(0, 5)), min_size=1, max_size=40), st.randoms())
def test_aggregate_is_permutation_invariant(pairs, rnd):
    verdicts = {i: JudgeVerdict(c, s) for i, (c, s) in enumerate(pairs)}
    keys = list(verdicts)
    rnd.shuffle(keys)
    a = aggregate(verdicts)
    b = aggregate({k: verdicts[k] for k in keys})
    assert (a.accuracy, a.mean_score, a.records) == (b.accuracy, b.mean_score, b.records)
    assert 0 <= a.accuracy <= 1 and 0 <= a.mean_score <= 5


def test_report_json():
    report = json.loads(aggregate([JudgeVerdict(True, 5)]).to_json())
    assert report == {"accuracy": 1.0, "mean_score": 5.0, "count": 1,
                      "records": [{"id": 0, "correct": True, "score": 5}]}


def test_judge_file_protocol_matches_direct_aggregation(tmp_path):
    rows = [(0, [3, 9], [5], [5]), (1, [3, 8], [6, 7], [6, 1]), (2, [3, 9], [4], [7])]
    req, resp = str(tmp_path / "req.jsonl"), str(tmp_path / "resp.jsonl")
    write_judge_requests(req, rows)
    first = json.loads(open(req).readline())
    assert set(first) == {"id", "question", "prediction", "reference"}
    judge_request_file(req, resp)
    via_file = aggregate(read_judge_responses(resp))
    direct = aggregate([judge_exact(p, g) for _, _, p, g in rows])
    assert via_file == direct


def test_external_yes_no_responses(tmp_path):
    path = tmp_path / "r.jsonl"
    path.write_text('{"id": "b", "correct": "no", "score": 2}\n{"id": "a", "correct": "yes", "score": 5}\n')
    r = aggregate(read_judge_responses(str(path)))
    assert r.accuracy == 0.5 and r.mean_score == 3.5
    assert [rec["id"] for rec in r.records] == ["a", "b"]


def test_bad_response_line(tmp_path):
    path = tmp_path / "r.jsonl"
    path.write_text('{"id": 1, "correct": true}\n')
    with pytest.raises(FormatError, match="r.jsonl:1"):
        read_judge_responses(str(path))


def test_predictions_group_mixed_shapes():
    model = IvaModel(small_config(), seed=0)
    a = generate_needle_dataset(3, 2, 3, 8, 12, seed=0, num_classes=2, num_families=2)
    b = generate_needle_dataset(2, 3, 3, 8, 12, seed=1, num_classes=2, num_families=2)
    preds = predict_answers(model, a + b)
    assert len(preds) == 5 and all(len(p) == 1 for p in preds)
    single = [predict_answers(model, [s])[0] for s in a + b]
    assert preds == single
    report = evaluate_model(model, a + b)
    assert report.count == 5
