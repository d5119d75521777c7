from __future__ import annotations

import json

import pytest

from sqlcot.corpus import Difficulty, TrainInstance
from sqlcot.evalharness import (
    CategoryStat,
    EvalReport,
    PredictionError,
    diff_reports,
    load_predictions,
    reduce_prediction,
    score_predictions,
)
from sqlcot.rationalizer import procedural_rationalize
from sqlcot.rationale import serialize_cot


def _inst(instance_id, sql, difficulty):
    return TrainInstance(
        instance_id=instance_id,
        db_id="campus",
        question=f"question {instance_id}",
        gold_sql=sql,
        difficulty=Difficulty(difficulty),
    )


@pytest.fixture()
def eval_devset():
    return [
        _inst("e01", "SELECT first_name FROM prof WHERE popularity = 3", "simple"),
        _inst("e02", "SELECT f_name FROM student WHERE gpa > 3.5", "simple"),
        _inst("e03", "SELECT name FROM course WHERE credit = 3", "simple"),
        _inst("e04", "SELECT salary FROM ra WHERE prof_id = 1", "simple"),
        _inst("e05", "SELECT COUNT(*) FROM student", "moderate"),
        _inst("e06", "SELECT MAX(popularity) FROM prof", "moderate"),
        _inst("e07", "SELECT AVG(gpa) FROM student WHERE enrolled_year = 2021", "moderate"),
        _inst("e08", "SELECT capability FROM ra WHERE prof_id = 2", "moderate"),
        _inst(
            "e09",
            "SELECT f_name FROM student WHERE gpa > (SELECT AVG(gpa) FROM student)",
            "challenging",
        ),
        _inst(
            "e10",
            "SELECT course_id FROM registration GROUP BY course_id HAVING COUNT(*) >= 2",
            "challenging",
        ),
    ]


def test_self_scoring_is_perfect(toy_corpus, registry):
    predictions = {i.instance_id: i.gold_sql for i in toy_corpus}
    report = score_predictions(toy_corpus, predictions, registry)
    assert report.total.accuracy == 100.0
    assert all(stat.accuracy == 100.0 for stat in report.categories)


def test_empty_predictions_score_zero_missing(eval_devset, registry):
    report = score_predictions(eval_devset, {}, registry)
    assert report.total.accuracy == 0.0
    assert all(stat.accuracy == 0.0 for stat in report.categories)
    assert all(v.status == "missing" for v in report.verdicts)


def test_seeded_fixture_accuracies(eval_devset, registry):
    # 3/4 simple, 2/4 moderate, 1/2 challenging correct: one simple left
    # missing, the rest seeded wrong with executable-but-different queries.
    wrong = "SELECT 0"
    predictions = {
        "e01": eval_devset[0].gold_sql,
        "e02": eval_devset[1].gold_sql,
        "e03": eval_devset[2].gold_sql,
        # e04 missing
        "e05": eval_devset[4].gold_sql,
        "e06": eval_devset[5].gold_sql,
        "e07": wrong,
        "e08": "SELECT broken FROM nowhere",  # execution error counts incorrect
        "e09": eval_devset[8].gold_sql,
        "e10": wrong,
    }
    report = score_predictions(eval_devset, predictions, registry)
    by_name = {stat.category: stat for stat in report.categories}
    assert by_name["simple"].accuracy == 75.0
    assert by_name["moderate"].accuracy == 50.0
    assert by_name["challenging"].accuracy == 50.0
    assert report.total.accuracy == 60.0
    assert sum(stat.total for stat in report.categories) == len(eval_devset)
    statuses = {v.instance_id: v.status for v in report.verdicts}
    assert statuses["e04"] == "missing"
    assert statuses["e08"] == "error"


def test_cot_prediction_scores_like_its_final_sql(toy_corpus, registry):
    subset = toy_corpus[:6]
    cot_predictions = {}
    sql_predictions = {}
    for instance in subset:
        cot = procedural_rationalize(instance, registry)
        cot_predictions[instance.instance_id] = serialize_cot(cot)
        sql_predictions[instance.instance_id] = instance.gold_sql
    cot_report = score_predictions(subset, cot_predictions, registry)
    sql_report = score_predictions(subset, sql_predictions, registry)
    assert [v.status for v in cot_report.verdicts] == [v.status for v in sql_report.verdicts]


def test_reduce_prediction_raw_sql_passthrough():
    assert reduce_prediction("SELECT 1") == "SELECT 1"
    doc = "**Step 1: Plan**\n--\n\nGo.\n\n**Step 2: Final**\n--\n\n```sql\nSELECT 2\n```\n"
    assert reduce_prediction(doc) == "SELECT 2"


def test_accuracy_invariant_under_key_order(eval_devset, registry):
    predictions = {i.instance_id: i.gold_sql for i in eval_devset}
    reversed_predictions = dict(reversed(list(predictions.items())))
    a = score_predictions(eval_devset, predictions, registry)
    b = score_predictions(eval_devset, reversed_predictions, registry)
    assert a.to_dict() == b.to_dict()


def test_duplicate_prediction_key_is_error(tmp_path):
    path = tmp_path / "preds.jsonl"
    line = json.dumps({"instance_id": "a", "prediction": "SELECT 1"})
    path.write_text(line + "\n" + line + "\n", encoding="utf-8")
    with pytest.raises(PredictionError, match="duplicate"):
        load_predictions(path)


def test_unknown_prediction_key_is_error(eval_devset, registry):
    with pytest.raises(PredictionError, match="unknown instance ids"):
        score_predictions(eval_devset, {"ghost": "SELECT 1"}, registry)


# ---------------------------------------------------------------------------
# diff_reports


def _canned_report(simple, moderate, challenging, total,
                   counts=(925, 465, 144)) -> EvalReport:
    n_simple, n_moderate, n_challenging = counts
    n_total = sum(counts)
    return EvalReport(
        categories=[
            CategoryStat("simple", n_simple, round(n_simple * simple / 100), simple),
            CategoryStat("moderate", n_moderate, round(n_moderate * moderate / 100), moderate),
            CategoryStat("challenging", n_challenging, round(n_challenging * challenging / 100), challenging),
        ],
        total=CategoryStat("total", n_total, round(n_total * total / 100), total),
    )


def test_diff_of_identical_reports_is_zero(eval_devset, registry):
    predictions = {i.instance_id: i.gold_sql for i in eval_devset}
    report = score_predictions(eval_devset, predictions, registry)
    diff = diff_reports(report, report)
    assert diff.total_delta == 0.0
    assert all(d.delta == 0.0 for d in diff.deltas)
    assert diff.fixed == [] and diff.regressed == []


def test_diff_reproduces_published_delta_presentation():
    baseline = _canned_report(73.08, 58.06, 47.92, 66.17)
    with_rationales = _canned_report(73.41, 60.00, 52.78, 67.41)
    diff = diff_reports(baseline, with_rationales)
    assert diff.total_delta == 1.24
    assert diff.delta("challenging") == 4.86


def test_diff_flip_tracking_and_category_delta(eval_devset, registry):
    gold = {i.instance_id: i.gold_sql for i in eval_devset}
    worse = dict(gold)
    worse["e01"] = "SELECT 0"  # one simple instance of four flips wrong
    a = score_predictions(eval_devset, gold, registry)
    b = score_predictions(eval_devset, worse, registry)
    diff = diff_reports(a, b)
    assert diff.delta("simple") == -25.0
    assert diff.total_delta == -10.0
    assert diff.regressed == ["e01"] and diff.fixed == []
    reverse = diff_reports(b, a)
    assert reverse.delta("simple") == 25.0 and reverse.fixed == ["e01"]


def test_diff_rejects_mismatched_devsets(eval_devset, registry):
    report = score_predictions(eval_devset, {}, registry)
    other = _canned_report(50.0, 50.0, 50.0, 50.0)
    with pytest.raises(ValueError, match="different devsets"):
        diff_reports(report, other)
