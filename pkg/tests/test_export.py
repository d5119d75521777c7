from __future__ import annotations

import json

import pytest

from sqlcot.export import (
    ExportError,
    StageSpec,
    coverage_report,
    export_finetune_set,
    round_percentage,
    select_cot_variant,
)
from sqlcot.rationale import parse_cot
from sqlcot.repository import CotRepository
from tests.conftest import make_positive_record


# ---------------------------------------------------------------------------
# select_cot_variant


def test_single_record_is_both_variants(vocab):
    record = make_positive_record("a", vocab=vocab)
    assert select_cot_variant([record], "cot_short") is record
    assert select_cot_variant([record], "cot_long") is record


def test_extremal_step_counts(vocab):
    records = [
        make_positive_record("a", steps=5, vocab=vocab),
        make_positive_record("a", steps=3, vocab=vocab),
        make_positive_record("a", steps=6, vocab=vocab),
    ]
    assert select_cot_variant(records, "cot_short") is records[1]
    assert select_cot_variant(records, "cot_long") is records[2]


def test_char_count_breaks_step_ties(vocab):
    short_prose = make_positive_record("a", steps=4, prose="tiny.", vocab=vocab)
    long_prose = make_positive_record("a", steps=4, prose="much " * 60 + "longer.", vocab=vocab)
    assert select_cot_variant([short_prose, long_prose], "cot_short") is short_prose
    assert select_cot_variant([short_prose, long_prose], "cot_long") is long_prose


def test_full_tie_resolved_by_key_deterministically(vocab):
    a = make_positive_record("a", "SELECT 1", steps=3, vocab=vocab)
    b = make_positive_record("b", "SELECT 1", steps=3, vocab=vocab)
    assert len(a.cot_markdown) == len(b.cot_markdown)
    picked = select_cot_variant([a, b], "cot_short")
    assert picked is (a if a.key < b.key else b)


def test_empty_record_set_is_error():
    with pytest.raises(ExportError):
        select_cot_variant([], "cot_short")


# ---------------------------------------------------------------------------
# export_finetune_set


@pytest.fixture()
def covered_repo(toy_corpus, vocab):
    repo = CotRepository()
    for instance in toy_corpus:
        repo.add(make_positive_record(instance.instance_id, instance.gold_sql, steps=3, vocab=vocab))
        repo.add(make_positive_record(instance.instance_id, instance.gold_sql, steps=4, vocab=vocab))
    return repo


def test_gold_export_targets_are_sql(tmp_path, toy_corpus, covered_repo, registry):
    out = tmp_path / "gold.jsonl"
    count = export_finetune_set(toy_corpus[:3], covered_repo, "gold", "covered_only", out, registry)
    assert count == 3
    rows = [json.loads(line) for line in out.read_text().splitlines()]
    assert [r["target"] for r in rows] == [i.gold_sql for i in toy_corpus[:3]]
    assert all(set(r) == {"instance_id", "input", "target", "variant", "difficulty"} for r in rows)
    assert all(r["variant"] == "gold" for r in rows)


def test_cot_long_export_uses_longest(tmp_path, toy_corpus, covered_repo, registry):
    out = tmp_path / "cot_long.jsonl"
    export_finetune_set(toy_corpus[:3], covered_repo, "cot_long", "covered_only", out, registry)
    rows = [json.loads(line) for line in out.read_text().splitlines()]
    for row in rows:
        assert len(parse_cot(row["target"]).steps) == 4


def test_full_scope_requires_complete_coverage(tmp_path, toy_corpus, registry, vocab):
    repo = CotRepository()
    for instance in toy_corpus[:-2]:
        repo.add(make_positive_record(instance.instance_id, instance.gold_sql, vocab=vocab))
    with pytest.raises(ExportError, match="full scope requires complete coverage"):
        export_finetune_set(toy_corpus, repo, "cot_short", "full", tmp_path / "x.jsonl", registry)
    # The gold baseline has no such requirement.
    count = export_finetune_set(toy_corpus, repo, "gold", "full", tmp_path / "g.jsonl", registry)
    assert count == len(toy_corpus)


def test_covered_only_scope_drops_uncovered(tmp_path, toy_corpus, registry, vocab):
    repo = CotRepository()
    for instance in toy_corpus[:10]:
        repo.add(make_positive_record(instance.instance_id, instance.gold_sql, vocab=vocab))
    out = tmp_path / "short.jsonl"
    count = export_finetune_set(toy_corpus, repo, "cot_short", "covered_only", out, registry)
    assert count == 10


def test_export_determinism(tmp_path, toy_corpus, covered_repo, registry):
    out1 = tmp_path / "a.jsonl"
    out2 = tmp_path / "b.jsonl"
    export_finetune_set(toy_corpus, covered_repo, "cot_long", "full", out1, registry)
    export_finetune_set(toy_corpus, covered_repo, "cot_long", "full", out2, registry)
    assert out1.read_bytes() == out2.read_bytes()


def test_short_never_longer_than_long(toy_corpus, covered_repo):
    for instance in toy_corpus:
        records = covered_repo.positives_for(instance.instance_id)
        short = select_cot_variant(records, "cot_short")
        long = select_cot_variant(records, "cot_long")
        assert len(parse_cot(short.cot_markdown).steps) <= len(parse_cot(long.cot_markdown).steps)


# ---------------------------------------------------------------------------
# coverage_report


def test_rounding_half_up():
    assert round_percentage(1, 3) == 33.33
    assert round_percentage(2, 3) == 66.67
    assert round_percentage(1, 8) == 12.5
    assert round_percentage(0, 0) == 0.0
    # Half-up at the boundary: 0.125 of 100% style cases.
    assert round_percentage(1005, 2000) == 50.25
    assert round_percentage(4684, 8807) == 53.18
    assert round_percentage(6505, 8807) == 73.86
    assert round_percentage(8721, 8807) == 99.02


def test_empty_repo_reports_zero_for_each_stage(toy_corpus):
    report = coverage_report(toy_corpus, CotRepository())
    assert [row.percentage for row in report.rows] == [0.0, 0.0, 0.0]
    assert all(row.total == len(toy_corpus) for row in report.rows)


def test_stage_attribution_is_cumulative(toy_corpus, vocab):
    repo = CotRepository()
    ids = [i.instance_id for i in toy_corpus]
    for instance_id in ids[:6]:
        repo.add(make_positive_record(instance_id, iteration=0, decoding="manual", vocab=vocab))
    for instance_id in ids[6:20]:
        repo.add(make_positive_record(instance_id, iteration=1, decoding="greedy", vocab=vocab))
    for instance_id in ids[20:24]:
        repo.add(make_positive_record(instance_id, iteration=2, decoding="sampling", vocab=vocab))
    for instance_id in ids[24:]:
        repo.add(make_positive_record(instance_id, iteration=3, decoding="rationalizer", vocab=vocab))
    report = coverage_report(toy_corpus, repo)
    assert [row.covered for row in report.rows] == [6, 24, 30]
    percentages = [row.percentage for row in report.rows]
    assert percentages == sorted(percentages)  # never decreasing across stages
    assert report.rows[0].stage == "Manual Few-shot"


def test_hand_counted_toy_percentages(toy_corpus, vocab):
    repo = CotRepository()
    for instance in toy_corpus[:9]:
        repo.add(
            make_positive_record(instance.instance_id, iteration=1, decoding="greedy", vocab=vocab)
        )
    report = coverage_report(toy_corpus, repo)
    dynamic_row = report.rows[1]
    assert dynamic_row.covered == 9
    assert dynamic_row.percentage == round_percentage(9, 30) == 30.0


def test_custom_stage_labels_render(toy_corpus, vocab):
    repo = CotRepository()
    repo.add(make_positive_record("c01", iteration=0, decoding="manual", vocab=vocab))
    stages = (
        StageSpec("manual", "Seeding", "Model-A"),
        StageSpec("dynamic", "Loop", "Model-A"),
        StageSpec("rationalizer", "Backfill", "Model-B"),
    )
    report = coverage_report(toy_corpus, repo, stages)
    table = report.render_table()
    assert "Seeding" in table and "Model-B" in table
    assert f"{report.rows[0].percentage:.2f}" in table


def test_negative_records_do_not_count(toy_corpus, vocab):
    import dataclasses

    from sqlcot.execval import Verdict

    repo = CotRepository()
    record = make_positive_record("c01", vocab=vocab)
    negative = dataclasses.replace(
        record, verdict=Verdict(label="negative", detail="result_mismatch")
    )
    repo.add(negative)
    report = coverage_report(toy_corpus, repo)
    assert all(row.covered == 0 for row in report.rows)
