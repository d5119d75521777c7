from __future__ import annotations

import random


import pytest

from sqlcot.corpus import DatabaseRegistry
from sqlcot.execval import (
    ExecutionError,
    ExecutionTimeout,
    ResultTable,
    TruncatedResultError,
    Verdict,
    canonical_value,
    compare_results,
    execute,
    validate_cot,
)
from sqlcot.rationale import parse_cot

APPENDIX_FINAL_SQL = (
    "SELECT COUNT(ra.student_id) AS num_students "
    "FROM prof JOIN ra ON prof.prof_id = ra.prof_id "
    "WHERE prof.popularity = (SELECT MAX(popularity) FROM prof) AND ra.capability = 5"
)


# ---------------------------------------------------------------------------
# execute


def test_execute_select_constant(registry):
    result = execute("campus", "SELECT 1", registry)
    assert result.column_count == 1
    assert result.rows == [(1,)]
    assert not result.truncated


def test_execute_error_preserves_engine_message(registry):
    with pytest.raises(ExecutionError, match="no such table"):
        execute("campus", "SELECT * FROM nonexistent", registry)


def test_execute_appendix_final_on_seeded_fixture(registry):
    # Two professors share max popularity; exactly two of their advisees
    # have capability 5 (hand-enumerated in the fixture data).
    result = execute("campus", APPENDIX_FINAL_SQL, registry)
    assert result.rows == [(2,)]


def test_execute_rejects_writes(registry):
    with pytest.raises(ExecutionError, match="readonly"):
        execute("campus", "DELETE FROM prof", registry)


def test_execute_timeout(db_dir):
    registry = DatabaseRegistry(
        databases={"campus": db_dir / "campus.sqlite"}, timeout=0.2
    )
    slow = (
        "WITH RECURSIVE c(x) AS (SELECT 1 UNION ALL SELECT x + 1 FROM c WHERE x < 50000000) "
        "SELECT COUNT(*) FROM c"
    )
    with pytest.raises(ExecutionTimeout):
        execute("campus", slow, registry)


def test_execute_row_cap_sets_truncated(registry):
    result = execute("campus", "SELECT * FROM student", registry, row_cap=3)
    assert result.truncated and len(result.rows) == 3


def test_canonical_value_rules():
    assert canonical_value(2.0) == 2 and isinstance(canonical_value(2.0), int)
    assert canonical_value(2.5) == 2.5
    assert canonical_value(None) is None
    assert canonical_value(b"abc").startswith("blob:sha256:")
    assert canonical_value("text") == "text"


# ---------------------------------------------------------------------------
# compare_results: examples + brute-force oracle


def _table(rows, columns=None):
    return ResultTable(column_count=columns if columns is not None else (len(rows[0]) if rows else 0), rows=rows)


def test_compare_reflexive(registry):
    result = execute("campus", "SELECT * FROM prof", registry)
    assert compare_results(result, result)
    assert compare_results(result, result, order_sensitive=True)


def test_compare_permutation_case():
    a = _table([(1,), (2,)], 1)
    b = _table([(2,), (1,)], 1)
    assert compare_results(a, b)
    assert not compare_results(a, b, order_sensitive=True)


def test_compare_null_equals_null_and_numeric_canon():
    a = _table([(None, 2)], 2)
    b = _table([(None, 2.0)], 2)
    b.rows = [tuple(canonical_value(v) for v in row) for row in b.rows]
    assert compare_results(a, b)


def test_compare_truncated_is_error():
    a = _table([(1,)], 1)
    b = ResultTable(column_count=1, rows=[(1,)], truncated=True)
    with pytest.raises(TruncatedResultError):
        compare_results(a, b)


def test_compare_column_count_mismatch():
    assert not compare_results(_table([(1,)], 1), _table([(1, 2)], 2))


def _oracle_multiset_equal(a: ResultTable, b: ResultTable) -> bool:
    """Canonical-sort brute force: stringify every cell, sort, compare."""
    if a.column_count != b.column_count or len(a.rows) != len(b.rows):
        return False

    def keyed(rows):
        return sorted(tuple((v is None, type(v).__name__, repr(v)) for v in row) for row in rows)

    return keyed(a.rows) == keyed(b.rows)


def _random_table(rng: random.Random, columns=None, rows=None) -> ResultTable:
    columns = columns if columns is not None else rng.randint(1, 6)
    rows = rows if rows is not None else rng.randint(0, 50)
    pool = [1, 2, 0, -3, 2.5, "x", "yy", None, 7, "z"]
    data = [
        tuple(canonical_value(rng.choice(pool)) for _ in range(columns)) for _ in range(rows)
    ]
    # Inject duplicate rows often.
    if rows >= 2 and rng.random() < 0.5:
        data[rng.randrange(rows)] = data[rng.randrange(rows)]
    return ResultTable(column_count=columns, rows=data)


def test_compare_matches_sort_oracle_on_random_tables():
    rng = random.Random(2024)
    tables = [_random_table(rng) for _ in range(200)]
    for i in range(0, len(tables) - 1, 2):
        a, b = tables[i], tables[i + 1]
        assert compare_results(a, b) == _oracle_multiset_equal(a, b)
    # Mutated near-duplicates exercise the equal/unequal boundary.
    for _ in range(50):
        a = _random_table(rng, columns=3, rows=8)
        b = ResultTable(column_count=3, rows=list(a.rows))
        if rng.random() < 0.5 and b.rows:
            row = list(b.rows[0])
            row[0] = "mutated"
            b.rows[0] = tuple(row)
        assert compare_results(a, b) == _oracle_multiset_equal(a, b)


def test_compare_invariant_under_shuffle():
    rng = random.Random(99)
    for _ in range(100):
        table = _random_table(rng, columns=rng.randint(1, 4), rows=rng.randint(1, 30))
        shuffled = ResultTable(column_count=table.column_count, rows=list(table.rows))
        rng.shuffle(shuffled.rows)
        assert compare_results(table, shuffled)


# ---------------------------------------------------------------------------
# validate_cot


def _cot_for(sql: str, plan="Plan the query."):
    return parse_cot(
        f"**Step 1: Plan**\n--\n\n{plan}\n\n**Step 2: Final**\n--\n\n```sql\n{sql}\n```\n"
    )


def test_identical_final_sql_is_positive(corpus_index, registry):
    instance = corpus_index["c01"]
    verdict = validate_cot(instance, _cot_for(instance.gold_sql), registry)
    assert verdict.label == "positive" and verdict.detail == "match"


def test_different_column_set_is_negative(corpus_index, registry):
    instance = corpus_index["c01"]
    verdict = validate_cot(instance, _cot_for("SELECT last_name FROM prof WHERE popularity = 3"), registry)
    assert verdict.label == "negative" and verdict.detail == "result_mismatch"


def test_final_sql_error_detail(corpus_index, registry):
    instance = corpus_index["c01"]
    verdict = validate_cot(instance, _cot_for("SELECT nope FROM prof"), registry)
    assert verdict.detail == "final_sql_error"
    assert not verdict.is_positive


def test_appendix_rationale_validates_on_fixture(appendix_doc, corpus_index, registry):
    cot = parse_cot(appendix_doc)
    instance = corpus_index["c11"]  # gold equals the rationale's final SQL
    verdict = validate_cot(instance, cot, registry)
    assert verdict.is_positive
    executed = {s.index: s.ok for s in verdict.step_execution}
    assert executed == {2: True, 3: True, 4: True, 5: True, 6: True}


def test_intermediate_failure_does_not_flip_label(corpus_index, registry):
    instance = corpus_index["c01"]
    doc = (
        "**Step 1: Plan**\n--\n\nPlan.\n\n"
        "**Step 2: Broken intermediate**\n--\n\n```sql\nSELECT broken FROM prof\n```\n\n"
        f"**Step 3: Final**\n--\n\n```sql\n{instance.gold_sql}\n```\n"
    )
    verdict = validate_cot(instance, parse_cot(doc), registry)
    assert verdict.is_positive
    assert [s.ok for s in verdict.step_execution] == [False, True]
    assert verdict.step_execution[0].error


def test_order_sensitive_only_for_ordered_gold(corpus_index, registry):
    ordered = corpus_index["s08"]  # gold has a top-level ORDER BY
    # Same three rows, emitted in the opposite order: equal as multisets but
    # not as sequences, so the ordered gold must reject it.
    reversed_sql = (
        "SELECT product FROM (SELECT product, unit_price FROM order_items "
        "ORDER BY unit_price DESC LIMIT 3) ORDER BY unit_price ASC"
    )
    verdict = validate_cot(ordered, _cot_for(reversed_sql), registry)
    assert verdict.detail == "result_mismatch"
    unordered = corpus_index["c01"]
    scrambled = "SELECT first_name FROM prof WHERE popularity = 3 ORDER BY first_name DESC"
    assert validate_cot(unordered, _cot_for(scrambled), registry).is_positive


def test_verdict_label_detail_consistency():
    with pytest.raises(ValueError):
        Verdict(label="positive", detail="result_mismatch")


def test_compare_with_float_epsilon():
    a = _table([(1.0001, "x")], 2)
    b = _table([(1.0002, "x")], 2)
    assert not compare_results(a, b)
    assert compare_results(a, b, float_epsilon=0.001)
    assert compare_results(_table([(2,), (1.0001,)], 1), _table([(1.0002,), (2,)], 1), float_epsilon=0.001)
