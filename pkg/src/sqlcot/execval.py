"""Execution-equivalence validation of SQL against registered databases.

A generated rationale is positive exactly when its final SQL and the gold
SQL produce identical result sets on the instance's database. "Identical"
means multiset equality of rows with positional columns, switching to
sequence equality when the gold query has a top-level ORDER BY.
"""

from __future__ import annotations

import hashlib
import logging
import math
import sqlite3
import time
from collections import Counter
from contextlib import closing
from dataclasses import dataclass, field

from .corpus import DatabaseRegistry, TrainInstance
from .rationale import CotRationale
from .sqllex import has_toplevel_order_by

logger = logging.getLogger(__name__)

DEFAULT_ROW_CAP = 100_000
# Progress-handler granularity in SQLite VM instructions; small enough that
# even tight loops notice the deadline within a few milliseconds.
_PROGRESS_OPCODES = 5_000

VERDICT_DETAILS = ("match", "result_mismatch", "final_sql_error", "final_sql_timeout")


class ExecutionError(Exception):
    """The engine rejected the statement (message preserved)."""


class ExecutionTimeout(ExecutionError):
    """The statement exceeded the registry's execution timeout."""


class TruncatedResultError(Exception):
    """A truncated result cannot be compared; raise the row cap."""


@dataclass
class ResultTable:
    column_count: int
    rows: list[tuple]
    truncated: bool = False


@dataclass
class StepExecution:
    index: int
    ok: bool
    error: str | None = None

    def to_dict(self) -> dict:
        return {"index": self.index, "ok": self.ok, "error": self.error}

    @classmethod
    def from_dict(cls, data: dict) -> "StepExecution":
        return cls(**data)


@dataclass
class Verdict:
    label: str  # positive | negative
    detail: str  # one of VERDICT_DETAILS
    step_execution: list[StepExecution] = field(default_factory=list)

    def __post_init__(self) -> None:
        if (self.label == "positive") != (self.detail == "match"):
            raise ValueError("label must be positive exactly when detail is match")

    @property
    def is_positive(self) -> bool:
        return self.label == "positive"

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "detail": self.detail,
            "step_execution": [s.to_dict() for s in self.step_execution],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Verdict":
        return cls(
            label=data["label"],
            detail=data["detail"],
            step_execution=[StepExecution.from_dict(s) for s in data.get("step_execution", [])],
        )


def canonical_value(value):
    """Canonicalize a cell: integral reals become ints, blobs become digests."""
    if isinstance(value, float) and math.isfinite(value) and value == int(value):
        return int(value)
    if isinstance(value, bytes):
        return "blob:sha256:" + hashlib.sha256(value).hexdigest()
    return value


def execute(
    db_id: str,
    sql: str,
    registry: DatabaseRegistry,
    row_cap: int = DEFAULT_ROW_CAP,
) -> ResultTable:
    """Run ``sql`` read-only against the registered database.

    Values are canonicalized; at most ``row_cap`` rows are returned and the
    ``truncated`` flag marks a hit cap. Write statements fail because the
    session is opened in read-only mode.
    """
    timeout = registry.timeout_for(db_id)
    deadline = time.monotonic() + timeout
    timed_out = False

    def _watchdog() -> int:
        nonlocal timed_out
        if time.monotonic() > deadline:
            timed_out = True
            return 1
        return 0

    with closing(registry.connect_readonly(db_id)) as conn:
        conn.set_progress_handler(_watchdog, _PROGRESS_OPCODES)
        try:
            cursor = conn.execute(sql)
            fetched = cursor.fetchmany(row_cap + 1)
        except sqlite3.Error as exc:
            if timed_out:
                raise ExecutionTimeout(f"query exceeded {timeout:g}s timeout") from exc
            raise ExecutionError(str(exc)) from exc
        truncated = len(fetched) > row_cap
        if truncated:
            fetched = fetched[:row_cap]
        rows = [tuple(canonical_value(v) for v in row) for row in fetched]
        column_count = len(cursor.description) if cursor.description else 0
    return ResultTable(column_count=column_count, rows=rows, truncated=truncated)


def _values_equal(a, b, epsilon: float) -> bool:
    if isinstance(a, (int, float)) and isinstance(b, (int, float)):
        return abs(a - b) <= epsilon
    return a == b


def _rows_equal(a: tuple, b: tuple, epsilon: float) -> bool:
    return len(a) == len(b) and all(_values_equal(x, y, epsilon) for x, y in zip(a, b))


def _sort_key(row: tuple):
    return tuple((value is None, type(value).__name__, str(value)) for value in row)


def compare_results(
    a: ResultTable,
    b: ResultTable,
    order_sensitive: bool = False,
    float_epsilon: float = 0.0,
) -> bool:
    """Exact result-set equality.

    Order-insensitive mode compares rows as multisets; order-sensitive mode
    as sequences. NULL equals NULL, and numeric equality follows the value
    canonicalization (so 2.0 == 2). A nonzero ``float_epsilon`` relaxes
    numeric comparison after canonical sorting (heuristic; default exact).
    """
    if a.truncated or b.truncated:
        raise TruncatedResultError("cannot compare truncated results; increase the row cap")
    if a.column_count != b.column_count:
        return False
    if len(a.rows) != len(b.rows):
        return False
    if float_epsilon == 0.0:
        if order_sensitive:
            return a.rows == b.rows
        return Counter(a.rows) == Counter(b.rows)
    rows_a, rows_b = a.rows, b.rows
    if not order_sensitive:
        rows_a = sorted(rows_a, key=_sort_key)
        rows_b = sorted(rows_b, key=_sort_key)
    return all(_rows_equal(x, y, float_epsilon) for x, y in zip(rows_a, rows_b))


def validate_cot(
    instance: TrainInstance,
    cot: CotRationale,
    registry: DatabaseRegistry,
    row_cap: int = DEFAULT_ROW_CAP,
    float_epsilon: float = 0.0,
) -> Verdict:
    """Label a rationale by executing its final SQL against the gold SQL.

    Every sql-bearing step is also executed and its outcome recorded, but
    only the final comparison decides the label: intermediate failures are
    reported, never penalized. Order-sensitive comparison is used exactly
    when the gold query carries a top-level ORDER BY.
    """
    cot.validate()
    order_sensitive = has_toplevel_order_by(instance.gold_sql)

    step_execution: list[StepExecution] = []
    final_error: str | None = None
    final_timeout = False
    final_result: ResultTable | None = None
    for step in cot.steps:
        if step.sql is None:
            continue
        is_final = step is cot.steps[-1]
        try:
            result = execute(instance.db_id, step.sql, registry, row_cap=row_cap)
            step_execution.append(StepExecution(index=step.index, ok=True))
            if is_final:
                final_result = result
        except ExecutionTimeout as exc:
            step_execution.append(StepExecution(index=step.index, ok=False, error=str(exc)))
            if is_final:
                final_timeout = True
                final_error = str(exc)
        except ExecutionError as exc:
            step_execution.append(StepExecution(index=step.index, ok=False, error=str(exc)))
            if is_final:
                final_error = str(exc)

    if final_result is None:
        detail = "final_sql_timeout" if final_timeout else "final_sql_error"
        logger.debug("instance %s: final SQL failed: %s", instance.instance_id, final_error)
        return Verdict(label="negative", detail=detail, step_execution=step_execution)

    gold_result = execute(instance.db_id, instance.gold_sql, registry, row_cap=row_cap)
    matched = compare_results(
        final_result, gold_result, order_sensitive=order_sensitive, float_epsilon=float_epsilon
    )
    if matched:
        return Verdict(label="positive", detail="match", step_execution=step_execution)
    return Verdict(label="negative", detail="result_mismatch", step_execution=step_execution)
