"""Execution accuracy of prediction files against a dev corpus.

Predictions may be raw SQL or full rationale Markdown; anything that parses
as a rationale is reduced to its final SQL before scoring. Accuracy is
reported per difficulty category and in total, with explicit counts so the
numbers can always be re-derived.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .corpus import DatabaseRegistry, TrainInstance
from .export import round_percentage
from .execval import ExecutionError, compare_results, execute
from .rationale import CotParseError, final_sql, parse_cot
from .sqllex import has_toplevel_order_by

logger = logging.getLogger(__name__)

CATEGORY_ORDER = ("simple", "moderate", "challenging", "unknown")


class PredictionError(Exception):
    """Malformed prediction file: bad record, duplicate or unknown key."""


def load_predictions(path: str | Path) -> dict[str, str]:
    """Read the JSONL prediction format {instance_id, prediction}."""
    predictions: dict[str, str] = {}
    for line_no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
            instance_id = str(record["instance_id"])
            prediction = str(record["prediction"])
        except (json.JSONDecodeError, KeyError) as exc:
            raise PredictionError(f"line {line_no}: malformed prediction record: {exc}") from exc
        if instance_id in predictions:
            raise PredictionError(f"line {line_no}: duplicate prediction key {instance_id!r}")
        predictions[instance_id] = prediction
    return predictions


def reduce_prediction(text: str) -> str:
    """Auto-detect the prediction format: rationale Markdown reduces to its
    final SQL, anything else is treated as raw SQL."""
    try:
        return final_sql(parse_cot(text))
    except CotParseError:
        return text


@dataclass
class InstanceVerdict:
    instance_id: str
    difficulty: str
    status: str  # correct | incorrect | error | missing
    detail: str = ""

    @property
    def correct(self) -> bool:
        return self.status == "correct"

    def to_dict(self) -> dict:
        return {
            "instance_id": self.instance_id,
            "difficulty": self.difficulty,
            "status": self.status,
            "detail": self.detail,
        }


@dataclass
class CategoryStat:
    category: str
    total: int
    correct: int
    accuracy: float

    def to_dict(self) -> dict:
        return {
            "category": self.category,
            "total": self.total,
            "correct": self.correct,
            "accuracy": self.accuracy,
        }


@dataclass
class EvalReport:
    categories: list[CategoryStat]
    total: CategoryStat
    verdicts: list[InstanceVerdict] = field(default_factory=list)

    def category(self, name: str) -> CategoryStat | None:
        for stat in self.categories:
            if stat.category == name:
                return stat
        return None

    def to_dict(self) -> dict:
        return {
            "categories": [c.to_dict() for c in self.categories],
            "total": self.total.to_dict(),
            "verdicts": [v.to_dict() for v in self.verdicts],
        }

    def render_table(self) -> str:
        """Difficulty categories as columns, accuracy and counts as rows."""
        stats = [*self.categories, self.total]
        headers = [s.category.capitalize() for s in stats]
        accuracy_row = [f"{s.accuracy:.2f}" for s in stats]
        counts_row = [f"{s.correct}/{s.total}" for s in stats]
        widths = [
            max(len(h), len(a), len(c))
            for h, a, c in zip(headers, accuracy_row, counts_row)
        ]
        lines = [
            "  ".join(h.ljust(w) for h, w in zip(headers, widths)),
            "  ".join("-" * w for w in widths),
            "  ".join(a.ljust(w) for a, w in zip(accuracy_row, widths)),
            "  ".join(c.ljust(w) for c, w in zip(counts_row, widths)),
        ]
        return "\n".join(lines)


def _pct(correct: int, total: int) -> float:
    return round_percentage(correct, total)


def _score_one(
    instance: TrainInstance,
    prediction: str | None,
    registry: DatabaseRegistry,
    float_epsilon: float,
) -> InstanceVerdict:
    difficulty = instance.difficulty.value
    if prediction is None:
        return InstanceVerdict(instance.instance_id, difficulty, "missing")
    sql = reduce_prediction(prediction)
    gold_result = execute(instance.db_id, instance.gold_sql, registry)
    try:
        predicted_result = execute(instance.db_id, sql, registry)
    except ExecutionError as exc:
        return InstanceVerdict(instance.instance_id, difficulty, "error", str(exc))
    order_sensitive = has_toplevel_order_by(instance.gold_sql)
    if compare_results(
        predicted_result, gold_result, order_sensitive=order_sensitive, float_epsilon=float_epsilon
    ):
        return InstanceVerdict(instance.instance_id, difficulty, "correct")
    return InstanceVerdict(instance.instance_id, difficulty, "incorrect", "result_mismatch")


def score_predictions(
    devset: Sequence[TrainInstance],
    predictions: dict[str, str],
    registry: DatabaseRegistry,
    float_epsilon: float = 0.0,
    max_workers: int = 1,
) -> EvalReport:
    """Score predictions; missing ones count as incorrect, never abort.

    Prediction keys must belong to the dev corpus; gold SQLs are expected to
    execute (the devset should have gone through cleaning).
    """
    known_ids = {instance.instance_id for instance in devset}
    unknown = sorted(set(predictions) - known_ids)
    if unknown:
        raise PredictionError(f"predictions reference unknown instance ids: {unknown[:5]}")

    def work(instance: TrainInstance) -> InstanceVerdict:
        return _score_one(
            instance, predictions.get(instance.instance_id), registry, float_epsilon
        )

    if max_workers > 1 and len(devset) > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            verdicts = list(pool.map(work, devset))
    else:
        verdicts = [work(instance) for instance in devset]

    by_category: dict[str, list[InstanceVerdict]] = {}
    for verdict in verdicts:
        by_category.setdefault(verdict.difficulty, []).append(verdict)

    # Every instance lands in exactly one category, so the counts sum to the
    # corpus size; absent categories are omitted rather than zero-padded.
    categories: list[CategoryStat] = []
    for name in CATEGORY_ORDER:
        members = by_category.get(name)
        if not members:
            continue
        correct = sum(1 for v in members if v.correct)
        categories.append(CategoryStat(name, len(members), correct, _pct(correct, len(members))))

    total_correct = sum(1 for v in verdicts if v.correct)
    total = CategoryStat("total", len(verdicts), total_correct, _pct(total_correct, len(verdicts)))
    return EvalReport(categories=categories, total=total, verdicts=verdicts)


@dataclass
class CategoryDelta:
    category: str
    delta: float

    def to_dict(self) -> dict:
        return {"category": self.category, "delta": self.delta}


@dataclass
class DiffReport:
    deltas: list[CategoryDelta]
    total_delta: float
    fixed: list[str] = field(default_factory=list)
    regressed: list[str] = field(default_factory=list)

    def delta(self, category: str) -> float | None:
        for entry in self.deltas:
            if entry.category == category:
                return entry.delta
        return None

    def to_dict(self) -> dict:
        return {
            "deltas": [d.to_dict() for d in self.deltas],
            "total_delta": self.total_delta,
            "fixed": self.fixed,
            "regressed": self.regressed,
        }


def diff_reports(a: EvalReport, b: EvalReport) -> DiffReport:
    """Signed percentage-point deltas of ``b`` over ``a`` plus per-instance
    flips. Both reports must describe the same devset."""
    if a.verdicts and b.verdicts:
        ids_a = {v.instance_id for v in a.verdicts}
        ids_b = {v.instance_id for v in b.verdicts}
        if ids_a != ids_b:
            raise ValueError("reports describe different devsets")
    else:
        counts_a = {c.category: c.total for c in a.categories}
        counts_b = {c.category: c.total for c in b.categories}
        if counts_a != counts_b or a.total.total != b.total.total:
            raise ValueError("reports describe different devsets")

    deltas: list[CategoryDelta] = []
    b_stats = {c.category: c for c in b.categories}
    for stat_a in a.categories:
        stat_b = b_stats.get(stat_a.category)
        if stat_b is None:
            raise ValueError(f"category {stat_a.category!r} missing from second report")
        deltas.append(CategoryDelta(stat_a.category, round(stat_b.accuracy - stat_a.accuracy, 2)))
    total_delta = round(b.total.accuracy - a.total.accuracy, 2)

    fixed: list[str] = []
    regressed: list[str] = []
    if a.verdicts and b.verdicts:
        a_by_id = {v.instance_id: v.correct for v in a.verdicts}
        for verdict in b.verdicts:
            before = a_by_id[verdict.instance_id]
            if verdict.correct and not before:
                fixed.append(verdict.instance_id)
            elif not verdict.correct and before:
                regressed.append(verdict.instance_id)
    return DiffReport(deltas=deltas, total_delta=total_delta, fixed=fixed, regressed=regressed)
