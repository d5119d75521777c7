"""Fine-tuning dataset export and stage-coverage reporting.

Three target variants share one input prompt: the gold SQL alone (baseline)
and the shortest/longest validated rationale per instance. Two scopes
reproduce the two training-set sizes: ``covered_only`` keeps instances with
a validated rationale, ``full`` requires complete coverage for CoT variants.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Sequence

from .bootstrap import build_prompt
from .corpus import DatabaseRegistry, TrainInstance
from .rationale import parse_cot
from .repository import CotRepository, ValidatedCotRecord

logger = logging.getLogger(__name__)

VARIANTS = ("gold", "cot_short", "cot_long")
SCOPES = ("covered_only", "full")


class ExportError(Exception):
    pass


def round_percentage(covered: int, total: int) -> float:
    """covered/total·100 rounded half-up to 2 decimals; 0.00 for empty sets."""
    if total == 0:
        return 0.0
    pct = Decimal(covered) * 100 / Decimal(total)
    return float(pct.quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


def _variant_sort_key(record: ValidatedCotRecord) -> tuple[int, int, str]:
    # Canonical markdown, so its length equals the rationale's char metric.
    steps = len(parse_cot(record.cot_markdown).steps)
    return (steps, len(record.cot_markdown), record.key)


def select_cot_variant(records: Sequence[ValidatedCotRecord], variant: str) -> ValidatedCotRecord:
    """Shortest/longest record by step count, then char count, then key."""
    if not records:
        raise ExportError("no positive records to select from")
    if variant not in ("cot_short", "cot_long"):
        raise ValueError(f"variant must be cot_short or cot_long, got {variant!r}")
    ordered = sorted(records, key=_variant_sort_key)
    return ordered[0] if variant == "cot_short" else ordered[-1]


@dataclass
class FinetuneExample:
    instance_id: str
    input: str
    target: str
    variant: str
    difficulty: str

    def to_dict(self) -> dict:
        return {
            "instance_id": self.instance_id,
            "input": self.input,
            "target": self.target,
            "variant": self.variant,
            "difficulty": self.difficulty,
        }


def export_finetune_set(
    corpus: Sequence[TrainInstance],
    repo: CotRepository,
    variant: str,
    coverage_scope: str,
    out_path: str | Path,
    registry: DatabaseRegistry | None = None,
    sample_rows: int = 3,
) -> int:
    """Write one JSONL example per in-scope instance; returns the count.

    Identical (corpus, repo, variant, scope) inputs produce byte-identical
    files.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant: {variant!r}")
    if coverage_scope not in SCOPES:
        raise ValueError(f"unknown coverage scope: {coverage_scope!r}")

    covered = repo.covered_ids()
    if variant != "gold" and coverage_scope == "full":
        missing = [i.instance_id for i in corpus if i.instance_id not in covered]
        if missing:
            raise ExportError(
                f"full scope requires complete coverage; {len(missing)} instances lack a "
                f"validated rationale (first: {missing[:5]})"
            )

    if coverage_scope == "covered_only":
        in_scope = [i for i in corpus if i.instance_id in covered]
    else:
        in_scope = list(corpus)

    out_path = Path(out_path)
    count = 0
    with out_path.open("w", encoding="utf-8") as fh:
        for instance in in_scope:
            prompt = build_prompt(instance, [], registry=registry, sample_rows=sample_rows)
            if variant == "gold":
                target = instance.gold_sql
            else:
                record = select_cot_variant(repo.positives_for(instance.instance_id), variant)
                target = record.cot_markdown
            example = FinetuneExample(
                instance_id=instance.instance_id,
                input=prompt,
                target=target,
                variant=variant,
                difficulty=instance.difficulty.value,
            )
            fh.write(json.dumps(example.to_dict(), ensure_ascii=False) + "\n")
            count += 1
    logger.info("exported %d %s/%s examples -> %s", count, variant, coverage_scope, out_path)
    return count


@dataclass
class StageSpec:
    key: str  # manual | dynamic | rationalizer
    name: str
    model: str


DEFAULT_STAGES = (
    StageSpec("manual", "Manual Few-shot", "teacher"),
    StageSpec("dynamic", "Dynamic Few-shot", "teacher"),
    StageSpec("rationalizer", "Fine-tuning", "rationalizer"),
)

_STAGE_DECODINGS = {
    "manual": frozenset({"manual"}),
    "dynamic": frozenset({"greedy", "sampling"}),
    "rationalizer": frozenset({"rationalizer"}),
}


@dataclass
class CoverageRow:
    stage: str
    model: str
    covered: int
    total: int
    percentage: float

    def to_dict(self) -> dict:
        return {
            "stage": self.stage,
            "model": self.model,
            "covered": self.covered,
            "total": self.total,
            "percentage": self.percentage,
        }


@dataclass
class CoverageReport:
    rows: list[CoverageRow]

    def to_dict(self) -> dict:
        return {"rows": [row.to_dict() for row in self.rows]}

    def render_table(self) -> str:
        """Aligned-column text table, one row per stage."""
        headers = ("Stage", "Model", "Covered", "Total", "CoT Train% coverage")
        cells = [
            (row.stage, row.model, str(row.covered), str(row.total), f"{row.percentage:.2f}")
            for row in self.rows
        ]
        widths = [max(len(h), *(len(c[i]) for c in cells)) if cells else len(h) for i, h in enumerate(headers)]
        lines = [
            "  ".join(h.ljust(widths[i]) for i, h in enumerate(headers)),
            "  ".join("-" * widths[i] for i in range(len(headers))),
        ]
        for row_cells in cells:
            lines.append("  ".join(row_cells[i].ljust(widths[i]) for i in range(len(headers))))
        return "\n".join(lines)


def coverage_report(
    corpus: Sequence[TrainInstance],
    repo: CotRepository,
    stages: Sequence[StageSpec] = DEFAULT_STAGES,
) -> CoverageReport:
    """Cumulative per-stage coverage: the fraction of instances that own at
    least one validated rationale produced up to and including each stage."""
    total = len(corpus)
    corpus_ids = {instance.instance_id for instance in corpus}
    rows: list[CoverageRow] = []
    cumulative_decodings: set[str] = set()
    for stage in stages:
        decodings = _STAGE_DECODINGS.get(stage.key)
        if decodings is None:
            raise ValueError(f"unknown stage key: {stage.key!r}")
        cumulative_decodings |= decodings
        covered = {
            record.instance_id
            for record in repo.positive_records()
            if record.decoding in cumulative_decodings and record.instance_id in corpus_ids
        }
        rows.append(
            CoverageRow(
                stage=stage.name,
                model=stage.model,
                covered=len(covered),
                total=total,
                percentage=round_percentage(len(covered), total),
            )
        )
    return CoverageReport(rows=rows)
