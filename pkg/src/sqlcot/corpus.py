"""Text-to-SQL corpus ingestion and cleaning.

Supports BIRD-style JSON and a generic JSONL format (one object per line:
instance_id, db_id, question, gold_sql, schema_text?, difficulty?,
evidence?). Cleaning drops instances whose gold SQL does not execute within
the timeout or returns zero rows.
"""

from __future__ import annotations

import json
import logging
import sqlite3
from concurrent.futures import ThreadPoolExecutor
from contextlib import closing
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

logger = logging.getLogger(__name__)

REJECTION_REASONS = ("syntax_error", "timeout", "empty_result", "missing_db")


class CorpusError(Exception):
    """Unreadable file, malformed record, or duplicate instance id."""


class MissingDatabaseError(KeyError):
    """A db_id does not resolve to an existing database file."""


class Difficulty(str, Enum):
    SIMPLE = "simple"
    MODERATE = "moderate"
    CHALLENGING = "challenging"
    UNKNOWN = "unknown"

    @classmethod
    def coerce(cls, value) -> "Difficulty":
        if value is None or value == "":
            return cls.UNKNOWN
        try:
            return cls(str(value).lower())
        except ValueError:
            return cls.UNKNOWN


@dataclass
class TrainInstance:
    """One (question, gold SQL) pair bound to a registered database."""

    instance_id: str
    db_id: str
    question: str
    gold_sql: str
    schema_text: str = ""
    difficulty: Difficulty = Difficulty.UNKNOWN
    evidence: str | None = None

    def to_dict(self) -> dict:
        record = {
            "instance_id": self.instance_id,
            "db_id": self.db_id,
            "question": self.question,
            "gold_sql": self.gold_sql,
        }
        if self.schema_text:
            record["schema_text"] = self.schema_text
        if self.difficulty is not Difficulty.UNKNOWN:
            record["difficulty"] = self.difficulty.value
        if self.evidence is not None:
            record["evidence"] = self.evidence
        return record

    @classmethod
    def from_dict(cls, data: dict) -> "TrainInstance":
        return cls(
            instance_id=str(data["instance_id"]),
            db_id=str(data["db_id"]),
            question=str(data["question"]),
            gold_sql=str(data["gold_sql"]),
            schema_text=str(data.get("schema_text", "") or ""),
            difficulty=Difficulty.coerce(data.get("difficulty")),
            evidence=data.get("evidence"),
        )


@dataclass
class DatabaseRegistry:
    """Maps db_id to a SQLite file path, with per-database timeouts."""

    databases: dict[str, Path]
    timeout: float = 30.0
    timeouts: dict[str, float] = field(default_factory=dict)

    def resolve(self, db_id: str) -> Path:
        path = self.databases.get(db_id)
        if path is None or not path.exists():
            raise MissingDatabaseError(db_id)
        return path

    def timeout_for(self, db_id: str) -> float:
        return self.timeouts.get(db_id, self.timeout)

    def connect_readonly(self, db_id: str) -> sqlite3.Connection:
        path = self.resolve(db_id)
        try:
            return sqlite3.connect(f"file:{path}?mode=ro", uri=True)
        except sqlite3.Error as exc:
            raise MissingDatabaseError(f"{db_id}: {exc}") from exc

    @classmethod
    def from_dict(cls, data: dict, base_dir: Path | None = None) -> "DatabaseRegistry":
        base = base_dir or Path(".")
        databases: dict[str, Path] = {}
        timeouts: dict[str, float] = {}
        for db_id, entry in data.get("databases", {}).items():
            if isinstance(entry, dict):
                databases[db_id] = (base / str(entry["path"])).resolve()
                if "timeout" in entry:
                    timeouts[db_id] = float(entry["timeout"])
            else:
                databases[db_id] = (base / str(entry)).resolve()
        return cls(databases=databases, timeout=float(data.get("timeout", 30.0)), timeouts=timeouts)

    @classmethod
    def load(cls, path: str | Path) -> "DatabaseRegistry":
        """Read a TOML or JSON registry config; paths resolve relative to it."""
        path = Path(path)
        if path.suffix.lower() == ".toml":
            try:
                import tomllib  # Python 3.11+
            except ImportError:
                import tomli as tomllib
            data = tomllib.loads(path.read_text(encoding="utf-8"))
        else:
            data = json.loads(path.read_text(encoding="utf-8"))
        return cls.from_dict(data, base_dir=path.parent)


@dataclass
class RejectedInstance:
    instance_id: str
    reason: str
    detail: str = ""

    def to_dict(self) -> dict:
        return {"instance_id": self.instance_id, "reason": self.reason, "detail": self.detail}


@dataclass
class CleaningReport:
    kept: int
    rejected: list[RejectedInstance]

    def to_dict(self) -> dict:
        return {
            "kept": self.kept,
            "rejected_count": len(self.rejected),
            "rejected": [r.to_dict() for r in self.rejected],
        }


def _bird_record_to_instance(record: dict, index: int) -> TrainInstance:
    sql = record.get("SQL", record.get("sql", record.get("query")))
    if sql is None or "question" not in record or "db_id" not in record:
        raise CorpusError(f"record {index}: missing question/SQL/db_id field")
    return TrainInstance(
        instance_id=str(record.get("question_id", index)),
        db_id=str(record["db_id"]),
        question=str(record["question"]),
        gold_sql=str(sql),
        schema_text=str(record.get("schema_text", "") or ""),
        difficulty=Difficulty.coerce(record.get("difficulty")),
        evidence=record.get("evidence") or None,
    )


def load_corpus(path: str | Path, format: str = "generic_jsonl") -> list[TrainInstance]:
    """Load instances in file order; duplicate instance ids are an error."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise CorpusError(f"cannot read corpus file {path}: {exc}") from exc

    instances: list[TrainInstance] = []
    if format == "bird_json":
        try:
            records = json.loads(text)
        except json.JSONDecodeError as exc:
            raise CorpusError(f"{path} is not valid JSON: {exc}") from exc
        if not isinstance(records, list):
            raise CorpusError(f"{path}: expected a top-level JSON array")
        for index, record in enumerate(records):
            instances.append(_bird_record_to_instance(record, index))
    elif format == "generic_jsonl":
        for index, line in enumerate(text.splitlines()):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"record {index}: invalid JSON: {exc}") from exc
            try:
                instances.append(TrainInstance.from_dict(record))
            except KeyError as exc:
                raise CorpusError(f"record {index}: missing field {exc}") from exc
    else:
        raise ValueError(f"unknown corpus format: {format!r}")

    seen: set[str] = set()
    for instance in instances:
        if instance.instance_id in seen:
            raise CorpusError(f"duplicate instance_id: {instance.instance_id}")
        seen.add(instance.instance_id)
    return instances


def write_corpus(instances: list[TrainInstance], path: str | Path) -> None:
    """Write the generic JSONL form; load_corpus() of the output is identity."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for instance in instances:
            fh.write(json.dumps(instance.to_dict(), ensure_ascii=False) + "\n")


def _clean_one(instance: TrainInstance, registry: DatabaseRegistry) -> RejectedInstance | None:
    from . import execval  # late import; execval depends on this module

    try:
        registry.resolve(instance.db_id)
    except MissingDatabaseError:
        return RejectedInstance(instance.instance_id, "missing_db", instance.db_id)
    try:
        # Row cap 1: only the existence of a first row matters here.
        result = execval.execute(instance.db_id, instance.gold_sql, registry, row_cap=1)
    except execval.ExecutionTimeout as exc:
        return RejectedInstance(instance.instance_id, "timeout", str(exc))
    except execval.ExecutionError as exc:
        return RejectedInstance(instance.instance_id, "syntax_error", str(exc))
    if not result.rows:
        return RejectedInstance(instance.instance_id, "empty_result", "query returned zero rows")
    return None


def clean_corpus(
    instances: list[TrainInstance],
    registry: DatabaseRegistry,
    max_workers: int = 1,
) -> tuple[list[TrainInstance], CleaningReport]:
    """Keep instances whose gold SQL runs in time and yields at least one row.

    Cleaning is total: problems become per-instance rejections, never
    exceptions. Order among kept instances matches the input, and the report
    is deterministic regardless of worker scheduling.
    """
    if max_workers > 1 and len(instances) > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            outcomes = list(pool.map(lambda inst: _clean_one(inst, registry), instances))
    else:
        outcomes = [_clean_one(inst, registry) for inst in instances]

    kept: list[TrainInstance] = []
    rejected: list[RejectedInstance] = []
    for instance, outcome in zip(instances, outcomes):
        if outcome is None:
            kept.append(instance)
        else:
            rejected.append(outcome)
    report = CleaningReport(kept=len(kept), rejected=rejected)
    logger.info("cleaning kept %d/%d instances", report.kept, len(instances))
    return kept, report


def _format_sample_value(value) -> str:
    if isinstance(value, str):
        return "'" + value.replace("'", "''") + "'"
    if isinstance(value, bytes):
        return "X'" + value.hex() + "'"
    return str(value)


def render_schema_fallback(db_id: str, registry: DatabaseRegistry, sample_rows: int = 3) -> str:
    """Render CREATE TABLE statements plus per-column sample values.

    Used when an instance ships no schema text. Sample values are the first
    ``sample_rows`` distinct non-NULL values in ascending order so the output
    is byte-stable for a fixed database file. Unlike an external schema
    linker, no column-selection hints are emitted.
    """
    blocks: list[str] = []
    with closing(registry.connect_readonly(db_id)) as conn:
        tables = conn.execute(
            "SELECT name, sql FROM sqlite_master"
            " WHERE type = 'table' AND name NOT LIKE 'sqlite_%' ORDER BY name"
        ).fetchall()
        for name, create_sql in tables:
            column_lines: list[str] = []
            quoted_table = '"' + name.replace('"', '""') + '"'
            for row in conn.execute(f"PRAGMA table_info({quoted_table})"):
                column = row[1]
                quoted_col = '"' + column.replace('"', '""') + '"'
                samples = conn.execute(
                    f"SELECT DISTINCT {quoted_col} FROM {quoted_table}"
                    f" WHERE {quoted_col} IS NOT NULL ORDER BY {quoted_col} LIMIT ?",
                    (sample_rows,),
                ).fetchall()
                line = f"{name}.{column}"
                if samples:
                    line += ": " + ", ".join(_format_sample_value(v[0]) for v in samples)
                column_lines.append(line)
            block = (create_sql or f"CREATE TABLE {name} (...)") + ";"
            if column_lines:
                block += "\n\n" + "\n".join(column_lines)
            blocks.append(block)
    return "\n\n".join(blocks)
