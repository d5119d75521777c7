"""Append-only JSONL store of validated rationale records.

Each record is keyed by a content hash over (instance_id, canonical
markdown), so re-running a stage appends nothing new and a crashed run can
resume from the file as-is. ``compact()`` rewrites the file without the
duplicate lines an interrupted append may have left behind.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from .execval import Verdict
from .rationale import CotRationale, final_sql, serialize_cot
from .sqllex import KeywordVocabulary, SqlVector, vectorize

logger = logging.getLogger(__name__)

DECODING_MODES = ("manual", "greedy", "sampling", "rationalizer")


def record_key(instance_id: str, cot_markdown: str) -> str:
    digest = hashlib.sha256()
    digest.update(instance_id.encode("utf-8"))
    digest.update(b"\n")
    digest.update(cot_markdown.encode("utf-8"))
    return digest.hexdigest()


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclass
class ValidatedCotRecord:
    """A rationale plus provenance: who produced it, when, and its verdict."""

    instance_id: str
    cot_markdown: str
    final_sql: str
    sql_vector: SqlVector
    verdict: Verdict
    iteration: int
    decoding: str
    created_at: str = field(default_factory=_utc_now)
    key: str = ""

    def __post_init__(self) -> None:
        if self.decoding not in DECODING_MODES:
            raise ValueError(f"unknown decoding mode: {self.decoding!r}")
        if not self.key:
            self.key = record_key(self.instance_id, self.cot_markdown)

    @property
    def is_positive(self) -> bool:
        return self.verdict.is_positive

    @classmethod
    def build(
        cls,
        instance_id: str,
        cot: CotRationale,
        verdict: Verdict,
        iteration: int,
        decoding: str,
        vocab: KeywordVocabulary | None = None,
    ) -> "ValidatedCotRecord":
        markdown = serialize_cot(cot)
        sql = final_sql(cot)
        return cls(
            instance_id=instance_id,
            cot_markdown=markdown,
            final_sql=sql,
            sql_vector=vectorize(sql, vocab),
            verdict=verdict,
            iteration=iteration,
            decoding=decoding,
        )

    def to_dict(self) -> dict:
        return {
            "key": self.key,
            "instance_id": self.instance_id,
            "iteration": self.iteration,
            "decoding": self.decoding,
            "created_at": self.created_at,
            "verdict": self.verdict.to_dict(),
            "final_sql": self.final_sql,
            "sql_vector": self.sql_vector.to_dict(),
            "cot_markdown": self.cot_markdown,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ValidatedCotRecord":
        return cls(
            instance_id=data["instance_id"],
            cot_markdown=data["cot_markdown"],
            final_sql=data["final_sql"],
            sql_vector=SqlVector.from_dict(data["sql_vector"]),
            verdict=Verdict.from_dict(data["verdict"]),
            iteration=data["iteration"],
            decoding=data["decoding"],
            created_at=data.get("created_at", ""),
            key=data.get("key", ""),
        )


class RepositoryError(Exception):
    """Unreadable or unwritable repository file."""


class CotRepository:
    """In-memory index over an optional on-disk JSONL file."""

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path is not None else None
        self._records: dict[str, ValidatedCotRecord] = {}

    @classmethod
    def load(cls, path: str | Path) -> "CotRepository":
        repo = cls(path)
        file = repo.path
        assert file is not None
        if file.exists():
            try:
                text = file.read_text(encoding="utf-8")
            except OSError as exc:
                raise RepositoryError(f"cannot read repository {file}: {exc}") from exc
            for line_no, line in enumerate(text.splitlines(), start=1):
                if not line.strip():
                    continue
                try:
                    record = ValidatedCotRecord.from_dict(json.loads(line))
                except (json.JSONDecodeError, KeyError) as exc:
                    raise RepositoryError(f"{file}:{line_no}: malformed record: {exc}") from exc
                repo._records.setdefault(record.key, record)
        return repo

    def __len__(self) -> int:
        return len(self._records)

    def __contains__(self, key: str) -> bool:
        return key in self._records

    def add_many(self, records) -> list[ValidatedCotRecord]:
        """Append records (skipping known keys) and persist them; returns added."""
        added = [r for r in records if r.key not in self._records]
        for record in added:
            self._records[record.key] = record
        if added and self.path is not None:
            try:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with self.path.open("a", encoding="utf-8") as fh:
                    for record in added:
                        fh.write(json.dumps(record.to_dict(), ensure_ascii=False) + "\n")
            except OSError as exc:
                raise RepositoryError(f"cannot append to repository {self.path}: {exc}") from exc
        return added

    def add(self, record: ValidatedCotRecord) -> bool:
        return bool(self.add_many([record]))

    def snapshot(self) -> tuple[ValidatedCotRecord, ...]:
        """Frozen view for one iteration; insertion order."""
        return tuple(self._records.values())

    def positive_records(self) -> list[ValidatedCotRecord]:
        return [r for r in self._records.values() if r.is_positive]

    def covered_ids(self) -> set[str]:
        return {r.instance_id for r in self._records.values() if r.is_positive}

    def positives_for(self, instance_id: str) -> list[ValidatedCotRecord]:
        return [
            r
            for r in self._records.values()
            if r.instance_id == instance_id and r.is_positive
        ]

    def max_iteration(self) -> int:
        return max((r.iteration for r in self._records.values()), default=0)

    def compact(self) -> int:
        """Rewrite the file deduplicated, first occurrence wins; returns count."""
        if self.path is None:
            return len(self._records)
        tmp = self.path.with_suffix(self.path.suffix + ".tmp")
        with tmp.open("w", encoding="utf-8") as fh:
            for record in self._records.values():
                fh.write(json.dumps(record.to_dict(), ensure_ascii=False) + "\n")
        tmp.replace(self.path)
        logger.info("compacted repository to %d records", len(self._records))
        return len(self._records)
