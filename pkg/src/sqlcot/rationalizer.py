"""Answer-aware rationalization: training-set export, application, triage.

A rationalizer sees the gold SQL in its prompt and explains it step by
step, which closes the coverage gap the few-shot teacher leaves behind and
doubles as a detector for wrong gold annotations: when even an answer-aware
generation disagrees with the stored gold by execution, the gold itself is
suspect.

This module also hosts the procedural offline stand-in for teacher and
rationalizer models. It builds rationales by clause-peeling the gold SQL
with the keyword lexer, so offline runs are fully deterministic.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Mapping, Sequence

from .bootstrap import build_source_block
from .clients import TeacherClient, TeacherError, TeacherRequest, TeacherResponse, call_with_retries
from .corpus import DatabaseRegistry, TrainInstance
from .execval import ExecutionError, execute, validate_cot
from .rationale import CotParseError, CotRationale, CotStep, parse_cot, serialize_cot
from .repository import CotRepository, ValidatedCotRecord
from .sqllex import KeywordVocabulary, cosine, scan_keywords, tokenize_keywords, vectorize

logger = logging.getLogger(__name__)

RATIONALIZATION_INSTRUCTION = (
    "Given the above [SCHEMA] of a database, a question [QUESTION], and its "
    "SQLite statement [SQL], explain how the SQL answers the question. "
    "Decompose the SQL in increasingly complex building blocks. Explain each "
    "step of the SQL building process thinking step by step. Format the "
    "output using the Markdown language."
)

STRUCTURAL_KEYWORDS = frozenset(
    {
        "JOIN", "ON", "GROUP", "BY", "HAVING", "ORDER", "LIMIT", "DISTINCT",
        "IN", "EXISTS", "CASE", "UNION", "INTERSECT", "EXCEPT",
        "COUNT", "SUM", "AVG", "MIN", "MAX",
    }
)
_AGGREGATES = frozenset({"COUNT", "SUM", "AVG", "MIN", "MAX"})
_UNSUPPORTED_TOPLEVEL = frozenset({"WITH", "UNION", "INTERSECT", "EXCEPT", "VALUES"})
_CLAUSE_ORDER = ("FROM", "WHERE", "GROUP", "HAVING", "ORDER", "LIMIT")


class RationalizerError(Exception):
    pass


@dataclass
class InconsistencyFlag:
    """A negative verdict from the answer-aware pass; the gold may be wrong."""

    instance_id: str
    generated_final_sql: str
    detail: dict
    disposition: str = "unreviewed"  # unreviewed | gold_wrong | generation_wrong

    @property
    def flag_id(self) -> str:
        return self.instance_id

    def to_dict(self) -> dict:
        return {
            "flag_id": self.flag_id,
            "instance_id": self.instance_id,
            "generated_final_sql": self.generated_final_sql,
            "detail": self.detail,
            "disposition": self.disposition,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "InconsistencyFlag":
        return cls(
            instance_id=data["instance_id"],
            generated_final_sql=data["generated_final_sql"],
            detail=data["detail"],
            disposition=data.get("disposition", "unreviewed"),
        )


def build_rationalization_prompt(
    instance: TrainInstance,
    registry: DatabaseRegistry | None = None,
    sample_rows: int = 3,
) -> str:
    """Answer-aware prompt: source block plus a ``[SQL]`` block after the question."""
    source = build_source_block(instance, registry, sample_rows)
    return (
        f"{source}\n\n[SQL]\n{instance.gold_sql}\n[/SQL]\n\n{RATIONALIZATION_INSTRUCTION}"
    )


# --------------------------------------------------------------------------
# Clause peeling


@dataclass
class _Segments:
    select_list: str
    from_seg: str
    where_seg: str | None = None
    group_seg: str | None = None
    having_seg: str | None = None
    order_seg: str | None = None
    limit_seg: str | None = None


def _segment_query(sql: str) -> _Segments | None:
    """Split a plain SELECT into top-level clause segments, else None."""
    hits = [h for h in scan_keywords(sql) if h.depth == 0]
    keywords_present = {h.keyword for h in hits}
    if keywords_present & _UNSUPPORTED_TOPLEVEL:
        return None
    selects = [h for h in hits if h.keyword == "SELECT"]
    if len(selects) != 1:
        return None
    select = selects[0]

    boundaries: list[tuple[str, int]] = []  # (clause, start offset)
    seen: set[str] = set()
    for hit in hits:
        if hit.keyword in _CLAUSE_ORDER and hit.keyword not in seen and hit.start > select.end:
            seen.add(hit.keyword)
            boundaries.append((hit.keyword, hit.start))
    if not boundaries or boundaries[0][0] != "FROM":
        return None
    order = [clause for clause, _ in boundaries]
    if order != [c for c in _CLAUSE_ORDER if c in seen]:
        return None  # clauses out of canonical order; too odd to peel

    spans: dict[str, str] = {}
    for pos, (clause, start) in enumerate(boundaries):
        end = boundaries[pos + 1][1] if pos + 1 < len(boundaries) else len(sql)
        spans[clause] = sql[start:end].strip()
    return _Segments(
        select_list=sql[select.end : boundaries[0][1]].strip(),
        from_seg=spans["FROM"],
        where_seg=spans.get("WHERE"),
        group_seg=spans.get("GROUP"),
        having_seg=spans.get("HAVING"),
        order_seg=spans.get("ORDER"),
        limit_seg=spans.get("LIMIT"),
    )


def _referenced_tables(sql: str) -> list[str]:
    """Identifiers directly following FROM/JOIN, in order, deduplicated."""
    tables: list[str] = []
    for hit in scan_keywords(sql):
        if hit.keyword not in ("FROM", "JOIN"):
            continue
        rest = sql[hit.end :].lstrip()
        if not rest or rest[0] == "(":
            continue
        match = re.match(r'[`"\[]?([A-Za-z_][A-Za-z0-9_$]*)', rest)
        if match:
            name = match.group(1)
            if name not in tables:
                tables.append(name)
    return tables


def _plan_step(instance: TrainInstance, tables: list[str]) -> CotStep:
    if tables:
        listed = ", ".join(f"`{t}`" for t in tables)
        table_line = f"The data we need lives in the following table(s): {listed}."
    else:
        table_line = "The answer can be computed without reading any table."
    prose = (
        f"The question asks: {instance.question.strip()}\n\n"
        f"{table_line}\n\n"
        "We build the query in stages: start from the core row set, then "
        "add one clause at a time until the full statement is assembled."
    )
    return CotStep(index=1, title="Outline the approach", prose=prose)


def _join_clauses(*parts: str | None) -> str:
    return " ".join(p.strip() for p in parts if p)


def _normalize_ws(sql: str) -> str:
    return " ".join(sql.split())


def clause_peel(instance: TrainInstance) -> list[tuple[str, str, str | None]]:
    """Candidate (title, prose, sql) tuples for the gold query, final last.

    Intermediate steps re-add top-level clauses in order (FROM core, WHERE,
    GROUP BY/HAVING, ORDER BY/LIMIT); when the select list aggregates, the
    aggregation is applied only in the final step. The final step is always
    the gold SQL verbatim. Returns an empty list when the statement cannot
    be segmented (set operations, CTEs, multiple top-level SELECTs).
    """
    gold = instance.gold_sql
    body = gold.rstrip().rstrip(";")
    segments = _segment_query(body)
    if segments is None:
        return []

    aggregated = bool(set(tokenize_keywords(segments.select_list)) & _AGGREGATES)
    if aggregated:
        if segments.group_seg:
            base_list = re.sub(r"(?is)^group\s+by\s+", "", segments.group_seg).strip()
        else:
            base_list = "*"
    else:
        base_list = segments.select_list

    candidates: list[tuple[str, str, str | None]] = []
    core = _join_clauses(f"SELECT {base_list}", segments.from_seg)
    tables = _referenced_tables(body)
    if len(tables) > 1:
        names = ", ".join(f"`{t}`" for t in tables)
        core_prose = f"Read the working columns from {names}, joining the tables that hold them."
    elif tables:
        core_prose = f"Read the working columns from `{tables[0]}`."
    else:
        core_prose = "Read the working columns from the base relation."
    candidates.append(("Start from the core tables", core_prose, core))

    running = core
    if segments.where_seg:
        running = _join_clauses(running, segments.where_seg)
        candidates.append(
            ("Apply the filter conditions", "Keep only the rows the question asks about.", running)
        )
    if segments.group_seg or segments.having_seg:
        running = _join_clauses(running, segments.group_seg, segments.having_seg)
        prose = "Group the remaining rows"
        prose += " and keep only qualifying groups." if segments.having_seg else "."
        candidates.append(("Group the rows", prose, running))
    if segments.order_seg or segments.limit_seg:
        running = _join_clauses(running, segments.order_seg, segments.limit_seg)
        candidates.append(
            ("Order and trim the result", "Arrange the rows and keep the requested ones.", running)
        )

    if aggregated:
        final_prose = "Apply the aggregation to produce the requested value."
        final_title = "Compute the final answer"
    else:
        final_prose = "This completes the statement that answers the question."
        final_title = "Assemble the full query"
    # Drop a last intermediate that already equals the gold text.
    if candidates and candidates[-1][2] is not None:
        if _normalize_ws(candidates[-1][2]) == _normalize_ws(gold):
            candidates.pop()
    candidates.append((final_title, final_prose, gold))
    return candidates


def procedural_rationalize(
    instance: TrainInstance,
    registry: DatabaseRegistry,
    vocab: KeywordVocabulary | None = None,
) -> CotRationale:
    """Deterministic rationale for a gold query, every step executable.

    Clause-peeled steps that fail to execute on the instance's database are
    dropped; if nothing peelable remains the result degrades to a two-step
    rationale (plan plus the gold statement) with a warning.
    """
    candidates = clause_peel(instance)
    steps: list[CotStep] = [_plan_step(instance, _referenced_tables(instance.gold_sql))]
    if not candidates:
        logger.warning(
            "instance %s: statement not peelable; using 2-step fallback", instance.instance_id
        )
        steps.append(
            CotStep(
                index=2,
                title="Write the full query",
                prose="The statement is compact enough to write in one piece.",
                sql=instance.gold_sql,
            )
        )
        return CotRationale(steps=steps, trailer="This is the final SQL statement that answers the question.")

    kept: list[tuple[str, str, str | None]] = []
    for position, (title, prose, sql) in enumerate(candidates):
        is_final = position == len(candidates) - 1
        if sql is not None and not is_final:
            try:
                execute(instance.db_id, sql, registry)
            except ExecutionError as exc:
                logger.warning(
                    "instance %s: dropping unexecutable intermediate step (%s)",
                    instance.instance_id,
                    exc,
                )
                continue
        kept.append((title, prose, sql))
    for title, prose, sql in kept:
        steps.append(CotStep(index=len(steps) + 1, title=title, prose=prose, sql=sql))
    cot = CotRationale(
        steps=steps, trailer="This is the final SQL statement that answers the question."
    )
    cot.validate()
    return cot


# --------------------------------------------------------------------------
# Procedural mock client

_QUESTION_BLOCK_RE = re.compile(r"\[QUESTION\]\n(.*?)\n\[/QUESTION\]", re.S)
_SQL_FENCE_RE = re.compile(r"```sql\n(.*?)\n```", re.S)

SuccessRule = Callable[[TrainInstance, list[str]], bool]


def max_cosine_rule(threshold: float, vocab: KeywordVocabulary | None = None) -> SuccessRule:
    """Succeed when some prompt exemplar's final SQL is close enough in
    keyword space to the instance's gold SQL."""

    def rule(instance: TrainInstance, exemplar_finals: list[str]) -> bool:
        gold_vec = vectorize(instance.gold_sql, vocab)
        return any(
            cosine(gold_vec, vectorize(sql, vocab)) >= threshold for sql in exemplar_finals
        )

    return rule


def shared_keyword_rule(
    keywords: frozenset[str] = STRUCTURAL_KEYWORDS,
    min_shared: int = 1,
    vocab: KeywordVocabulary | None = None,
) -> SuccessRule:
    """Succeed when an exemplar shares enough structural keywords.

    Instances whose gold uses none of the tracked keywords always succeed;
    otherwise some exemplar must share at least ``min(min_shared, |gold|)``
    of them.
    """

    def rule(instance: TrainInstance, exemplar_finals: list[str]) -> bool:
        gold_k = set(tokenize_keywords(instance.gold_sql, vocab)) & keywords
        if not gold_k:
            return True
        need = min(min_shared, len(gold_k))
        for final in exemplar_finals:
            shared = gold_k & set(tokenize_keywords(final, vocab)) & keywords
            if len(shared) >= need:
                return True
        return False

    return rule


class ProceduralTeacherClient:
    """Offline oracle behind the model-client interface.

    Resolves the prompt's target question back to a corpus instance and
    answers with a clause-peeled rationale. A ``success_rule`` over the
    prompt's exemplar final SQLs (plus an explicit ``hard_fail`` id set) can
    make it imperfect, which is what gives offline bootstrap runs a
    realistic multi-iteration coverage curve. Rationalization prompts (the
    ones carrying a ``[SQL]`` block) always succeed unless hard-failed.
    """

    def __init__(
        self,
        corpus: Sequence[TrainInstance],
        registry: DatabaseRegistry,
        vocab: KeywordVocabulary | None = None,
        success_rule: SuccessRule | None = None,
        hard_fail: Sequence[str] = (),
        hard_fail_rationalizer: Sequence[str] = (),
    ):
        self.registry = registry
        self.vocab = vocab
        self.success_rule = success_rule
        self.hard_fail = frozenset(hard_fail)
        self.hard_fail_rationalizer = frozenset(hard_fail_rationalizer)
        self._by_question: dict[str, TrainInstance] = {}
        for instance in corpus:
            key = instance.question.strip()
            if key in self._by_question:
                raise ValueError(f"duplicate question text in corpus: {key!r}")
            self._by_question[key] = instance

    def complete(self, request: TeacherRequest) -> TeacherResponse:
        prompt = request.prompt
        questions = _QUESTION_BLOCK_RE.findall(prompt)
        if not questions:
            raise TeacherError("prompt has no [QUESTION] block")
        target_question = questions[-1].strip()
        instance = self._by_question.get(target_question)
        if instance is None:
            raise TeacherError(f"question not in corpus: {target_question!r}")

        rationalization = "[SQL]" in prompt[prompt.rfind("[/QUESTION]") :]
        if rationalization:
            if instance.instance_id in self.hard_fail_rationalizer:
                return TeacherResponse(text=self._failure_text(instance))
            cot = procedural_rationalize(instance, self.registry, self.vocab)
            return TeacherResponse(text=serialize_cot(cot))

        if instance.instance_id in self.hard_fail:
            return TeacherResponse(text=self._failure_text(instance))
        if self.success_rule is not None:
            exemplar_finals = self._exemplar_final_sqls(prompt)
            if not self.success_rule(instance, exemplar_finals):
                return TeacherResponse(text=self._failure_text(instance))
        cot = procedural_rationalize(instance, self.registry, self.vocab)
        return TeacherResponse(text=serialize_cot(cot))

    @staticmethod
    def _exemplar_final_sqls(prompt: str) -> list[str]:
        """Last fenced sql block before each non-leading [SCHEMA] marker."""
        fences = [(m.end(), m.group(1)) for m in _SQL_FENCE_RE.finditer(prompt)]
        finals: list[str] = []
        schema_positions = [m.start() for m in re.finditer(r"\[SCHEMA\]", prompt)]
        for position in schema_positions[1:]:
            before = [sql for end, sql in fences if end <= position]
            if before:
                finals.append(before[-1])
        return finals

    @staticmethod
    def _failure_text(instance: TrainInstance) -> str:
        # Exercise both failure paths downstream: an executable-but-wrong
        # rationale or plain unparseable prose, chosen by a stable hash.
        digest = hashlib.sha256(instance.instance_id.encode("utf-8")).digest()
        if digest[0] % 2 == 0:
            wrong = CotRationale(
                steps=[
                    CotStep(index=1, title="Outline the approach", prose="Read the schema."),
                    CotStep(
                        index=2,
                        title="Write the full query",
                        prose="Return a constant placeholder.",
                        sql="SELECT 'not the answer'",
                    ),
                ]
            )
            return serialize_cot(wrong)
        return "I could not decompose this query into steps."


# --------------------------------------------------------------------------
# Rationalization training set and application


def export_rationalization_trainset(
    repo: CotRepository,
    corpus: Sequence[TrainInstance],
    out_path: str | Path,
    registry: DatabaseRegistry | None = None,
    sample_rows: int = 3,
) -> int:
    """Write one {input, output} JSONL line per covered instance.

    The output is the instance's longest validated rationale (steps, then
    characters, then record key as tie-breaks): longer decompositions carry
    more supervision for an answer-aware model.
    """
    from .export import select_cot_variant

    positives = repo.positive_records()
    if not positives:
        raise RationalizerError("repository has no positive records to export")
    covered = {record.instance_id for record in positives}
    out_path = Path(out_path)
    count = 0
    with out_path.open("w", encoding="utf-8") as fh:
        for instance in corpus:
            if instance.instance_id not in covered:
                continue
            record = select_cot_variant(repo.positives_for(instance.instance_id), "cot_long")
            example = {
                "input": build_rationalization_prompt(instance, registry, sample_rows),
                "output": record.cot_markdown,
            }
            fh.write(json.dumps(example, ensure_ascii=False) + "\n")
            count += 1
    logger.info("rationalization trainset: %d examples -> %s", count, out_path)
    return count


def _result_shape(db_id: str, sql: str, registry: DatabaseRegistry) -> dict:
    try:
        table = execute(db_id, sql, registry)
        return {"rows": len(table.rows), "columns": table.column_count}
    except ExecutionError as exc:
        return {"error": str(exc)}


def apply_rationalizer(
    pending: Sequence[TrainInstance],
    model: TeacherClient,
    registry: DatabaseRegistry,
    vocab: KeywordVocabulary | None = None,
    iteration: int = 1,
    retries: int = 3,
    retry_backoff: float = 0.5,
    max_workers: int = 1,
    sample_rows: int = 3,
    model_name: str = "rationalizer",
) -> tuple[list[ValidatedCotRecord], list[InconsistencyFlag]]:
    """Generate answer-aware rationales for instances with no positive CoT.

    Positives become repository records tagged ``rationalizer``; negatives
    raise inconsistency flags for manual review instead of being retried,
    because an answer-aware miss usually means the stored gold is wrong.
    """

    def work(instance: TrainInstance):
        prompt = build_rationalization_prompt(instance, registry, sample_rows)
        request = TeacherRequest(prompt=prompt, model=model_name, temperature=0.0, mode="rationalizer")
        try:
            response = call_with_retries(model, request, retries=retries, backoff=retry_backoff)
        except TeacherError as exc:
            logger.error("rationalizer transport failure on %s: %s", instance.instance_id, exc)
            return None, None
        try:
            cot = parse_cot(response.text)
        except CotParseError as exc:
            logger.warning("rationalizer output unparseable on %s: %s", instance.instance_id, exc)
            return None, None
        verdict = validate_cot(instance, cot, registry)
        record = ValidatedCotRecord.build(
            instance.instance_id, cot, verdict, iteration=iteration, decoding="rationalizer", vocab=vocab
        )
        if record.is_positive:
            return record, None
        detail: dict = {"verdict": verdict.detail}
        if verdict.detail == "result_mismatch":
            detail["generated"] = _result_shape(instance.db_id, record.final_sql, registry)
            detail["gold"] = _result_shape(instance.db_id, instance.gold_sql, registry)
        flag = InconsistencyFlag(
            instance_id=instance.instance_id,
            generated_final_sql=record.final_sql,
            detail=detail,
        )
        return record, flag

    if max_workers > 1 and len(pending) > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            outcomes = list(pool.map(work, pending))
    else:
        outcomes = [work(instance) for instance in pending]

    records: list[ValidatedCotRecord] = []
    flags: list[InconsistencyFlag] = []
    for record, flag in outcomes:
        if record is not None:
            records.append(record)
        if flag is not None:
            flags.append(flag)
    logger.info(
        "rationalizer pass: %d positives, %d flags over %d pending",
        sum(1 for r in records if r.is_positive),
        len(flags),
        len(pending),
    )
    return records, flags


# --------------------------------------------------------------------------
# Triage


class TriageError(Exception):
    pass


@dataclass
class ReviewEntry:
    flag_id: str
    disposition: str  # gold_wrong | generation_wrong | unreviewed
    corrected_gold_sql: str | None = None


def load_review_file(path: str | Path) -> list[ReviewEntry]:
    entries: list[ReviewEntry] = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        data = json.loads(line)
        entries.append(
            ReviewEntry(
                flag_id=str(data["flag_id"]),
                disposition=data["disposition"],
                corrected_gold_sql=data.get("corrected_gold_sql"),
            )
        )
    return entries


@dataclass
class TriageResult:
    corpus: list[TrainInstance]
    excluded_ids: list[str]
    corrected_ids: list[str]
    returned_to_pending: list[str]
    audit: dict = field(default_factory=dict)


def triage_inconsistencies(
    corpus: Sequence[TrainInstance],
    flags: Sequence[InconsistencyFlag],
    review: Sequence[ReviewEntry],
) -> TriageResult:
    """Apply human dispositions to flagged instances.

    ``gold_wrong`` excludes the instance from exported training sets, or
    swaps in the corrected gold when the review supplies one.
    ``generation_wrong`` keeps the instance; it simply stays pending.
    """
    flag_index: Mapping[str, InconsistencyFlag] = {f.flag_id: f for f in flags}
    excluded: list[str] = []
    corrected: dict[str, str] = {}
    pending_again: list[str] = []
    dispositions: list[dict] = []
    for entry in review:
        flag = flag_index.get(entry.flag_id)
        if flag is None:
            raise TriageError(f"review references unknown flag id: {entry.flag_id}")
        flag.disposition = entry.disposition
        action = "none"
        if entry.disposition == "gold_wrong":
            if entry.corrected_gold_sql:
                corrected[flag.instance_id] = entry.corrected_gold_sql
                action = "gold_replaced"
            else:
                excluded.append(flag.instance_id)
                action = "excluded"
        elif entry.disposition == "generation_wrong":
            pending_again.append(flag.instance_id)
            action = "returned_to_pending"
        elif entry.disposition != "unreviewed":
            raise TriageError(f"unknown disposition: {entry.disposition!r}")
        dispositions.append(
            {"flag_id": entry.flag_id, "disposition": entry.disposition, "action": action}
        )

    excluded_set = set(excluded)
    updated: list[TrainInstance] = []
    for instance in corpus:
        if instance.instance_id in excluded_set:
            continue
        if instance.instance_id in corrected:
            updated.append(replace(instance, gold_sql=corrected[instance.instance_id]))
        else:
            updated.append(instance)

    unreviewed = [f.flag_id for f in flags if f.disposition == "unreviewed"]
    audit = {
        "dispositions": dispositions,
        "excluded": len(excluded),
        "corrected": len(corrected),
        "returned_to_pending": len(pending_again),
        "unreviewed_remaining": len(unreviewed),
    }
    return TriageResult(
        corpus=updated,
        excluded_ids=excluded,
        corrected_ids=sorted(corrected),
        returned_to_pending=pending_again,
        audit=audit,
    )
