"""Dynamic few-shot bootstrap loop.

Each iteration freezes the repository, ranks exemplars for every still
uncovered instance by SQL-keyword cosine similarity, prompts the teacher,
validates the returned rationale by execution, and appends the outcome.
Iterations alternate greedy and sampling decoding and the loop stops when an
iteration adds no new positive record (plateau) or the iteration budget is
exhausted.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from .clients import TeacherClient, TeacherError, TeacherRequest, call_with_retries
from .corpus import DatabaseRegistry, TrainInstance, render_schema_fallback
from .execval import validate_cot
from .rationale import CotParseError, parse_cot
from .repository import CotRepository, ValidatedCotRecord
from .sqllex import KeywordVocabulary, rank_examples

logger = logging.getLogger(__name__)

# Instruction sentence the prompt's target block ends with.
INSTRUCTION = (
    "Given the above [SCHEMA] of a database and a question [QUESTION], "
    "translate the question into a valid SQLite statement. Decompose the SQL "
    "in increasingly complex building blocks. Explain each step of the SQL "
    "building process thinking step by step. Format the output using the "
    "Markdown language."
)


class PromptError(Exception):
    """An instance has no schema text and no fallback renderer available."""


class SeedValidationError(Exception):
    """No supplied seed survived validation."""


@dataclass
class BootstrapConfig:
    few_shot_n: int = 3
    max_iterations: int = 16
    greedy_temperature: float = 0.0
    sampling_temperature: float = 0.7
    sampling_seed: int = 1
    stop_on_plateau: bool = True
    retries: int = 3
    retry_backoff: float = 0.5
    max_workers: int = 1
    model: str = "teacher"
    sample_rows: int = 3

    def validate(self) -> None:
        if self.few_shot_n < 1:
            raise ValueError("few_shot_n must be >= 1")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.greedy_temperature < 0 or self.sampling_temperature < 0:
            raise ValueError("temperatures must be >= 0")


@dataclass
class DecodingParams:
    mode: str  # greedy | sampling
    temperature: float
    seed: int | None


def select_decoding(iteration: int, config: BootstrapConfig) -> DecodingParams:
    """Odd iterations decode greedily, even ones sample with a derived seed."""
    if iteration < 1:
        raise ValueError("iteration must be >= 1")
    if iteration % 2 == 1:
        return DecodingParams(mode="greedy", temperature=config.greedy_temperature, seed=None)
    return DecodingParams(
        mode="sampling",
        temperature=config.sampling_temperature,
        seed=config.sampling_seed + iteration,
    )


@dataclass
class InstanceFailure:
    instance_id: str
    reason: str  # teacher_error | parse_error | negative
    detail: str = ""

    def to_dict(self) -> dict:
        return {"instance_id": self.instance_id, "reason": self.reason, "detail": self.detail}


@dataclass
class IterationReport:
    iteration: int
    mode: str
    new_records: list[ValidatedCotRecord] = field(default_factory=list)
    negative_records: list[ValidatedCotRecord] = field(default_factory=list)
    failures: list[InstanceFailure] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "mode": self.mode,
            "new_positive": len(self.new_records),
            "failures": [f.to_dict() for f in self.failures],
        }


def resolve_schema_text(
    instance: TrainInstance,
    registry: DatabaseRegistry | None = None,
    sample_rows: int = 3,
) -> str:
    """Schema text from the instance when present, else the fallback renderer."""
    if instance.schema_text:
        return instance.schema_text
    if registry is None:
        raise PromptError(
            f"instance {instance.instance_id} has no schema text and no registry was given"
        )
    return render_schema_fallback(instance.db_id, registry, sample_rows=sample_rows)


def build_source_block(
    instance: TrainInstance,
    registry: DatabaseRegistry | None = None,
    sample_rows: int = 3,
) -> str:
    """The ``[SCHEMA] … [/SCHEMA]`` + ``[QUESTION] … [/QUESTION]`` block.

    Evidence text, when present, is appended inside the schema as a ``Note:``
    section, matching where linker hints would carry such glosses.
    """
    schema = resolve_schema_text(instance, registry, sample_rows)
    if instance.evidence:
        note = "Note:\n" + instance.evidence.strip()
        schema = f"{schema}\n\n{note}" if schema else note
    return f"[SCHEMA]\n{schema}\n[/SCHEMA]\n\n[QUESTION]\n{instance.question}\n[/QUESTION]"


def build_prompt(
    instance: TrainInstance,
    exemplars: Sequence[ValidatedCotRecord],
    corpus_index: Mapping[str, TrainInstance] | None = None,
    registry: DatabaseRegistry | None = None,
    sample_rows: int = 3,
) -> str:
    """Assemble the few-shot prompt for one instance.

    Each exemplar contributes its own source block, the instruction, and its
    rationale; the target instance's source block plus the instruction close
    the prompt. With zero exemplars this is exactly the plain source layout.
    """
    corpus_index = corpus_index or {}
    blocks: list[str] = []
    for record in exemplars:
        if not record.is_positive:
            raise ValueError(f"exemplar {record.key[:12]} is not a positive record")
        exemplar_instance = corpus_index.get(record.instance_id)
        if exemplar_instance is None:
            raise PromptError(f"exemplar instance {record.instance_id} not found in corpus")
        source = build_source_block(exemplar_instance, registry, sample_rows)
        blocks.append(f"{source}\n\n{INSTRUCTION}\n\n{record.cot_markdown.strip()}")
    target = build_source_block(instance, registry, sample_rows)
    blocks.append(f"{target}\n\n{INSTRUCTION}")
    return "\n\n".join(blocks)


def _process_instance(
    instance: TrainInstance,
    positives: Sequence[ValidatedCotRecord],
    teacher: TeacherClient,
    config: BootstrapConfig,
    params: DecodingParams,
    iteration: int,
    registry: DatabaseRegistry,
    corpus_index: Mapping[str, TrainInstance],
    vocab: KeywordVocabulary,
) -> tuple[ValidatedCotRecord | None, InstanceFailure | None]:
    exemplars = rank_examples(
        instance.gold_sql,
        positives,
        config.few_shot_n,
        vocab=vocab,
        exclude_instance_id=instance.instance_id,
    )
    prompt = build_prompt(instance, exemplars, corpus_index, registry, config.sample_rows)
    request = TeacherRequest(
        prompt=prompt,
        model=config.model,
        temperature=params.temperature,
        seed=params.seed,
        mode=params.mode,
    )
    try:
        response = call_with_retries(
            teacher, request, retries=config.retries, backoff=config.retry_backoff
        )
    except TeacherError as exc:
        return None, InstanceFailure(instance.instance_id, "teacher_error", str(exc))
    try:
        cot = parse_cot(response.text)
    except CotParseError as exc:
        return None, InstanceFailure(instance.instance_id, "parse_error", str(exc))
    verdict = validate_cot(instance, cot, registry)
    record = ValidatedCotRecord.build(
        instance.instance_id, cot, verdict, iteration=iteration, decoding=params.mode, vocab=vocab
    )
    if record.is_positive:
        return record, None
    return record, InstanceFailure(instance.instance_id, "negative", verdict.detail)


def run_iteration(
    pending: Sequence[TrainInstance],
    repo_snapshot: Sequence[ValidatedCotRecord],
    teacher: TeacherClient,
    config: BootstrapConfig,
    iteration: int,
    registry: DatabaseRegistry,
    corpus_index: Mapping[str, TrainInstance],
    vocab: KeywordVocabulary | None = None,
) -> IterationReport:
    """One pass over the pending instances against a frozen exemplar pool."""
    config.validate()
    vocab = vocab or KeywordVocabulary.default()
    params = select_decoding(iteration, config)
    positives = [r for r in repo_snapshot if r.is_positive]
    report = IterationReport(iteration=iteration, mode=params.mode)

    def work(instance: TrainInstance):
        return _process_instance(
            instance, positives, teacher, config, params, iteration, registry, corpus_index, vocab
        )

    if config.max_workers > 1 and len(pending) > 1:
        with ThreadPoolExecutor(max_workers=config.max_workers) as pool:
            outcomes = list(pool.map(work, pending))
    else:
        outcomes = [work(instance) for instance in pending]

    # Assemble in input order so reports and appends are scheduling-independent.
    for record, failure in outcomes:
        if record is not None and record.is_positive:
            report.new_records.append(record)
        elif record is not None:
            report.negative_records.append(record)
        if failure is not None:
            report.failures.append(failure)
    logger.info(
        "iteration %d (%s): %d/%d new positives",
        iteration,
        params.mode,
        len(report.new_records),
        len(pending),
    )
    return report


def load_seed_records(
    seeds_dir: str | Path,
    corpus_index: Mapping[str, TrainInstance],
    registry: DatabaseRegistry,
    vocab: KeywordVocabulary | None = None,
) -> list[ValidatedCotRecord]:
    """Read ``<instance_id>.md`` seed rationales; iteration 0, decoding manual.

    Seeds here are parsed and stamped only; :func:`bootstrap_loop` performs
    the loud validation pass.
    """
    seeds_dir = Path(seeds_dir)
    if not seeds_dir.is_dir():
        raise FileNotFoundError(f"seeds directory not found: {seeds_dir}")
    records: list[ValidatedCotRecord] = []
    for path in sorted(seeds_dir.glob("*.md")):
        instance_id = path.stem
        instance = corpus_index.get(instance_id)
        if instance is None:
            raise SeedValidationError(f"seed {path.name} names unknown instance {instance_id}")
        cot = parse_cot(path.read_text(encoding="utf-8"))
        verdict = validate_cot(instance, cot, registry)
        records.append(
            ValidatedCotRecord.build(
                instance_id, cot, verdict, iteration=0, decoding="manual", vocab=vocab
            )
        )
    return records


def bootstrap_loop(
    corpus: Sequence[TrainInstance],
    seeds: Sequence[ValidatedCotRecord],
    teacher: TeacherClient,
    config: BootstrapConfig,
    registry: DatabaseRegistry,
    repository: CotRepository | None = None,
    vocab: KeywordVocabulary | None = None,
) -> tuple[CotRepository, list[IterationReport]]:
    """Run iterations until coverage plateaus or the budget is spent.

    Seeds are validated first; invalid ones are rejected loudly, and having
    none left is an error. The repository persists after every iteration, so
    an interrupted run resumes from its file.
    """
    config.validate()
    vocab = vocab or KeywordVocabulary.default()
    repository = repository if repository is not None else CotRepository()
    corpus_index = {instance.instance_id: instance for instance in corpus}

    valid_seeds: list[ValidatedCotRecord] = []
    for seed in seeds:
        instance = corpus_index.get(seed.instance_id)
        if instance is None:
            logger.error("seed %s rejected: unknown instance", seed.instance_id)
            continue
        if not seed.is_positive:
            logger.error("seed %s rejected: verdict %s", seed.instance_id, seed.verdict.detail)
            continue
        valid_seeds.append(seed)
    if seeds and not valid_seeds:
        raise SeedValidationError("all seeds failed validation")
    repository.add_many(valid_seeds)

    reports: list[IterationReport] = []
    for iteration in range(1, config.max_iterations + 1):
        covered = repository.covered_ids()
        pending = [inst for inst in corpus if inst.instance_id not in covered]
        snapshot = repository.snapshot()
        report = run_iteration(
            pending, snapshot, teacher, config, iteration, registry, corpus_index, vocab
        )
        added = repository.add_many(report.new_records + report.negative_records)
        added_positive = sum(1 for record in added if record.is_positive)
        reports.append(report)
        if config.stop_on_plateau and added_positive == 0:
            logger.info("plateau at iteration %d; stopping", iteration)
            break
    return repository, reports
