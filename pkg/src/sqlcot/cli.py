"""Pipeline CLI: clean -> bootstrap -> rationalize -> export / eval / report.

Every command is idempotent over its outputs and never mutates the source
corpus or databases. Failures exit nonzero with a machine-readable error
JSON on stderr.
"""

from __future__ import annotations

import functools
import json
import logging
import sys
from pathlib import Path

import click

from . import __version__
from .bootstrap import (
    SeedValidationError,
    PromptError,
    bootstrap_loop,
    load_seed_records,
)
from .clients import HttpTeacherClient, ReplayTeacherClient, TeacherError
from .config import ConfigError, PipelineConfig, load_pipeline_config
from .corpus import (
    CorpusError,
    DatabaseRegistry,
    MissingDatabaseError,
    clean_corpus,
    load_corpus,
    write_corpus,
)
from .evalharness import PredictionError, load_predictions, score_predictions
from .execval import ExecutionError
from .export import (
    ExportError,
    SCOPES,
    VARIANTS,
    coverage_report,
    export_finetune_set,
    round_percentage,
)
from .figures import save_coverage_figure, save_eval_figure
from .rationalizer import (
    ProceduralTeacherClient,
    RationalizerError,
    apply_rationalizer,
    export_rationalization_trainset,
    max_cosine_rule,
    shared_keyword_rule,
)
from .repository import CotRepository, RepositoryError
from .sqllex import KeywordVocabulary

logger = logging.getLogger(__name__)

_EXPECTED_ERRORS = (
    ConfigError,
    CorpusError,
    MissingDatabaseError,
    RepositoryError,
    TeacherError,
    ExportError,
    RationalizerError,
    PredictionError,
    SeedValidationError,
    PromptError,
    ExecutionError,
    FileNotFoundError,
    ValueError,
)


def _fail(exc: Exception) -> None:
    payload = {"error": type(exc).__name__, "message": str(exc)}
    click.echo(json.dumps(payload), err=True)
    sys.exit(1)


def _guard(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except _EXPECTED_ERRORS as exc:
            _fail(exc)

    return wrapper


def _load_config(
    config_path: str,
    corpus: str | None = None,
    seeds_dir: str | None = None,
    output_dir: str | None = None,
) -> PipelineConfig:
    """Load the config file and apply flag overrides (resolved from cwd)."""
    config = load_pipeline_config(config_path)
    if corpus is not None:
        config.corpus = Path(corpus).resolve()
    if seeds_dir is not None:
        config.seeds_dir = Path(seeds_dir).resolve()
    if output_dir is not None:
        config.output_dir = Path(output_dir).resolve()
    return config


def _vocab(config: PipelineConfig) -> KeywordVocabulary:
    if config.vocabulary is not None:
        return KeywordVocabulary.load(config.vocabulary)
    return KeywordVocabulary.default()


def _pipeline_corpus(config: PipelineConfig):
    """The cleaned corpus when present, else the raw one."""
    cleaned = config.output_dir / "cleaned_corpus.jsonl"
    if cleaned.exists():
        logger.info("using cleaned corpus %s", cleaned)
        return load_corpus(cleaned, "generic_jsonl")
    logger.info("cleaned corpus not found; using raw corpus %s", config.corpus)
    return load_corpus(config.corpus, config.corpus_format)


def _build_teacher(config: PipelineConfig, kind: str | None, corpus, registry, vocab):
    kind = kind or config.teacher.kind
    settings = config.teacher
    if kind == "http":
        if not settings.endpoint:
            raise ConfigError("teacher.endpoint is required for the http client")
        transcript = (config.base_dir / settings.transcript).resolve() if settings.transcript else None
        return HttpTeacherClient(
            endpoint=settings.endpoint,
            model=settings.model,
            api_key_env=settings.api_key_env,
            transcript_path=transcript,
        )
    if kind == "replay":
        if not settings.transcript:
            raise ConfigError("teacher.transcript is required for the replay client")
        return ReplayTeacherClient((config.base_dir / settings.transcript).resolve())
    success_rule = None
    if settings.mock_max_cosine > 0:
        success_rule = max_cosine_rule(settings.mock_max_cosine, vocab)
    elif settings.mock_min_shared_keywords > 0:
        success_rule = shared_keyword_rule(min_shared=settings.mock_min_shared_keywords, vocab=vocab)
    return ProceduralTeacherClient(
        corpus=corpus,
        registry=registry,
        vocab=vocab,
        success_rule=success_rule,
        hard_fail=settings.mock_hard_fail,
    )


def _write_json(path: Path, payload) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


@click.group()
@click.version_option(__version__, prog_name="sqlcot")
@click.option("-v", "--verbose", is_flag=True, help="Enable debug logging.")
def main(verbose: bool) -> None:
    """Bootstrap, validate, and export SQL-building rationales."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--corpus", "corpus_path", type=click.Path(exists=True), default=None,
              help="Override paths.corpus from the config.")
@click.option("--out-dir", "out_dir", type=click.Path(), default=None,
              help="Override paths.output_dir from the config.")
@_guard
def clean(config_path: str, corpus_path: str | None, out_dir: str | None) -> None:
    """Drop instances whose gold SQL fails, times out, or returns no rows."""
    config = _load_config(config_path, corpus=corpus_path, output_dir=out_dir)
    config.validate_paths()
    registry = DatabaseRegistry.load(config.registry)
    instances = load_corpus(config.corpus, config.corpus_format)
    kept, report = clean_corpus(instances, registry, max_workers=config.workers)
    config.output_dir.mkdir(parents=True, exist_ok=True)
    write_corpus(kept, config.output_dir / "cleaned_corpus.jsonl")
    _write_json(config.output_dir / "cleaning_report.json", report.to_dict())
    click.echo(f"kept {report.kept}/{len(instances)} instances")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--teacher", "teacher_kind", type=click.Choice(["mock", "replay", "http"]), default=None)
@click.option("--corpus", "corpus_path", type=click.Path(exists=True), default=None,
              help="Override paths.corpus from the config.")
@click.option("--seeds", "seeds_dir", type=click.Path(), default=None,
              help="Override paths.seeds_dir from the config.")
@_guard
def bootstrap(
    config_path: str, teacher_kind: str | None, corpus_path: str | None, seeds_dir: str | None
) -> None:
    """Run the dynamic few-shot loop until coverage plateaus."""
    config = _load_config(config_path, corpus=corpus_path, seeds_dir=seeds_dir)
    config.validate_paths(require_seeds=True)
    registry = DatabaseRegistry.load(config.registry)
    vocab = _vocab(config)
    corpus = _pipeline_corpus(config)
    corpus_index = {i.instance_id: i for i in corpus}
    teacher = _build_teacher(config, teacher_kind, corpus, registry, vocab)
    seeds = load_seed_records(config.seeds_dir, corpus_index, registry, vocab)
    repository = CotRepository.load(config.repo_file)
    repository, reports = bootstrap_loop(
        corpus, seeds, teacher, config.bootstrap, registry, repository, vocab
    )
    total = len(corpus)
    payload = []
    for report in reports:
        entry = report.to_dict()
        entry["cumulative_covered"] = len(
            {r.instance_id for r in repository.positive_records() if r.iteration <= report.iteration}
        )
        entry["coverage_pct"] = round_percentage(entry["cumulative_covered"], total)
        payload.append(entry)
    config.output_dir.mkdir(parents=True, exist_ok=True)
    _write_json(config.output_dir / "bootstrap_report.json", payload)
    covered = len(repository.covered_ids())
    click.echo(
        f"bootstrap finished after {len(reports)} iteration(s); "
        f"coverage {covered}/{total} ({round_percentage(covered, total):.2f}%)"
    )


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--model", "model_kind", type=click.Choice(["mock", "replay", "http"]), default=None)
@_guard
def rationalize(config_path: str, model_kind: str | None) -> None:
    """Export the rationalization trainset, then cover pending instances."""
    config = _load_config(config_path)
    config.validate_paths()
    registry = DatabaseRegistry.load(config.registry)
    vocab = _vocab(config)
    corpus = _pipeline_corpus(config)
    repository = CotRepository.load(config.repo_file)
    config.output_dir.mkdir(parents=True, exist_ok=True)
    count = export_rationalization_trainset(
        repository,
        corpus,
        config.output_dir / "rationalization_trainset.jsonl",
        registry,
        config.sample_rows,
    )
    covered = repository.covered_ids()
    pending = [i for i in corpus if i.instance_id not in covered]
    model = _build_teacher(config, model_kind, corpus, registry, vocab)
    records, flags = apply_rationalizer(
        pending,
        model,
        registry,
        vocab=vocab,
        iteration=repository.max_iteration() + 1,
        max_workers=config.workers,
        sample_rows=config.sample_rows,
        model_name=config.teacher.model,
    )
    repository.add_many(records)
    flags_path = config.output_dir / "inconsistency_flags.jsonl"
    with flags_path.open("w", encoding="utf-8") as fh:
        for flag in flags:
            fh.write(json.dumps(flag.to_dict(), ensure_ascii=False) + "\n")
    coverage = round_percentage(len(repository.covered_ids()), len(corpus))
    click.echo(
        f"trainset {count} examples; rationalized {len(pending)} pending, "
        f"{len(flags)} flags; coverage {coverage:.2f}%"
    )


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--variant", type=click.Choice(list(VARIANTS)), required=True)
@click.option("--scope", type=click.Choice(list(SCOPES)), default="covered_only", show_default=True)
@_guard
def export(config_path: str, variant: str, scope: str) -> None:
    """Write a fine-tuning JSONL dataset for one variant and scope."""
    config = _load_config(config_path)
    config.validate_paths()
    registry = DatabaseRegistry.load(config.registry)
    corpus = _pipeline_corpus(config)
    repository = CotRepository.load(config.repo_file)
    out = config.output_dir / f"finetune_{variant}_{scope}.jsonl"
    config.output_dir.mkdir(parents=True, exist_ok=True)
    count = export_finetune_set(
        corpus, repository, variant, scope, out, registry, config.sample_rows
    )
    click.echo(f"wrote {count} examples to {out}")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--predictions", "predictions_path", required=True, type=click.Path(exists=True))
@click.option("--devset", "devset_path", type=click.Path(exists=True), default=None,
              help="Dev corpus; defaults to the pipeline corpus.")
@click.option("--devset-format", default="generic_jsonl", show_default=True)
@_guard
def eval(config_path: str, predictions_path: str, devset_path: str | None, devset_format: str) -> None:
    """Score a prediction file by execution accuracy, per difficulty."""
    config = _load_config(config_path)
    config.validate_paths()
    registry = DatabaseRegistry.load(config.registry)
    if devset_path is not None:
        devset = load_corpus(devset_path, devset_format)
    else:
        devset = _pipeline_corpus(config)
    predictions = load_predictions(predictions_path)
    report = score_predictions(devset, predictions, registry, max_workers=config.workers)
    config.output_dir.mkdir(parents=True, exist_ok=True)
    _write_json(config.output_dir / "eval_report.json", report.to_dict())
    (config.output_dir / "eval_report.txt").write_text(report.render_table() + "\n", encoding="utf-8")
    save_eval_figure(report, config.output_dir / "eval_report.png")
    click.echo(report.render_table())


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@_guard
def compact(config_path: str) -> None:
    """Rewrite the repository file without duplicate records."""
    config = _load_config(config_path)
    repository = CotRepository.load(config.repo_file)
    count = repository.compact()
    click.echo(f"repository compacted to {count} records")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@_guard
def report(config_path: str) -> None:
    """Render the per-stage coverage report (JSON, text table, figure)."""
    config = _load_config(config_path)
    config.validate_paths()
    corpus = _pipeline_corpus(config)
    repository = CotRepository.load(config.repo_file)
    coverage = coverage_report(corpus, repository)
    config.output_dir.mkdir(parents=True, exist_ok=True)
    _write_json(config.output_dir / "coverage_report.json", coverage.to_dict())
    (config.output_dir / "coverage_report.txt").write_text(
        coverage.render_table() + "\n", encoding="utf-8"
    )
    save_coverage_figure(coverage, config.output_dir / "coverage_report.png")
    click.echo(coverage.render_table())


if __name__ == "__main__":
    main()
