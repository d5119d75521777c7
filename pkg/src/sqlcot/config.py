"""Pipeline configuration: one TOML or JSON file, flag overrides on top.

All paths resolve relative to the config file's directory. Secrets never
live in the file; HTTP credentials come from the environment variable named
by ``teacher.api_key_env``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .bootstrap import BootstrapConfig


class ConfigError(Exception):
    pass


@dataclass
class TeacherSettings:
    kind: str = "mock"  # mock | replay | http
    endpoint: str = ""
    model: str = "teacher"
    api_key_env: str = "SQLCOT_TEACHER_API_KEY"
    transcript: str = ""
    # Knobs for the procedural mock; zero disables the corresponding gate.
    mock_max_cosine: float = 0.0
    mock_min_shared_keywords: int = 0
    mock_hard_fail: list[str] = field(default_factory=list)


@dataclass
class PipelineConfig:
    base_dir: Path
    corpus: Path
    corpus_format: str
    registry: Path
    seeds_dir: Path
    repo_file: Path
    output_dir: Path
    vocabulary: Path | None
    bootstrap: BootstrapConfig
    teacher: TeacherSettings
    workers: int = 1
    sample_rows: int = 3

    def validate_paths(self, require_seeds: bool = False) -> None:
        if not self.corpus.exists():
            raise ConfigError(f"corpus file not found: {self.corpus}")
        if not self.registry.exists():
            raise ConfigError(f"registry file not found: {self.registry}")
        if require_seeds and not self.seeds_dir.is_dir():
            raise ConfigError(f"seeds directory not found: {self.seeds_dir}")
        if self.vocabulary is not None and not self.vocabulary.exists():
            raise ConfigError(f"vocabulary file not found: {self.vocabulary}")


def _read_config_data(path: Path) -> dict:
    text = path.read_text(encoding="utf-8")
    if path.suffix.lower() == ".toml":
        try:
            import tomllib
        except ImportError:
            import tomli as tomllib
        return tomllib.loads(text)
    return json.loads(text)


def load_pipeline_config(path: str | Path) -> PipelineConfig:
    path = Path(path).resolve()
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = _read_config_data(path)
    except Exception as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    base = path.parent

    paths = data.get("paths", {})

    def _resolve(key: str, default: str | None = None) -> Path:
        value = paths.get(key, default)
        if value is None:
            raise ConfigError(f"config is missing paths.{key}")
        return (base / str(value)).resolve()

    bootstrap_data = dict(data.get("bootstrap", {}))
    runtime = data.get("runtime", {})
    workers = int(runtime.get("workers", 1))
    sample_rows = int(runtime.get("sample_rows", 3))
    bootstrap_data.setdefault("max_workers", workers)
    bootstrap_data.setdefault("sample_rows", sample_rows)
    try:
        bootstrap = BootstrapConfig(**bootstrap_data)
        bootstrap.validate()
    except TypeError as exc:
        raise ConfigError(f"bad [bootstrap] section: {exc}") from exc

    teacher_data = data.get("teacher", {})
    teacher = TeacherSettings(
        kind=str(teacher_data.get("kind", "mock")),
        endpoint=str(teacher_data.get("endpoint", "")),
        model=str(teacher_data.get("model", "teacher")),
        api_key_env=str(teacher_data.get("api_key_env", "SQLCOT_TEACHER_API_KEY")),
        transcript=str(teacher_data.get("transcript", "")),
        mock_max_cosine=float(teacher_data.get("mock_max_cosine", 0.0)),
        mock_min_shared_keywords=int(teacher_data.get("mock_min_shared_keywords", 0)),
        mock_hard_fail=[str(i) for i in teacher_data.get("mock_hard_fail", [])],
    )
    if teacher.kind not in ("mock", "replay", "http"):
        raise ConfigError(f"teacher.kind must be mock, replay, or http (got {teacher.kind!r})")

    vocabulary_value = data.get("vocabulary", {}).get("file", "")
    vocabulary = (base / vocabulary_value).resolve() if vocabulary_value else None

    return PipelineConfig(
        base_dir=base,
        corpus=_resolve("corpus"),
        corpus_format=str(paths.get("corpus_format", "generic_jsonl")),
        registry=_resolve("registry"),
        seeds_dir=_resolve("seeds_dir", "seeds"),
        repo_file=_resolve("repo_file", "out/repository.jsonl"),
        output_dir=_resolve("output_dir", "out"),
        vocabulary=vocabulary,
        bootstrap=bootstrap,
        teacher=teacher,
        workers=workers,
        sample_rows=sample_rows,
    )
