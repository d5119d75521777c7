from __future__ import annotations

import importlib.util
import shutil
import sys
from pathlib import Path

import pytest

from sqlcot.corpus import DatabaseRegistry, TrainInstance, load_corpus
from sqlcot.execval import Verdict
from sqlcot.rationale import CotRationale, CotStep
from sqlcot.repository import ValidatedCotRecord
from sqlcot.sqllex import KeywordVocabulary

REPO_ROOT = Path(__file__).resolve().parent.parent
FIXTURES_DIR = Path(__file__).resolve().parent / "fixtures"
BUNDLED_DIR = REPO_ROOT / "fixtures"


def _load_builder():
    spec = importlib.util.spec_from_file_location(
        "toy_fixture_builder", BUNDLED_DIR / "make_fixtures.py"
    )
    module = importlib.util.module_from_spec(spec)
    assert spec.loader is not None
    sys.modules.setdefault("toy_fixture_builder", module)
    spec.loader.exec_module(module)
    return module


@pytest.fixture(scope="session")
def fixture_builder():
    return _load_builder()


@pytest.fixture(scope="session")
def db_dir(tmp_path_factory, fixture_builder) -> Path:
    out = tmp_path_factory.mktemp("dbs")
    fixture_builder.build_all(out)
    return out


@pytest.fixture(scope="session")
def registry(db_dir) -> DatabaseRegistry:
    return DatabaseRegistry(
        databases={"campus": db_dir / "campus.sqlite", "shop": db_dir / "shop.sqlite"},
        timeout=10.0,
    )


@pytest.fixture(scope="session")
def toy_corpus() -> list[TrainInstance]:
    return load_corpus(BUNDLED_DIR / "toy_corpus.jsonl", "generic_jsonl")


@pytest.fixture(scope="session")
def corpus_index(toy_corpus) -> dict[str, TrainInstance]:
    return {instance.instance_id: instance for instance in toy_corpus}


@pytest.fixture(scope="session")
def vocab() -> KeywordVocabulary:
    return KeywordVocabulary.default()


@pytest.fixture(scope="session")
def appendix_doc() -> str:
    return (FIXTURES_DIR / "prof_popularity_rationale.md").read_text(encoding="utf-8")


@pytest.fixture()
def pipeline_dir(tmp_path, fixture_builder) -> Path:
    """A self-contained copy of the bundled pipeline in a temp directory."""
    target = tmp_path / "pipeline"
    shutil.copytree(BUNDLED_DIR, target, ignore=shutil.ignore_patterns("*.sqlite", "out"))
    fixture_builder.build_all(target)
    return target


def make_positive_record(
    instance_id: str,
    final: str = "SELECT 1",
    iteration: int = 1,
    decoding: str = "greedy",
    steps: int = 2,
    vocab: KeywordVocabulary | None = None,
    prose: str = "Work it out.",
) -> ValidatedCotRecord:
    """A minimal positive record for tests that never execute SQL."""
    cot_steps = [CotStep(index=1, title="Plan", prose=prose)]
    for index in range(2, steps + 1):
        cot_steps.append(
            CotStep(index=index, title=f"Build part {index - 1}", prose="", sql=final)
        )
    cot = CotRationale(steps=cot_steps)
    return ValidatedCotRecord.build(
        instance_id,
        cot,
        Verdict(label="positive", detail="match"),
        iteration=iteration,
        decoding=decoding,
        vocab=vocab,
    )
