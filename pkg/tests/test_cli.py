from __future__ import annotations

import json

import pytest
from click.testing import CliRunner

from sqlcot.cli import main


@pytest.fixture()
def runner():
    return CliRunner()


def _invoke(runner, *args):
    result = runner.invoke(main, list(args), catch_exceptions=False)
    return result


def _run_pipeline(runner, pipeline_dir):
    config = str(pipeline_dir / "pipeline.toml")
    for args in (
        ("clean", "--config", config),
        ("bootstrap", "--config", config, "--teacher", "mock"),
        ("rationalize", "--config", config, "--model", "mock"),
        ("export", "--config", config, "--variant", "gold", "--scope", "covered_only"),
        ("export", "--config", config, "--variant", "cot_long", "--scope", "full"),
        ("report", "--config", config),
    ):
        result = _invoke(runner, *args)
        assert result.exit_code == 0, f"{args}: {result.output}"
    return pipeline_dir / "out"


def test_version_flag(runner):
    result = _invoke(runner, "--version")
    assert result.exit_code == 0
    assert "sqlcot" in result.output


def test_clean_produces_artifacts(runner, pipeline_dir):
    config = str(pipeline_dir / "pipeline.toml")
    result = _invoke(runner, "clean", "--config", config)
    assert result.exit_code == 0
    assert "kept 30/30" in result.output
    report = json.loads((pipeline_dir / "out" / "cleaning_report.json").read_text())
    assert report["kept"] == 30 and report["rejected"] == []
    assert (pipeline_dir / "out" / "cleaned_corpus.jsonl").exists()


def test_full_offline_pipeline_produces_all_artifacts(runner, pipeline_dir):
    out = _run_pipeline(runner, pipeline_dir)
    for name in (
        "cleaned_corpus.jsonl",
        "cleaning_report.json",
        "bootstrap_report.json",
        "rationalization_trainset.jsonl",
        "inconsistency_flags.jsonl",
        "finetune_gold_covered_only.jsonl",
        "finetune_cot_long_full.jsonl",
        "coverage_report.json",
        "coverage_report.txt",
        "coverage_report.png",
    ):
        assert (out / name).exists(), name
    assert (pipeline_dir / "out" / "repository.jsonl").exists()

    coverage = json.loads((out / "coverage_report.json").read_text())
    percentages = [row["percentage"] for row in coverage["rows"]]
    assert percentages[-1] == 100.0
    assert percentages == sorted(percentages)

    full_export = (out / "finetune_cot_long_full.jsonl").read_text().splitlines()
    assert len(full_export) == 30


def test_eval_command_scores_sample_predictions(runner, pipeline_dir):
    config = str(pipeline_dir / "pipeline.toml")
    assert _invoke(runner, "clean", "--config", config).exit_code == 0
    result = _invoke(
        runner,
        "eval",
        "--config",
        config,
        "--predictions",
        str(pipeline_dir / "sample_predictions.jsonl"),
    )
    assert result.exit_code == 0, result.output
    report = json.loads((pipeline_dir / "out" / "eval_report.json").read_text())
    # Two seeded misses out of thirty.
    assert report["total"]["correct"] == 28
    assert (pipeline_dir / "out" / "eval_report.png").exists()
    assert (pipeline_dir / "out" / "eval_report.txt").exists()


def test_bootstrap_missing_seeds_dir_errors_with_path(runner, pipeline_dir):
    config_path = pipeline_dir / "pipeline.toml"
    text = config_path.read_text().replace('seeds_dir = "seeds"', 'seeds_dir = "no_such_dir"')
    # pipeline.toml has no explicit seeds_dir; set one that does not exist.
    if "no_such_dir" not in text:
        text = text.replace("[paths]", '[paths]\nseeds_dir = "no_such_dir"')
    config_path.write_text(text)
    runner_result = CliRunner().invoke(
        main, ["bootstrap", "--config", str(config_path), "--teacher", "mock"]
    )
    assert runner_result.exit_code == 1
    payload = json.loads(runner_result.stderr.strip().splitlines()[-1])
    assert "no_such_dir" in payload["message"]


def test_error_json_on_missing_corpus(runner, tmp_path):
    config = tmp_path / "pipeline.json"
    config.write_text(
        json.dumps(
            {
                "paths": {
                    "corpus": "missing.jsonl",
                    "registry": "missing_registry.json",
                }
            }
        )
    )
    result = CliRunner().invoke(main, ["clean", "--config", str(config)])
    assert result.exit_code == 1
    payload = json.loads(result.stderr.strip().splitlines()[-1])
    assert payload["error"] == "ConfigError"


def test_rerun_is_idempotent(runner, pipeline_dir):
    out = _run_pipeline(runner, pipeline_dir)
    config = str(pipeline_dir / "pipeline.toml")
    gold_before = (out / "finetune_gold_covered_only.jsonl").read_bytes()
    repo_before = (pipeline_dir / "out" / "repository.jsonl").read_text()

    for args in (
        ("bootstrap", "--config", config, "--teacher", "mock"),
        ("rationalize", "--config", config, "--model", "mock"),
        ("export", "--config", config, "--variant", "gold", "--scope", "covered_only"),
    ):
        assert _invoke(runner, *args).exit_code == 0

    assert (out / "finetune_gold_covered_only.jsonl").read_bytes() == gold_before
    repo_after = (pipeline_dir / "out" / "repository.jsonl").read_text()
    assert repo_after == repo_before  # nothing new appended on rerun


def test_compact_removes_crash_duplicated_lines(runner, pipeline_dir):
    config = str(pipeline_dir / "pipeline.toml")
    assert _invoke(runner, "clean", "--config", config).exit_code == 0
    assert _invoke(runner, "bootstrap", "--config", config, "--teacher", "mock").exit_code == 0
    repo_path = pipeline_dir / "out" / "repository.jsonl"
    lines = repo_path.read_text().splitlines(keepends=True)
    repo_path.write_text("".join(lines) + lines[0])  # simulate a torn append
    result = _invoke(runner, "compact", "--config", config)
    assert result.exit_code == 0
    assert repo_path.read_text().splitlines() == [line.rstrip("\n") for line in lines]


def test_seeds_flag_overrides_config(runner, pipeline_dir, tmp_path):
    config = str(pipeline_dir / "pipeline.toml")
    assert _invoke(runner, "clean", "--config", config).exit_code == 0
    result = CliRunner().invoke(
        main,
        ["bootstrap", "--config", config, "--teacher", "mock", "--seeds", str(tmp_path / "elsewhere")],
    )
    assert result.exit_code == 1
    payload = json.loads(result.stderr.strip().splitlines()[-1])
    assert "elsewhere" in payload["message"]
