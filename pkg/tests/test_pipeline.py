import hashlib
import json
from pathlib import Path

import pytest

from newsgraph.cli import bundled_fixture, fixture_config, main
from newsgraph.config import PipelineConfig, derive_seed
from newsgraph.pipeline import STAGE_DEPS, STAGES, Pipeline, StageError, stage_order


def test_stage_order_respects_dependencies():
    pos = {s: i for i, s in enumerate(STAGES)}
    for stage, deps in STAGE_DEPS.items():
        assert all(pos[d] < pos[stage] for d in deps)


def test_cycle_detected():
    with pytest.raises(RuntimeError, match="cycle"):
        stage_order({"a": ("b",), "b": ("a",)})


def test_config_defaults():
    cfg = PipelineConfig()
    assert cfg.start_date == "2020-06-01"
    assert cfg.k_range == list(range(2, 15))
    assert cfg.beta == 1.0
    assert cfg.stability_threshold == 2.0
    assert str(cfg.threshold()) == "1/6"
    assert cfg.dislocation_mean == 0.5
    assert cfg.exclude_weeks == ["2021-03-14"]
    assert cfg.walk_config().dims == 8


def test_config_file_roundtrip(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text('seed = 3\nbeta = 0.5\nexperiments = ["predictive"]\n[walk]\ndims = 4\n')
    cfg = PipelineConfig.from_file(p)
    assert cfg.seed == 3 and cfg.walk_config().dims == 4
    j = tmp_path / "c.json"
    j.write_text(json.dumps(cfg.to_dict()))
    assert PipelineConfig.from_file(j) == cfg
    with pytest.raises(ValueError):
        PipelineConfig.from_dict({"nope": 1})
    with pytest.raises(ValueError):
        PipelineConfig(walk={"bogus": 1})


def test_digest_ignores_output_dir_only():
    a = PipelineConfig(output_dir="x")
    assert a.digest() == PipelineConfig(output_dir="y").digest()
    assert a.digest() != PipelineConfig(seed=1).digest()
    assert derive_seed(0, "embed", "w") != derive_seed(0, "nmf", "w")
    assert derive_seed(0, "embed", "w") == derive_seed(0, "embed", "w")


def test_bundled_fixture_present():
    d = bundled_fixture()
    assert (d / "corpus.jsonl").exists()
    assert len((d / "corpus.jsonl").read_text().splitlines()) == 320


def test_stage_requires_upstream(tmp_path):
    pipe = Pipeline(fixture_config(tmp_path))
    with pytest.raises(StageError, match="features"):
        pipe.run_stage("regress")


def test_ingest_then_graph_and_hash_guard(tmp_path):
    cfg = fixture_config(tmp_path)
    pipe = Pipeline(cfg)
    pipe.run_stage("ingest")
    d = pipe.run_stage("graph")
    assert (d / "graphs.json").exists()
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["graph"]["config_digest"] == cfg.digest()
    other = Pipeline(fixture_config(tmp_path, seed=99))
    with pytest.raises(StageError, match="force"):
        other.run_stage("ingest")
    Pipeline(fixture_config(tmp_path, seed=99), force=True).run_stage("ingest")
    # graph still carries the old digest, so the new config cannot build on it
    with pytest.raises(StageError, match="different config"):
        Pipeline(fixture_config(tmp_path, seed=99)).run_stage("graph")


def test_empty_corpus_fatal_at_ingest(tmp_path):
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    cfg = fixture_config(tmp_path / "out", corpus_path=str(empty))
    with pytest.raises(StageError) as info:
        Pipeline(cfg).run_all()
    assert info.value.stage == "ingest"


def _hashes(root: Path):
    return {
        str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
        for p in sorted(root.rglob("*"))
        if p.is_file()
    }


@pytest.fixture(scope="module")
def full_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    summary = Pipeline(fixture_config(out)).run_all()
    return out, summary


def test_run_all_reports_present(full_run):
    out, summary = full_run
    assert set(summary["regressions"]) == {"contemporaneous", "predictive"}
    assert len(summary["weeks"]) == 8
    week = summary["weeks"][0]
    topic = summary["topics"][week][0]
    assert topic["members"] and "term_frequencies" in topic and "representative_articles" in topic
    assert summary["narrative_chains"]
    assert summary["feature_matrix"]["rows"]
    for name in ("degree_timeline.csv", "eigenvector_timeline.csv", "graph_series.csv", "qk_curves.csv", "zscore_series.csv"):
        assert (out / "report" / name).exists()


def test_single_experiment(tmp_path, full_run):
    src, _ = full_run
    cfg = fixture_config(tmp_path, experiments=["predictive"])
    pipe = Pipeline(cfg)
    for stage in STAGES:
        pipe.run_stage(stage)
    models = json.loads((tmp_path / "regress" / "models.json").read_text())
    assert list(models) == ["predictive"]


def test_cli_run_all_and_failure(tmp_path, capsys):
    assert main(["run", "regress", "--fixture", "--output-dir", str(tmp_path)]) == 1
    assert "regress" in capsys.readouterr().err
    assert main(["fixture", str(tmp_path / "fx"), "--weeks", "2", "--articles-per-week", "5"]) == 0
    assert (tmp_path / "fx" / "corpus.jsonl").exists()
    assert main(["run", "ingest", "--corpus", str(tmp_path / "fx" / "corpus.jsonl"), "--output-dir", str(tmp_path / "o")]) == 2
    idx = [f"--index={n}={tmp_path / 'fx' / (n.lower() + '.csv')}" for n in ("VIX", "VIXFX", "MRI", "MOVE")]
    args = ["--corpus", str(tmp_path / "fx" / "corpus.jsonl"), "--output-dir", str(tmp_path / "o"), *idx, "--dims", "4"]
    assert main(["run", "ingest", *args]) == 0
    assert main(["run", "market", *args]) == 0
