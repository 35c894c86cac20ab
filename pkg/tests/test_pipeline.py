import json
from dataclasses import replace
from pathlib import Path

import pytest

from techradar.classifier import map_initial_to_final
from techradar.config import ClassifierConfig, Config, EmbedderConfig, load_config
from techradar.jsonio import read_ndjson, write_ndjson
from techradar.pipeline import (
    MANIFEST_NAME, PipelineError, RunContext, run_all, run_stage,
)

from conftest import build_fixture_corpus

FAST_CFG = Config(
    embedder=EmbedderConfig(d_text=128, d_meta=64),
    classifier=ClassifierConfig(
        n_models=10, epochs=4, search_epochs=4, candidates_per_model=1,
        hidden_grid=(0,), lr_grid=(0.5,), master_seed=1,
    ),
)

# deterministic auto-labeling rule for fixtures: keyword -> initial label
KEYWORD_TO_INITIAL = {
    "3D-Druck": "Service",
    "3D printing": "Information",
    "additive Fertigung": "3DPOwnProducts",
    "additive manufacturing": "ConsultingEducation",
    "Lasersintern": "Manufacturer",
    "selektives Laserschmelzen": "Manufacturer",
    "Stereolithografie": "Manufacturer",
    "powder bed fusion": "Retail",
}


def synth_labels(points_path: Path, labels_path: Path, limit: int | None = None) -> int:
    rows = []
    for row in read_ndjson(points_path):
        initial = KEYWORD_TO_INITIAL.get(row["keyword"], "Service")
        rows.append(
            {
                "point_id": row["point_id"],
                "initial_label": initial,
                "final_label": map_initial_to_final(initial),
                "annotator_id": "synthetic",
                "round": 1,
            }
        )
    if limit:
        rows = rows[:limit]
    write_ndjson(labels_path, rows)
    return len(rows)


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    base = tmp_path_factory.mktemp("corpus")
    return build_fixture_corpus(base, n_sites=8, seed=3)


def make_ctx(tmp_path, corpus, **kwargs) -> RunContext:
    return RunContext(
        cfg=FAST_CFG,
        data_dir=tmp_path / "data",
        csv_path=corpus["csv"],
        archive_dir=corpus["archive"],
        regions_path=corpus["regions"],
        **kwargs,
    )


def test_stage_order_dependency_error(tmp_path, corpus):
    ctx = make_ctx(tmp_path, corpus)
    with pytest.raises(PipelineError, match=r"requires pages\.ndjson \(produced by fetch\)"):
        run_stage("extract", ctx)


def test_unknown_stage_rejected(tmp_path, corpus):
    with pytest.raises(PipelineError, match="unknown stage"):
        run_stage("transmogrify", make_ctx(tmp_path, corpus))


def test_full_run_produces_seven_stage_manifest(tmp_path, corpus):
    ctx = make_ctx(tmp_path, corpus)
    run_stage("ingest", ctx)
    run_stage("fetch", ctx)
    run_stage("extract", ctx)
    ctx.labels_path = tmp_path / "labels.ndjson"
    n = synth_labels(ctx.artifact("points.ndjson"), ctx.labels_path)
    assert n > 10
    run_stage("train", ctx)
    run_stage("predict", ctx)
    run_stage("aggregate", ctx)
    run_stage("geo", ctx)

    manifest = json.loads((ctx.artifact(MANIFEST_NAME)).read_text())
    stages = [s["stage"] for s in manifest["stages"]]
    assert stages == ["ingest", "fetch", "extract", "train", "predict", "aggregate", "geo"]
    for entry in manifest["stages"]:
        assert entry["inputs"] and entry["outputs"]
        for digest in {**entry["inputs"], **entry["outputs"]}.values():
            assert len(digest) == 64

    # artifacts exist and are consistent
    labels = list(read_ndjson(ctx.artifact("company_labels.ndjson")))
    assert labels, "engaged companies expected"
    predictions = list(read_ndjson(ctx.artifact("predictions.ndjson")))
    assert {p["company_id"] for p in labels} <= {p["company_id"] for p in predictions}
    for p in predictions:
        assert sum(p["votes"].values()) == 10
        assert p["confidence"] == max(p["votes"].values()) / 10

    regions_doc = json.loads((ctx.artifact("maps") / "regions.geojson").read_text())
    assert regions_doc["type"] == "FeatureCollection" and regions_doc["features"]

    report = run_stage("report", ctx)
    assert set(report["stages"]) >= set(stages)


def test_resume_skips_unchanged_stage(tmp_path, corpus):
    ctx = make_ctx(tmp_path, corpus)
    run_stage("ingest", ctx)
    out = ctx.artifact("registry.ndjson")
    first_mtime = out.stat().st_mtime_ns
    ctx.resume = True
    run_stage("ingest", ctx)
    assert out.stat().st_mtime_ns == first_mtime  # untouched
    ctx.resume = False
    run_stage("ingest", ctx)
    assert out.stat().st_mtime_ns != first_mtime  # rewritten


def test_resume_reruns_when_input_changes(tmp_path, corpus):
    ctx = make_ctx(tmp_path, corpus)
    run_stage("ingest", ctx)
    mtime = ctx.artifact("registry.ndjson").stat().st_mtime_ns
    # append one row to the csv
    extra = tmp_path / "companies2.csv"
    extra.write_text(
        corpus["csv"].read_text() + "cozz,https://www.neu.de/,4,,C26,R01,48.2,11.2,0.5\n"
    )
    ctx.csv_path = extra
    ctx.resume = True
    run_stage("ingest", ctx)
    assert ctx.artifact("registry.ndjson").stat().st_mtime_ns != mtime


def test_train_before_extract_fails_with_producer(tmp_path, corpus):
    ctx = make_ctx(tmp_path, corpus)
    run_stage("ingest", ctx)
    with pytest.raises(PipelineError, match="produced by fetch"):
        run_stage("extract", ctx)
    with pytest.raises(PipelineError, match="produced by extract"):
        ctx.labels_path = corpus["csv"]  # exists; irrelevant content is fine here
        run_stage("train", ctx)


def test_vectors_cache_reused(tmp_path, corpus):
    ctx = make_ctx(tmp_path, corpus)
    run_stage("ingest", ctx)
    run_stage("fetch", ctx)
    run_stage("extract", ctx)
    ctx.labels_path = tmp_path / "labels.ndjson"
    synth_labels(ctx.artifact("points.ndjson"), ctx.labels_path)
    ctx.vectors_path = tmp_path / "vectors.ndjson"
    run_stage("train", ctx)
    assert ctx.vectors_path.exists()
    cached = {row["point_id"] for row in read_ndjson(ctx.vectors_path)}
    labeled = {row["point_id"] for row in read_ndjson(ctx.labels_path)}
    assert labeled <= cached


def test_cli_verbs_end_to_end(tmp_path, corpus, monkeypatch):
    from techradar import cli

    data_dir = tmp_path / "cli-data"
    ini = tmp_path / "techradar.ini"
    ini.write_text(
        "[embedder]\nd_text = 128\nd_meta = 64\n"
        "[classifier]\nn_models = 10\nepochs = 4\nsearch_epochs = 4\n"
        "candidates_per_model = 1\nhidden_grid = 0\nlr_grid = 0.5\n"
    )
    common = ["--data-dir", str(data_dir), "--config", str(ini)]
    assert cli.main(["ingest", *common, "--csv", str(corpus["csv"])]) == 0
    assert cli.main(["fetch", *common, "--archive", str(corpus["archive"])]) == 0
    assert cli.main(["extract", *common]) == 0
    labels = tmp_path / "labels.ndjson"
    synth_labels(data_dir / "points.ndjson", labels)
    assert cli.main(["train", *common, "--labels", str(labels), "--seed", "5"]) == 0
    assert cli.main(["predict", *common]) == 0
    assert cli.main(["aggregate", *common]) == 0
    assert cli.main(["geo", *common, "--regions", str(corpus["regions"])]) == 0
    assert cli.main(["report", *common]) == 0
    assert (data_dir / "tables" / "type_shares.csv").exists()
    assert (data_dir / "maps" / "hotspots.geojson").exists()
    # labeling round + export through the CLI
    assert cli.main(["round", *common, "--n", "10", "--annotators", "a,b,c", "--seed", "1"]) == 0
    exported = tmp_path / "exported.ndjson"
    assert cli.main(["round", *common, "--export", str(exported)]) == 0
    assert exported.exists()


def test_lr_grid_ini_parsing(tmp_path):
    ini = tmp_path / "cfg.ini"
    ini.write_text("[classifier]\nlr_grid = 0.1, 0.01\nhidden_grid = 0, 32\n")
    cfg = load_config(ini)
    assert cfg.classifier.lr_grid == (0.1, 0.01)
    assert cfg.classifier.hidden_grid == (0, 32)


def run_chain(tmp_path, corpus, labels_path=None):
    ctx = make_ctx(tmp_path, corpus)
    run_stage("ingest", ctx)
    run_stage("fetch", ctx)
    run_stage("extract", ctx)
    if labels_path is None:
        labels_path = tmp_path / "labels.ndjson"
        synth_labels(ctx.artifact("points.ndjson"), labels_path)
    ctx.labels_path = labels_path
    run_stage("train", ctx)
    run_stage("predict", ctx)
    run_stage("aggregate", ctx)
    run_stage("geo", ctx)
    manifest = json.loads(ctx.artifact(MANIFEST_NAME).read_text())
    return {entry["stage"]: entry["outputs"] for entry in manifest["stages"]}


def test_identical_inputs_identical_artifact_digests(tmp_path, corpus):
    labels = tmp_path / "labels.ndjson"
    first_ctx = make_ctx(tmp_path / "one", corpus)
    run_stage("ingest", first_ctx)
    run_stage("fetch", first_ctx)
    run_stage("extract", first_ctx)
    synth_labels(first_ctx.artifact("points.ndjson"), labels)

    digests_a = run_chain(tmp_path / "a", corpus, labels)
    digests_b = run_chain(tmp_path / "b", corpus, labels)
    assert digests_a == digests_b


def test_run_all_helper(tmp_path, corpus):
    pre = make_ctx(tmp_path / "pre", corpus)
    run_stage("ingest", pre)
    run_stage("fetch", pre)
    run_stage("extract", pre)
    labels = tmp_path / "labels.ndjson"
    synth_labels(pre.artifact("points.ndjson"), labels)

    ctx = make_ctx(tmp_path / "full", corpus, labels_path=labels)
    run_all(ctx)
    manifest = json.loads(ctx.artifact(MANIFEST_NAME).read_text())
    assert [s["stage"] for s in manifest["stages"]] == [
        "ingest", "fetch", "extract", "train", "predict", "aggregate", "geo",
    ]


def test_extract_cli_path_overrides(tmp_path, corpus):
    ctx = make_ctx(tmp_path, corpus)
    run_stage("ingest", ctx)
    run_stage("fetch", ctx)
    ctx.pages_in = ctx.artifact("pages.ndjson")
    ctx.points_out = tmp_path / "elsewhere" / "kic.ndjson"
    ctx.report_out = tmp_path / "elsewhere" / "kic_report.json"
    run_stage("extract", ctx)
    assert ctx.points_out.exists()
    assert (tmp_path / "elsewhere" / "dropped_kic.ndjson").exists()
    report = json.loads(ctx.report_out.read_text())
    assert report["kept"] == len(list(read_ndjson(ctx.points_out)))
