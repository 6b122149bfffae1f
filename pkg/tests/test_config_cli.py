import json
import os
from pathlib import Path

import numpy as np
import pytest

from meerkit.cli import main
from meerkit.config import ConfigError, load_config

from synth_data import build_dataset


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    manifest = build_dataset(root, clips_per_class=12, seed=21)
    return root, manifest


def _write_config(path: Path, manifest: Path, workdir: Path, **extra):
    doc = {
        "manifest": str(manifest),
        "workdir": str(workdir),
        "seed": 404,
        "folds": 3,
        "svm": {"C": [1.0, 10.0], "gamma": [0.01, 0.1], "kernels": ["linear", "rbf"]},
        "cnn": {"epochs": 6, "patience": 0, "val_fraction": 0.0, "batch_size": 32},
        "features": [
            {"feature_set_id": "catch24", "kind": "catch24"},
            {"feature_set_id": "cnn-crafted", "kind": "cnn-crafted"},
        ],
    }
    doc.update(extra)
    path.write_text(json.dumps(doc))
    return path


# ---------------------------------------------------------------------------
# config validation
# ---------------------------------------------------------------------------

def test_config_defaults(tmp_path, dataset):
    root, manifest = dataset
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"manifest": str(manifest), "workdir": str(tmp_path / "w")}))
    config = load_config(path)
    assert config.target_rate_hz == 16000
    assert config.min_ms == 100.0
    assert config.folds == 5
    assert config.svm.C == [0.1, 1.0, 10.0, 100.0]
    assert config.svm.gamma == [0.001, 0.01, 0.1, 1.0]
    assert config.svm.kernels == ["linear", "rbf", "polynomial", "sigmoid"]
    assert config.cnn.learning_rate == 1e-3
    assert config.standardize is True


def test_config_unknown_keys_rejected(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"manifest": "m", "workdir": "w", "bogus": 1}))
    with pytest.raises(ConfigError, match="bogus"):
        load_config(path)
    path.write_text(json.dumps({"manifest": "m", "workdir": "w",
                                "svm": {"C": [1], "nope": 2}}))
    with pytest.raises(ConfigError, match="nope"):
        load_config(path)


def test_config_env_seed_override(tmp_path, monkeypatch):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"manifest": "m", "workdir": "w", "seed": 7}))
    monkeypatch.setenv("MEERKIT_SEED", "99")
    assert load_config(path).seed == 99
    monkeypatch.setenv("MEERKIT_SEED", "not-an-int")
    with pytest.raises(ConfigError, match="MEERKIT_SEED"):
        load_config(path)


def test_config_error_exit_code(tmp_path, capsys):
    path = tmp_path / "c.json"
    path.write_text("{not json")
    assert main(["prepare", "--config", str(path)]) == 2
    assert "config error" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# pipeline commands
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def pipeline(dataset, tmp_path_factory):
    """Run the full CLI pipeline once; commands under test reuse the workdir."""
    root, manifest = dataset
    workdir = tmp_path_factory.mktemp("work")
    config_path = _write_config(tmp_path_factory.mktemp("cfg") / "run.json",
                                manifest, workdir)
    assert main(["prepare", "--config", str(config_path)]) == 0
    assert main(["extract", "--config", str(config_path), "--feature-set", "catch24"]) == 0
    assert main(["classify", "--config", str(config_path), "--feature-set", "catch24"]) == 0
    return config_path, workdir


def test_prepare_outputs(pipeline):
    _, workdir = pipeline
    processed = workdir / "processed"
    wavs = list(processed.glob("*.wav"))
    assert len(wavs) == 48
    log = (processed / "prepare_log.csv").read_text().splitlines()
    assert log[0] == "call_id,original_rate_hz,original_ms,replication_factor"
    assert len(log) == 49
    # every processed clip is 16 kHz and >= 1600 samples
    from meerkit.audio import load_wav
    for wav in wavs[:6]:
        clip = load_wav(wav)
        assert clip.sample_rate_hz == 16000
        assert clip.samples.size >= 1600
    # short clips replicated: factor > 1 somewhere
    factors = [int(line.split(",")[3]) for line in log[1:]]
    assert max(factors) >= 2


def test_extract_catch24_csv(pipeline):
    _, workdir = pipeline
    csv = workdir / "features" / "catch24.csv"
    lines = csv.read_text().splitlines()
    assert lines[0].startswith("call_id,DN_HistogramMode_5")
    assert len(lines) == 49
    assert len(lines[0].split(",")) == 25


def test_classify_report_files(pipeline):
    _, workdir = pipeline
    report_dir = workdir / "reports" / "catch24"
    assert (report_dir / "report.json").exists()
    doc = json.loads((report_dir / "report.json").read_text())
    assert doc["k"] == 3
    assert doc["master_seed"] == 404
    assert len(doc["per_fold"]) == 3
    assert doc["mean_uar"] >= 0.9  # blobs of tones: separable
    for i in range(3):
        assert (report_dir / f"confusion_fold{i}.csv").exists()


def test_report_command(pipeline, capsys):
    config_path, _ = pipeline
    assert main(["report", "--config", str(config_path), "--feature-set", "catch24"]) == 0
    out = capsys.readouterr().out
    assert "mean UAR" in out and "fold 0" in out


def test_render_produces_pngs(pipeline):
    config_path, workdir = pipeline
    assert main(["render", "--config", str(config_path),
                 "--feature-set", "catch24"]) == 0
    pngs = list((workdir / "reports" / "catch24").glob("*.png"))
    assert len(pngs) >= 4  # 3 folds + aggregate


def test_classify_missing_features_exit_code(pipeline, capsys):
    config_path, _ = pipeline
    code = main(["classify", "--config", str(config_path), "--feature-set", "cnn-crafted"])
    assert code == 3
    assert "cnn-crafted.csv" in capsys.readouterr().err


def test_extract_cnn_before_training_errors(pipeline, capsys):
    config_path, _ = pipeline
    code = main(["extract", "--config", str(config_path), "--feature-set", "cnn-crafted"])
    assert code == 3
    assert "train-cnn" in capsys.readouterr().err


def test_analyze_filters_requires_model(pipeline, capsys):
    config_path, _ = pipeline
    assert main(["analyze-filters", "--config", str(config_path)]) == 3


def test_dry_run_touches_nothing(pipeline, dataset, tmp_path):
    root, manifest = dataset
    workdir = tmp_path / "fresh"
    config_path = _write_config(tmp_path / "dry.json", manifest, workdir)
    assert main(["prepare", "--config", str(config_path), "--dry-run"]) == 0
    assert not workdir.exists() or not any(workdir.iterdir())


def test_lock_file_blocks_concurrent_runs(pipeline, capsys):
    config_path, workdir = pipeline
    lock = workdir / ".meerkit.lock"
    lock.write_text("held")
    try:
        assert main(["extract", "--config", str(config_path),
                     "--feature-set", "catch24"]) == 3
        assert "locked" in capsys.readouterr().err
    finally:
        lock.unlink()


def test_prepare_idempotent_byte_identical(dataset, tmp_path):
    root, manifest = dataset
    workdir = tmp_path / "idem"
    config_path = _write_config(tmp_path / "c.json", manifest, workdir)
    assert main(["prepare", "--config", str(config_path)]) == 0
    first = {p.name: p.read_bytes() for p in (workdir / "processed").glob("*")}
    assert main(["prepare", "--config", str(config_path)]) == 0
    second = {p.name: p.read_bytes() for p in (workdir / "processed").glob("*")}
    assert first == second


def test_prepare_skip_bad(dataset, tmp_path, capsys):
    root, manifest_path = dataset
    corrupt = tmp_path / "corrupt.wav"
    corrupt.write_bytes(b"garbage not a wav file")
    lines = manifest_path.read_text().splitlines()
    lines.insert(1, f"broken_000,{corrupt},tone")
    bad_manifest = tmp_path / "manifest.csv"
    bad_manifest.write_text("\n".join(lines) + "\n")
    workdir = tmp_path / "skipwork"
    config_path = _write_config(tmp_path / "c.json", bad_manifest, workdir)

    assert main(["prepare", "--config", str(config_path)]) == 3
    capsys.readouterr()
    assert main(["prepare", "--config", str(config_path), "--skip-bad"]) == 0
    assert "1 skipped" in capsys.readouterr().out
    skipped = (workdir / "processed" / "skipped.csv").read_text()
    assert "broken_000" in skipped


def test_external_csv_passthrough(dataset, tmp_path):
    root, manifest_path = dataset
    from meerkit.audio import load_manifest
    manifest = load_manifest(manifest_path)
    rng = np.random.default_rng(0)
    lines = ["call_id," + ",".join(f"e{i}" for i in range(8))]
    for cid in manifest.call_ids:
        lines.append(cid + "," + ",".join(repr(float(v)) for v in rng.normal(size=8)))
    external = tmp_path / "external.csv"
    external.write_text("\n".join(lines) + "\n")

    workdir = tmp_path / "extwork"
    config_path = _write_config(
        tmp_path / "c.json", manifest_path, workdir,
        features=[{"feature_set_id": "embed", "kind": "external-csv",
                   "path": str(external), "expected_dimension": 8}])
    assert main(["prepare", "--config", str(config_path)]) == 0
    assert main(["extract", "--config", str(config_path), "--feature-set", "embed"]) == 0
    out = (workdir / "features" / "embed.csv").read_text().splitlines()
    assert len(out) == len(manifest.call_ids) + 1


def test_cnn_cli_path(dataset, tmp_path, capsys):
    """train-cnn -> extract cnn-crafted -> classify -> analyze-filters -> render."""
    root, manifest_path = dataset
    workdir = tmp_path / "cnnwork"
    config_path = _write_config(tmp_path / "c.json", manifest_path, workdir)
    assert main(["prepare", "--config", str(config_path)]) == 0
    assert main(["train-cnn", "--config", str(config_path)]) == 0
    models = workdir / "models"
    assert (models / "cnn-selected.json").exists()
    assert len(list(models.glob("cnn-fold[0-9]*.json"))) == 3
    summary = json.loads((models / "cnn-folds.json").read_text())
    assert sum(1 for r in summary if r["selected"]) == 1

    assert main(["extract", "--config", str(config_path),
                 "--feature-set", "cnn-crafted"]) == 0
    lines = (workdir / "features" / "cnn-crafted.csv").read_text().splitlines()
    assert len(lines[0].split(",")) == 81  # call_id + 80 dims

    assert main(["classify", "--config", str(config_path),
                 "--feature-set", "cnn-crafted"]) == 0
    assert (workdir / "reports" / "cnn-crafted" / "report.json").exists()
    # same seed -> same fold plan for both feature sets
    assert main(["extract", "--config", str(config_path),
                 "--feature-set", "catch24"]) == 0
    assert main(["classify", "--config", str(config_path),
                 "--feature-set", "catch24"]) == 0
    doc_catch = json.loads(
        (workdir / "reports" / "catch24" / "report.json").read_text())
    doc_cnn = json.loads(
        (workdir / "reports" / "cnn-crafted" / "report.json").read_text())
    assert doc_catch["notes"]["seeds"]["folds"] == doc_cnn["notes"]["seeds"]["folds"]
    assert [f["test_size"] for f in doc_catch["per_fold"]] \
        == [f["test_size"] for f in doc_cnn["per_fold"]]

    assert main(["analyze-filters", "--config", str(config_path)]) == 0
    response = (workdir / "reports" / "filter_response.csv").read_text().splitlines()
    assert response[0] == "freq_hz,log_cum_magnitude"
    assert len(response) == 514  # header + 513 bins
    capsys.readouterr()
    assert main(["analyze-filters", "--config", str(config_path)]) == 0  # idempotent
    again = (workdir / "reports" / "filter_response.csv").read_text().splitlines()
    assert again == response

    assert main(["render", "--config", str(config_path)]) == 0
    assert (workdir / "reports" / "filter_response.png").exists()
    assert len(list((workdir / "reports" / "cnn-crafted").glob("*.png"))) >= 4


def test_same_seed_same_fold_plan_across_feature_sets(dataset, tmp_path):
    """Fold assignment depends only on manifest + seed, not the feature set."""
    from meerkit.audio import load_manifest
    from meerkit.evaluate import derive_seed
    from meerkit.folds import stratified_kfold
    root, manifest_path = dataset
    manifest = load_manifest(manifest_path)
    plan_a = stratified_kfold(manifest.call_ids, manifest.labels, 3,
                              derive_seed(404, "folds"))
    plan_b = stratified_kfold(manifest.call_ids, manifest.labels, 3,
                              derive_seed(404, "folds"))
    assert plan_a.assignment == plan_b.assignment
