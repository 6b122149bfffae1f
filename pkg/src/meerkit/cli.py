"""Command-line pipeline driver.

Workdir layout (fixed so commands compose):
    processed/              resampled, length-enforced clips + prepare log
    features/<id>.csv       one feature CSV per feature set
    models/                 trained CNN models
    reports/<id>/           report.json, confusion CSVs, uar_summary.csv, PNGs

Exit codes: 0 success, 2 config error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import __version__
from .audio import (AudioError, ManifestError, enforce_min_duration, load_manifest,
                    load_wav, resample, save_manifest, write_wav)
from .catch22 import compute_catch24, feature_names
from .cnn import (CnnError, TrainConfig, extract_features, filter_frequency_response,
                  load_model, save_model)
from .config import ConfigError, RunConfig, load_config
from .evaluate import export_report, run_experiment, train_fold_cnns
from .features import FeatureTable, FeatureTableError, export_csv, ingest_csv
from .render import render_filter_response, render_report_dir
from .svm import SvmError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


class DataError(Exception):
    pass


def _config_hash(config: RunConfig) -> str:
    from dataclasses import asdict

    doc = {
        "manifest": config.manifest,
        "target_rate_hz": config.target_rate_hz,
        "min_ms": config.min_ms,
        "folds": config.folds,
        "seed": config.seed,
        "standardize": config.standardize,
        "svm": asdict(config.svm),
        "cnn": asdict(config.cnn),
    }
    import hashlib

    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]


@contextmanager
def workdir_lock(workdir: Path):
    lock = workdir / ".meerkit.lock"
    workdir.mkdir(parents=True, exist_ok=True)
    if lock.exists():
        raise DataError(f"workdir is locked by another run: {lock}")
    lock.write_text("locked", encoding="utf-8")
    try:
        yield
    finally:
        lock.unlink(missing_ok=True)


def _load_processed_manifest(config: RunConfig):
    path = config.workdir_path / "processed" / "manifest.csv"
    if not path.exists():
        raise DataError(f"no processed clips at {path}; run `prepare` first")
    return load_manifest(path)


def _load_processed_clips(config: RunConfig, manifest):
    clips = {}
    for entry in manifest.entries:
        clips[entry["call_id"]] = load_wav(entry["path"], call_id=entry["call_id"])
    return clips


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_prepare(config: RunConfig, args) -> int:
    manifest = load_manifest(config.manifest)
    out_dir = config.workdir_path / "processed"
    if args.dry_run:
        print(f"[dry-run] would prepare {len(manifest.entries)} clips -> {out_dir}")
        return EXIT_OK

    out_dir.mkdir(parents=True, exist_ok=True)
    log_lines = ["call_id,original_rate_hz,original_ms,replication_factor"]
    processed_entries = []
    skipped = []
    for entry in manifest.entries:
        try:
            clip = load_wav(entry["path"], call_id=entry["call_id"])
        except (AudioError, FileNotFoundError) as exc:
            if args.skip_bad:
                skipped.append((entry["call_id"], str(exc)))
                continue
            raise DataError(f"unreadable audio for {entry['call_id']!r}: {exc}") from exc
        original_rate = clip.sample_rate_hz
        original_ms = clip.duration_ms
        clip = resample(clip, config.target_rate_hz)
        before = clip.samples.size
        clip = enforce_min_duration(clip, config.min_ms)
        replication = clip.samples.size // before if before else 1
        out_path = out_dir / f"{entry['call_id']}.wav"
        write_wav(out_path, clip, encoding="float32")
        log_lines.append(
            f"{entry['call_id']},{original_rate},{repr(original_ms)},{replication}"
        )
        processed_entries.append({"call_id": entry["call_id"],
                                  "path": str(out_path), "label": entry["label"]})

    (out_dir / "prepare_log.csv").write_text("\n".join(log_lines) + "\n", encoding="utf-8")
    if skipped:
        lines = ["call_id,error"] + [f"{c},{e.replace(',', ';')}" for c, e in skipped]
        (out_dir / "skipped.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    processed = type(manifest)(entries=processed_entries,
                               label_set=sorted({e["label"] for e in processed_entries}))
    save_manifest(processed, out_dir / "manifest.csv")
    print(f"prepared {len(processed_entries)} clips "
          f"({len(skipped)} skipped) -> {out_dir}")
    return EXIT_OK


def cmd_extract(config: RunConfig, args) -> int:
    source = config.feature_source(args.feature_set)
    out_path = config.workdir_path / "features" / f"{source.feature_set_id}.csv"
    if args.dry_run:
        print(f"[dry-run] would extract {source.kind} features -> {out_path}")
        return EXIT_OK
    out_path.parent.mkdir(parents=True, exist_ok=True)

    if source.kind == "catch24":
        manifest = _load_processed_manifest(config)
        clips = _load_processed_clips(config, manifest)
        rows = {c: compute_catch24(clips[c].samples).values for c in manifest.call_ids}
        table = FeatureTable(source.feature_set_id, feature_names(), rows)
    elif source.kind == "cnn-crafted":
        model_path = config.workdir_path / "models" / "cnn-selected.json"
        if not model_path.exists():
            raise DataError(f"no trained CNN at {model_path}; run `train-cnn` first")
        model = load_model(model_path)
        manifest = _load_processed_manifest(config)
        clips = _load_processed_clips(config, manifest)
        table = extract_features(model, [clips[c] for c in manifest.call_ids],
                                 feature_set_id=source.feature_set_id)
    else:  # external-csv
        table = ingest_csv(source.path, expected_dimension=source.expected_dimension)
        table = FeatureTable(source.feature_set_id, table.column_names, table.rows)

    export_csv(table, out_path)
    print(f"wrote {len(table)} x {table.dimension} features -> {out_path}")
    return EXIT_OK


def cmd_train_cnn(config: RunConfig, args) -> int:
    manifest = _load_processed_manifest(config)
    models_dir = config.workdir_path / "models"
    if args.dry_run:
        print(f"[dry-run] would train {config.folds} fold CNNs -> {models_dir}")
        return EXIT_OK
    clips = _load_processed_clips(config, manifest)
    records = train_fold_cnns(manifest, clips, k=config.folds,
                              train_config=config.cnn, seed=config.seed)
    best = int(np.argmax([r["fold_uar"] for r in records]))
    models_dir.mkdir(parents=True, exist_ok=True)
    for record in records:
        save_model(record["model"], models_dir / f"cnn-fold{record['fold']}.json")
    save_model(records[best]["model"], models_dir / "cnn-selected.json")
    summary = [{"fold": r["fold"], "fold_uar": r["fold_uar"],
                "epochs_run": r["epochs_run"], "selected": r["fold"] == best}
               for r in records]
    (models_dir / "cnn-folds.json").write_text(json.dumps(summary, indent=1),
                                               encoding="utf-8")
    print(f"trained {len(records)} fold CNNs; selected fold {best} "
          f"(UAR {records[best]['fold_uar']:.3f}) -> {models_dir}")
    return EXIT_OK


def cmd_classify(config: RunConfig, args) -> int:
    feature_csv = config.workdir_path / "features" / f"{args.feature_set}.csv"
    report_dir = config.workdir_path / "reports" / args.feature_set
    if args.dry_run:
        print(f"[dry-run] would classify {feature_csv} -> {report_dir}")
        return EXIT_OK
    if not feature_csv.exists():
        raise DataError(f"missing feature CSV {feature_csv}; run `extract` first")
    manifest = _load_processed_manifest(config)
    table = ingest_csv(feature_csv)
    report = run_experiment(
        table, manifest, k=config.folds, grid=config.svm.grid(), seed=config.seed,
        standardize=config.standardize, inner_folds=config.svm.inner_folds,
        grid_score_train=(config.svm.grid_score == "train"),
        svm_tol=config.svm.tol, feature_set_id=args.feature_set,
        config_hash=_config_hash(config),
    )
    written = export_report(report, report_dir)
    print(f"mean UAR {report.mean_uar:.4f} (pooled {report.pooled_uar:.4f}) "
          f"over {config.folds} folds; {len(written)} files -> {report_dir}")
    return EXIT_OK


def cmd_analyze_filters(config: RunConfig, args) -> int:
    model_path = config.workdir_path / "models" / "cnn-selected.json"
    out_csv = config.workdir_path / "reports" / "filter_response.csv"
    if args.dry_run:
        print(f"[dry-run] would analyze {model_path} -> {out_csv}")
        return EXIT_OK
    if not model_path.exists():
        raise DataError(f"no trained CNN at {model_path}; run `train-cnn` first")
    model = load_model(model_path)
    response = filter_frequency_response(model)
    out_csv.parent.mkdir(parents=True, exist_ok=True)
    lines = ["freq_hz,log_cum_magnitude"]
    for freq, mag in zip(response["freqs_hz"], response["log_cumulative_magnitude"]):
        lines.append(f"{repr(float(freq))},{repr(float(mag))}")
    out_csv.write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {len(lines) - 1} bins -> {out_csv}")
    return EXIT_OK


def cmd_render(config: RunConfig, args) -> int:
    targets = []
    reports_root = config.workdir_path / "reports"
    if args.feature_set:
        targets.append(reports_root / args.feature_set)
    else:
        targets.extend(sorted(p for p in reports_root.glob("*") if p.is_dir()))
    if args.dry_run:
        print(f"[dry-run] would render figures under {[str(t) for t in targets]}")
        return EXIT_OK
    written = []
    for directory in targets:
        written.extend(render_report_dir(directory))
    filter_csv = reports_root / "filter_response.csv"
    if filter_csv.exists():
        written.append(render_filter_response(filter_csv))
    if not written:
        raise DataError(f"nothing to render under {reports_root}")
    print(f"rendered {len(written)} figures")
    return EXIT_OK


def cmd_report(config: RunConfig, args) -> int:
    report_path = config.workdir_path / "reports" / args.feature_set / "report.json"
    if not report_path.exists():
        raise DataError(f"no report at {report_path}; run `classify` first")
    doc = json.loads(report_path.read_text(encoding="utf-8"))
    print(f"feature set : {doc['feature_set_id']}")
    print(f"classes     : {', '.join(doc['class_labels'])}")
    print(f"folds       : {doc['k']} (seed {doc['master_seed']})")
    for fold in doc["per_fold"]:
        hp = fold["chosen_hyperparameters"]
        print(f"  fold {fold['fold']}: UAR {fold['test_uar']:.4f}  "
              f"[{hp['kernel']}, C={hp['C']}, gamma={hp['gamma']}]")
    print(f"mean UAR    : {doc['mean_uar']:.4f}")
    print(f"pooled UAR  : {doc['pooled_uar']:.4f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="meerkit",
        description="Meerkat call-type classification pipeline",
    )
    parser.add_argument("--version", action="version", version=f"meerkit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, **extra):
        p = sub.add_parser(name, help=extra.pop("help", None))
        p.add_argument("--config", required=True, help="path to the JSON run config")
        p.add_argument("--workdir", help="override the config workdir")
        p.add_argument("--seed", type=int, help="override the master seed")
        p.add_argument("--dry-run", action="store_true",
                       help="print the resolved plan without touching files")
        p.set_defaults(func=func)
        return p

    p = add("prepare", cmd_prepare, help="resample and length-normalize all clips")
    p.add_argument("--skip-bad", action="store_true",
                   help="skip unreadable audio files instead of aborting")
    p = add("extract", cmd_extract, help="write one feature CSV")
    p.add_argument("--feature-set", required=True)
    add("train-cnn", cmd_train_cnn, help="train per-fold CNNs and select the best")
    p = add("classify", cmd_classify, help="run the cross-validated SVM experiment")
    p.add_argument("--feature-set", required=True)
    add("analyze-filters", cmd_analyze_filters,
        help="export the first-layer cumulative filter response")
    p = add("render", cmd_render, help="render report CSVs to PNG figures")
    p.add_argument("--feature-set")
    p = add("report", cmd_report, help="print a report summary")
    p.add_argument("--feature-set", required=True)
    return parser


MUTATING = {"prepare", "extract", "train-cnn", "classify", "analyze-filters"}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        overrides = {"workdir": args.workdir, "seed": args.seed}
        config = load_config(args.config, overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        if args.command in MUTATING and not args.dry_run:
            with workdir_lock(config.workdir_path):
                return args.func(config, args)
        return args.func(config, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, AudioError, ManifestError, FeatureTableError,
            FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (CnnError, SvmError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
