"""Cross-validated classification experiments: fold planning, per-fold grid
search and SVM training, UAR reporting, and the single-CNN feature-extractor
protocol."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .audio import AudioClip, DatasetManifest
from .cnn import TrainConfig, classify, extract_features, select_feature_extractor, train
from .features import FeatureTable, standardize_apply, standardize_fit
from .folds import FoldPlan, stratified_kfold
from .metrics import ConfusionMatrix, confusion_from_predictions, uar
from .svm import DEFAULT_GRID, KernelSpec, grid_search, predict, train_multiclass

REPORT_FORMAT_VERSION = 1

_MASK64 = (1 << 64) - 1


def derive_seed(master: int, purpose: str) -> int:
    """Deterministic per-purpose seed from the master seed (splitmix-style
    finalizer over a hashed purpose tag); recorded in reports for reruns."""
    tag = int.from_bytes(hashlib.blake2s(purpose.encode()).digest()[:8], "little")
    z = ((master & _MASK64) ^ tag) & _MASK64
    z = (z + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & ((1 << 63) - 1)


@dataclass
class EvalReport:
    feature_set_id: str
    class_labels: list[str]
    k: int
    master_seed: int
    per_fold: list[dict]
    mean_uar: float
    pooled_uar: float
    aggregate_confusion: ConfusionMatrix
    toolkit_version: str = __version__
    config_hash: str = ""
    notes: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "format_version": REPORT_FORMAT_VERSION,
            "toolkit_version": self.toolkit_version,
            "feature_set_id": self.feature_set_id,
            "class_labels": self.class_labels,
            "k": self.k,
            "master_seed": self.master_seed,
            "config_hash": self.config_hash,
            "per_fold": self.per_fold,
            "mean_uar": self.mean_uar,
            "pooled_uar": self.pooled_uar,
            "aggregate_confusion": self.aggregate_confusion.counts.tolist(),
            "notes": self.notes,
        }


def report_from_json(doc: dict) -> EvalReport:
    return EvalReport(
        feature_set_id=doc["feature_set_id"],
        class_labels=list(doc["class_labels"]),
        k=int(doc["k"]),
        master_seed=int(doc["master_seed"]),
        per_fold=list(doc["per_fold"]),
        mean_uar=float(doc["mean_uar"]),
        pooled_uar=float(doc["pooled_uar"]),
        aggregate_confusion=ConfusionMatrix(
            list(doc["class_labels"]), np.array(doc["aggregate_confusion"])
        ),
        toolkit_version=doc.get("toolkit_version", ""),
        config_hash=doc.get("config_hash", ""),
        notes=doc.get("notes", {}),
    )


def _fold_ids(plan: FoldPlan, ordered_ids: list[str], fold: int):
    train = [c for c in ordered_ids if plan.assignment[c] != fold]
    test = [c for c in ordered_ids if plan.assignment[c] == fold]
    return train, test


def run_experiment(
    features: FeatureTable,
    manifest: DatasetManifest,
    k: int = 5,
    grid: dict | None = None,
    seed: int = 0,
    standardize: bool = True,
    inner_folds: int = 3,
    grid_score_train: bool = False,
    svm_tol: float = 1e-3,
    feature_set_id: str | None = None,
    config_hash: str = "",
) -> EvalReport:
    """Stratified k-fold evaluation of one feature set with per-fold
    standardization and grid search (both fitted on the training split only)."""
    grid = dict(DEFAULT_GRID) if grid is None else grid
    labels = manifest.label_set
    label_of = {e["call_id"]: e["label"] for e in manifest.entries}
    ordered_ids = manifest.call_ids
    missing = [c for c in ordered_ids if c not in features.rows]
    if missing:
        raise ValueError(f"features missing for call_ids: {missing[:5]}")

    plan = stratified_kfold(ordered_ids, manifest.labels, k, derive_seed(seed, "folds"))
    label_index = {lab: i for i, lab in enumerate(labels)}

    per_fold = []
    fold_uars = []
    aggregate = ConfusionMatrix(list(labels))
    for fold in range(k):
        train_ids, test_ids = _fold_ids(plan, ordered_ids, fold)
        if standardize:
            params = standardize_fit(features, train_ids)
            table = standardize_apply(features, params)
        else:
            table = features
        x_train = table.matrix(train_ids)
        y_train = np.array([label_index[label_of[c]] for c in train_ids])
        x_test = table.matrix(test_ids)
        y_test = np.array([label_index[label_of[c]] for c in test_ids])

        search = grid_search(
            x_train, y_train, list(labels), grid,
            inner_folds=inner_folds,
            seed=derive_seed(seed, f"grid/{fold}"),
            score_on_train=grid_score_train,
        )
        best = search["best"]
        kernel = KernelSpec(
            kind=best["kernel"], gamma=best["gamma"],
            degree=int(grid.get("degree", 3)), coef0=float(grid.get("coef0", 0.0)),
        )
        model = train_multiclass(x_train, y_train, best["C"], kernel, list(labels),
                                 tol=svm_tol)
        preds = predict(model, x_test)
        confusion = confusion_from_predictions(y_test, preds, list(labels))
        fold_uar = uar(confusion)
        fold_uars.append(fold_uar)
        aggregate = aggregate.add(confusion)
        per_fold.append({
            "fold": fold,
            "chosen_hyperparameters": best,
            "grid_train_scored": search["train_scored"],
            "inner_folds": search["inner_folds"],
            "test_uar": fold_uar,
            "train_size": len(train_ids),
            "test_size": len(test_ids),
            "confusion": confusion.counts.tolist(),
        })

    return EvalReport(
        feature_set_id=feature_set_id or features.feature_set_id,
        class_labels=list(labels),
        k=k,
        master_seed=seed,
        per_fold=per_fold,
        mean_uar=float(np.mean(fold_uars)),
        pooled_uar=uar(aggregate),
        aggregate_confusion=aggregate,
        config_hash=config_hash,
        notes={"standardized": standardize,
               "seeds": {"folds": derive_seed(seed, "folds"),
                         "grid": [derive_seed(seed, f"grid/{f}") for f in range(k)]}},
    )


def train_fold_cnns(
    manifest: DatasetManifest,
    clips: dict[str, AudioClip],
    k: int = 5,
    train_config: TrainConfig | None = None,
    seed: int = 0,
) -> list[dict]:
    """One CNN per stratified fold, each scored by UAR on its test split."""
    config = train_config or TrainConfig()
    labels = manifest.label_set
    label_index = {lab: i for i, lab in enumerate(labels)}
    ordered_ids = manifest.call_ids
    label_of = {e["call_id"]: e["label"] for e in manifest.entries}
    plan = stratified_kfold(ordered_ids, manifest.labels, k, derive_seed(seed, "folds"))

    records = []
    for fold in range(k):
        train_ids, test_ids = _fold_ids(plan, ordered_ids, fold)
        fold_config = TrainConfig(**{**vars(config), "seed": derive_seed(seed, f"cnn/{fold}")})
        model, history = train(
            [clips[c] for c in train_ids],
            [label_index[label_of[c]] for c in train_ids],
            len(labels),
            fold_config,
        )
        preds = classify(model, [clips[c].samples for c in test_ids])
        truth = np.array([label_index[label_of[c]] for c in test_ids])
        fold_uar = uar(confusion_from_predictions(truth, preds, list(labels)))
        records.append({"fold": fold, "model": model, "fold_uar": fold_uar,
                        "epochs_run": len(history)})
    return records


def run_cnn_protocol(
    manifest: DatasetManifest,
    clips: dict[str, AudioClip],
    k: int = 5,
    train_config: TrainConfig | None = None,
    grid: dict | None = None,
    seed: int = 0,
    **experiment_kwargs,
):
    """Full CNN-crafted pipeline: fold CNNs, best-fold selection, feature
    extraction for every call, then the standard SVM experiment."""
    records = train_fold_cnns(manifest, clips, k, train_config, seed)
    selected = select_feature_extractor(records)
    ordered_clips = [clips[c] for c in manifest.call_ids]
    features = extract_features(selected, ordered_clips)
    report = run_experiment(features, manifest, k=k, grid=grid, seed=seed,
                            feature_set_id="cnn-crafted", **experiment_kwargs)
    report.notes["fold_cnn_uars"] = [r["fold_uar"] for r in records]
    report.notes["selected_fold"] = int(np.argmax([r["fold_uar"] for r in records]))
    return report, selected, records


# ---------------------------------------------------------------------------
# report files
# ---------------------------------------------------------------------------

def _confusion_csv(confusion: ConfusionMatrix) -> str:
    lines = ["true\\predicted," + ",".join(confusion.class_labels)]
    for label, row in zip(confusion.class_labels, confusion.counts):
        lines.append(label + "," + ",".join(str(int(v)) for v in row))
    return "\n".join(lines) + "\n"


def export_report(report: EvalReport, out_dir: str | Path) -> list[Path]:
    """Write report.json plus per-fold/aggregate confusion CSVs and the UAR
    summary CSV; returns the written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    path = out / "report.json"
    path.write_text(json.dumps(report.to_json_dict(), sort_keys=True, indent=1),
                    encoding="utf-8")
    written.append(path)

    for entry in report.per_fold:
        confusion = ConfusionMatrix(report.class_labels, np.array(entry["confusion"]))
        path = out / f"confusion_fold{entry['fold']}.csv"
        path.write_text(_confusion_csv(confusion), encoding="utf-8")
        written.append(path)

    path = out / "confusion_aggregate.csv"
    path.write_text(_confusion_csv(report.aggregate_confusion), encoding="utf-8")
    written.append(path)

    lines = ["fold,uar"]
    for entry in report.per_fold:
        lines.append(f"{entry['fold']},{repr(entry['test_uar'])}")
    lines.append(f"mean,{repr(report.mean_uar)}")
    lines.append(f"pooled,{repr(report.pooled_uar)}")
    path = out / "uar_summary.csv"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    written.append(path)
    return written
