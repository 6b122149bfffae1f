"""Per-call feature tables: the common currency between feature extractors
(catch24, CNN-crafted, external CSV exports) and the classifier."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import DatasetManifest


class FeatureTableError(Exception):
    """Malformed feature table or CSV."""


@dataclass(frozen=True)
class FeatureTable:
    feature_set_id: str
    column_names: list[str]
    rows: dict[str, np.ndarray]

    def __post_init__(self):
        dim = len(self.column_names)
        for call_id, vec in self.rows.items():
            v = np.asarray(vec, dtype=np.float64)
            if v.shape != (dim,):
                raise FeatureTableError(
                    f"row {call_id!r} has {v.size} values, expected {dim}"
                )
            if not np.all(np.isfinite(v)):
                raise FeatureTableError(f"row {call_id!r} contains non-finite values")
            self.rows[call_id] = v

    @property
    def dimension(self) -> int:
        return len(self.column_names)

    def __len__(self) -> int:
        return len(self.rows)

    def matrix(self, call_ids: list[str]) -> np.ndarray:
        try:
            return np.stack([self.rows[c] for c in call_ids])
        except KeyError as exc:
            raise FeatureTableError(f"unknown call_id {exc.args[0]!r}") from None


@dataclass(frozen=True)
class StandardizationParams:
    means: np.ndarray
    stds: np.ndarray


def ingest_csv(path: str | Path, expected_dimension: int | None = None) -> FeatureTable:
    """Read a `call_id,<name_1>,...,<name_d>` feature CSV."""
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise FeatureTableError(f"cannot read {path}: {exc}") from exc
    if not lines:
        raise FeatureTableError(f"{path}: empty file")

    header = lines[0].split(",")
    if len(header) < 2 or header[0] != "call_id":
        raise FeatureTableError(f"{path}: header must start with 'call_id'")
    column_names = header[1:]
    dim = len(column_names)
    if expected_dimension is not None and dim != expected_dimension:
        raise FeatureTableError(
            f"{path}: dimension {dim} does not match expected {expected_dimension}"
        )

    rows: dict[str, np.ndarray] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != dim + 1:
            raise FeatureTableError(
                f"{path}:{lineno}: ragged row ({len(parts) - 1} values, expected {dim})"
            )
        call_id = parts[0]
        if call_id in rows:
            raise FeatureTableError(f"{path}:{lineno}: duplicate call_id {call_id!r}")
        try:
            rows[call_id] = np.array([float(p) for p in parts[1:]])
        except ValueError as exc:
            raise FeatureTableError(f"{path}:{lineno}: non-numeric cell ({exc})") from None

    return FeatureTable(path.stem, column_names, rows)


def export_csv(table: FeatureTable, path: str | Path) -> None:
    """Write a feature CSV with full round-trip float precision."""
    lines = ["call_id," + ",".join(table.column_names)]
    for call_id, vec in table.rows.items():
        lines.append(call_id + "," + ",".join(repr(float(v)) for v in vec))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def standardize_fit(table: FeatureTable, train_ids) -> StandardizationParams:
    """Per-dimension mean/std over the training rows only (sample std, n-1);
    near-zero stds are clamped to 1 so constant dimensions pass through."""
    train_ids = list(train_ids)
    if len(train_ids) < 2:
        raise FeatureTableError("standardize_fit needs at least 2 training rows")
    x = table.matrix(train_ids)
    means = x.mean(axis=0)
    stds = x.std(axis=0, ddof=1)
    stds = np.where(stds < 1e-12, 1.0, stds)
    return StandardizationParams(means, stds)


def standardize_apply(table: FeatureTable, params: StandardizationParams) -> FeatureTable:
    if params.means.size != table.dimension:
        raise FeatureTableError(
            f"params dimension {params.means.size} != table dimension {table.dimension}"
        )
    rows = {
        call_id: (vec - params.means) / params.stds for call_id, vec in table.rows.items()
    }
    return FeatureTable(table.feature_set_id + "+z", list(table.column_names), rows)


def join(
    table: FeatureTable, manifest: DatasetManifest, strict: bool = True
) -> tuple[np.ndarray, np.ndarray, list[str], list[str]]:
    """Align the table with a manifest.

    Returns (vectors, class_indices, class_labels, call_ids) in manifest entry
    order. With strict=False, manifest entries missing from the table are
    dropped (their count is discoverable from the returned ids).
    """
    vectors, indices, ids = [], [], []
    label_to_index = {label: k for k, label in enumerate(manifest.label_set)}
    for entry in manifest.entries:
        call_id = entry["call_id"]
        if call_id not in table.rows:
            if strict:
                raise FeatureTableError(f"manifest call_id {call_id!r} missing from table")
            continue
        vectors.append(table.rows[call_id])
        indices.append(label_to_index[entry["label"]])
        ids.append(call_id)
    return np.stack(vectors), np.array(indices, dtype=np.int64), list(manifest.label_set), ids
